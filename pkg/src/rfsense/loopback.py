"""Simulated over-the-air path: transmit buffer -> channel -> receive buffer.

The transmit buffer is ``[lead zeros][preamble][guard zeros][payload]``.
The receiver finds the preamble, removes the estimated CFO and cuts the
payload out at ``t_offset + len(preamble) + guard``.  ``IQSource`` and
``IQSink`` are the seams where real radio front-ends would plug in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .channel import ImpairmentChain, apply_cfo
from .errors import TaskFailed
from .sync import PreambleConfig, SyncResult, build_preamble, detect_preamble
from .waveforms import IQRecord, TransmissionSchedule, render_schedule

DEFAULT_GUARD = 1031
MAX_RETRIES = 3


class IQSink(Protocol):
    def transmit(self, rec: IQRecord) -> None: ...


class IQSource(Protocol):
    def receive(self) -> IQRecord: ...


class LoopbackRadio:
    """Sink and source joined by an impairment chain."""

    def __init__(self, chain: ImpairmentChain):
        self.chain = chain
        self._buffer: IQRecord | None = None

    def transmit(self, rec: IQRecord) -> None:
        self._buffer = self.chain.apply(rec)

    def receive(self) -> IQRecord:
        if self._buffer is None:
            raise RuntimeError("nothing transmitted")
        return self._buffer


@dataclass(frozen=True)
class Framing:
    lead: int = 2000
    guard: int = DEFAULT_GUARD
    preamble: PreambleConfig = PreambleConfig()

    @property
    def payload_offset(self) -> int:
        """Samples from the preamble start to the payload start."""
        return self.preamble.length + self.guard


def transmit_buffer(payload: IQRecord, framing: Framing) -> IQRecord:
    pre = build_preamble(framing.preamble)
    x = np.concatenate(
        [np.zeros(framing.lead), pre, np.zeros(framing.guard), payload.samples]
    )
    meta = dict(payload.meta)
    meta.update(lead=framing.lead, guard=framing.guard, preamble=framing.preamble.to_dict())
    return IQRecord(x, payload.sample_rate, meta)


def receive_payload(
    rx: IQRecord, framing: Framing, n_payload: int, threshold: float = 0.5
) -> tuple[IQRecord | None, SyncResult]:
    """Synchronise on the preamble and cut the CFO-corrected payload.

    Returns ``(None, sync)`` when the preamble is not detected.
    """
    search = framing.lead + framing.preamble.length + framing.guard
    sync = detect_preamble(rx, framing.preamble, threshold, search=search)
    if not sync.detected:
        return None, sync
    corrected = apply_cfo(rx, -sync.cfo_hz)
    start = sync.t_offset + framing.payload_offset
    payload = corrected.samples[start : start + n_payload]
    if len(payload) < n_payload:
        payload = np.concatenate([payload, np.zeros(n_payload - len(payload))])
    meta = dict(corrected.meta)
    meta.update(t0=start / rx.sample_rate, sync=sync.to_dict(), payload_start=start)
    return IQRecord(payload, rx.sample_rate, meta), sync


@dataclass
class Capture:
    schedule: TransmissionSchedule
    record: IQRecord
    sync: SyncResult
    attempts: int
    payload_offset: int


def over_the_air(
    sched: TransmissionSchedule,
    chain: ImpairmentChain,
    framing: Framing = Framing(),
    threshold: float = 0.5,
    max_retries: int = MAX_RETRIES,
    payload: IQRecord | None = None,
) -> Capture:
    """Send one schedule through the loopback and return the aligned payload.

    A missed preamble triggers a retransmission with fresh channel noise,
    up to ``max_retries`` times, after which ``TaskFailed`` is raised.
    """
    payload = payload if payload is not None else render_schedule(sched)
    tx = transmit_buffer(payload, framing)
    for attempt in range(max_retries + 1):
        radio = LoopbackRadio(chain.with_seed(chain.noise_seed + 100_003 * attempt))
        radio.transmit(tx)
        rec, sync = receive_payload(radio.receive(), framing, len(payload), threshold)
        if rec is not None:
            return Capture(sched, rec, sync, attempt + 1, framing.payload_offset)
    raise TaskFailed(f"preamble not detected after {max_retries + 1} transmissions")
