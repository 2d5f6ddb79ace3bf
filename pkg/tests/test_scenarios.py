import pytest

from rfsense.scenarios import build_schedule, interference_schedule, periodic_schedule, random_schedule
from rfsense.waveforms import RatClass


@pytest.mark.parametrize("seed", range(40))
def test_random_scenes_are_disjoint_and_inside_the_span(seed):
    s = random_schedule(seed)
    assert 1 <= len(s.frames) <= 5
    ends = [(f.t_start, f.t_start + f.duration) for f in s.frames]
    assert all(b <= c - 2e-3 + 1e-9 for (_, b), (c, _) in zip(ends, ends[1:]))
    assert ends[0][0] >= 0.5e-3 and ends[-1][1] <= s.span - 0.5e-3 + 1e-9
    for f in s.frames:
        assert f.f_center - f.bandwidth / 2 >= 0 and f.f_center + f.bandwidth / 2 <= s.band_width
        if f.rat is RatClass.WIFI:
            assert 1e-3 <= f.duration <= 2e-3 and f.bandwidth == 20e6
        else:
            assert 3e-3 <= f.duration <= 10e-3


def test_builders_are_deterministic():
    assert random_schedule(3) == random_schedule(3)
    assert random_schedule(3) != random_schedule(4)
    p = {"scenario": "periodic", "scene": 2, "base_seed": 0, "fd": 4e-3, "fi": 8e-3}
    assert build_schedule(p) == build_schedule(dict(p))
    assert build_schedule(p) != build_schedule({**p, "base_seed": 1})


def test_periodic_train():
    s = periodic_schedule(1, fd=4e-3, fi=8e-3, bandwidth=10e6)
    starts = [f.t_start for f in s.frames]
    assert len(s.frames) >= 3
    assert all(b - a == pytest.approx(12e-3, abs=1e-6) for a, b in zip(starts, starts[1:]))
    assert {f.duration for f in s.frames} == {4e-3}
    assert len({f.f_center for f in s.frames}) == 1


def test_interference_overlaps_each_lte_frame():
    s = interference_schedule(5, interferer_snr_db=13.0)
    lte = [f for f in s.frames if f.rat is RatClass.LTE]
    wifi = [f for f in s.frames if f.rat is RatClass.WIFI]
    assert len(lte) == len(wifi) >= 1
    for a, b in zip(lte, wifi):
        assert a.t_start <= b.t_start <= a.t_start + a.duration
        assert b.power_db == pytest.approx(13.0 - 29.0)
