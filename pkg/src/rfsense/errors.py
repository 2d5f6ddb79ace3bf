"""Exception types shared across the toolkit."""


class RfSenseError(Exception):
    """Base class for all toolkit errors."""


class InvalidSpec(RfSenseError, ValueError):
    pass


class BandExceeded(InvalidSpec):
    pass


class FrameOutOfSpan(InvalidSpec):
    pass


class CannotCalibrateSnr(RfSenseError, ValueError):
    pass


class InvalidTaps(RfSenseError, ValueError):
    pass


class InvalidRoot(RfSenseError, ValueError):
    pass


class ConfigLengthError(RfSenseError, ValueError):
    pass


class RequiresDetection(RfSenseError, ValueError):
    pass


class TooShort(RfSenseError, ValueError):
    pass


class DegenerateBox(RfSenseError, ValueError):
    pass


class EmptyAxis(RfSenseError, ValueError):
    pass


class ParseError(RfSenseError, ValueError):
    """Malformed annotation input. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TaskFailed(RfSenseError, RuntimeError):
    pass
