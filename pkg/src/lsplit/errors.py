"""Exception taxonomy shared across the package."""


class LsplitError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LsplitError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(LsplitError):
    """Non-finite or otherwise unusable numeric input."""


class ParameterError(LsplitError):
    """Invalid configuration value or argument."""


class PlanError(LsplitError):
    """Partition plan violates 0 <= X <= Y <= N."""


class StateError(LsplitError):
    """Session/cache state does not match what the operation requires."""


class FrameError(LsplitError):
    """Payload is inconsistent with the declared tensor metadata."""


class WireError(LsplitError):
    """Malformed bytes on the wire. ``code`` names the first failed check."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class ChannelError(LsplitError):
    """Transport-level failure (peer gone, unexpected frame order)."""


class SessionError(LsplitError):
    """Session aborted. Carries the partial traffic report when available."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
