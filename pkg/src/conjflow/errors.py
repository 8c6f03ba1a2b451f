"""Shared exception types."""


class ConfigurationError(ValueError):
    """A model or experiment was configured inconsistently."""


class DegenerateAnchorError(ValueError):
    """Constrained linearization requested at the zero anchor point."""


class BlowUpError(RuntimeError):
    """An integration produced a non-finite state."""

    def __init__(self, time, message=None):
        self.time = time
        super().__init__(message or f"integration blew up at t={time:g}")
