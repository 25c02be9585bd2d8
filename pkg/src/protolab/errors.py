class ConfigError(ValueError):
    """A simulation, scenario or protocol was configured inconsistently."""


class ProtocolError(RuntimeError):
    """An operation was invoked in a phase that does not allow it."""


class InvariantViolation(AssertionError):
    """A safety property was broken. Halts the run.

    ``record_index`` is filled in by the simulator with the index of the trace
    record whose handling raised the violation.
    """

    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index
