"""Exception hierarchy. ``exit_code`` is the CLI contract."""


class KerrlockError(Exception):
    exit_code = 1


class ConfigError(KerrlockError, ValueError):
    exit_code = 2


class NotConverged(KerrlockError):
    """Steady-state search ran out of time; ``result`` holds the best state."""

    exit_code = 3

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NonFinite(KerrlockError, FloatingPointError):
    exit_code = 4


class GuardError(KerrlockError):
    """A size, truncation or positivity guard was violated."""

    exit_code = 5


class TruncationLeak(GuardError):
    pass


class DegenerateNullSpace(KerrlockError):
    exit_code = 6


class TrustRegionWarning(UserWarning):
    pass
