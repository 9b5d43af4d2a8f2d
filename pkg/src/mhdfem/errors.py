"""Exception types shared by the solver and the CLI (which maps them to exit codes)."""


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


class CheckFailure(AssertionError):
    """A runtime invariant or post-solve assertion did not hold (exit code 1)."""


class PicardError(RuntimeError):
    """Picard iteration did not converge; ``history`` holds the increment norms."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class RunFailure(RuntimeError):
    """A time step failed; ``report`` is the partial RunReport and ``cause`` the original error."""

    def __init__(self, message, report, cause):
        super().__init__(message)
        self.report = report
        self.cause = cause
