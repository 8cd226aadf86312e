class MbpathError(Exception):
    """Base class for all errors raised by mbpath."""


class DataError(MbpathError, ValueError):
    """Malformed or inconsistent input data."""


class SolverError(MbpathError, ValueError):
    """The penalized problem is ill-posed (e.g. rank-deficient unpenalized block)."""


class DegenerateFitError(MbpathError):
    """A statistical quantity is undefined for the fitted data."""


class StageError(MbpathError):
    """Wraps an error raised inside one stage of the pathway pipeline."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class ConvergenceWarning(UserWarning):
    """Coordinate descent stopped at max_iter before meeting its tolerance."""
