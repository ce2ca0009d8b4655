"""Exception hierarchy shared by all stallkit modules."""


class StallkitError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(StallkitError, ValueError):
    """Invalid configuration document or parameter set."""


class NoRealRoot(StallkitError):
    pass


class NoBracket(StallkitError):
    pass


class DegenerateEquilibrium(StallkitError):
    pass


class ZeroModePresent(StallkitError, ValueError):
    pass


class NegativePressure(StallkitError, FloatingPointError):
    pass


class StepSizeUnderflow(StallkitError):
    pass


class RankDeficient(StallkitError, ValueError):
    pass


class DimensionMismatch(StallkitError, ValueError):
    pass


class ZeroVariance(StallkitError, ValueError):
    pass


class Diverged(StallkitError):
    pass


class TooShort(StallkitError, ValueError):
    pass


class NotConverged(StallkitError):
    """Raised only on request; lasso_fit normally returns a flagged model."""


class Overflow(StallkitError, FloatingPointError):
    pass


class StageError(StallkitError):
    """Wraps a module error with the pipeline stage in which it occurred."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
