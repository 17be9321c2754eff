"""Exception hierarchy shared by every module of the package."""


class PacingDynError(Exception):
    """Base class for all errors raised by pacing_dyn."""


class InvalidInput(PacingDynError, ValueError):
    pass


class InstanceTooLarge(PacingDynError, ValueError):
    pass


class GridOverflow(PacingDynError, ArithmeticError):
    pass


class ScheduleExceedsHorizon(PacingDynError, ValueError):
    pass


class ConfigError(PacingDynError, ValueError):
    pass


class ReductionViolation(PacingDynError, AssertionError):
    """A postcondition of the bid-matching reduction failed."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
