"""Exception types shared across the package."""


class InvalidTemperatureError(ValueError):
    """Temperature must be strictly positive (and < 1 where a rule demands it)."""


class DegenerateDensityError(ValueError):
    """Raw mass vector cannot be normalized (all-zero, NaN, or negative beyond tolerance)."""


class GridMismatchError(ValueError):
    """Two objects that must share a grid do not."""


class UnsupportedDimensionError(ValueError):
    """Operation only defined for a subset of torus dimensions."""


class SupportError(ValueError):
    """A density is not strictly positive where the operation requires it."""


class StepSizeError(RuntimeError):
    """Time step violates the stability bound of the flux scheme.

    When raised from a full run, ``time`` carries the time at which
    adaptation failed and ``records`` the metrics collected up to it.
    """

    def __init__(self, message, time=None, records=None):
        super().__init__(message)
        self.time = time
        self.records = records if records is not None else []


class ScheduleValidationError(ValueError):
    """Annealing parameters violate one or more admissibility conditions.

    ``violations`` is a list of (key, message) pairs; keys are stable
    machine-readable identifiers (see dynamics.validate_annealing).
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{key}: {msg}" for key, msg in self.violations)
        super().__init__(f"annealing schedule rejected: {lines}")

    def violated_keys(self):
        return [key for key, _ in self.violations]
