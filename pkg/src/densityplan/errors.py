"""Exception hierarchy shared by all modules."""


class DensityPlanError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DensityPlanError):
    """Malformed input: bad dimensions, invalid probabilities, broken preconditions."""


class ScenarioValidationError(ValidationError):
    """Scenario file failed validation; carries every issue found, not just the first."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


class InfeasibleError(DensityPlanError):
    """A required feasibility or boundedness check failed.

    ``check`` names the check so failure manifests can report it.
    """

    def __init__(self, check, message):
        self.check = check
        super().__init__(f"{check}: {message}")


class SolverFailure(DensityPlanError):
    """An optimization backend returned a non-optimal or untrusted result."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class NumericalError(DensityPlanError):
    """A linear-algebra routine produced an unusable result (singular system, NaNs)."""
