"""Exception taxonomy shared across the package.

Schema problems (bad config files) raise SchemaError; violated modelling
assumptions raise AssumptionViolated or NonIrreducible; everything else is a
numerical failure of a specific operation.
"""


class PatchsisError(Exception):
    """Base class for package-specific failures."""


class SchemaError(PatchsisError):
    """A configuration document is malformed; `path` names the offending key."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class NonIrreducible(PatchsisError):
    """A generator or adjacency expected to be strongly connected is not."""


class AssumptionViolated(PatchsisError):
    """A structural model assumption fails for the given instance."""


class SolverFailure(PatchsisError):
    """A linear or fixed-point solve finished but missed its residual target."""


class InvalidTarget(PatchsisError):
    """A requested stationary target is not strictly positive."""


class ZeroPopulation(PatchsisError):
    """A referenced subpopulation is too small to divide by."""


class StepTooLarge(PatchsisError):
    """An integration step pushed a fraction outside [0, 1] beyond tolerance."""


class StepTooCoarse(PatchsisError):
    """A jump-process step has per-event probabilities above the safe cap."""


class EigenFailure(PatchsisError):
    """An eigenvalue or eigenvector computation did not converge."""


class NotEndemic(PatchsisError):
    """An endemic equilibrium was requested for a non-endemic instance."""


class NonConvergence(PatchsisError):
    """An iteration hit its cap before meeting tolerance."""


class DegenerateDenominator(PatchsisError):
    """A weighted deficit sum is exactly zero (all deficits equal)."""


class Infeasible(PatchsisError):
    """An intervention problem has no strictly feasible point."""


class MaxIterations(PatchsisError):
    """An optimizer exhausted its iteration budget."""
