"""Exception types shared across the package."""


class StbddcError(Exception):
    """Base class for all package errors."""


class StructurallySingular(StbddcError):
    """Factorization failed because the matrix is structurally singular."""


class NumericallySingular(StbddcError):
    """Factorization produced a pivot below the singularity threshold."""


class SingularBlock(StbddcError):
    """A subdomain time-step block could not be factorized.

    For correctly assembled blocks this cannot happen (the perturbed
    operators are positive definite), so it signals an assembly bug.
    """


class SingularSchur(StbddcError):
    """The local constraint Schur complement is singular (redundant rows)."""


class SingularCoarse(StbddcError):
    """The assembled global coarse matrix is singular."""


class NoConvergence(StbddcError):
    """An iterative solve did not reach its tolerance."""


class PicardStalled(StbddcError):
    """The nonlinear residual stopped decreasing over the stall window."""


class SizeCapExceeded(StbddcError):
    """A direct space-time solve was requested above the configured DOF cap."""


class ConfigError(StbddcError):
    """An experiment configuration file is missing or inconsistent."""
