"""Exception types shared across the package."""


class CavityError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(CavityError):
    """Invalid mesh or mapping (non-positive Jacobian, bad topology, ...)."""


class NumericalError(CavityError):
    """A numerical operation failed (factorization, missing eigenvalues, ...)."""


class RankDeficiencyError(NumericalError):
    """A basis construction ran out of numerical rank.

    Carries the achievable basis size in ``achievable``.
    """

    def __init__(self, message, achievable):
        super().__init__(message)
        self.achievable = achievable


class GapUndefinedError(CavityError):
    """All eigenvalues fall into one multiplicity cluster, no spectral gap."""


class SingularDerivativeError(NumericalError):
    """The bordered derivative system is numerically singular.

    Typically caused by a multiple eigenvalue; ``cluster_size`` carries the
    multiplicity diagnosis when available.
    """

    def __init__(self, message, cluster_size=None):
        super().__init__(message)
        self.cluster_size = cluster_size


class ConfigError(CavityError):
    """Invalid run configuration (unknown key, bad value, schema mismatch)."""
