"""Exception types shared across the package."""


class ExtPidError(Exception):
    """Base class for all package-specific errors."""


class DuplicateEigenvalueError(ExtPidError):
    """Eigenvalue tuple has (numerically) coincident entries, so the
    diagonalizing matrix is degenerate."""


class InvalidBoundsError(ExtPidError):
    """Uncertainty bounds violate their own constraints (e.g. b_low <= 0)."""


class CertificateUnavailableError(ExtPidError):
    """Requested certificate constants do not exist for the given data
    (typically: eigenvalue tuple outside the certified manifold)."""


class BoundsUnknownError(ExtPidError):
    """Plant carries no derivable uncertainty bounds; caller must supply
    them explicitly."""


class SemiGlobalUnsupportedError(ExtPidError):
    """Semi-global constants need the function-valued envelopes tau1/tau2,
    which the given bounds do not provide."""


class PlantConstructionError(ExtPidError):
    """Preset parameters violate a documented inequality."""


class EvaluationError(ExtPidError):
    """Plant evaluated at a non-finite state."""


class ArityError(ExtPidError):
    """Controller called with mismatched dimensions or wrong mode."""


class NoPositiveDefiniteSolutionError(ExtPidError):
    """Continuous Lyapunov equation has no positive definite solution
    (companion matrix not Hurwitz)."""


class UnsupportedPlantError(ExtPidError):
    """Operation needs plant structure (e.g. a known equilibrium preimage)
    that this plant does not expose."""


class ConfigError(ExtPidError):
    """Experiment configuration is malformed; message carries the field path."""


class IntegrationBudgetError(ExtPidError):
    """Integration would exceed the configured step budget."""
