"""Exception taxonomy shared across the package.

Every failure mode surfaced by the public API is an instance of
:class:`PSDBPError`, so callers can catch one base class at the CLI
boundary and still discriminate programmatically.
"""


class PSDBPError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(PSDBPError):
    """Parameter vector or model configuration outside its admissible domain."""


class ModelMisspecificationError(PSDBPError):
    """Model fails a structural requirement (e.g. no carrying capacity, no extinction path)."""


class TruncationError(PSDBPError):
    """Probability mass lost to truncation exceeds the configured bound."""


class ReducibilityError(PSDBPError):
    """Kernel has a zero row or column; the restriction to 1..z_max is not irreducible."""


class NonConvergenceError(PSDBPError):
    """Iterative procedure exhausted its budget.

    Carries diagnostic state (`residuals` for eigen solves, `log` for
    optimizer multistarts) when available.
    """

    def __init__(self, message, residuals=None, log=None):
        super().__init__(message)
        self.residuals = residuals
        self.log = log


class SpectralIntegrityError(PSDBPError):
    """Eigen data violates positivity/normalization requirements."""


class SurvivalRejectionError(PSDBPError):
    """Rejection sampling failed to produce a surviving trajectory.

    `survival_fraction` records the empirical survival rate over the
    attempted replications.
    """

    def __init__(self, message, survival_fraction=None, attempts=None):
        super().__init__(message)
        self.survival_fraction = survival_fraction
        self.attempts = attempts


class ExplosionError(PSDBPError):
    """Simulated population exceeded the hard state cap (mis-parameterization guard)."""


class CovarianceIntegrityError(PSDBPError):
    """Covariance matrix is not positive (semi-)definite where required."""


class IdentifiabilityError(PSDBPError):
    """Normal-equation matrix is numerically singular; parameters not identifiable."""


class InsufficientDataError(PSDBPError):
    """Input sample too short or empty for the requested operation."""
