"""Population-size-dependent branching processes: simulation, conditioned
moments, survival-consistent weighted least-squares estimation, and
asymptotic confidence statements."""

from .errors import PSDBPError
from .models import (
    BaseDistribution,
    OffspringModel,
    OffspringPMF,
    binary_splitting_base,
    binomial_base,
    empirical_base,
    geometric_base,
)
from .kernel import (
    SpectralTriple,
    TruncatedKernel,
    build_kernel,
    convolve_power,
    default_z_max,
    spectral,
    spectral_oracle,
)
from .qprocess import (
    CurveCache,
    QProcess,
    grad_m_up,
    m_up,
    m_up_curve,
    q_transition,
    sigma2_up,
)
from .simulate import SimConfig, Trajectory, simulate, simulate_batch, simulate_surviving
from .estimation import (
    EstimateResult,
    OptConfig,
    SufficientStats,
    W1,
    W2,
    WeightScheme,
    estimate,
    mle_m,
    objective,
    sufficient_stats,
    weights,
)
from .asymptotics import (
    CovarianceReport,
    chi2_quantile_2dof,
    confidence_ellipse,
    confidence_interval,
    covariance,
    gamma_curve,
    normal_quantile,
)
from .experiments import (
    ExperimentConfig,
    StudyResult,
    SummaryTable,
    run_coverage_study,
    run_growing_study,
    run_stationary_study,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
