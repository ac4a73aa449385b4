"""Asymptotic covariance of the weighted least-squares estimator.

For a trajectory conditioned on survival to time n, the scaled error
sqrt(n) (theta_hat - theta) is asymptotically normal with the sandwich
covariance  beta = eta^-1 zeta eta^-1, where with limit weights w_z and
conditioned-mean gradients g_z = grad m_up(z, theta):

    eta  = 2 sum_z w_z        g_z g_z^T
    zeta = 4 sum_z w_z^2 gamma(z) g_z g_z^T
    gamma(z) = sigma2_up(z) / (u_z v_z)

gamma(z) is also the asymptotic variance of sqrt(n) (m_hat_n(z) -
m_up(z)) on its own.  Quantiles for intervals and ellipses use
documented rational approximations (no lookup tables).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CovarianceIntegrityError, IdentifiabilityError, TruncationError
from .estimation import WeightScheme
from .models import OffspringModel
from .qprocess import CurveCache, CurveEntry, default_cache, grad_m_up


@dataclass(frozen=True)
class CovarianceReport:
    """Sandwich-covariance ingredients at one parameter point."""

    theta: np.ndarray
    scheme: WeightScheme
    z_max: int
    gamma: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    beta: np.ndarray
    weight_limit: np.ndarray
    tail_weight: float


def limit_weights(entry: CurveEntry, scheme: WeightScheme) -> np.ndarray:
    """Large-n limit of the empirical weights under the given scheme.

    The time-share weights converge to the stationary law u*v of the
    conditioned chain; the parent-share weights to its size-biased
    version.
    """
    uv = entry.stationary
    if scheme.kind == "w1":
        return uv
    states = np.arange(1.0, entry.z_max + 1)
    w2 = states * uv / float(states @ uv)
    if scheme.kind == "w2":
        return w2
    w = np.where(states <= scheme.cap, w2, 0.0)
    total = w.sum()
    if total == 0.0:
        raise TruncationError(f"no stationary mass at or below cap {scheme.cap}")
    return w / total


def gamma_curve(
    model: OffspringModel, theta0, z_max: int, cache: CurveCache | None = None
) -> np.ndarray:
    """Asymptotic variance curve of the per-state growth estimates."""
    cache = cache or default_cache()
    entry = cache.entry(model, theta0, z_max, need_left=True)
    return _gamma_from_entry(entry)


def _gamma_from_entry(entry: CurveEntry) -> np.ndarray:
    """sigma2_up / (u v) on the support of the stationary law.

    Lattice-supported offspring laws leave exact zeros off the
    communicating class; those states carry no weight and get gamma =
    inf.  Positive-but-subnormal mass, by contrast, signals a too-deep
    truncation.
    """
    uv = entry.stationary
    support = uv > 0.0
    if np.any(uv[support] < 1e-300):
        raise TruncationError(
            "stationary mass underflows at some supported states; reduce z_max"
        )
    gamma = np.full(uv.shape, np.inf)
    gamma[support] = entry.sigma2_up[support] / uv[support]
    return gamma


def covariance(
    model: OffspringModel,
    theta0,
    scheme: WeightScheme,
    z_max: int,
    cache: CurveCache | None = None,
    h=None,
) -> CovarianceReport:
    """Sandwich covariance evaluated at ``theta0`` (finite-difference gradients)."""
    cache = cache or default_cache()
    theta0 = model.validate_theta(theta0)
    entry = cache.entry(model, theta0, z_max, need_left=True)
    w = limit_weights(entry, scheme)
    gamma = _gamma_from_entry(entry)
    grads = grad_m_up(model, theta0, z_max, h=h, cache=cache)

    mask = w > 0.0  # off-support states carry no weight (and gamma = inf there)
    wm, gm, grads_m = w[mask], gamma[mask], grads[mask]
    eta = 2.0 * grads_m.T @ (wm[:, None] * grads_m)
    zeta = 4.0 * grads_m.T @ ((wm**2 * gm)[:, None] * grads_m)
    eta = 0.5 * (eta + eta.T)
    zeta = 0.5 * (zeta + zeta.T)

    eig = np.linalg.eigvalsh(eta)
    if eig[0] < 1e-10 * max(eig[-1], 0.0) or eig[-1] <= 0.0:
        raise IdentifiabilityError(
            f"normal-equation matrix is numerically singular (eigenvalues {eig})"
        )
    # beta = eta^-1 zeta eta^-1 via two symmetric solves, no explicit inverse
    half = np.linalg.solve(eta, zeta)
    beta = np.linalg.solve(eta, half.T).T
    beta = 0.5 * (beta + beta.T)
    if np.linalg.eigvalsh(beta)[0] < -1e-10 * max(np.abs(beta).max(), 1.0):
        raise CovarianceIntegrityError("sandwich covariance is not positive semi-definite")

    top = max(1, int(math.ceil(0.01 * entry.z_max)))
    return CovarianceReport(
        theta0, scheme, int(z_max), gamma, eta, zeta, beta, w, float(w[-top:].sum())
    )


# Rational approximation of the standard normal quantile (Acklam's
# coefficients, |relative error| < 1.2e-9) followed by one Halley step,
# which brings the absolute error to machine precision.
_ACKLAM_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACKLAM_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
             6.680131188771972e+01, -1.328068155288572e+01)
_ACKLAM_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACKLAM_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
             3.754408661907416e+00)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF; |error| well below 1e-8 on (0, 1)."""
    if not 0.0 <= p <= 1.0:
        raise CovarianceIntegrityError(f"probability must lie in [0, 1], got {p}")
    if p == 0.0:
        return -math.inf
    if p == 1.0:
        return math.inf
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        )
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    # one Halley refinement against the exact CDF
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def chi2_quantile_2dof(level: float) -> float:
    """Quantile of the chi-square law with 2 degrees of freedom (exact form)."""
    if not 0.0 <= level < 1.0:
        raise CovarianceIntegrityError(f"level must lie in [0, 1), got {level}")
    return -2.0 * math.log1p(-level)


def confidence_interval(theta_hat, beta: np.ndarray, n: int, level: float) -> list:
    """Per-component normal intervals theta_j +/- q sqrt(beta_jj / n)."""
    if not 0.0 <= level < 1.0 or n < 1:
        raise CovarianceIntegrityError(f"need 0 <= level < 1 and n >= 1, got {level}, {n}")
    theta_hat = np.asarray(theta_hat, dtype=float)
    diag = np.diag(np.asarray(beta, dtype=float))
    if np.any(diag < -1e-12):
        raise CovarianceIntegrityError(f"negative variance on the diagonal: {diag}")
    q = normal_quantile(0.5 * (1.0 + level))
    half = q * np.sqrt(np.maximum(diag, 0.0) / n)
    return [(float(t - hw), float(t + hw)) for t, hw in zip(theta_hat, half)]


def confidence_ellipse(
    theta_hat, beta: np.ndarray, n: int, level: float, points: int = 128
) -> np.ndarray:
    """Boundary polyline of the 2-D normal confidence region.

    Returns an array with columns (phi, x, y): theta_hat + A c(phi) /
    sqrt(n) with A A^T = beta * chi2 quantile.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if theta_hat.shape != (2,) or beta.shape != (2, 2):
        raise CovarianceIntegrityError("confidence ellipse requires d = 2")
    try:
        chol = np.linalg.cholesky(beta)
    except np.linalg.LinAlgError as err:
        raise CovarianceIntegrityError("covariance is not positive definite") from err
    radius = math.sqrt(chi2_quantile_2dof(level))
    phi = np.linspace(0.0, 2.0 * math.pi, points, endpoint=False)
    circle = np.vstack([np.cos(phi), np.sin(phi)])
    boundary = theta_hat[:, None] + (chol @ circle) * radius / math.sqrt(n)
    return np.column_stack([phi, boundary[0], boundary[1]])
