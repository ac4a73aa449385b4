"""Truncated transition kernel on states 1..z_max and its Perron eigen-structure.

Row ``i`` of the kernel is the i-fold convolution of the offspring
distribution at population size ``i``, with the extinction outcome
(column 0) removed and outcomes beyond ``z_max`` handled by a boundary
policy.  For the built-in families the i-fold convolution is computed
through the mixture identity

    conv_i((1-r) delta_0 + r b) = sum_j Binomial(j; i, r) conv_j(b),

which reduces kernel construction to one dense matrix product; the
generic binary-exponentiation route (``convolve_power``) is kept as the
public primitive and as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import (
    NonConvergenceError,
    ParameterDomainError,
    ReducibilityError,
    SpectralIntegrityError,
    TruncationError,
)
from .models import OffspringModel, OffspringPMF

BOUNDARY_POLICIES = ("lump-top", "kill")


@dataclass(frozen=True)
class TruncatedKernel:
    """Dense sub-stochastic matrix over states 1..z_max.

    ``rows[i-1, j-1]`` is the one-step probability i -> j.  ``lost_mass``
    holds the per-row probability of outcomes above ``z_max`` (added to
    the top column under ``lump-top``, dropped under ``kill``).
    """

    z_max: int
    rows: np.ndarray
    boundary_policy: str
    lost_mass: np.ndarray

    def row_sums(self) -> np.ndarray:
        return self.rows.sum(axis=1)


@dataclass(frozen=True)
class SpectralTriple:
    """Perron root with left/right vectors, normalized u.1 = u.v = 1."""

    rho: float
    u: np.ndarray
    v: np.ndarray
    residuals: tuple
    iterations: int = 0


def _truncated_convolve(a: np.ndarray, b: np.ndarray, out_len: int) -> np.ndarray:
    # entries 0..out_len-1 of a full convolution depend only on the same
    # prefix of the inputs, so truncating inside the loop stays exact
    return np.convolve(a[:out_len], b[:out_len])[:out_len]


def convolve_power(pmf: OffspringPMF, i: int, out_max: int) -> OffspringPMF:
    """PMF of the sum of ``i`` independent draws, truncated at ``out_max``.

    Uses binary exponentiation (O(log i) convolutions).  The mass pushed
    beyond ``out_max`` accumulates in ``tail_mass``.
    """
    if i < 1:
        raise ParameterDomainError(f"convolution power requires i >= 1, got {i}")
    if out_max < 1:
        raise ParameterDomainError(f"out_max must be >= 1, got {out_max}")
    out_len = out_max + 1
    total = float(pmf.probs.sum()) + pmf.tail_mass
    result = np.array([1.0])
    power = pmf.probs.copy()
    n = i
    while n:
        if n & 1:
            result = _truncated_convolve(result, power, out_len)
        n >>= 1
        if n:
            power = _truncated_convolve(power, power, out_len)
    if result.size < out_len:
        result = np.pad(result, (0, out_len - result.size))
    tail = total**i - float(result.sum())
    return OffspringPMF(result, max(tail, 0.0))


def _binomial_weight_rows(counts: np.ndarray, probs: np.ndarray, j_max: int) -> np.ndarray:
    """Matrix W[a, j] = Binomial(j; counts[a], probs[a]) for j = 0..j_max."""
    counts = np.asarray(counts, dtype=np.int64)
    probs = np.asarray(probs, dtype=float)
    j = np.arange(j_max + 1)
    lgfact = gammaln(np.arange(max(int(counts.max()), j_max) + 2, dtype=float) + 1.0)
    diff = counts[:, None] - j[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = (
            lgfact[counts][:, None]
            - lgfact[j][None, :]
            - lgfact[np.maximum(diff, 0)]
            + j[None, :] * np.log(probs)[:, None]
            + diff * np.log1p(-probs)[:, None]
        )
    logw[diff < 0] = -np.inf
    w = np.exp(logw)
    # exact handling of degenerate success probabilities
    for a in np.nonzero(probs == 0.0)[0]:
        w[a] = 0.0
        w[a, 0] = 1.0
    for a in np.nonzero(probs == 1.0)[0]:
        w[a] = 0.0
        w[a, int(counts[a])] = 1.0
    return w


def _base_power_table(base_probs: np.ndarray, j_max: int, out_len: int) -> np.ndarray:
    """B[j, :] = j-fold convolution of the base pmf, entries 0..out_len-1."""
    table = np.zeros((j_max + 1, out_len))
    table[0, 0] = 1.0
    row = table[0]
    for j in range(1, j_max + 1):
        row = _truncated_convolve(row, base_probs, out_len)
        table[j, : row.size] = row
    return table


def _survivor_convolve(rows: np.ndarray, death_prob: float) -> np.ndarray:
    """Convolve row i (1-indexed) with Binomial(i, 1 - death_prob) in place.

    The binomial factor is evaluated on an 8-sigma band around its mean;
    the neglected mass is below 1e-14 per row.
    """
    z_max, out_len = rows.shape[0], rows.shape[1]
    surv = 1.0 - death_prob
    out = np.zeros_like(rows)
    lg = gammaln(np.arange(z_max + 2, dtype=float) + 1.0)  # lg[k] = log k!
    for i in range(1, z_max + 1):
        sd = math.sqrt(i * surv * death_prob)
        lo = max(0, int(math.floor(i * surv - 8.0 * sd - 2.0)))
        hi = min(i, int(math.ceil(i * surv + 8.0 * sd + 2.0)))
        s = np.arange(lo, hi + 1)
        logd = lg[i] - lg[s] - lg[i - s] + s * math.log(surv) + (i - s) * math.log(death_prob)
        band = np.exp(logd)
        conv = np.convolve(rows[i - 1], band)
        seg = conv[: out_len - lo]
        out[i - 1, lo : lo + seg.size] = seg
    return out


def build_kernel(
    model: OffspringModel,
    theta,
    z_max: int,
    policy: str = "lump-top",
    kill_tail_bound: float = 1e-6,
) -> TruncatedKernel:
    """Transition kernel of the population chain restricted to 1..z_max.

    ``policy`` controls outcomes above ``z_max``: ``lump-top`` adds them
    to column ``z_max`` (preserving one-step survival mass), ``kill``
    drops them and errors out if any row loses more than
    ``kill_tail_bound``.
    """
    if z_max < 1:
        raise ParameterDomainError(f"z_max must be >= 1, got {z_max}")
    if policy not in BOUNDARY_POLICIES:
        raise ParameterDomainError(f"unknown boundary policy {policy!r}")
    theta = model.validate_theta(theta)
    states = np.arange(1, z_max + 1)
    r = np.asarray(model.reproduction_probability(states, theta), dtype=float)
    base = model.base_distribution(theta)

    out_len = z_max + 1
    weights = _binomial_weight_rows(states, r, z_max)
    powers = _base_power_table(base.probs, z_max, out_len)
    full_rows = weights @ powers  # full_rows[i-1, k] = P(offspring sum = k | Z = i)
    if model.is_robin:
        full_rows = _survivor_convolve(full_rows, model.death_prob)

    # per-individual mass after base truncation, then the i-fold total;
    # cap accumulated float excess at the analytic row mass so the
    # kernel stays sub-stochastic
    per_individual = 1.0 - r * base.tail_mass
    totals = np.exp(states * np.log(per_individual))
    sums = full_rows.sum(axis=1)
    over = sums > totals
    if np.any(over):
        full_rows[over] *= (totals[over] / sums[over])[:, None]
    lost = np.maximum(totals - full_rows.sum(axis=1), 0.0)

    rows = full_rows[:, 1:].copy()
    if policy == "lump-top":
        rows[:, -1] += lost
    elif np.any(lost > kill_tail_bound):
        worst = int(np.argmax(lost)) + 1
        raise TruncationError(
            f"row {worst} loses probability {lost[worst - 1]:.3e} beyond z_max={z_max} "
            f"under the kill policy (bound {kill_tail_bound:.3e})"
        )
    return TruncatedKernel(z_max, rows, policy, lost)


def default_z_max(k_cap: float, max_observed: int = 0) -> int:
    """Truncation level heuristic: generous multiples of K and of the data range."""
    return int(max(math.ceil(8 * k_cap), 4 * max_observed, 64))


def spectral(
    kernel: TruncatedKernel,
    tol: float = 1e-12,
    max_iter: int = 100000,
    u0: np.ndarray | None = None,
    v0: np.ndarray | None = None,
) -> SpectralTriple:
    """Perron root and left/right vectors by two-sided power iteration.

    Starts from the uniform vector (deterministic) unless warm-start
    vectors are supplied; iterates until both eigen residuals fall below
    ``tol`` (relative to the iterate's max-norm).
    """
    a = kernel.rows
    n = a.shape[0]
    # A zero row breaks the Perron structure outright.  Zero columns are
    # tolerated: lattice-supported offspring laws (e.g. binary splitting)
    # confine the chain to a sublattice, where the left vector simply
    # vanishes off the communicating class.
    if np.any(a.sum(axis=1) == 0.0):
        raise ReducibilityError("kernel has a zero row on 1..z_max")

    v = np.full(n, 1.0 / n) if v0 is None else np.asarray(v0, dtype=float) / np.sum(v0)
    u = np.full(n, 1.0 / n) if u0 is None else np.asarray(u0, dtype=float) / np.sum(u0)
    check_every = 1 if n <= 32 else 8  # residual checks cost as much as a step
    res_u = res_v = math.inf
    iterations = 0
    converged = False
    while iterations < max_iter:
        iterations += 1
        v_new = a @ v
        u_new = u @ a
        rho_r = float(v_new.sum())
        rho_l = float(u_new.sum())
        if iterations % check_every == 0 or iterations == max_iter:
            res_v = float(np.abs(v_new - rho_r * v).max()) / max(float(v_new.max()), 1e-300)
            res_u = float(np.abs(u_new - rho_l * u).max()) / max(float(u_new.max()), 1e-300)
            if res_v < tol and res_u < tol and abs(rho_r - rho_l) < tol * max(rho_r, rho_l):
                converged = True
        v = v_new / rho_r
        u = u_new / rho_l
        if converged:
            break
    if not converged:
        raise NonConvergenceError(
            f"power iteration did not reach tol={tol} in {max_iter} iterations",
            residuals=(res_u, res_v),
        )
    return _finalize_triple(a, u, v, iterations)


def _finalize_triple(a, u, v, iterations) -> SpectralTriple:
    u = u / u.sum()
    rho = float(u @ a @ v) / float(u @ v)
    v = v / float(u @ v)
    if rho <= 0.0 or np.any(v <= 0.0) or np.any(u < 0.0):
        raise SpectralIntegrityError("eigen data violates positivity requirements")
    left = float(np.max(np.abs(u @ a - rho * u))) / float(np.max(u))
    right = float(np.max(np.abs(a @ v - rho * v))) / float(np.max(v))
    return SpectralTriple(rho, u, v, (left, right), iterations)


def spectral_oracle(kernel: TruncatedKernel, squarings: int = 40) -> SpectralTriple:
    """Independent eigen solve through repeated matrix squaring (test scale).

    Squares the kernel until it is numerically rank-one, reading off the
    Perron root from the accumulated norm growth and the vectors from
    the rank-one limit.  Intended for z_max <= 64.
    """
    if kernel.z_max > 64:
        raise ParameterDomainError("spectral_oracle is limited to z_max <= 64")
    a = kernel.rows
    m = a.copy()
    scale = 0.0  # log of the true max entry of Q**(2**s)
    converged = False
    for s in range(squarings):
        m = m @ m
        top = float(m.max())
        if not np.isfinite(top) or top <= 0.0:
            raise NonConvergenceError(
                "oracle matrix under/overflowed before rank-one convergence"
            )
        m /= top
        scale = 2.0 * scale + math.log(top)
        rank_one = np.outer(m.sum(axis=1), m.sum(axis=0)) / m.sum()
        if np.max(np.abs(m - rank_one)) < 1e-13:
            converged = True
    if not converged:
        raise NonConvergenceError("oracle did not reach a rank-one limit")
    # total exponent 2**squarings; growth rate recovers the Perron root
    rho_growth = math.exp(scale / 2.0**squarings)
    u = m.sum(axis=0)
    v = m.sum(axis=1)
    triple = _finalize_triple(a, u / u.sum(), v / v.sum(), squarings)
    return SpectralTriple(
        rho_growth, triple.u, triple.v, triple.residuals, triple.iterations
    )
