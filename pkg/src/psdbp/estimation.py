"""Weighted least-squares estimation from population-size counts.

The estimators summarise one or more trajectories into per-state mean
growth ratios (``mle_m``), then fit theta by minimising

    sum_z w(z) * (m_hat(z) - T(z, theta))**2

over visited states, where the target T is either the conditioned mean
``m_up`` (survival-consistent fit) or the raw mean ``m`` (its naive
counterpart), and w is one of two empirical weight schemes: time
occupation (w1) or parent share (w2).

Minimisation is a bounded Nelder-Mead direct search run from a lattice
of starting points; the carrying-capacity coordinate is optimised in
log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import (
    InsufficientDataError,
    NonConvergenceError,
    ParameterDomainError,
    PSDBPError,
)
from .models import OffspringModel
from .qprocess import CurveCache, default_cache
from .simulate import Trajectory

_PENALTY = 1e10  # objective stand-in where the spectral pipeline fails


@dataclass(frozen=True)
class WeightScheme:
    """Weighting rule: ``w1`` (time share), ``w2`` (parent share), or
    ``capped`` (parent share restricted to states <= cap, renormalised)."""

    kind: str
    cap: int | None = None

    def __post_init__(self):
        if self.kind not in ("w1", "w2", "capped"):
            raise ParameterDomainError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "capped" and (self.cap is None or self.cap < 1):
            raise ParameterDomainError("capped scheme requires cap >= 1")

    def label(self) -> str:
        return self.kind if self.kind != "capped" else f"capped{self.cap}"


W1 = WeightScheme("w1")
W2 = WeightScheme("w2")

MODES = ("qprocess", "raw")


@dataclass
class SufficientStats:
    """Visit counts and successor sums extracted from trajectories.

    ``visits[z]`` counts time steps with parent population z,
    ``successor_sum[z]`` totals the next-step populations over those
    steps.  Steps out of state 0 are never counted, so ``n_steps``
    equals the number of counted (positive-parent) steps.
    """

    visits: dict
    successor_sum: dict
    total_parents: float
    n_steps: int

    def __post_init__(self):
        if set(self.successor_sum) - set(self.visits):
            raise ParameterDomainError("successor_sum keys must be a subset of visits keys")
        if any(c <= 0 for c in self.visits.values()):
            raise ParameterDomainError("visit counts must be positive")
        parents = float(sum(z * c for z, c in self.visits.items()))
        if abs(parents - self.total_parents) > 1e-9 * max(1.0, parents):
            raise ParameterDomainError("total_parents inconsistent with visit counts")

    def states(self) -> np.ndarray:
        return np.array(sorted(self.visits), dtype=np.int64)

    def max_state(self) -> int:
        return max(self.visits)


def sufficient_stats(trajectories) -> SufficientStats:
    """Pool counts over one or more trajectories (order-independent)."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    trajectories = list(trajectories)
    if not trajectories:
        raise InsufficientDataError("no trajectories supplied")
    visits: dict = {}
    succ: dict = {}
    for traj in trajectories:
        states = np.asarray(traj.states, dtype=np.int64)
        if states.size < 2:
            raise InsufficientDataError("each trajectory needs at least two observations")
        parents, children = states[:-1], states[1:]
        mask = parents > 0
        uniq, inverse = np.unique(parents[mask], return_inverse=True)
        counts = np.bincount(inverse)
        sums = np.bincount(inverse, weights=children[mask].astype(float))
        for z, c, s in zip(uniq.tolist(), counts.tolist(), sums.tolist()):
            visits[z] = visits.get(z, 0) + c
            succ[z] = succ.get(z, 0.0) + s
    total_parents = float(sum(z * c for z, c in visits.items()))
    return SufficientStats(visits, succ, total_parents, int(sum(visits.values())))


def mle_m(stats: SufficientStats, z: int) -> float:
    """Per-state growth-ratio estimate, with the 0/0 = 0 convention."""
    if z < 1:
        raise ParameterDomainError("state must be >= 1")
    count = stats.visits.get(z, 0)
    if count == 0:
        return 0.0
    return stats.successor_sum[z] / (z * count)


def weights(stats: SufficientStats, scheme: WeightScheme) -> dict:
    """Empirical weights over visited states; values sum to 1."""
    if scheme.kind == "w1":
        return {z: c / stats.n_steps for z, c in stats.visits.items()}
    w2 = {z: z * c / stats.total_parents for z, c in stats.visits.items()}
    if scheme.kind == "w2":
        return w2
    kept = {z: w for z, w in w2.items() if z <= scheme.cap}
    total = sum(kept.values())
    if total == 0.0:
        raise ParameterDomainError(f"no visited state at or below cap {scheme.cap}")
    return {z: w / total for z, w in kept.items()}


def _target_arrays(stats: SufficientStats, scheme: WeightScheme):
    w_map = weights(stats, scheme)
    zs = np.array(sorted(w_map), dtype=np.int64)
    w = np.array([w_map[z] for z in zs])
    m_hat = np.array([mle_m(stats, int(z)) for z in zs])
    return zs, w, m_hat


def objective(
    theta,
    stats: SufficientStats,
    scheme: WeightScheme,
    mode: str,
    z_max: int,
    model: OffspringModel,
    cache: CurveCache | None = None,
) -> float:
    """Weighted squared distance between m_hat and the model target curve."""
    if mode not in MODES:
        raise ParameterDomainError(f"unknown mode {mode!r}")
    zs, w, m_hat = _target_arrays(stats, scheme)
    if z_max < zs[-1]:
        raise ParameterDomainError(
            f"z_max={z_max} below the largest visited state {zs[-1]}"
        )
    if mode == "raw":
        target = np.asarray(model.mean(zs.astype(float), theta))
    else:
        cache = cache or default_cache()
        target = cache.entry(model, theta, z_max).m_up[zs - 1]
    return float(w @ (m_hat - target) ** 2)


@dataclass
class OptConfig:
    """Box bounds, multistart lattice and simplex tolerances for `estimate`.

    ``bounds`` defaults to the model's family bounds given the largest
    observed state.  The start lattice is log-spaced in K and linear in
    the second coordinate.  When ``refine_top_k`` is set, the simplex
    search runs only from the best-scoring lattice points; by default it
    runs from every one.
    """

    bounds: tuple | None = None
    grid_shape: tuple = (5, 5)
    refine_top_k: int | None = None
    xatol: float = 1e-8
    fatol: float = 1e-12
    max_iter_per_start: int = 2000
    z_cap: int = 512
    extra_starts: tuple = field(default_factory=tuple)


@dataclass
class EstimateResult:
    theta_hat: np.ndarray
    objective: float
    mode: str
    scheme: WeightScheme
    iterations: int
    converged: bool
    multistart_log: list


def eval_z_max(k_cand: float, max_state: int, z_cap: int = 512) -> int:
    """Truncation band for objective evaluations at candidate K.

    Bands are multiples of 64 covering max(3.2 K, 1.25 * max_state, 64),
    capped at ``z_cap`` (the cap itself grows if the data demands it).
    Quantized bands keep eigen solves warm-startable while candidate K
    moves; 3.2 K leaves the stationary mass above the band negligible.
    """
    floor_need = max(64, int(math.ceil(1.25 * max_state)))
    need = max(3.2 * k_cand, float(floor_need))
    band = 64 * int(math.ceil(need / 64.0))
    cap = max(z_cap, 64 * int(math.ceil(floor_need / 64.0)))
    return min(band, cap)


class _BoxTransform:
    """Map the unit square onto the bounds box, log-scaled in K."""

    def __init__(self, bounds):
        (self.k_lo, self.k_hi), (self.s_lo, self.s_hi) = bounds
        if not (0 < self.k_lo < self.k_hi and self.s_lo < self.s_hi):
            raise ParameterDomainError(f"invalid bounds {bounds!r}")
        self.log_k_lo = math.log(self.k_lo)
        self.log_k_span = math.log(self.k_hi) - self.log_k_lo

    def theta(self, x) -> np.ndarray:
        k = math.exp(self.log_k_lo + float(np.clip(x[0], 0, 1)) * self.log_k_span)
        s = self.s_lo + float(np.clip(x[1], 0, 1)) * (self.s_hi - self.s_lo)
        return np.array([k, s])

    def x(self, theta) -> np.ndarray:
        return np.array(
            [
                (math.log(theta[0]) - self.log_k_lo) / self.log_k_span,
                (theta[1] - self.s_lo) / (self.s_hi - self.s_lo),
            ]
        )


def estimate(
    stats: SufficientStats,
    model: OffspringModel,
    scheme: WeightScheme,
    mode: str = "qprocess",
    opt: OptConfig | None = None,
    cache: CurveCache | None = None,
) -> EstimateResult:
    """Fit theta by bounded multistart Nelder-Mead on the weighted objective."""
    opt = opt or OptConfig()
    cache = cache or default_cache()
    zs, w, m_hat = _target_arrays(stats, scheme)
    max_state = int(zs[-1])
    bounds = opt.bounds or model.theta_bounds(max_state)
    box = _BoxTransform(bounds)

    def objective_x(x) -> float:
        theta = box.theta(x)
        z_max = eval_z_max(theta[0], max_state, opt.z_cap)
        try:
            if mode == "raw":
                target = np.asarray(model.mean(zs.astype(float), theta))
            else:
                target = cache.entry(model, theta, z_max).m_up[zs - 1]
        except PSDBPError:
            return _PENALTY
        return float(w @ (m_hat - target) ** 2)

    nk, ns = opt.grid_shape
    grid = [
        np.array([gk, gs])
        for gk in np.linspace(0.02, 0.98, nk)
        for gs in np.linspace(0.02, 0.98, ns)
    ]
    grid.extend(np.clip(box.x(t), 0.0, 1.0) for t in opt.extra_starts)

    scores = [objective_x(x0) for x0 in grid]
    order = sorted(range(len(grid)), key=lambda i: scores[i])
    refine = set(order if opt.refine_top_k is None else order[: opt.refine_top_k])

    log = []
    best = None
    any_success = False
    for i, x0 in enumerate(grid):
        if i not in refine:
            log.append((box.theta(x0), box.theta(x0), scores[i]))
            continue
        res = minimize(
            objective_x,
            x0,
            method="Nelder-Mead",
            bounds=[(0.0, 1.0), (0.0, 1.0)],
            options={
                "xatol": opt.xatol,
                "fatol": opt.fatol,
                "maxiter": opt.max_iter_per_start,
                "maxfev": 4 * opt.max_iter_per_start,
            },
        )
        theta_end = box.theta(res.x)
        log.append((box.theta(x0), theta_end, float(res.fun)))
        any_success = any_success or bool(res.success)
        run = (float(res.fun), float(theta_end[0]), theta_end, bool(res.success), int(res.nit))
        if best is None:
            better = True
        else:
            tol = 1e-12 * (1.0 + abs(best[0]))
            better = run[0] < best[0] - tol or (abs(run[0] - best[0]) <= tol and run[1] < best[1])
        if better:
            best = run
    if best is None or not any_success:
        raise NonConvergenceError("every simplex start failed to converge", log=log)
    f_best, _, theta_hat, success, nit = best
    return EstimateResult(theta_hat, f_best, mode, scheme, nit, success, log)
