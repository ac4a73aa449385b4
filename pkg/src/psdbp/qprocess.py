"""The survival-conditioned chain (Q-process) and its moment curves.

Conditioning the population chain on never being extinct in the distant
future yields a positive-recurrent chain with transition matrix

    q_up[i, j] = Q[i, j] * v[j] / (rho * v[i])

and stationary distribution ``u * v``, where (rho, u, v) is the Perron
triple of the truncated kernel Q.  The per-individual conditioned mean
``m_up(z)`` and normalised variance ``sigma2_up(z)`` drive both the
least-squares objective and the asymptotic covariance, so curve
evaluation is memoized per (model, theta, z_max) and eigen solves are
warm-started along an evaluation sequence.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    ModelMisspecificationError,
    NonConvergenceError,
    ParameterDomainError,
    ReducibilityError,
    SpectralIntegrityError,
)
from .kernel import SpectralTriple, TruncatedKernel, build_kernel
from .models import OffspringModel


@dataclass(frozen=True)
class QProcess:
    """Conditioned transition matrix with its stationary law and eigen source."""

    q_up: np.ndarray
    stationary: np.ndarray
    kernel: TruncatedKernel
    triple: SpectralTriple

    @property
    def z_max(self) -> int:
        return self.kernel.z_max


def q_transition(triple: SpectralTriple, kernel: TruncatedKernel) -> QProcess:
    """Doob transform of the kernel by its Perron triple."""
    if np.any(triple.v <= 0.0):
        raise SpectralIntegrityError("right vector must be strictly positive")
    q_up = kernel.rows * (triple.v[None, :] / (triple.rho * triple.v[:, None]))
    return QProcess(q_up, triple.u * triple.v, kernel, triple)


def m_up(qp: QProcess, z: int) -> float:
    """Conditioned mean offspring per individual at population size z."""
    _check_state(qp, z)
    states = np.arange(1, qp.z_max + 1)
    return float(qp.q_up[z - 1] @ states) / z


def sigma2_up(qp: QProcess, z: int) -> float:
    """Conditioned normalised offspring variance at population size z."""
    _check_state(qp, z)
    states = np.arange(1, qp.z_max + 1)
    second = float(qp.q_up[z - 1] @ states**2)
    return second / z**2 - m_up(qp, z) ** 2


def _check_state(qp: QProcess, z: int):
    if not 1 <= z <= qp.z_max:
        raise ParameterDomainError(f"state {z} outside 1..{qp.z_max}")


def m_up_vector(qp: QProcess) -> np.ndarray:
    states = np.arange(1.0, qp.z_max + 1)
    return (qp.q_up @ states) / states


def sigma2_up_vector(qp: QProcess) -> np.ndarray:
    states = np.arange(1.0, qp.z_max + 1)
    return (qp.q_up @ states**2) / states**2 - m_up_vector(qp) ** 2


def _require_extinction_path(kernel: TruncatedKernel):
    deficits = 1.0 - kernel.row_sums()
    if kernel.boundary_policy == "kill":
        deficits = deficits - kernel.lost_mass
    if np.max(deficits) < 1e-15:
        raise ModelMisspecificationError(
            "no state can reach extinction in one step; the conditioned chain "
            "is degenerate (rho = 1 boundary)"
        )


@dataclass(frozen=True)
class CurveEntry:
    """Conditioned quantities derived from one eigen solve.

    ``u`` and ``stationary`` are None on right-only entries (enough for
    the mean curve); requesting them triggers the left solve.
    """

    z_max: int
    m_up: np.ndarray
    sigma2_up: np.ndarray
    stationary: np.ndarray | None
    rho: float
    u: np.ndarray | None
    v: np.ndarray


def _power_side(a: np.ndarray, tol: float, max_iter: int, x0, left: bool):
    """One-sided power iteration; returns (rho, vector, iterations)."""
    n = a.shape[0]
    x = np.full(n, 1.0 / n) if x0 is None else np.asarray(x0, dtype=float) / np.sum(x0)
    check_every = 1 if n <= 32 else 8
    iterations = 0
    converged = False
    while iterations < max_iter:
        iterations += 1
        x_new = x @ a if left else a @ x
        rho = float(x_new.sum())
        if iterations % check_every == 0 or iterations == max_iter:
            res = float(np.abs(x_new - rho * x).max()) / max(float(x_new.max()), 1e-300)
            converged = res < tol
        x = x_new / rho
        if converged:
            return rho, x, iterations
    raise NonConvergenceError(
        f"one-sided power iteration did not reach tol={tol} in {max_iter} iterations"
    )


def _curves_from_v(a: np.ndarray, rho: float, v: np.ndarray):
    states = np.arange(1.0, a.shape[0] + 1)
    vk = v * states
    denom = rho * v * states
    mean = (a @ vk) / denom
    second = (a @ (vk * states)) / (denom * states)
    return mean, second - mean**2


class CurveCache:
    """Memo store for conditioned-moment curves, keyed on (model, theta, z_max).

    Theta is rounded to 12 significant digits so optimizer re-evaluations
    at identical points hit the cache without approximating distinct
    points.  Insert/lookup are guarded by a lock for concurrent use; the
    last eigen vectors per (model, z_max) warm-start the next solve.
    The default (right-only) entry is enough for the mean curve; the
    stationary law additionally runs the left iteration on first demand.
    """

    def __init__(self, tol: float = 1e-12, max_iter: int = 100000):
        self.tol = tol
        self.max_iter = max_iter
        self._entries: dict = {}
        self._warm_u: dict = {}
        self._warm_v: dict = {}
        self._lock = threading.Lock()

    @staticmethod
    def _theta_key(theta) -> tuple:
        return tuple(float(f"{x:.12g}") for x in np.asarray(theta, dtype=float))

    def entry(self, model: OffspringModel, theta, z_max: int,
              need_left: bool = False) -> CurveEntry:
        key = (model.cache_key(), self._theta_key(theta), int(z_max))
        warm_key = (key[0], int(z_max))
        with self._lock:
            hit = self._entries.get(key)
        if hit is not None and (hit.u is not None or not need_left):
            return hit
        if hit is None:
            kernel = build_kernel(model, theta, z_max)
            _require_extinction_path(kernel)
            if np.any(kernel.rows.sum(axis=1) == 0.0):
                raise ReducibilityError("kernel has a zero row on 1..z_max")
            with self._lock:
                v0 = self._warm_v.get(warm_key)
            rho, v, _ = _power_side(kernel.rows, self.tol, self.max_iter, v0, left=False)
            if np.any(v <= 0.0):
                raise SpectralIntegrityError("right vector must be strictly positive")
            mean, var = _curves_from_v(kernel.rows, rho, v)
            hit = CurveEntry(int(z_max), mean, var, None, rho, None, v)
            with self._lock:
                self._entries[key] = hit
                self._warm_v[warm_key] = v
        if not need_left:
            return hit
        # upgrade in place: left solve (kernel rebuilt, cheap and exact),
        # keeping the stored right data bit-stable
        kernel = build_kernel(model, theta, z_max)
        with self._lock:
            u0 = self._warm_u.get(warm_key)
        _, u, _ = _power_side(kernel.rows, self.tol, self.max_iter, u0, left=True)
        if np.any(u < 0.0):
            raise SpectralIntegrityError("left vector must be non-negative")
        u = u / u.sum()
        stationary = u * hit.v / float(u @ hit.v)
        full = CurveEntry(hit.z_max, hit.m_up, hit.sigma2_up, stationary,
                          hit.rho, u, hit.v)
        with self._lock:
            self._entries[key] = full
            self._warm_u[warm_key] = u
        return full

    def clear(self):
        with self._lock:
            self._entries.clear()
            self._warm_u.clear()
            self._warm_v.clear()


_DEFAULT_CACHE = CurveCache()


def default_cache() -> CurveCache:
    return _DEFAULT_CACHE


def m_up_curve(model: OffspringModel, theta, z_max: int, cache: CurveCache | None = None) -> np.ndarray:
    """Vector of m_up(z, theta) for z = 1..z_max (memoized)."""
    cache = cache or _DEFAULT_CACHE
    return cache.entry(model, theta, z_max).m_up


def default_fd_steps(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.maximum(1e-4 * np.abs(theta), 1e-6)


def grad_m_up(
    model: OffspringModel,
    theta,
    z_max: int,
    h=None,
    cache: CurveCache | None = None,
) -> np.ndarray:
    """Central finite-difference gradient of m_up in theta, shape (z_max, d).

    Both perturbed points theta +/- h e_j must remain in the parameter
    domain; otherwise a domain error propagates from validation.
    """
    theta = model.validate_theta(theta)
    h = default_fd_steps(theta) if h is None else np.asarray(h, dtype=float)
    cache = cache or _DEFAULT_CACHE
    columns = []
    for j in range(theta.size):
        step = np.zeros_like(theta)
        step[j] = h[j]
        model.validate_theta(theta + step)
        model.validate_theta(theta - step)
        hi = cache.entry(model, theta + step, z_max).m_up
        lo = cache.entry(model, theta - step, z_max).m_up
        columns.append((hi - lo) / (2.0 * h[j]))
    return np.column_stack(columns)
