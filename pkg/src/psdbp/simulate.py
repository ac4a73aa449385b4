"""Trajectory simulation with reproducible, splittable random streams.

Each step draws one litter per individual by inverse-CDF sampling from
the cached offspring pmf at the current population size, so a step at
size z costs O(z).  Replication j of a batch uses the generator seeded
by ``SeedSequence((seed, j))``; this splitting rule is part of the
output contract, making batches a pure function of (config, model,
theta) regardless of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ExplosionError, ParameterDomainError, SurvivalRejectionError
from .models import OffspringModel

STATE_CAP = 1_000_000


@dataclass(frozen=True)
class Trajectory:
    """One simulated path (Z_0, ..., Z_n) with provenance tags."""

    states: np.ndarray
    seed: int | None = None
    rep: int = 0
    family: str = ""
    theta: tuple = ()
    attempts: int = 1

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        object.__setattr__(self, "states", states)
        if states.size == 0 or states[0] < 1:
            raise ParameterDomainError("trajectory must start from at least one individual")


@dataclass(frozen=True)
class SimConfig:
    """Replication plan for a batch of trajectories."""

    initial_size: int
    horizon: int
    replications: int
    seed: int
    condition_on_survival: bool = False
    max_attempts: int = 1000

    def __post_init__(self):
        if self.initial_size < 1 or self.horizon < 1 or self.replications < 1:
            raise ParameterDomainError("initial size, horizon and replications must be >= 1")
        if self.max_attempts < 1:
            raise ParameterDomainError("max_attempts must be >= 1")


def stream_rng(seed: int, j: int) -> np.random.Generator:
    """Generator for replication j: PCG64 seeded by SeedSequence((seed, j))."""
    return np.random.default_rng(np.random.SeedSequence((seed, j)))


class _CdfCache:
    """Offspring inverse-CDF tables per visited population size."""

    def __init__(self, model: OffspringModel, theta):
        self.model = model
        self.theta = model.validate_theta(theta)
        self._tables: dict[int, np.ndarray] = {}

    def cdf(self, z: int) -> np.ndarray:
        table = self._tables.get(z)
        if table is None:
            table = np.cumsum(self.model.offspring_pmf(z, self.theta).probs)
            self._tables[z] = table
        return table


def simulate(
    model: OffspringModel,
    theta,
    initial_size: int,
    horizon: int,
    rng: np.random.Generator,
    state_cap: int = STATE_CAP,
    seed: int | None = None,
    rep: int = 0,
    _cache: _CdfCache | None = None,
) -> Trajectory:
    """One path of the population recursion, absorbing at 0."""
    if initial_size < 1:
        raise ParameterDomainError("initial size must be >= 1")
    cache = _cache if _cache is not None else _CdfCache(model, theta)
    states = np.zeros(horizon + 1, dtype=np.int64)
    z = int(initial_size)
    states[0] = z
    for t in range(1, horizon + 1):
        if z == 0:
            break  # remaining entries stay 0
        cdf = cache.cdf(z)
        draws = np.searchsorted(cdf, rng.random(z), side="right")
        np.minimum(draws, cdf.size - 1, out=draws)
        z = int(draws.sum())
        if z > state_cap:
            raise ExplosionError(
                f"population {z} exceeded the state cap {state_cap} at step {t}"
            )
        states[t] = z
    return Trajectory(states, seed=seed, rep=rep, family=model.family,
                      theta=tuple(np.asarray(theta, dtype=float)))


def simulate_surviving(
    model: OffspringModel,
    theta,
    initial_size: int,
    horizon: int,
    rng: np.random.Generator,
    max_attempts: int = 1000,
    state_cap: int = STATE_CAP,
    seed: int | None = None,
    rep: int = 0,
    _cache: _CdfCache | None = None,
) -> Trajectory:
    """Rejection sampling of full paths until the final state is positive."""
    cache = _cache if _cache is not None else _CdfCache(model, theta)
    for attempt in range(1, max_attempts + 1):
        traj = simulate(
            model, theta, initial_size, horizon, rng,
            state_cap=state_cap, seed=seed, rep=rep, _cache=cache,
        )
        if traj.states[-1] > 0:
            return Trajectory(traj.states, seed=seed, rep=rep, family=traj.family,
                              theta=traj.theta, attempts=attempt)
    raise SurvivalRejectionError(
        f"no surviving trajectory in {max_attempts} attempts "
        f"(horizon {horizon}, initial size {initial_size})",
        survival_fraction=0.0,
        attempts=max_attempts,
    )


def simulate_batch(config: SimConfig, model: OffspringModel, theta) -> list[Trajectory]:
    """Independent replications with per-replication seeded streams.

    A replication that exhausts ``max_attempts`` aborts the batch; the
    raised error carries the completed trajectories as ``partial``.
    """
    cache = _CdfCache(model, theta)
    out: list[Trajectory] = []
    for j in range(config.replications):
        rng = stream_rng(config.seed, j)
        try:
            if config.condition_on_survival:
                traj = simulate_surviving(
                    model, theta, config.initial_size, config.horizon, rng,
                    max_attempts=config.max_attempts, seed=config.seed, rep=j, _cache=cache,
                )
            else:
                traj = simulate(
                    model, theta, config.initial_size, config.horizon, rng,
                    seed=config.seed, rep=j, _cache=cache,
                )
        except SurvivalRejectionError as err:
            err.partial = out
            err.args = (f"replication {j}: {err.args[0]}",)
            raise
        out.append(traj)
    return out
