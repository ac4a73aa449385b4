"""Parametric offspring families for size-dependent branching processes.

Four built-in families are provided.  In the two standard families each
individual reproduces successfully with a size-dependent probability
``r(z, theta)`` and, on success, draws its litter from a base
distribution ``b``; failures contribute zero offspring (zero-inflation):

* ``bh``      -- Beverton-Holt success curve ``r = K / (K + (mu-1) z)``
* ``ricker``  -- Ricker success curve ``r = (1/mu)**(z/K)``

The two survival-model families additionally let the mother persist to
the next season with probability ``1 - d`` and count her among the
offspring generation:

* ``robin-bh``, ``robin-ricker`` -- success curves scaled by an
  efficiency parameter ``v``: ``r = v K / ((mu-1) z + K)`` and
  ``r = v (1/mu)**(z/K)``, with ``mu = v * mean(b) / d``.

All families expose a carrying capacity ``K``: the mean offspring
``m(z, theta)`` crosses 1 near ``z = K`` (exactly at ``K`` for the
standard families).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import ModelMisspecificationError, ParameterDomainError

# Survival-model defaults: yearly adult survival 1 - d = 0.6861 and a
# binomial(5, 0.1988) litter approximation fitted by moments to the
# empirical litter distribution below.  Overridable per model instance.
ROBIN_DEATH_PROB = 0.3139
ROBIN_BINOM_N = 5
ROBIN_BINOM_P = 0.1988
ROBIN_EMPIRICAL_B = (0.3130, 0.4544, 0.1758, 0.0431, 0.0106, 0.0024, 0.0006, 0.0001)

STANDARD_FAMILIES = ("bh", "ricker")
ROBIN_FAMILIES = ("robin-bh", "robin-ricker")
FAMILIES = STANDARD_FAMILIES + ROBIN_FAMILIES

_GEOMETRIC_TAIL_TOL = 1e-14


@dataclass(frozen=True)
class BaseDistribution:
    """A litter-size distribution on the non-negative integers.

    ``probs[k]`` is the probability of ``k`` offspring for
    ``k = 0..len(probs)-1``; ``tail_mass`` is the (analytic) probability
    beyond the stored support.  ``mean`` and ``variance`` are exact,
    not truncated.
    """

    kind: str
    probs: np.ndarray
    tail_mass: float
    mean: float
    variance: float

    def __post_init__(self):
        total = float(self.probs.sum()) + self.tail_mass
        if np.any(self.probs < 0) or abs(total - 1.0) > 1e-12:
            raise ParameterDomainError(
                f"base pmf entries must be >= 0 and sum to 1 (got total {total!r})"
            )


def geometric_base(mu: float) -> BaseDistribution:
    """Geometric litter distribution on {0, 1, 2, ...} with mean ``mu``.

    P(k) = (1/(1+mu)) * (mu/(1+mu))**k.  The stored support is the
    shortest prefix whose tail mass is below 1e-14, which makes the
    truncation bit-reproducible.
    """
    if not mu > 1.0:
        raise ParameterDomainError(f"geometric base requires mu > 1, got {mu}")
    ratio = mu / (1.0 + mu)
    # tail beyond k is ratio**(k+1)
    k_max = int(math.ceil(math.log(_GEOMETRIC_TAIL_TOL) / math.log(ratio))) - 1
    k = np.arange(k_max + 1)
    probs = (1.0 / (1.0 + mu)) * ratio**k
    tail = ratio ** (k_max + 1)
    return BaseDistribution("geometric", probs, float(tail), mu, mu * (1.0 + mu))


def binary_splitting_base(v: float) -> BaseDistribution:
    """Binary splitting: two offspring with probability ``v``, else none (mean 2v)."""
    if not 0.0 < v <= 1.0:
        raise ParameterDomainError(f"binary splitting requires v in (0, 1], got {v}")
    probs = np.array([1.0 - v, 0.0, v])
    return BaseDistribution("binary", probs, 0.0, 2.0 * v, 4.0 * v * (1.0 - v))


def binomial_base(n_trials: int, p: float) -> BaseDistribution:
    """Binomial(n_trials, p) litter distribution (exact support)."""
    if n_trials < 1 or not 0.0 < p < 1.0:
        raise ParameterDomainError(f"binomial base requires n >= 1, p in (0,1); got {n_trials}, {p}")
    k = np.arange(n_trials + 1)
    logpmf = (
        gammaln(n_trials + 1)
        - gammaln(k + 1)
        - gammaln(n_trials - k + 1)
        + k * math.log(p)
        + (n_trials - k) * math.log1p(-p)
    )
    return BaseDistribution(
        "binomial", np.exp(logpmf), 0.0, n_trials * p, n_trials * p * (1.0 - p)
    )


def empirical_base(probs) -> BaseDistribution:
    """Litter distribution given directly as a pmf vector on 0..len-1."""
    probs = np.asarray(probs, dtype=float)
    k = np.arange(probs.size)
    mean = float(k @ probs)
    var = float((k**2) @ probs) - mean**2
    return BaseDistribution("empirical", probs, 0.0, mean, var)


@dataclass(frozen=True)
class OffspringPMF:
    """Offspring distribution at one population size, truncated at ``k_max``.

    ``probs[k]`` for k = 0..k_max plus the probability ``tail_mass``
    beyond ``k_max``; the two always account for total mass 1 (up to
    the base distribution's own stored tail).
    """

    probs: np.ndarray
    tail_mass: float = 0.0

    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    def variance(self) -> float:
        k = np.arange(self.probs.size)
        m = float(k @ self.probs)
        return float((k**2) @ self.probs) - m**2


@dataclass(frozen=True)
class OffspringModel:
    """One of the four built-in offspring families.

    ``theta`` is always the length-2 vector ``(K, second)`` where
    ``second`` is the base mean ``mu`` for ``base='geometric'`` and the
    success/efficiency probability ``v`` otherwise.

    For standard families ``base`` is ``'geometric'`` or ``'binary'``;
    for robin families it is ``'empirical'`` (default litter vector
    ``ROBIN_EMPIRICAL_B``) or ``'binomial'``.
    """

    family: str
    base: str = "geometric"
    base_probs: tuple = field(default=ROBIN_EMPIRICAL_B)
    binom_n: int = ROBIN_BINOM_N
    binom_p: float = ROBIN_BINOM_P
    death_prob: float = ROBIN_DEATH_PROB

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterDomainError(f"unknown family {self.family!r}")
        if self.family in STANDARD_FAMILIES and self.base not in ("geometric", "binary"):
            raise ParameterDomainError(
                f"family {self.family!r} supports geometric/binary bases, got {self.base!r}"
            )
        if self.is_robin:
            if self.base not in ("empirical", "binomial"):
                raise ParameterDomainError(
                    f"family {self.family!r} supports empirical/binomial bases, got {self.base!r}"
                )
            if not 0.0 < self.death_prob < 1.0:
                raise ParameterDomainError(f"death_prob must be in (0,1), got {self.death_prob}")

    @property
    def is_robin(self) -> bool:
        return self.family in ROBIN_FAMILIES

    # -- parameter handling -------------------------------------------------

    def validate_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (2,) or not np.all(np.isfinite(theta)):
            raise ParameterDomainError(f"theta must be a finite length-2 vector, got {theta!r}")
        k_cap, second = theta
        if k_cap <= 0.0:
            raise ParameterDomainError(f"carrying capacity must be positive, got {k_cap}")
        if self.base == "geometric":
            if not second > 1.0:
                raise ParameterDomainError(f"base mean must exceed 1, got {second}")
        else:
            if not 0.0 < second <= 1.0:
                raise ParameterDomainError(f"success probability must be in (0,1], got {second}")
        if not self.litter_mean(theta) > 1.0:
            raise ParameterDomainError(
                f"effective base mean must exceed 1 for theta {tuple(theta)}"
            )
        return theta

    def litter_mean(self, theta) -> float:
        """The base mean ``mu`` entering the success-probability formulas."""
        second = float(np.asarray(theta, dtype=float)[1])
        if self.base == "geometric":
            return second
        if self.base == "binary":
            return 2.0 * second
        return self.base_distribution(theta).mean * second / self.death_prob

    def base_distribution(self, theta) -> BaseDistribution:
        second = float(np.asarray(theta, dtype=float)[1])
        if self.base == "geometric":
            return geometric_base(second)
        if self.base == "binary":
            return binary_splitting_base(second)
        if self.base == "binomial":
            return binomial_base(self.binom_n, self.binom_p)
        return empirical_base(self.base_probs)

    # -- success probability and moments ------------------------------------

    def reproduction_probability(self, z, theta):
        """Probability of a successful reproduction attempt at size ``z``.

        Accepts a scalar or array ``z >= 1``; the result is clamped to
        [0, 1].
        """
        theta = self.validate_theta(theta)
        z_arr = np.asarray(z, dtype=float)
        if np.any(z_arr < 1):
            raise ParameterDomainError("population size z must be >= 1")
        k_cap, second = theta
        mu = self.litter_mean(theta)
        if self.family == "bh":
            r = k_cap / (k_cap + (mu - 1.0) * z_arr)
        elif self.family == "ricker":
            r = (1.0 / mu) ** (z_arr / k_cap)
        elif self.family == "robin-bh":
            r = second * k_cap / ((mu - 1.0) * z_arr + k_cap)
        else:  # robin-ricker
            r = second * (1.0 / mu) ** (z_arr / k_cap)
        r = np.clip(r, 0.0, 1.0)
        return float(r) if np.isscalar(z) or np.ndim(z) == 0 else r

    def offspring_pmf(self, z: int, theta, k_max: int | None = None) -> OffspringPMF:
        """Per-individual offspring pmf at population size ``z``.

        ``k_max`` defaults to the natural support (exact for finite
        bases, tail below 1e-14 for the geometric).  A shorter ``k_max``
        truncates, with the removed mass recorded in ``tail_mass``.
        """
        theta = self.validate_theta(theta)
        r = self.reproduction_probability(int(z), theta)
        b = self.base_distribution(theta)
        probs, tail = self._effective_pmf(r, b)
        if k_max is not None:
            if k_max + 1 < probs.size:
                tail += float(probs[k_max + 1 :].sum())
                probs = probs[: k_max + 1]
            elif k_max + 1 > probs.size:
                probs = np.pad(probs, (0, k_max + 1 - probs.size))
        return OffspringPMF(probs, tail)

    def _effective_pmf(self, r: float, b: BaseDistribution):
        inflated = r * b.probs
        inflated[0] += 1.0 - r
        tail = r * b.tail_mass
        if not self.is_robin:
            return inflated, tail
        d = self.death_prob
        eff = np.zeros(inflated.size + 1)
        eff[:-1] += d * inflated          # mother dies: offspring count unchanged
        eff[1:] += (1.0 - d) * inflated   # mother survives and is counted
        return eff, tail

    def mean(self, z, theta):
        """Mean offspring per individual m(z, theta); scalar or array in ``z``."""
        theta = self.validate_theta(theta)
        r = self.reproduction_probability(z, theta)
        b = self.base_distribution(theta)
        m = r * b.mean
        if self.is_robin:
            m = m + (1.0 - self.death_prob)
        return m

    def variance(self, z, theta):
        """Offspring variance per individual; scalar or array in ``z``."""
        theta = self.validate_theta(theta)
        r = self.reproduction_probability(z, theta)
        b = self.base_distribution(theta)
        # success indicator times litter: Var = r (Var_b + mean_b^2) - (r mean_b)^2
        var = r * (b.variance + b.mean**2) - (r * b.mean) ** 2
        if self.is_robin:
            var = var + self.death_prob * (1.0 - self.death_prob)
        return var

    def carrying_capacity(self, theta) -> float:
        """The K component of theta, after checking m crosses 1 around it."""
        theta = self.validate_theta(theta)
        k_cap = float(theta[0])
        if k_cap < 1.0:
            raise ModelMisspecificationError(
                f"carrying capacity {k_cap} admits no population state below it"
            )
        below = float(self.mean(int(math.floor(k_cap)), theta))
        above = float(self.mean(int(math.ceil(k_cap)) + 1, theta))
        if not (below >= 1.0 - 1e-9 and above <= 1.0 + 1e-9):
            raise ModelMisspecificationError(
                f"mean offspring does not cross 1 at K={k_cap}: "
                f"m(floor K)={below}, m(ceil K + 1)={above}"
            )
        return k_cap

    def default_k_max(self, theta) -> int:
        """Support size used when sampling/convolving this model's pmfs."""
        b = self.base_distribution(theta)
        return b.probs.size - 1 + (1 if self.is_robin else 0)

    # -- estimation support --------------------------------------------------

    def theta_bounds(self, max_observed: int) -> tuple[tuple[float, float], tuple[float, float]]:
        """Default box bounds containing any plausible theta for observed data."""
        k_bounds = (1.0, 20.0 * max(float(max_observed), 1.0))
        if self.base == "geometric":
            second = (1.01, 50.0)
        elif self.base == "binary":
            second = (0.505, 0.99)  # mean 2v must exceed 1
        else:
            base_mean = self.base_distribution((1.0, 0.5)).mean
            second = (min(0.99, 1.01 * self.death_prob / base_mean), 0.99)
        return k_bounds, second

    # -- serialization (model specification schema) ---------------------------

    def to_spec(self) -> dict:
        spec = {"family": self.family, "base": self.base}
        if self.is_robin:
            spec["death_prob"] = self.death_prob
            if self.base == "binomial":
                spec["binom_n"] = self.binom_n
                spec["binom_p"] = self.binom_p
            else:
                spec["base_probs"] = list(self.base_probs)
        return spec

    @classmethod
    def from_spec(cls, spec: dict) -> "OffspringModel":
        kwargs = {"family": spec["family"], "base": spec.get("base", "geometric")}
        for key in ("binom_n", "binom_p", "death_prob"):
            if key in spec:
                kwargs[key] = spec[key]
        if "base_probs" in spec:
            kwargs["base_probs"] = tuple(spec["base_probs"])
        return cls(**kwargs)

    def cache_key(self) -> tuple:
        """Hashable fingerprint for memoization keyed on the model identity."""
        return (
            self.family,
            self.base,
            self.base_probs if self.base == "empirical" else None,
            (self.binom_n, self.binom_p) if self.base == "binomial" else None,
            self.death_prob if self.is_robin else None,
        )
