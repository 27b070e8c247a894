"""Gaussian-copula feature simulation and logistic outcome generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import expit, ndtr

from .._rng import as_generator
from ..tabular import Dataset

MARGINALS = ("normal", "binom", "pois", "gamma", "uniform")
EFFECTS = ("linear", "squared")


@dataclass(frozen=True)
class SimSpec:
    """One simulated design.

    Marginals: ``normal`` N(0,1), ``binom`` Bernoulli(0.5), ``pois`` Poisson(2),
    ``gamma`` shape 2 rate 0.5, ``uniform`` U(-1, 1). Features are linked by a
    Gaussian copula with correlation ``rho ** |i - j|``.
    """

    n: int
    p: int
    marginal: str = "normal"
    effect: str = "linear"
    rho: float = 0.5
    seed: Optional[int] = None

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if self.n < 10:
            raise ValueError("n must be >= 10")
        if self.marginal not in MARGINALS:
            raise ValueError(f"unknown marginal {self.marginal!r}; expected one of {MARGINALS}")
        if self.effect not in EFFECTS:
            raise ValueError(f"unknown effect {self.effect!r}; expected one of {EFFECTS}")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")


def toeplitz_corr(p: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _quantile(marginal: str, z: np.ndarray) -> np.ndarray:
    if marginal == "normal":
        return z
    u = ndtr(z)
    if marginal == "binom":
        return stats.binom.ppf(u, 1, 0.5)
    if marginal == "pois":
        return stats.poisson.ppf(u, 2.0)
    if marginal == "gamma":
        return stats.gamma.ppf(u, 2.0, scale=2.0)
    return -1.0 + 2.0 * u


def simulate_features(spec: SimSpec, rng=None) -> Dataset:
    """n x p numeric dataset drawn through the Gaussian copula."""
    rng = as_generator(spec.seed if rng is None else rng)
    chol = np.linalg.cholesky(toeplitz_corr(spec.p, spec.rho))
    z = rng.standard_normal((spec.n, spec.p)) @ chol.T
    return Dataset.from_array(_quantile(spec.marginal, z))


def true_beta(p: int) -> np.ndarray:
    """Equidistant coefficients from -0.5 to 0.5."""
    if p < 2:
        raise ValueError("need p >= 2 for equidistant coefficients")
    return -0.5 + np.arange(p) / (p - 1)


def design(values: np.ndarray, effect: str) -> np.ndarray:
    """Regressors of the outcome model: the features or their squares."""
    return values * values if effect == "squared" else values


def outcome_prob(values: np.ndarray, effect: str) -> np.ndarray:
    return expit(design(values, effect) @ true_beta(values.shape[1]))


def simulate_outcome(x: Dataset, effect: str = "linear", rng=None) -> np.ndarray:
    """Bernoulli outcomes with success probability logistic(x beta) or logistic(x^2 beta)."""
    if effect not in EFFECTS:
        raise ValueError(f"unknown effect {effect!r}")
    if x.has_missing():
        raise ValueError("outcome simulation needs complete features")
    prob = outcome_prob(x.values, effect)
    return (as_generator(rng).random(x.n) < prob).astype(np.int64)
