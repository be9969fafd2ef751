"""Synthetic random-parameter datasets for the simulation study.

Three mean/variance scenarios are crossed with two marginal families:
multivariate normal, and a Gaussian copula with Student-t marginals
rescaled to unit variance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .linalg import cholesky
from .numerics import Rng, std_normal_cdf, student_t_quantile

__all__ = [
    "DEFAULT_NU",
    "Dist",
    "Scenario",
    "ScenarioKind",
    "sample_mvn",
    "sample_scenario",
    "sample_t_copula",
    "scenario_params",
]

DEFAULT_NU = 4.0
CORRELATED_RHO = 0.5
HETERO_MEAN_RANGE = (-1.0, 1.0)
HETERO_SCALE_RANGE = (0.5, 2.0)


class ScenarioKind(str, enum.Enum):
    IID = "IID"
    INDEPENDENT_HETEROSCEDASTIC = "IndependentHeteroscedastic"
    CORRELATED = "Correlated"


class Dist(str, enum.Enum):
    NORMAL = "Normal"
    STUDENT_T = "StudentT"


@dataclass(frozen=True)
class Scenario:
    kind: ScenarioKind
    dist: Dist
    dim: int
    nu: float = DEFAULT_NU

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        object.__setattr__(self, "dist", Dist(self.dist))
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.dist is Dist.STUDENT_T and not self.nu > 2:
            raise ValueError(f"Student-t scenarios need nu > 2 for finite variance, got {self.nu}")


def scenario_params(scenario: Scenario):
    """Return ``(mean, scales, rho)`` for a scenario.

    ``rho`` is the common off-diagonal correlation of an exchangeable
    correlation matrix.
    """
    d = scenario.dim
    if scenario.kind is ScenarioKind.IID:
        return np.zeros(d), np.ones(d), 0.0
    if scenario.kind is ScenarioKind.INDEPENDENT_HETEROSCEDASTIC:
        if d == 1:
            return np.array([HETERO_MEAN_RANGE[0]]), np.array([HETERO_SCALE_RANGE[0]]), 0.0
        return np.linspace(*HETERO_MEAN_RANGE, d), np.linspace(*HETERO_SCALE_RANGE, d), 0.0
    return np.zeros(d), np.ones(d), CORRELATED_RHO


def exchangeable_correlation(d: int, rho: float) -> np.ndarray:
    R = np.full((d, d), float(rho))
    np.fill_diagonal(R, 1.0)
    return R


def sample_mvn(mean, chol, n: int, rng: Rng) -> np.ndarray:
    """``n`` rows of ``mean + chol @ z`` with ``z`` standard normal."""
    mean = np.asarray(mean, dtype=float)
    chol = np.asarray(chol, dtype=float)
    z = rng.standard_normal((n, mean.shape[0]))
    return mean + z @ chol.T


def _t_from_normal(z, nu):
    # T^-1(Phi(z)) evaluated on the lower tail so large |z| keeps precision
    q = std_normal_cdf(-np.abs(z))
    t = -student_t_quantile(q, nu)
    return np.where(z < 0, -t, np.where(z == 0, 0.0, t))


def sample_t_copula(mean, scales, correlation_chol, nu: float, n: int, rng: Rng) -> np.ndarray:
    """Gaussian-copula draws with unit-variance Student-t marginals.

    Correlated normals ``z ~ N(0, R)`` are pushed through the normal CDF
    and the t quantile, rescaled by ``sqrt((nu - 2) / nu)``, then scaled
    by ``scales`` and shifted by ``mean``.  Uses exactly the same normal
    draws as :func:`sample_mvn` for the same generator state.
    """
    if not nu > 2:
        raise ValueError(f"nu must exceed 2, got {nu}")
    mean = np.asarray(mean, dtype=float)
    scales = np.asarray(scales, dtype=float)
    z = sample_mvn(np.zeros_like(mean), correlation_chol, n, rng)
    t = _t_from_normal(z, nu) * np.sqrt((nu - 2.0) / nu)
    return mean + scales * t


def sample_scenario(scenario: Scenario, n: int, rng: Rng) -> np.ndarray:
    mean, scales, rho = scenario_params(scenario)
    R = exchangeable_correlation(scenario.dim, rho)
    if scenario.dist is Dist.NORMAL:
        cov = scales[:, None] * R * scales[None, :]
        return sample_mvn(mean, cholesky(cov), n, rng)
    return sample_t_copula(mean, scales, cholesky(R), scenario.nu, n, rng)
