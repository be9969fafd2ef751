"""Uncertainty sets for the robust allocation problem.

The simulation study compares three sets, all represented as
:class:`Ellipsoid`: the degenerate point set at the sample mean, the
chi-square ellipsoid that is valid under normality, and the conformal
ellipsoid calibrated by split conformal prediction.  Box and norm-ball
sets are included for completeness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conformal import SplitCalibration, split_calibrate
from .errors import UnboundedRadius
from .linalg import CovarianceModel, fit_covariance, tri_solve_lower
from .numerics import Rng, chi2_quantile

__all__ = [
    "BoxSet",
    "Ellipsoid",
    "NormBall",
    "build_box_set",
    "build_conformal_set",
    "build_norm_set",
    "build_normality_set",
    "build_point_set",
    "ellipsoid_contains",
    "ellipsoid_csv_header",
    "ellipsoid_from_calibration",
]


@dataclass(frozen=True)
class Ellipsoid:
    """``{u : ||chol^-1 (u - center)||_2 <= radius}``."""

    center: np.ndarray
    chol: np.ndarray
    radius: float

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def shape_matrix(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def score(self, u):
        w = tri_solve_lower(self.chol, np.asarray(u, dtype=float) - self.center)
        if w.ndim == 1:
            return float(np.sqrt(w @ w))
        return np.sqrt(np.einsum("ij,ij->i", w, w))

    def contains(self, u):
        u = np.asarray(u, dtype=float)
        if self.radius == 0.0:
            hit = np.all(u == self.center, axis=-1)
            return bool(hit) if u.ndim == 1 else hit
        return self.score(u) <= self.radius

    def to_csv_row(self) -> list[float]:
        """``center_1..center_d``, lower triangle of ``chol`` row-major, ``radius``."""
        tri = [float(self.chol[i, j]) for i in range(self.dim) for j in range(i + 1)]
        return [*self.center.tolist(), *tri, float(self.radius)]

    @classmethod
    def from_csv_row(cls, values, dim: int) -> "Ellipsoid":
        values = [float(v) for v in values]
        expected = dim + dim * (dim + 1) // 2 + 1
        if len(values) != expected:
            raise ValueError(f"ellipsoid row for d={dim} needs {expected} values, got {len(values)}")
        center = np.array(values[:dim])
        chol = np.zeros((dim, dim))
        pos = dim
        for i in range(dim):
            for j in range(i + 1):
                chol[i, j] = values[pos]
                pos += 1
        return cls(center=center, chol=chol, radius=values[-1])


def ellipsoid_csv_header(dim: int) -> list[str]:
    tri = [f"chol_{i + 1}_{j + 1}" for i in range(dim) for j in range(i + 1)]
    return [*(f"center_{k + 1}" for k in range(dim)), *tri, "omega"]


def ellipsoid_contains(s: Ellipsoid, u):
    return s.contains(u)


def _from_model(model: CovarianceModel, radius: float) -> Ellipsoid:
    return Ellipsoid(center=model.mean, chol=model.chol, radius=float(radius))


def build_normality_set(data, alpha: float, ridge: float = 0.0) -> Ellipsoid:
    """Chi-square ellipsoid around the full-sample mean and covariance."""
    model = fit_covariance(data, ridge=ridge)
    return _from_model(model, math.sqrt(chi2_quantile(1.0 - alpha, model.dim)))


def ellipsoid_from_calibration(cal: SplitCalibration) -> Ellipsoid:
    if cal.unbounded:
        raise UnboundedRadius(
            f"k = {cal.k} exceeds the {cal.n2} calibration scores at alpha = {cal.alpha}; "
            "use more data or a larger alpha"
        )
    return _from_model(cal.model, cal.omega_alpha)


def build_conformal_set(data, alpha: float, split_ratio: float = 0.5, rng: Rng | None = None,
                        ridge: float = 0.0) -> Ellipsoid:
    """Split-conformal ellipsoid; identical membership to the split region."""
    return ellipsoid_from_calibration(split_calibrate(data, alpha, split_ratio, rng, ridge=ridge))


def build_point_set(data) -> Ellipsoid:
    """Degenerate set holding only the sample mean."""
    data = np.asarray(data, dtype=float)
    if data.shape[0] < 1:
        raise ValueError("need at least one row")
    d = data.shape[1]
    return Ellipsoid(center=data.mean(axis=0), chol=np.eye(d), radius=0.0)


@dataclass(frozen=True)
class BoxSet:
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, u):
        u = np.asarray(u, dtype=float)
        return np.all((u >= self.lower) & (u <= self.upper), axis=-1)


def build_box_set(data) -> BoxSet:
    data = np.asarray(data, dtype=float)
    if data.shape[0] < 1:
        raise ValueError("need at least one row")
    return BoxSet(lower=data.min(axis=0), upper=data.max(axis=0))


@dataclass(frozen=True)
class NormBall:
    """``{u : ||u - center||_q <= radius}`` for ``q`` in {1, 2}."""

    center: np.ndarray
    radius: float
    q: int = 2

    def contains(self, u):
        r = np.asarray(u, dtype=float) - self.center
        return np.linalg.norm(r, ord=self.q, axis=-1) <= self.radius

    def as_ellipsoid(self) -> Ellipsoid:
        if self.q != 2:
            raise ValueError("only the 2-norm ball is an ellipsoid")
        return Ellipsoid(center=self.center, chol=np.eye(self.center.shape[0]), radius=self.radius)


def build_norm_set(data, omega: float, q: int = 2) -> NormBall:
    if q not in (1, 2):
        raise ValueError(f"q must be 1 or 2, got {q}")
    data = np.asarray(data, dtype=float)
    return NormBall(center=data.mean(axis=0), radius=float(omega), q=q)
