"""Cholesky factorization, triangular solves and covariance estimation.

Inverse covariances are never formed explicitly; every application of
the inverse goes through a forward substitution with the Cholesky factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InsufficientData, NotPositiveDefinite

__all__ = [
    "CovarianceModel",
    "batched_tri_solve_lower",
    "cholesky",
    "fit_covariance",
    "mahalanobis",
    "sample_covariance",
    "tri_solve_lower",
]

PIVOT_RTOL = 1e-12


def cholesky(a) -> np.ndarray:
    """Lower-triangular factor ``L`` with ``L @ L.T == a``.

    Raises NotPositiveDefinite when any pivot falls below
    ``PIVOT_RTOL * max(diag(a))``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cholesky needs a square matrix, got shape {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    if scale > 0 and np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise ValueError("cholesky needs a symmetric matrix")
    max_diag = float(np.max(np.diag(a))) if a.size else 0.0
    if max_diag <= 0.0:
        raise NotPositiveDefinite("matrix has no positive diagonal entry")
    try:
        L = np.linalg.cholesky(0.5 * (a + a.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(L) ** 2
    if np.any(pivots <= PIVOT_RTOL * max_diag):
        raise NotPositiveDefinite(
            f"smallest pivot {pivots.min():.3e} below {PIVOT_RTOL:g} x max diagonal {max_diag:.3e}"
        )
    return L


def tri_solve_lower(l, b) -> np.ndarray:
    """Solve ``l @ x = b`` by forward substitution.

    ``b`` may be a vector or an ``(n, d)`` array of row vectors, in which
    case each row is solved independently.
    """
    l = np.asarray(l, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        return solve_triangular(l, b, lower=True, check_finite=False)
    return solve_triangular(l, b.T, lower=True, check_finite=False).T


def batched_tri_solve_lower(L, B) -> np.ndarray:
    """Forward substitution over a stack of systems.

    ``L`` has shape ``(g, d, d)`` and ``B`` shape ``(g, m, d)``; returns
    ``X`` with ``L[j] @ X[j, i] == B[j, i]`` for every ``j, i``.
    """
    L = np.asarray(L, dtype=float)
    B = np.asarray(B, dtype=float)
    d = L.shape[-1]
    X = np.empty_like(B)
    for k in range(d):
        acc = B[..., k].copy()
        if k:
            acc -= np.einsum("gmj,gj->gm", X[..., :k], L[:, k, :k])
        X[..., k] = acc / L[:, k, k, None]
    return X


def sample_covariance(data, ddof: int = 1) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    resid = data - data.mean(axis=0)
    return resid.T @ resid / (data.shape[0] - ddof)


@dataclass(frozen=True)
class CovarianceModel:
    """Sample mean and Cholesky factor of the sample covariance."""

    mean: np.ndarray
    chol: np.ndarray
    n_used: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def scores(self, points) -> np.ndarray:
        """Mahalanobis distances of ``points`` (rows) from the model mean."""
        return mahalanobis(self, np.asarray(points, dtype=float) - self.mean)


def fit_covariance(data, ridge: float = 0.0) -> CovarianceModel:
    """Fit mean and covariance (divisor ``n - 1``) to the rows of ``data``.

    ``ridge`` adds ``ridge * I`` to the covariance before factorization;
    it defaults to zero and is only applied on explicit request.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError(f"data must be an (n, d) array, got shape {data.shape}")
    n, d = data.shape
    if n <= d:
        raise InsufficientData(f"need at least d + 1 = {d + 1} rows to fit a {d}-dim covariance, got {n}")
    mean = data.mean(axis=0)
    cov = sample_covariance(data)
    if ridge:
        cov = cov + ridge * np.eye(d)
    return CovarianceModel(mean=mean, chol=cholesky(cov), n_used=n)


def mahalanobis(model: CovarianceModel, r):
    """Mahalanobis norm ``sqrt(r' S^-1 r)`` of residual ``r`` under ``model``.

    ``r`` may be a single vector (returns a float) or rows of residuals.
    """
    r = np.asarray(r, dtype=float)
    w = tri_solve_lower(model.chol, r)
    if r.ndim == 1:
        return float(np.sqrt(w @ w))
    return np.sqrt(np.einsum("ij,ij->i", w, w))
