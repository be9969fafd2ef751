"""Split and full conformal prediction regions with a Mahalanobis score.

The conformity score of an observation is the Mahalanobis norm of its
residual from a fitted mean, measured in the fitted covariance.  With
split conformal the score function is fit once on the first fold and the
radius is an order statistic of the scores on the second fold, which
yields a closed ellipsoid.  With full conformal the mean and covariance
are refit on the data augmented by every candidate point; the resulting
region is evaluated on a finite lattice and need not be convex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridTooLarge, InsufficientData, NotPositiveDefinite
from .linalg import PIVOT_RTOL, CovarianceModel, batched_tri_solve_lower, fit_covariance
from .numerics import Rng

__all__ = [
    "FullConformalGrid",
    "GridSpec",
    "SplitCalibration",
    "calibrate_scores",
    "conformal_rank",
    "full_conformal_counts",
    "full_conformal_pi",
    "full_conformal_region",
    "order_statistic_index",
    "split_calibrate",
    "split_region_contains",
]

DEFAULT_MAX_GRID_POINTS = 1_000_000
_CHUNK = 16384


def order_statistic_index(m: int, level: float) -> int:
    """``ceil(level * m)``, tolerant of binary rounding in ``level * m``.

    ``(1 - 0.1) * 250`` evaluates to 225.00000000000003 in floating point;
    the intended index is 225, not 226.
    """
    x = level * m
    k = math.ceil(x)
    if k - x > 1 - 1e-9 * max(1.0, abs(x)):
        k -= 1
    return int(k)


def conformal_rank(n2: int, alpha: float) -> int:
    """Index of the calibration order statistic, ``ceil((n2 + 1)(1 - alpha))``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return order_statistic_index(n2 + 1, 1.0 - alpha)


@dataclass(frozen=True)
class SplitCalibration:
    """Calibrated split-conformal ellipsoid.

    ``scores`` are sorted ascending; ``omega_alpha`` is the ``k``-th
    smallest of them, or ``inf`` when ``k`` exceeds the fold size.
    """

    alpha: float
    scores: np.ndarray
    k: int
    omega_alpha: float
    model: CovarianceModel | None = None

    @property
    def n2(self) -> int:
        return int(self.scores.shape[0])

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.omega_alpha)

    def score(self, y):
        return self.model.scores(y)

    def contains(self, y):
        if self.unbounded:
            y = np.asarray(y, dtype=float)
            return True if y.ndim == 1 else np.ones(y.shape[0], dtype=bool)
        return self.score(y) <= self.omega_alpha


def calibrate_scores(scores, alpha: float, model: CovarianceModel | None = None) -> SplitCalibration:
    """Build a calibration from precomputed conformity scores."""
    scores = np.sort(np.asarray(scores, dtype=float))
    if scores.ndim != 1 or scores.size == 0:
        raise InsufficientData("need at least one calibration score")
    if np.any(scores < 0):
        raise ValueError("conformity scores must be nonnegative")
    k = conformal_rank(scores.size, alpha)
    omega = float(scores[k - 1]) if k <= scores.size else math.inf
    return SplitCalibration(alpha=float(alpha), scores=scores, k=k, omega_alpha=omega, model=model)


def split_indices(n: int, split_ratio: float, rng: Rng):
    perm = rng.permutation(n)
    n1 = int(math.floor(split_ratio * n))
    return perm[:n1], perm[n1:]


def split_calibrate(data, alpha: float, split_ratio: float = 0.5, rng: Rng | None = None,
                    ridge: float = 0.0) -> SplitCalibration:
    """Split-conformal calibration of a Mahalanobis ellipsoid.

    Rows are shuffled with ``rng`` and the first ``floor(split_ratio * n)``
    form the fitting fold; the mean and covariance come from that fold
    only and the remaining rows supply the calibration scores.  An
    unbounded radius is reported through ``omega_alpha = inf``.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError(f"data must be an (n, d) array, got shape {data.shape}")
    if not 0.0 < split_ratio < 1.0:
        raise ValueError(f"split_ratio must lie in (0, 1), got {split_ratio}")
    if rng is None:
        rng = Rng(0)
    n, d = data.shape
    i1, i2 = split_indices(n, split_ratio, rng)
    if i1.size < d + 1 or i2.size < 1:
        raise InsufficientData(
            f"split of {n} rows gives folds of {i1.size} and {i2.size}; need >= {d + 1} and >= 1"
        )
    model = fit_covariance(data[i1], ridge=ridge)
    return calibrate_scores(model.scores(data[i2]), alpha, model=model)


def split_region_contains(cal: SplitCalibration, y):
    """Membership in the closed split-conformal region."""
    return cal.contains(y)


def _augmented_sq_scores(data, candidates):
    """Squared scores for each candidate's augmented dataset.

    Returns an array of shape ``(g, n + 1)``; column ``n`` holds the
    candidate's own score.  Raises NotPositiveDefinite for any candidate
    whose augmented residual covariance is degenerate, except the fully
    collapsed case where every residual is zero, flagged with NaN.
    """
    n, d = data.shape
    total = data.sum(axis=0)
    g = candidates.shape[0]
    mean = (total + candidates) / (n + 1)
    resid = np.empty((g, n + 1, d))
    resid[:, :n, :] = data[None, :, :] - mean[:, None, :]
    resid[:, n, :] = candidates - mean
    cov = np.einsum("gmi,gmj->gij", resid, resid) / n
    diag = np.einsum("gii->gi", cov)
    max_diag = diag.max(axis=1)
    collapsed = max_diag == 0.0
    safe = np.where(collapsed[:, None, None], np.eye(d), cov)
    try:
        L = np.linalg.cholesky(safe)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("augmented residual covariance is not positive definite") from None
    pivots = np.einsum("gii->gi", L) ** 2
    bad = ~collapsed & np.any(pivots <= PIVOT_RTOL * max_diag[:, None], axis=1)
    if np.any(bad):
        raise NotPositiveDefinite("augmented residual covariance is numerically singular")
    w = batched_tri_solve_lower(L, resid)
    sq = np.einsum("gmd,gmd->gm", w, w)
    sq[collapsed] = np.nan
    return sq


def full_conformal_counts(data, candidates) -> np.ndarray:
    """``(n + 1) * pi`` for every candidate row, as integers."""
    data = np.asarray(data, dtype=float)
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    n, d = data.shape
    if candidates.shape[1] != d:
        raise ValueError(f"candidates have dimension {candidates.shape[1]}, data has {d}")
    if n < d + 2:
        raise InsufficientData(f"full conformal needs at least d + 2 = {d + 2} rows, got {n}")
    out = np.empty(candidates.shape[0], dtype=np.int64)
    for start in range(0, candidates.shape[0], _CHUNK):
        block = candidates[start:start + _CHUNK]
        sq = _augmented_sq_scores(data, block)
        collapsed = np.isnan(sq[:, 0])
        cnt = 1 + np.count_nonzero(sq[:, :n] <= sq[:, n:], axis=1)
        # all n + 1 points coincide: every score is zero, so all ties count
        cnt[collapsed] = n + 1
        out[start:start + _CHUNK] = cnt
    return out


def full_conformal_pi(data, y_c) -> float:
    """Full-conformal ``pi`` of a single candidate ``y_c``.

    The predictor is the mean of the augmented dataset; residual
    covariance uses divisor ``n`` over the ``n + 1`` augmented rows.
    Ties with the candidate's score count as conforming.
    """
    data = np.asarray(data, dtype=float)
    cnt = full_conformal_counts(data, np.asarray(y_c, dtype=float)[None, :])[0]
    return float(cnt) / (data.shape[0] + 1)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned lattice described by per-axis ``mins``, ``maxs`` and ``steps``."""

    mins: tuple
    maxs: tuple
    steps: tuple
    max_points: int = DEFAULT_MAX_GRID_POINTS

    def __post_init__(self):
        if not (len(self.mins) == len(self.maxs) == len(self.steps)):
            raise ValueError("mins, maxs and steps must have equal length")
        for lo, hi, st in zip(self.mins, self.maxs, self.steps):
            if not st > 0:
                raise ValueError(f"grid step must be positive, got {st}")
            if hi < lo:
                raise ValueError(f"grid max {hi} is below min {lo}")

    @classmethod
    def covering(cls, data, num: int = 101, pad_sd: float = 3.0,
                 max_points: int = DEFAULT_MAX_GRID_POINTS) -> "GridSpec":
        """Lattice spanning the data range widened by ``pad_sd`` standard deviations."""
        data = np.asarray(data, dtype=float)
        sd = data.std(axis=0, ddof=1)
        lo = data.min(axis=0) - pad_sd * sd
        hi = data.max(axis=0) + pad_sd * sd
        steps = (hi - lo) / (num - 1)
        return cls(tuple(lo), tuple(hi), tuple(steps), max_points)

    def axis(self, j: int) -> np.ndarray:
        lo, hi, st = self.mins[j], self.maxs[j], self.steps[j]
        count = int(math.floor((hi - lo) / st + 1e-9)) + 1
        return lo + st * np.arange(count)

    @property
    def shape(self) -> tuple:
        return tuple(self.axis(j).size for j in range(len(self.mins)))

    @property
    def n_points(self) -> int:
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        """Lattice nodes in C order (last axis fastest)."""
        axes = [self.axis(j) for j in range(len(self.mins))]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class FullConformalGrid:
    """Full-conformal region evaluated on a lattice."""

    spec: GridSpec
    alpha: float
    n: int
    points: np.ndarray
    counts: np.ndarray
    threshold: int
    memberships: np.ndarray = field(repr=False)

    @property
    def pi(self) -> np.ndarray:
        return self.counts / (self.n + 1)

    @property
    def member_points(self) -> np.ndarray:
        return self.points[self.memberships]

    @property
    def boundary(self) -> np.ndarray:
        """Lattice nodes where ``(n + 1) * pi`` equals the threshold."""
        return self.counts == self.threshold

    def member_mask(self) -> np.ndarray:
        return self.memberships.reshape(self.spec.shape)

    def nearest_member(self, y) -> bool:
        idx = []
        for j, v in enumerate(np.asarray(y, dtype=float)):
            ax = self.spec.axis(j)
            idx.append(int(np.clip(np.rint((v - ax[0]) / self.spec.steps[j]), 0, ax.size - 1)))
        return bool(self.member_mask()[tuple(idx)])


def full_conformal_region(data, alpha: float, grid: GridSpec) -> FullConformalGrid:
    """Evaluate the full-conformal region on every node of ``grid``.

    Restricted to two-dimensional data; raises GridTooLarge when the
    lattice exceeds ``grid.max_points``.
    """
    data = np.asarray(data, dtype=float)
    n, d = data.shape
    if d != 2:
        raise ValueError(f"full conformal regions are only supported for d = 2, got d = {d}")
    if len(grid.mins) != d:
        raise ValueError(f"grid has {len(grid.mins)} axes, data has {d}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if grid.n_points > grid.max_points:
        raise GridTooLarge(f"lattice has {grid.n_points} points, budget is {grid.max_points}")
    pts = grid.points()
    counts = full_conformal_counts(data, pts)
    threshold = order_statistic_index(n + 1, 1.0 - alpha)
    return FullConformalGrid(
        spec=grid, alpha=float(alpha), n=n, points=pts, counts=counts,
        threshold=threshold, memberships=counts <= threshold,
    )
