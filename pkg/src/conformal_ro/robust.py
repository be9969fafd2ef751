"""Min-max allocation over the probability simplex.

For an ellipsoid ``{u : ||C^-1 (u - c)|| <= omega}`` the inner supremum of
``u'z`` has the closed form ``c'z + omega * ||C'z||``, so the robust
problem reduces to minimizing a convex second-order-cone objective over
the simplex.  That is done with projected gradient descent and an
Armijo backtracking line search.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDirection, NotConvergedWarning
from .uncertainty import Ellipsoid

__all__ = [
    "RobustSolution",
    "frank_wolfe_gap",
    "project_simplex",
    "robust_objective",
    "solve_nominal",
    "solve_robust",
    "worst_case",
]


@dataclass(frozen=True)
class RobustSolution:
    z: np.ndarray
    worst_u: np.ndarray
    value: float
    iterations: int
    converged: bool
    gap_estimate: float


def worst_case(s: Ellipsoid, z):
    """Maximizer and maximum of ``u'z`` over the ellipsoid ``s``."""
    z = np.asarray(z, dtype=float)
    if not np.any(z):
        raise DegenerateDirection("z is the zero vector")
    base = float(s.center @ z)
    if s.radius == 0.0:
        return s.center.copy(), base
    w = s.chol.T @ z
    norm = math.sqrt(float(w @ w))
    if norm == 0.0:
        raise DegenerateDirection("C'z vanishes, so every point of the set is a maximizer")
    worst_u = s.center + s.radius * (s.chol @ w) / norm
    return worst_u, base + s.radius * norm


def robust_objective(s: Ellipsoid, z) -> float:
    z = np.asarray(z, dtype=float)
    w = s.chol.T @ z
    return float(s.center @ z + s.radius * math.sqrt(float(w @ w)))


def _gradient(s: Ellipsoid, z):
    if s.radius == 0.0:
        return s.center
    w = s.chol.T @ z
    return s.center + s.radius * (s.chol @ w) / math.sqrt(float(w @ w))


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{z >= 0, sum(z) = 1}`` by sort and threshold."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    z = np.maximum(v - theta, 0.0)
    return z / z.sum()


def frank_wolfe_gap(s: Ellipsoid, z) -> float:
    """``max_k grad'(z - e_k)``; an upper bound on ``g(z) - min g``."""
    grad = _gradient(s, np.asarray(z, dtype=float))
    return float(grad @ z - grad.min())


def solve_robust(s: Ellipsoid, tol: float = 1e-9, max_iter: int = 100_000) -> RobustSolution:
    """Minimize the worst-case cost over the simplex.

    Projected gradient from the uniform allocation with Armijo
    backtracking (factor 0.5, initial step 1.0).  The step is doubled
    after an iteration that needed no backtracking and still made a
    decrease well above rounding noise.  Stops when the gradient-mapping
    norm ``||z - P(z - t grad)|| / t`` drops below ``tol``; on hitting
    ``max_iter`` the last iterate is returned with ``converged=False``
    and a NotConvergedWarning.
    """
    d = s.dim
    z = np.full(d, 1.0 / d)
    gz = robust_objective(s, z)
    t = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = _gradient(s, z)
        noise = 1e-14 * (1.0 + abs(gz))
        backtracked = False
        for _ in range(200):
            z_new = project_simplex(z - t * grad)
            diff = z_new - z
            g_new = robust_objective(s, z_new)
            if g_new <= gz + grad @ diff + (diff @ diff) / (2.0 * t) + noise:
                break
            t *= 0.5
            backtracked = True
        step = math.sqrt(float(diff @ diff)) / t
        decrease = gz - g_new
        z, gz = z_new, g_new
        if step < tol:
            converged = True
            break
        if not backtracked and decrease > 1e3 * noise:
            t = min(2.0 * t, 1e12)
    if not converged:
        warnings.warn(f"projected gradient stopped after {max_iter} iterations", NotConvergedWarning)
    worst_u, value = worst_case(s, z)
    return RobustSolution(
        z=z, worst_u=worst_u, value=value, iterations=it,
        converged=converged, gap_estimate=frank_wolfe_gap(s, z),
    )


def solve_nominal(center) -> RobustSolution:
    """Minimize ``center'z`` over the simplex; ties go to the lowest index."""
    center = np.asarray(center, dtype=float)
    k = int(np.argmin(center))
    z = np.zeros(center.size)
    z[k] = 1.0
    return RobustSolution(
        z=z, worst_u=center.copy(), value=float(center[k]), iterations=0,
        converged=True, gap_estimate=0.0,
    )
