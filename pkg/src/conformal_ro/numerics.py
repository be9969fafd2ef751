"""Special functions, quantiles and a seedable random number generator.

The normal CDF, chi-square quantile and Student-t quantile are the only
distributional primitives the rest of the package needs.  CDFs come from
the regularized incomplete gamma/beta functions in :mod:`scipy.special`;
quantiles are obtained by root finding on those CDFs (chi-square) or by
inverting the incomplete beta function and polishing with Newton steps
(Student-t, which must be vectorized for copula sampling).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize, special

from .errors import DomainError

__all__ = [
    "Rng",
    "chi2_cdf",
    "chi2_quantile",
    "derive_seed",
    "std_normal_cdf",
    "std_normal_sample",
    "student_t_cdf",
    "student_t_quantile",
]

_MASK64 = (1 << 64) - 1


def std_normal_cdf(x):
    """Standard normal CDF, scalar or elementwise.

    Evaluated through the complementary error function, so the lower
    tail keeps full relative precision down to about -37.
    """
    return special.ndtr(x)


def chi2_cdf(x, d):
    """Chi-square CDF with ``d`` degrees of freedom, P(d/2, x/2)."""
    return special.gammainc(0.5 * d, 0.5 * np.maximum(x, 0.0))


def chi2_quantile(p: float, d: int) -> float:
    """Quantile of the chi-square distribution with ``d`` degrees of freedom.

    Brackets the root of ``chi2_cdf(x, d) - p`` by doubling and refines it
    with Brent's method to near machine precision.
    """
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise DomainError(f"chi2_quantile requires 0 < p < 1, got {p!r}")
    if int(d) != d or d < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {d!r}")
    d = int(d)

    def f(x):
        return chi2_cdf(x, d) - p

    hi = float(max(d, 1))
    while f(hi) < 0.0:
        hi *= 2.0
    lo = 0.0
    return float(optimize.brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500))


def student_t_cdf(t, nu):
    """Student-t CDF via the regularized incomplete beta function."""
    t = np.asarray(t, dtype=float)
    x = nu / (nu + t * t)
    tail = 0.5 * special.betainc(0.5 * nu, 0.5, x)
    out = np.where(t < 0, tail, 1.0 - tail)
    return out if out.ndim else float(out)


def _t_pdf(t, nu):
    logc = special.gammaln(0.5 * (nu + 1)) - special.gammaln(0.5 * nu) - 0.5 * math.log(nu * math.pi)
    return np.exp(logc - 0.5 * (nu + 1) * np.log1p(t * t / nu))


def _t_lower_quantile(q, nu):
    # q <= 0.5: returns t <= 0 with CDF(t) = q
    x = special.betaincinv(0.5 * nu, 0.5, 2.0 * q)
    with np.errstate(divide="ignore"):
        t = -np.sqrt(nu * (1.0 / x - 1.0))
    for _ in range(2):
        tail = 0.5 * special.betainc(0.5 * nu, 0.5, nu / (nu + t * t))
        dens = _t_pdf(t, nu)
        step = np.where(dens > 0, (tail - q) / np.where(dens > 0, dens, 1.0), 0.0)
        t = np.minimum(t - step, 0.0)
    return t


def student_t_quantile(p, nu):
    """Quantile of Student's t with ``nu`` degrees of freedom.

    Accepts scalars or arrays.  Works on the smaller tail ``min(p, 1-p)``
    and reflects, so both tails are equally accurate.
    """
    if not nu > 0 or math.isnan(nu):
        raise DomainError(f"student_t_quantile requires nu > 0, got {nu!r}")
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise DomainError("student_t_quantile requires 0 < p < 1")
    q = np.minimum(p_arr, 1.0 - p_arr)
    t = _t_lower_quantile(q, float(nu))
    t = np.where(p_arr > 0.5, -t, t)
    t = np.where(p_arr == 0.5, 0.0, t)
    return t if t.ndim else float(t)


def derive_seed(base_seed: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from ``base_seed`` and integer keys.

    Uses numpy's SeedSequence hashing, so the result depends only on the
    inputs and never on call order.
    """
    ss = np.random.SeedSequence(int(base_seed) & _MASK64, spawn_key=tuple(int(k) & _MASK64 for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


class Rng:
    """Seeded PCG64 generator addressed by ``(seed, stream_id)``.

    Two instances built from the same pair produce identical sequences;
    different stream ids give statistically independent sequences.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream_id={self.stream_id})"

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, size=None):
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def stream(self, stream_id: int) -> "Rng":
        """A fresh generator on another stream of the same seed."""
        return Rng(self.seed, stream_id)


def std_normal_sample(rng: Rng, size=None):
    """Draw standard normal variates from ``rng``."""
    return rng.standard_normal(size)
