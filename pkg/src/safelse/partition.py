"""Log-partition functional, its SoftPlus approximation, and CVaR.

``F(phi; mu) = log sum_i w_i e^{phi_i}`` is approximated by

    F_rho(phi; mu) = inf_alpha  alpha - 1 + (1/rho) sum_i w_i log(1 + rho e^{phi_i - alpha})

whose minimiser solves ``sum_i w_i sigma_rho(phi_i - alpha) = 1``.  The
bound certificates check the approximation guarantees numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corefn import _sigma_rho, _sigma_rho_prime, as_rho, logsumexp, softplus_stable
from .measure import DiscreteMeasure, check_potential

__all__ = [
    "SafeLseSolution",
    "BoundCertificate",
    "log_partition",
    "solve_alpha",
    "safe_log_partition",
    "safe_logsumexp",
    "cvar",
    "cvar_sandwich",
    "prop1_bounds",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-12
_MAX_DOUBLINGS = 200
_MAX_ITER = 200


@dataclass(frozen=True)
class SafeLseSolution:
    value: float
    alpha_star: float
    iterations: int
    residual: float


@dataclass(frozen=True)
class BoundCertificate:
    """``lower <= witness <= upper`` up to ``slack``."""

    lower: float
    upper: float
    witness: float
    slack: float = 1e-9

    @property
    def holds(self) -> bool:
        return self.lower - self.slack <= self.witness <= self.upper + self.slack


def log_partition(phi, mu: DiscreteMeasure) -> float:
    """``log sum_i w_i e^{phi_i}`` over the atoms with positive weight."""
    phi = check_potential(phi, mu)
    w = mu.weights
    pos = w > 0
    return logsumexp(phi[pos] + np.log(w[pos]))


def _residual(alpha, phi, w, r):
    return float(np.dot(w, _sigma_rho(phi - alpha, r))) - 1.0


def _solve(phi, w, r, tol):
    """Root of ``alpha -> sum_i w_i sigma_rho(phi_i - alpha) - 1`` for
    nonnegative masses ``w``.

    The map decreases strictly from ``sum(w)/rho - 1`` to ``-1``.  When
    ``sum(w) <= rho`` (Bouchard mode on a probability measure) there is no
    root and the infimum is approached as ``alpha -> -inf``; that case returns
    ``(-inf, 0, 0.0)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    total = float(np.sum(w))
    if total <= r * (1.0 + 1e-12):
        return -math.inf, 0, 0.0

    # sigma_rho(t) < e^t, so the residual is negative at the log-partition value
    hi = logsumexp(phi[w > 0] + np.log(w[w > 0]))
    g_hi = _residual(hi, phi, w, r)
    step = 1.0
    n = 0
    while g_hi > 0:
        hi += step
        step *= 2.0
        g_hi = _residual(hi, phi, w, r)
        n += 1
        if n > _MAX_DOUBLINGS:
            raise RuntimeError("bracketing failed")
    step = 1.0
    lo = hi - step
    g_lo = _residual(lo, phi, w, r)
    n = 0
    while g_lo < 0:
        hi, g_hi = lo, g_lo
        step *= 2.0
        lo = hi - step
        g_lo = _residual(lo, phi, w, r)
        n += 1
        if n > _MAX_DOUBLINGS:
            raise RuntimeError("bracketing failed")
    if abs(g_hi) <= tol:
        return hi, 0, abs(g_hi)
    if abs(g_lo) <= tol:
        return lo, 0, abs(g_lo)

    # exact for constant phi: each term equals one at alpha = phi + log(1 - rho)
    alpha = float(np.max(phi)) + math.log1p(-r) if r < 1 else 0.5 * (lo + hi)
    if not lo < alpha < hi:
        alpha = 0.5 * (lo + hi)
    g = _residual(alpha, phi, w, r)
    for it in range(1, _MAX_ITER + 1):
        if abs(g) <= tol:
            return alpha, it, abs(g)
        if g > 0:
            lo = alpha
        else:
            hi = alpha
        slope = -float(np.dot(w, _sigma_rho_prime(phi - alpha, r)))
        cand = alpha - g / slope if slope < 0 else math.nan
        if not lo < cand < hi:
            cand = 0.5 * (lo + hi)
        if cand == alpha or hi - lo <= 4 * np.spacing(max(abs(lo), abs(hi))):
            break
        alpha = cand
        g = _residual(alpha, phi, w, r)
    return alpha, it, abs(g)


def solve_alpha(phi, mu: DiscreteMeasure, rho, tol: float = DEFAULT_TOL) -> float:
    """Optimal ``alpha`` of the SoftPlus representation.

    Bracketed Newton iteration with bisection fallback on the monotone
    residual ``sum_i w_i sigma_rho(phi_i - alpha) - 1``.  The upper bracket is
    the exact log-partition value; the lower one is found by doubling steps.
    """
    phi = check_potential(phi, mu)
    alpha, _, _ = _solve(phi, mu.weights, as_rho(rho), tol)
    return alpha


def _objective(alpha, phi, w, r):
    return alpha - 1.0 + float(np.dot(w, softplus_stable(phi - alpha + math.log(r)))) / r


def _degenerate_value(phi, w, r):
    # limit of the objective as alpha -> -inf when sum(w) == rho
    return -1.0 + float(np.dot(w, phi)) / r + math.log(r)


def safe_log_partition(
    phi, mu: DiscreteMeasure, rho, tol: float = DEFAULT_TOL
) -> SafeLseSolution:
    """SoftPlus approximation ``F_rho(phi; mu)`` together with its optimal
    ``alpha``.  Always ``F_rho <= F``."""
    phi = check_potential(phi, mu)
    r = as_rho(rho)
    w = mu.weights
    alpha, iters, res = _solve(phi, w, r, tol)
    if math.isinf(alpha):
        value = _degenerate_value(phi, w, r)
    else:
        value = _objective(alpha, phi, w, r)
    return SafeLseSolution(value=value, alpha_star=alpha, iterations=iters, residual=res)


def safe_logsumexp(a, rho, tol: float = DEFAULT_TOL) -> float:
    """``inf_alpha alpha - 1 + (1/rho) sum_i log(1 + rho e^{a_i - alpha})``.

    Lies within ``[logsumexp(a) - rho, logsumexp(a)]``.
    """
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("empty vector")
    if not np.all(np.isfinite(a)):
        raise ValueError("entries must be finite")
    r = as_rho(rho)
    w = np.ones_like(a)
    alpha, _, _ = _solve(a, w, r, tol)
    if math.isinf(alpha):
        return _degenerate_value(a, w, r)
    return _objective(alpha, a, w, r)


def cvar(phi, mu: DiscreteMeasure, rho) -> float:
    """Conditional value at risk via ``inf_alpha alpha + (1/rho) E(phi - alpha)_+``.

    The objective is piecewise linear and convex in ``alpha`` with kinks at
    the atom values, so the infimum is the smallest value over those kinks.
    """
    phi = check_potential(phi, mu)
    r = as_rho(rho)
    if not 0 < r < 1:
        raise ValueError("cvar requires 0 < rho < 1")
    pos = mu.weights > 0
    order = np.argsort(phi[pos], kind="stable")
    x = phi[pos][order]
    w = mu.weights[pos][order]
    # tail sums over strictly later entries in sorted order; ties contribute 0
    w_tail = np.concatenate([np.cumsum(w[::-1])[::-1][1:], [0.0]])
    wx_tail = np.concatenate([np.cumsum((w * x)[::-1])[::-1][1:], [0.0]])
    candidates = x + (wx_tail - x * w_tail) / r
    return float(np.min(candidates))


def cvar_sandwich(phi, mu: DiscreteMeasure, rho, lam: float) -> BoundCertificate:
    """Brackets ``lam * F_rho(phi / lam)`` between CVaR-based bounds."""
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    phi = check_potential(phi, mu)
    r = as_rho(rho)
    c = cvar(phi, mu, r)
    witness = lam * safe_log_partition(phi / lam, mu, r).value
    lower = c + lam * (math.log(r) - 1.0)
    upper = c + lam * (math.log(r) - 1.0 + 1.0 / r)
    return BoundCertificate(lower=lower, upper=upper, witness=witness)


def prop1_bounds(phi, mu: DiscreteMeasure, rho) -> BoundCertificate:
    """Two-sided certificate for ``F_rho``: ``F`` from above, and the tighter
    applicable lower bound.

    * second-moment bound ``F + rho/2 - 4 rho e^{F(2 phi) - 2F}``, valid for
      ``rho <= e^{2F - F(2 phi)} / 4``;
    * bounded-potential bound ``F - rho e^{M - F}``, valid for ``rho < e^{F - M}``
      with ``M = max phi``.
    """
    phi = check_potential(phi, mu)
    r = as_rho(rho)
    F = log_partition(phi, mu)
    F2 = log_partition(2.0 * phi, mu)
    M = float(np.max(phi[mu.weights > 0]))
    lowers = []
    if r <= 0.25 * math.exp(2.0 * F - F2):
        lowers.append(F + r / 2.0 - 4.0 * r * math.exp(F2 - 2.0 * F))
    if r < math.exp(F - M):
        lowers.append(F - r * math.exp(M - F))
    if not lowers:
        raise ValueError("rho too large for bound")
    witness = safe_log_partition(phi, mu, r).value
    return BoundCertificate(lower=max(lowers), upper=F, witness=witness)
