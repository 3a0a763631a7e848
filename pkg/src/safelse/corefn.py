"""Numerically stable scalar kernels.

SoftPlus, LogSumExp and the logistic function, plus the safe-KL entropy
generator ``f_rho``, its convex conjugate and the capped logistic
``sigma_rho`` that shows up in every gradient of the approximation.

All functions accept scalars or numpy arrays and broadcast elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

__all__ = [
    "FloatOverflowError",
    "Rho",
    "as_rho",
    "softplus_stable",
    "logsumexp",
    "logistic",
    "logistic_prime",
    "sigma_rho",
    "sigma_rho_prime",
    "f_rho",
    "f_kl",
    "f_rho_star",
    "f_rho_second",
    "softplus_composite_hessian",
    "softplus_smoothness_constant",
]


class FloatOverflowError(OverflowError):
    """An exponential left the representable floating-point range."""

    def __init__(self, precision: str = "float64", detail: str = ""):
        msg = f"{precision} overflow"
        super().__init__(f"{msg}: {detail}" if detail else msg)
        self.precision = precision


@dataclass(frozen=True)
class Rho:
    """Approximation parameter, ``0 < value < 1``.

    ``Rho.bouchard()`` gives the boundary value 1, for which the
    approximation reduces to Bouchard's LogSumExp bound.
    """

    value: float
    bouchard_mode: bool = False

    def __post_init__(self):
        v = float(self.value)
        if not np.isfinite(v):
            raise ValueError(f"rho must be finite, got {self.value!r}")
        if self.bouchard_mode:
            if v != 1.0:
                raise ValueError("Bouchard mode requires rho == 1")
        elif not 0.0 < v < 1.0:
            raise ValueError(f"rho must satisfy 0 < rho < 1, got {v!r}")
        object.__setattr__(self, "value", v)

    @classmethod
    def bouchard(cls) -> "Rho":
        return cls(1.0, bouchard_mode=True)

    def __float__(self) -> float:
        return self.value


def as_rho(rho) -> float:
    """Validate ``rho`` and return it as a float.

    Plain floats must lie in (0, 1); the value 1 is only accepted through
    ``Rho.bouchard()``.
    """
    if isinstance(rho, Rho):
        return rho.value
    return Rho(rho).value


def softplus_stable(x):
    """``log(1 + e^x)`` without intermediate overflow."""
    x = np.asarray(x, dtype=float)
    pos = x > 0
    # exp of a non-positive argument only
    z = np.exp(np.where(pos, -x, x))
    out = np.where(pos, x + np.log1p(z), np.log1p(z))
    return out[()] if out.ndim == 0 else out


def logsumexp(a) -> float:
    """``log(sum(exp(a)))`` for a nonempty 1-D vector, shift-stabilised."""
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("empty vector")
    m = np.max(a)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(a - m))))


def logistic(t):
    """Standard logistic ``1 / (1 + e^{-t})``."""
    return expit(t)


def logistic_prime(t):
    s = expit(t)
    return s * (1.0 - s)


def sigma_rho(t, rho):
    """Capped logistic ``e^t / (1 + rho e^t)``, valued in ``(0, 1/rho)``.

    Evaluated as ``logistic(t + log rho) / rho``, which never forms ``e^t``.
    """
    return _sigma_rho(t, as_rho(rho))


def sigma_rho_prime(t, rho):
    """Derivative of ``sigma_rho`` in ``t``: ``sigma_rho * (1 - rho sigma_rho)``."""
    return _sigma_rho_prime(t, as_rho(rho))


# Unchecked variants for callers that already validated rho.


def _sigma_rho(t, r: float):
    return expit(np.asarray(t, dtype=float) + np.log(r)) / r


def _sigma_rho_prime(t, r: float):
    s = expit(np.asarray(t, dtype=float) + np.log(r))
    return s * (1.0 - s) / r


def f_rho(t, rho):
    """Safe-KL entropy generator.

    ``t log t + 1 + (1 - rho t)/rho * log(1 - rho t)`` on ``[0, 1/rho]`` with
    ``0 log 0 = 0`` at both endpoints, and ``+inf`` outside.
    """
    r = as_rho(rho)
    t = np.asarray(t, dtype=float)
    inside = (t >= 0) & (r * t <= 1.0)
    tc = np.where(inside, t, 0.0)
    u = np.maximum(1.0 - r * tc, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # log1p keeps the rho -> 0 limit accurate
        tail = np.where(u > 0, u * np.log1p(-r * tc) / r, 0.0)
    out = np.where(inside, xlogy(tc, tc) + 1.0 + tail, np.inf)
    return out[()] if out.ndim == 0 else out


def f_kl(t):
    """KL entropy generator ``t log t + 1 - t`` (the ``rho -> 0`` limit)."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 0, xlogy(t, np.where(t >= 0, t, 1.0)) + 1.0 - t, np.inf)
    return out[()] if out.ndim == 0 else out


def f_rho_star(s, rho):
    """Convex conjugate of ``f_rho``: ``(1/rho) log(1 + rho e^s) - 1``."""
    r = as_rho(rho)
    return softplus_stable(np.asarray(s, dtype=float) + np.log(r)) / r - 1.0


def f_rho_second(t, rho):
    """``f_rho''(t) = 1/t + rho/(1 - rho t)`` on the open interval ``(0, 1/rho)``."""
    r = as_rho(rho)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or np.any(r * t >= 1.0):
        raise ValueError("outside domain")
    out = 1.0 / t + r / (1.0 - r * t)
    return out[()] if out.ndim == 0 else out


def softplus_composite_hessian(f_value, grad, hess):
    """Hessian of ``x -> log(1 + e^{f(x)})`` from the value, gradient and
    Hessian of ``f`` at a point.

    ``sigma(f) H + sigma(f) (1 - sigma(f)) g g^T``
    """
    s = float(expit(f_value))
    g = np.asarray(grad, dtype=float)
    return s * np.asarray(hess, dtype=float) + s * (1.0 - s) * np.outer(g, g)


def softplus_smoothness_constant(L: float, f_min: float) -> float:
    """Smoothness constant of ``log(1 + e^f)`` for an ``L``-smooth ``f``
    bounded below by ``f_min``."""
    if f_min >= 0:
        return 4.0 / 3.0 * L
    return (4.0 / 3.0 - f_min / 2.0) * L
