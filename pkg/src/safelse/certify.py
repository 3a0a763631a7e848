"""Randomised numerical checks of the approximation guarantees.

Each suite draws its own instances from a generator, evaluates both sides of
an inequality and counts the violations.  The suites back the ``bounds`` and
``cvar`` experiments and the acceptance tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corefn import (
    Rho,
    f_rho,
    f_rho_second,
    f_rho_star,
    logistic,
    logistic_prime,
    logsumexp,
    sigma_rho,
    softplus_composite_hessian,
    softplus_smoothness_constant,
)
from .measure import DiscreteMeasure
from .partition import (
    cvar,
    cvar_sandwich,
    log_partition,
    prop1_bounds,
    safe_log_partition,
    safe_logsumexp,
)

__all__ = [
    "SuiteResult",
    "sandwich_suite",
    "monotonicity_suite",
    "lower_bound_suite",
    "conjugacy_suite",
    "strong_convexity_suite",
    "cvar_suite",
    "smoothness_suite",
    "run_bound_suites",
    "run_cvar_suites",
    "h_curve",
    "shifted_h_curve",
    "near_tight_second_derivative",
]


@dataclass(frozen=True)
class SuiteResult:
    name: str
    checks: int
    violations: int
    worst: float  # largest violation margin seen (<= 0 when everything holds)

    @property
    def passed(self) -> bool:
        return self.checks > 0 and self.violations == 0


class _Tally:
    def __init__(self, name):
        self.name = name
        self.checks = 0
        self.violations = 0
        self.worst = -math.inf

    def record(self, margin: float) -> None:
        """``margin > 0`` is a violation."""
        self.checks += 1
        if not margin <= 0:
            self.violations += 1
        self.worst = max(self.worst, margin) if margin == margin else math.inf

    def result(self) -> SuiteResult:
        return SuiteResult(self.name, self.checks, self.violations, self.worst)


def _random_measure(rng, n, dirichlet=True):
    w = rng.dirichlet(np.ones(n)) if dirichlet else np.full(n, 1.0 / n)
    w = w / w.sum()
    return DiscreteMeasure(np.arange(n), w)


def sandwich_suite(rng, n_vectors=1000, max_n=64, bound=20.0,
                   rhos=(0.03, 0.1, 0.3, 1.0), slack=1e-9) -> SuiteResult:
    """``logsumexp(a) - rho <= safe_logsumexp(a, rho) <= logsumexp(a)``."""
    t = _Tally("logsumexp sandwich")
    for _ in range(n_vectors):
        a = rng.uniform(-bound, bound, size=int(rng.integers(1, max_n + 1)))
        lse = logsumexp(a)
        for r in rhos:
            rho = Rho.bouchard() if r == 1.0 else r
            s = safe_logsumexp(a, rho)
            t.record(max(lse - r - slack - s, s - lse - slack))
    return t.result()


def monotonicity_suite(rng, n_instances=100, max_n=32, rhos=(0.5, 0.1, 0.01, 0.001),
                       slack=1e-9) -> SuiteResult:
    """``F_rho`` grows as ``rho`` shrinks and never exceeds ``F``."""
    t = _Tally("rho monotonicity")
    rhos = sorted(rhos, reverse=True)
    for _ in range(n_instances):
        n = int(rng.integers(1, max_n + 1))
        mu = _random_measure(rng, n)
        phi = rng.normal(scale=3.0, size=n)
        vals = [safe_log_partition(phi, mu, r).value for r in rhos]
        F = log_partition(phi, mu)
        for a, b in zip(vals, vals[1:]):
            t.record(a - b - slack)
        t.record(vals[-1] - F - slack)
    return t.result()


def lower_bound_suite(rng, n_instances=100, max_n=32, rhos=(0.5, 0.1, 0.03, 0.01, 0.001),
                      slack=1e-9) -> SuiteResult:
    """Second-moment and bounded-potential lower bounds wherever they apply."""
    t = _Tally("lower bounds")
    for _ in range(n_instances):
        n = int(rng.integers(1, max_n + 1))
        mu = _random_measure(rng, n)
        phi = rng.normal(scale=rng.uniform(0.1, 3.0), size=n)
        for r in rhos:
            try:
                cert = prop1_bounds(phi, mu, r)
            except ValueError:
                continue
            t.record(max(cert.lower - slack - cert.witness, cert.witness - cert.upper - slack))
    return t.result()


def _brute_conjugate(s, r, grid_size):
    # f_rho(t) is finite on [0, 1/rho]; sup of s t - f_rho(t) over a grid
    tt = np.linspace(0.0, 1.0 / r, grid_size)
    return float(np.max(s * tt - f_rho(tt, r)))


def conjugacy_suite(rng, n_pairs=50, grid_size=10**6, tol=1e-6, fd_tol=1e-6) -> SuiteResult:
    """Closed-form conjugate against a grid supremum, and its derivative
    against central differences of the closed form."""
    t = _Tally("conjugacy")
    for _ in range(n_pairs):
        r = float(10 ** rng.uniform(-2, -0.05))
        s = float(rng.uniform(-5, 5))
        t.record(abs(f_rho_star(s, r) - _brute_conjugate(s, r, grid_size)) - tol)
        h = 1e-5
        fd = (f_rho_star(s + h, r) - f_rho_star(s - h, r)) / (2 * h)
        exact = float(sigma_rho(s, r))
        t.record(abs(fd - exact) / max(abs(exact), 1e-300) - fd_tol)
    return t.result()


def strong_convexity_suite(rng, grid=100, n_pairs=10**4) -> SuiteResult:
    """``f_rho'' >= rho`` on a grid and ``sigma_rho`` is ``1/rho``-Lipschitz."""
    t = _Tally("strong convexity")
    for r in np.geomspace(1e-3, 0.999, grid):
        tt = np.linspace(0.0, 1.0 / r, grid + 2)[1:-1]
        second = f_rho_second(tt, r)
        for m in np.atleast_1d(r - second):
            t.record(float(m))
    r = 10 ** rng.uniform(-3, -1e-3, size=n_pairs)
    a = rng.uniform(-30, 30, size=n_pairs)
    b = a + rng.normal(scale=2.0, size=n_pairs)
    for ri, ai, bi in zip(r, a, b):
        gap = abs(float(sigma_rho(ai, ri)) - float(sigma_rho(bi, ri)))
        t.record(gap - abs(ai - bi) / ri * (1 + 1e-12))
    return t.result()


def cvar_suite(rng, n_instances=100, max_n=32, lams=(0.1, 1.0, 10.0), rhos=(0.1, 0.5),
               slack=1e-9) -> SuiteResult:
    """CVaR sandwich, plus the tail-mean identity when ``rho * n`` is integral."""
    t = _Tally("cvar sandwich")
    for _ in range(n_instances):
        n = int(rng.integers(1, max_n + 1))
        mu = _random_measure(rng, n)
        phi = rng.normal(scale=3.0, size=n)
        for lam in lams:
            for r in rhos:
                c = cvar_sandwich(phi, mu, r, lam)
                t.record(max(c.lower - slack - c.witness, c.witness - c.upper - slack))
    for _ in range(n_instances):
        k = int(rng.integers(1, 11))
        n = 10 * k
        phi = rng.normal(scale=3.0, size=n)
        mu = DiscreteMeasure.uniform(np.arange(n))
        for r in rhos:
            m = int(round(r * n))
            tail = float(np.mean(np.sort(phi)[n - m:]))
            t.record(abs(cvar(phi, mu, r) - tail) - 1e-12 * max(1.0, abs(tail)))
    return t.result()


def h_curve(t):
    """``sigma(t) + 2 t sigma'(t)``, the per-point factor in the smoothness bound."""
    return logistic(t) + 2.0 * t * logistic_prime(t)


def shifted_h_curve(x, a):
    """``sigma(x) + 2 sigma'(x) (x - a)``, bounded by ``2 - a/2`` for ``x >= a``, ``a <= 0``."""
    return logistic(x) + 2.0 * logistic_prime(x) * (x - a)


def smoothness_suite(rng, n_quadratics=50, n_points=1000, dim=4, slack=1e-8) -> SuiteResult:
    """Hessian norm of ``log(1 + e^f)`` for random quadratics ``f`` against the
    smoothness constant, plus the scalar curve bounds behind it."""
    t = _Tally("softplus smoothness")
    for _ in range(n_quadratics):
        B = rng.normal(size=(dim, dim))
        # positive definite, so the minimum f_* is attained
        A = B @ B.T / dim + 0.05 * np.eye(dim)
        b = rng.normal(scale=2.0, size=dim)
        c = float(rng.normal(scale=3.0))
        L = float(np.linalg.norm(A, 2))
        xstar = -np.linalg.solve(A, b)
        fmin = 0.5 * xstar @ A @ xstar + b @ xstar + c
        bound = softplus_smoothness_constant(L, fmin)
        X = xstar + rng.normal(scale=rng.uniform(0.1, 5.0), size=(n_points, dim))
        for x in X:
            fx = 0.5 * x @ A @ x + b @ x + c
            H = softplus_composite_hessian(fx, A @ x + b, A)
            t.record(float(np.linalg.norm(H, 2)) - bound - slack)
    grid = np.linspace(-50, 50, 200001)
    t.record(float(np.max(h_curve(grid))) - 4.0 / 3.0)
    for a in np.linspace(-20, 0, 81):
        x = np.linspace(a, a + 60, 20001)
        t.record(float(np.max(shifted_h_curve(x, a))) - (2.0 - a / 2.0))
    return t.result()


def near_tight_second_derivative(a: float) -> tuple:
    """Second derivative at 0 of ``log(1 + e^f)`` for ``f(x) = (x - a)^2/2 - a^2/2``
    together with the value ``1/2 - f_*/2`` it should equal."""
    f0, g0, h0 = 0.0, -a, 1.0
    second = float(softplus_composite_hessian(f0, np.array([g0]), np.array([[h0]]))[0, 0])
    fmin = -0.5 * a * a
    return second, 0.5 - fmin / 2.0


def run_bound_suites(rng, scale: float = 1.0) -> list:
    """All approximation-guarantee suites.  ``scale`` shrinks instance counts
    for quick runs."""
    k = lambda n: max(1, int(round(n * scale)))  # noqa: E731
    return [
        sandwich_suite(rng, n_vectors=k(1000)),
        monotonicity_suite(rng, n_instances=k(100)),
        lower_bound_suite(rng, n_instances=k(100)),
        conjugacy_suite(rng, n_pairs=k(50)),
        strong_convexity_suite(rng, n_pairs=k(10**4)),
        smoothness_suite(rng, n_quadratics=k(50)),
    ]


def run_cvar_suites(rng, scale: float = 1.0) -> list:
    return [cvar_suite(rng, n_instances=max(1, int(round(100 * scale))))]
