"""Continuous entropy-regularized optimal transport in 1-D with kernel SGD.

Two solvers are compared:

* the baseline runs SGD on the dual objective
  ``u(x) + v(y) - eps * exp((u(x) + v(y) - c(x, y)) / eps)``, whose update
  contains a raw exponential;
* the safe solver runs SGD on the SoftPlus-approximated semi-dual
  ``v(y) - alpha - (eps/rho) log(1 + rho e^{(v(y) - c - alpha)/eps}) - eps``,
  whose update only involves the bounded ``sigma_rho``.

Potentials live in a Gaussian-kernel space and are stored as growing
expansions ``sum_i beta_i exp(-(. - y_i)^2 / sigma^2)``.  Progress is
measured by a semi-discrete proxy of the optimal value on fixed test sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp as _lse

from .corefn import FloatOverflowError, _sigma_rho, as_rho
from .optim import DivergenceError, Trajectory

__all__ = [
    "Sampler1D",
    "sample",
    "KernelExpansion",
    "EotConfig",
    "EotFixture",
    "squared_cost",
    "dual_sgd_step",
    "safe_semidual_sgd_step",
    "semidiscrete_value",
    "semidiscrete_average",
    "estimate_gap_reference",
    "optimality_gap",
    "SOURCE",
    "TARGET",
    "make_fixture",
    "power_of_two_checkpoints",
    "run_eot",
    "PRECISIONS",
    "overflow_threshold",
    "dual_exponent",
]


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sampler1D:
    """A 1-D Gaussian or a finite Gaussian mixture.

    Build with ``Sampler1D.gaussian(mean, variance)`` or
    ``Sampler1D.mixture(weights, means, variances)``.
    """

    kind: str
    weights: tuple
    means: tuple
    variances: tuple

    def __post_init__(self):
        if self.kind not in ("gaussian", "mixture"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if not (w.size == m.size == v.size >= 1):
            raise ValueError("weights, means and variances must have equal nonzero length")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
            raise ValueError("means and variances must be finite")
        if np.any(v <= 0):
            raise ValueError("variances must be > 0")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")

    @classmethod
    def gaussian(cls, mean: float = 0.0, variance: float = 1.0) -> "Sampler1D":
        return cls("gaussian", (1.0,), (float(mean),), (float(variance),))

    @classmethod
    def mixture(cls, weights, means, variances) -> "Sampler1D":
        as_tuple = lambda a: tuple(float(t) for t in a)  # noqa: E731
        return cls("mixture", as_tuple(weights), as_tuple(means), as_tuple(variances))

    def density(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        m = np.asarray(self.means)
        v = np.asarray(self.variances)
        comp = np.exp(-((x - m) ** 2) / (2 * v)) / np.sqrt(2 * math.pi * v)
        return comp @ np.asarray(self.weights)


def sample(sampler: Sampler1D, rng: np.random.Generator, size: Optional[int] = None):
    """I.i.d. draws.  Mixtures pick the component first, then draw from it.

    Returns a float when ``size`` is None, else an array of that length.
    """
    n = 1 if size is None else int(size)
    if sampler.kind == "gaussian":
        out = sampler.means[0] + math.sqrt(sampler.variances[0]) * rng.standard_normal(n)
    else:
        comp = rng.choice(len(sampler.weights), size=n, p=np.asarray(sampler.weights))
        z = rng.standard_normal(n)
        out = np.asarray(sampler.means)[comp] + np.sqrt(np.asarray(sampler.variances))[comp] * z
    return float(out[0]) if size is None else out


# ---------------------------------------------------------------------------
# Kernel expansions
# ---------------------------------------------------------------------------


class KernelExpansion:
    """Function ``x -> offset + sum_i coeff_i exp(-(x - center_i)^2 / sigma^2)``.

    Storage grows geometrically, so appending ``T`` terms costs ``O(T)``
    memory and amortised ``O(1)`` time per term.
    """

    def __init__(self, bandwidth: float, centers=(), coefficients=(), offset: float = 0.0):
        if not bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        c = np.asarray(centers, dtype=float).ravel()
        b = np.asarray(coefficients, dtype=float).ravel()
        if c.size != b.size:
            raise ValueError("centers and coefficients must have equal length")
        self.bandwidth = float(bandwidth)
        self.offset = float(offset)
        cap = max(16, c.size)
        self._c = np.zeros(cap)
        self._b = np.zeros(cap)
        self._c[: c.size] = c
        self._b[: b.size] = b
        self._n = c.size

    def __len__(self) -> int:
        return self._n

    @property
    def centers(self) -> np.ndarray:
        return self._c[: self._n].copy()

    @property
    def coefficients(self) -> np.ndarray:
        return self._b[: self._n].copy()

    def append(self, center: float, coefficient: float) -> None:
        if self._n == self._c.size:
            self._c = np.concatenate([self._c, np.zeros(self._n)])
            self._b = np.concatenate([self._b, np.zeros(self._n)])
        self._c[self._n] = center
        self._b[self._n] = coefficient
        self._n += 1

    def __call__(self, x: float) -> float:
        n = self._n
        if n == 0:
            return self.offset
        d = x - self._c[:n]
        return self.offset + float(np.dot(self._b[:n], np.exp(-(d * d) / self.bandwidth)))

    def evaluate(self, xs, block: int = 4096) -> np.ndarray:
        """Vectorised evaluation at many points."""
        xs = np.asarray(xs, dtype=float).ravel()
        out = np.full(xs.size, self.offset)
        c, b = self._c[: self._n], self._b[: self._n]
        for s in range(0, c.size, block):
            d = xs[:, None] - c[None, s : s + block]
            out += np.exp(-(d * d) / self.bandwidth) @ b[s : s + block]
        return out


def squared_cost(x, y):
    return (np.asarray(x) - np.asarray(y)) ** 2


# ---------------------------------------------------------------------------
# Configuration and fixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EotConfig:
    epsilon: float = 0.01
    rho: float = 0.1
    C: float = 1.0
    bandwidth: float = 10.0
    iters: int = 20000
    test_size: int = 1000
    divergence_factor: float = 10.0

    def __post_init__(self):
        for name in ("epsilon", "C", "bandwidth", "divergence_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        as_rho(self.rho)
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.test_size < 1:
            raise ValueError("test_size must be >= 1")


SOURCE = Sampler1D.gaussian(0.0, 1.0)
TARGET = Sampler1D.mixture((0.5, 0.5), (-2.0, 2.0), (0.25, 0.25))


@dataclass(frozen=True)
class EotFixture:
    """Test sets and the reference value the optimality gap is measured against."""

    test_xs: np.ndarray
    test_ys: np.ndarray
    epsilon: float
    reference: float


# ---------------------------------------------------------------------------
# Floating-point range of the dual exponent
# ---------------------------------------------------------------------------

PRECISIONS = {"double": np.float64, "single": np.float32}


def overflow_threshold(epsilon: float, precision: str = "double") -> float:
    """Smallest ``z`` with ``exp(z / eps)`` beyond the largest finite value of
    the given precision: ``eps * log(max_float)``."""
    dtype = PRECISIONS[precision]
    return float(epsilon * math.log(float(np.finfo(dtype).max)))


def dual_exponent(z: float, epsilon: float, precision: str = "double"):
    """``exp(z / eps)`` evaluated in the given precision.

    Raises ``FloatOverflowError`` when the result is not finite.
    """
    dtype = PRECISIONS[precision]
    with np.errstate(over="ignore"):
        value = np.exp(dtype(z) / dtype(epsilon))
    if not np.isfinite(value):
        raise FloatOverflowError(np.dtype(dtype).name, f"exp({z!r} / {epsilon!r})")
    return value


# ---------------------------------------------------------------------------
# SGD steps
# ---------------------------------------------------------------------------


def dual_sgd_step(u: KernelExpansion, v: KernelExpansion, x: float, y: float, i: int,
                  config: EotConfig, cost=squared_cost):
    """One kernel-SGD step on the dual objective.

    ``beta = (C / sqrt(i)) * (1 - exp((u(x) + v(y) - c(x, y)) / eps))`` is
    appended to ``u`` at ``x`` and to ``v`` at ``y``.  The exponential is
    evaluated as written, so it can overflow; a non-finite coefficient
    raises ``DivergenceError`` carrying ``i`` and leaves both expansions
    unchanged.  Returns ``(u, v)``, updated in place.
    """
    if i < 1:
        raise ValueError("iteration index must be >= 1")
    z = (u(x) + v(y) - float(cost(x, y))) / config.epsilon
    with np.errstate(over="ignore", invalid="ignore"):
        beta = config.C / math.sqrt(i) * (1.0 - np.exp(np.float64(z)))
    if not np.isfinite(beta):
        raise DivergenceError(i, "coefficient, exponent overflow")
    u.append(x, float(beta))
    v.append(y, float(beta))
    return u, v


def safe_semidual_sgd_step(v: KernelExpansion, alpha: float, x: float, y: float, i: int,
                           config: EotConfig, cost=squared_cost):
    """One kernel-SGD step on the SoftPlus-approximated semi-dual.

    With ``s = (v(y) - c(x, y) - alpha) / eps`` the coefficient is
    ``(C / sqrt(i)) * (1 - sigma_rho(s))``; it is appended to ``v`` at ``y``
    and subtracted from ``alpha``.  ``sigma_rho`` is bounded by ``1/rho``, so
    the coefficient is finite for every finite input.  Returns
    ``(v, alpha)``; ``v`` is updated in place.
    """
    if i < 1:
        raise ValueError("iteration index must be >= 1")
    r = as_rho(config.rho)
    s = (v(y) - float(cost(x, y)) - alpha) / config.epsilon
    beta = config.C / math.sqrt(i) * (1.0 - float(_sigma_rho(s, r)))
    v.append(y, beta)
    return v, alpha - beta


# ---------------------------------------------------------------------------
# Semi-discrete proxy and optimality gap
# ---------------------------------------------------------------------------


def semidiscrete_value(v_vec, x: float, test_ys, epsilon: float, cost=squared_cost) -> float:
    """``mean(v) - eps * log(mean(exp((v - c(x, y)) / eps))) - eps``."""
    v_vec = np.asarray(v_vec, dtype=float).ravel()
    ys = np.asarray(test_ys, dtype=float).ravel()
    if v_vec.size == 0 or v_vec.size != ys.size:
        raise ValueError("v and the test points must have equal nonzero length")
    a = (v_vec - cost(x, ys)) / epsilon
    return float(np.mean(v_vec) - epsilon * (_lse(a) - math.log(a.size)) - epsilon)


def _values_and_grad(v_vec, xs, ys, epsilon, cost, want_grad=True, block=512):
    """Test-set average of the semi-discrete value and its gradient in ``v``."""
    N = ys.size
    total = 0.0
    grad = np.zeros(N) if want_grad else None
    for s in range(0, xs.size, block):
        a = (v_vec[None, :] - cost(xs[s : s + block, None], ys[None, :])) / epsilon
        lse = _lse(a, axis=1)
        total += float(np.sum(lse))
        if want_grad:
            grad -= np.exp(a - lse[:, None]).sum(axis=0)
    value = float(np.mean(v_vec)) - epsilon * (total / xs.size - math.log(N)) - epsilon
    if want_grad:
        grad = grad / xs.size + 1.0 / N
    return value, grad


def semidiscrete_average(v_vec, test_xs, test_ys, epsilon: float, cost=squared_cost) -> float:
    """Average of ``semidiscrete_value`` over the source test points."""
    xs = np.asarray(test_xs, dtype=float).ravel()
    ys = np.asarray(test_ys, dtype=float).ravel()
    v_vec = np.asarray(v_vec, dtype=float).ravel()
    if xs.size == 0 or ys.size == 0 or v_vec.size != ys.size:
        raise ValueError("test sets must be nonempty and match v")
    value, _ = _values_and_grad(v_vec, xs, ys, epsilon, cost, want_grad=False)
    return value


def power_of_two_checkpoints(iters: int) -> list:
    """``0, 1, 2, 4, ...`` up to ``iters``, with ``iters`` itself included."""
    points = [0]
    k = 1
    while k <= iters:
        points.append(k)
        k *= 2
    if points[-1] != iters:
        points.append(iters)
    return points


def estimate_gap_reference(
    test_xs,
    test_ys,
    epsilon: float,
    runs: int = 5,
    iters: int = 50000,
    C: float = 10.0,
    seed: int = 0,
    cost=squared_cost,
) -> float:
    """Best test-set value of the semi-discrete problem reached by SGD.

    Each run starts from ``v = 0`` and takes steps ``C / sqrt(i)`` along the
    stochastic gradient ``1/N - softmax((v - c(x, .)) / eps)``, with ``x``
    drawn uniformly from ``test_xs`` so that the maximised objective is
    exactly the reported test average.  Both the iterate and its running
    average are scored at power-of-two checkpoints; the largest score over
    all runs is returned.
    """
    xs = np.asarray(test_xs, dtype=float).ravel()
    ys = np.asarray(test_ys, dtype=float).ravel()
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    N = ys.size
    checkpoints = set(power_of_two_checkpoints(iters))
    best = semidiscrete_average(np.zeros(N), xs, ys, epsilon, cost)
    for run in range(runs):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(run,))))
        picks = rng.integers(xs.size, size=iters)
        v = np.zeros(N)
        avg = np.zeros(N)
        for i in range(1, iters + 1):
            a = (v - cost(xs[picks[i - 1]], ys)) / epsilon
            p = np.exp(a - a.max())
            v += C / math.sqrt(i) * (1.0 / N - p / p.sum())
            avg += (v - avg) / i
            if i in checkpoints:
                best = max(
                    best,
                    semidiscrete_average(v, xs, ys, epsilon, cost),
                    semidiscrete_average(avg, xs, ys, epsilon, cost),
                )
    return best


def optimality_gap(v, reference: float, test_xs, test_ys, epsilon: float, cost=squared_cost) -> float:
    """``reference`` minus the test-set average of the semi-discrete value.

    ``v`` is either a ``KernelExpansion`` (evaluated at ``test_ys``) or a
    vector of its values there.  The raw difference is returned and may be
    slightly negative.
    """
    ys = np.asarray(test_ys, dtype=float).ravel()
    vals = v.evaluate(ys) if isinstance(v, KernelExpansion) else np.asarray(v, dtype=float)
    return float(reference - semidiscrete_average(vals, test_xs, ys, epsilon, cost))


def make_fixture(
    test_size: int = 1000,
    epsilon: float = 0.01,
    seed: int = 0,
    reference_runs: int = 5,
    reference_iters: int = 50000,
    reference_C: float = 10.0,
    source: Sampler1D = SOURCE,
    target: Sampler1D = TARGET,
) -> EotFixture:
    """Draw the test sets and compute the reference value."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2**31 - 1,))))
    xs = sample(source, rng, test_size)
    ys = sample(target, rng, test_size)
    ref = estimate_gap_reference(xs, ys, epsilon, reference_runs, reference_iters, reference_C, seed)
    return EotFixture(xs, ys, epsilon, ref)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def run_eot(
    config: EotConfig,
    mode: str,
    rng: np.random.Generator,
    fixture: EotFixture,
    source: Sampler1D = SOURCE,
    target: Sampler1D = TARGET,
) -> Trajectory:
    """Kernel SGD with fresh ``(x, y)`` pairs; ``mode`` is ``"dual_baseline"``
    or ``"safe_semidual"``.

    The gap is logged at power-of-two checkpoints.  Two kinds of event are
    recorded with their iteration index: ``"overflow"`` when a baseline
    coefficient stops being finite (the run ends there), and
    ``"divergence"`` the first time a logged gap is non-finite or exceeds
    ``divergence_factor`` times the initial gap (the run continues).
    """
    if mode not in ("dual_baseline", "safe_semidual"):
        raise ValueError(f"unknown mode {mode!r}")
    if fixture.epsilon != config.epsilon:
        raise ValueError("fixture was built for a different epsilon")
    xs = sample(source, rng, config.iters)
    ys = sample(target, rng, config.iters)
    u = KernelExpansion(config.bandwidth)
    v = KernelExpansion(config.bandwidth)
    alpha = 0.0
    traj = Trajectory()
    checkpoints = set(power_of_two_checkpoints(config.iters))
    state = {"gap0": None, "flagged": False}

    def log(i):
        gap = optimality_gap(v, fixture.reference, fixture.test_xs, fixture.test_ys, config.epsilon)
        traj.log(i, "gap", gap)
        if state["gap0"] is None:
            state["gap0"] = gap
        elif not state["flagged"] and not (
            math.isfinite(gap) and gap <= config.divergence_factor * abs(state["gap0"])
        ):
            state["flagged"] = True
            traj.event(i, "divergence", f"gap {gap:.6g} at iteration {i}")

    log(0)
    for i in range(1, config.iters + 1):
        x, y = float(xs[i - 1]), float(ys[i - 1])
        if mode == "dual_baseline":
            try:
                dual_sgd_step(u, v, x, y, i, config)
            except DivergenceError as exc:
                traj.event(i, "overflow", str(exc))
                break
        else:
            v, alpha = safe_semidual_sgd_step(v, alpha, x, y, i, config)
        if i in checkpoints:
            log(i)
    traj.final = {"alpha": alpha, "terms": len(v)}
    return traj
