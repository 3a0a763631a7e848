"""Seedable first-order optimizers shared by the experiments.

Random numbers come from numpy's PCG64 bit generator seeded through a
``SeedSequence(seed, spawn_key=(stream_id,))``.  PCG64 and SeedSequence are
covered by numpy's stream-compatibility policy, so a given
``(seed, stream_id)`` pair reproduces the same draws across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "DivergenceError",
    "StepSchedule",
    "RngStream",
    "Trajectory",
    "sgd",
    "nesterov_sgd",
    "nesterov_ascent_fixed",
]


class DivergenceError(FloatingPointError):
    """Raised when an iterate or gradient stops being finite."""

    def __init__(self, iteration: int, what: str = "gradient"):
        super().__init__(f"divergence detected at iteration {iteration} (non-finite {what})")
        self.iteration = iteration


@dataclass(frozen=True)
class StepSchedule:
    kind: str = "inverse_sqrt"
    C: float = 1.0

    def __post_init__(self):
        if self.kind not in ("inverse_sqrt", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.C > 0:
            raise ValueError("C must be > 0")

    def __call__(self, i: int) -> float:
        """Stepsize at iteration ``i >= 1``."""
        if self.kind == "constant":
            return self.C
        return self.C / math.sqrt(i)


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass
class Trajectory:
    """Logged metric values plus recorded events (overflow, divergence)."""

    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    _last: dict = field(default_factory=dict, repr=False)

    def log(self, iteration: int, metric: str, value: float) -> None:
        last = self._last.get(metric)
        if last is not None and iteration <= last:
            raise ValueError(
                f"iteration {iteration} for {metric!r} does not follow {last}"
            )
        self._last[metric] = iteration
        self.rows.append((int(iteration), metric, float(value)))

    def event(self, iteration: int, kind: str, detail: str = "") -> None:
        self.events.append((int(iteration), kind, detail))

    def metrics(self) -> list:
        return list(dict.fromkeys(m for _, m, _ in self.rows))

    def series(self, metric: str):
        its = [i for i, m, _ in self.rows if m == metric]
        vals = [v for _, m, v in self.rows if m == metric]
        return np.array(its, dtype=int), np.array(vals, dtype=float)

    def last(self, metric: str) -> float:
        _, v = self.series(metric)
        if v.size == 0:
            raise KeyError(metric)
        return float(v[-1])


def _check(g, i):
    if not np.all(np.isfinite(g)):
        raise DivergenceError(i)
    return g


def sgd(
    grad_estimator: Callable,
    init,
    schedule: StepSchedule,
    iters: int,
    rng: np.random.Generator,
    logger: Optional[Callable] = None,
):
    """Plain SGD ``x_i = x_{i-1} - gamma_i g_i`` (minimisation).

    ``grad_estimator(x, rng)`` returns a stochastic gradient; ``logger(i, x)``
    is called after every update.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    x = np.array(init, dtype=float)
    for i in range(1, iters + 1):
        g = _check(np.asarray(grad_estimator(x, rng), dtype=float), i)
        x = x - schedule(i) * g
        if logger is not None:
            logger(i, x)
    return x


def nesterov_sgd(
    grad_estimator: Callable,
    init,
    stepsize: float,
    momentum: float,
    iters: int,
    rng: np.random.Generator,
    logger: Optional[Callable] = None,
):
    """SGD with Nesterov momentum, look-ahead form.

        v_i = m v_{i-1} - gamma g(x_{i-1} + m v_{i-1})
        x_i = x_{i-1} + v_i

    With ``momentum == 0`` this is constant-step SGD.
    """
    if not 0 <= momentum < 1:
        raise ValueError("momentum must lie in [0, 1)")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    x = np.array(init, dtype=float)
    v = np.zeros_like(x)
    for i in range(1, iters + 1):
        g = _check(np.asarray(grad_estimator(x + momentum * v, rng), dtype=float), i)
        v = momentum * v - stepsize * g
        x = x + v
        if logger is not None:
            logger(i, x)
    return x


def nesterov_ascent_fixed(value_and_grad: Callable, init, stepsize: float, iters: int = 5):
    """A fixed number of accelerated gradient ascent steps.

    Uses the ``(k - 1) / (k + 2)`` momentum sequence with function-value
    restart: whenever the accelerated step would lower the objective, the
    momentum is dropped and a plain gradient step is taken from the current
    point instead.  For a concave objective and ``stepsize <= 1/L`` the
    objective therefore never decreases.

    ``value_and_grad(z)`` may return one value per leading row of ``z``; the
    momentum counter and restarts are then tracked row by row.

    Returns ``(z, value)``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    z = np.array(init, dtype=float)
    f, g = value_and_grad(z)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)

    def rows(a):
        return a.reshape(a.shape + (1,) * (z.ndim - a.ndim))

    k = np.ones(f.shape)
    z_prev = z
    for it in range(1, iters + 1):
        m = rows((k - 1.0) / (k + 2.0))
        y = z + m * (z - z_prev)
        _, gy = value_and_grad(y)
        cand = y + stepsize * np.asarray(gy, dtype=float)
        fc, gc = value_and_grad(cand)
        fc = np.asarray(fc, dtype=float)
        gc = np.asarray(gc, dtype=float)
        if not (np.all(np.isfinite(fc)) and np.all(np.isfinite(cand))):
            raise DivergenceError(it, "inner iterate")
        worse = fc < f
        if np.any(worse):
            plain = z + stepsize * g
            fp, gp = value_and_grad(plain)
            w = rows(worse)
            cand = np.where(w, plain, cand)
            fc = np.where(worse, np.asarray(fp, dtype=float), fc)
            gc = np.where(w, np.asarray(gp, dtype=float), gc)
        k = np.where(worse, 1.0, k + 1.0)
        # a restarted row carries no momentum into the next step
        z_prev = np.where(rows(worse), cand, z)
        z, f, g = cand, fc, gc
    value = float(f) if f.ndim == 0 else f
    return z, value
