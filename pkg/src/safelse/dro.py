"""KL-DRO and UOT-DRO objectives, gradient estimators and experiment drivers.

KL-DRO on a linear regression model minimises

    L(theta) = lam * log((1/n) sum_i e^{l_i(theta) / lam})

either with the batch-softmax estimator (biased) or through the SoftPlus
reformulation in ``(theta, alpha)``, whose per-sample gradients average to the
full gradient.  UOT-DRO replaces each loss by its adversarially perturbed
version ``sup_z l(theta; z) - lam c(z, x_i)`` on a linear classifier.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corefn import FloatOverflowError, _sigma_rho, as_rho, logsumexp, softplus_stable
from .optim import DivergenceError, Trajectory, nesterov_ascent_fixed, nesterov_sgd
from .partition import _solve

__all__ = [
    "RegressionDataset",
    "ClassificationDataset",
    "ThetaAlpha",
    "KlDroConfig",
    "UotDroConfig",
    "make_regression",
    "load_regression_csv",
    "load_classification_csv",
    "make_noisy_blobs",
    "least_squares",
    "loss_and_grad_linreg",
    "kl_dro_objective",
    "kl_dro_full_gradient",
    "kl_dro_baseline_estimator",
    "safe_dro_objective_and_grads",
    "safe_dro_objective_shifted",
    "optimal_dro_alpha",
    "run_kl_dro",
    "inner_sup",
    "uot_inner_sup",
    "uot_inner_sup_batch",
    "uot_dro_objectives",
    "uot_objective",
    "mean_cross_entropy",
    "accuracy",
    "run_uot_dro",
]

_LOG_DBL_MAX = math.log(np.finfo(np.float64).max)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegressionDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] < 1 or X.shape[0] != y.size:
            raise ValueError("X and y must have the same nonzero number of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class ClassificationDataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int = 2

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y).astype(int).ravel()
        if X.shape[0] < 1 or X.shape[0] != y.size:
            raise ValueError("X and y must have the same nonzero number of rows")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError("labels must lie in [0, n_classes)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]


def make_regression(
    n: int = 2000,
    d: int = 8,
    seed: int = 0,
    feature_scale: float = 1.0,
    noise: float = 0.5,
    outlier_frac: float = 0.02,
    outlier_scale: float = 3.0,
) -> RegressionDataset:
    """Linear data with Gaussian noise plus a small fraction of large residuals.

    Features are drawn with heterogeneous scales so the problem is not
    perfectly conditioned.
    """
    rng = np.random.default_rng(seed)
    scales = feature_scale * np.linspace(0.5, 2.0, d)
    X = rng.normal(size=(n, d)) * scales
    theta = rng.normal(size=d) / scales
    eps = noise * rng.normal(size=n)
    bad = rng.random(n) < outlier_frac
    eps[bad] += outlier_scale * rng.choice([-1.0, 1.0], size=bad.sum())
    return RegressionDataset(X, X @ theta + eps)


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    if arr.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match header width")
    return header, arr


def load_regression_csv(path) -> RegressionDataset:
    """Header row, then feature columns followed by the target column."""
    _, arr = _read_csv(path)
    return RegressionDataset(arr[:, :-1], arr[:, -1])


def load_classification_csv(path, n_classes: Optional[int] = None) -> ClassificationDataset:
    """Header row, then feature columns followed by an integer label column."""
    _, arr = _read_csv(path)
    y = arr[:, -1]
    if not np.all(y == np.round(y)):
        raise ValueError(f"{path}: label column must hold integers")
    y = y.astype(int)
    k = int(y.max()) + 1 if n_classes is None else n_classes
    return ClassificationDataset(arr[:, :-1], y, k)


def make_noisy_blobs(
    n_train: int = 600,
    n_val: int = 300,
    n_test: int = 2000,
    seed: int = 0,
    separation: float = 2.0,
    noise_ratio: float = 0.25,
    spread: tuple = (1.0, 1.0),
):
    """Two Gaussian blobs in 2-D with feature-dependent label noise.

    Class ``k`` is centred at ``(-1)^{k+1} * separation / 2`` along the first
    axis with per-axis standard deviations ``spread``.  On the train and
    validation splits exactly ``round(noise_ratio * n)`` labels are flipped;
    the flipped points are drawn without replacement with probability
    proportional to their distance from the clean decision boundary
    ``x_0 = 0``.  The test split keeps the clean labels.

    Returns ``(train, val, test)``.
    """
    if not 0 <= noise_ratio <= 1:
        raise ValueError("noise_ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)

    def draw(n, noisy):
        y = rng.integers(0, 2, size=n)
        centers = np.where(y[:, None] == 1, 1.0, -1.0) * np.array([separation / 2, 0.0])
        X = centers + rng.normal(size=(n, 2)) * np.asarray(spread)
        n_flip = int(round(noise_ratio * n))
        if noisy and n_flip > 0:
            dist = np.abs(X[:, 0])
            flip = rng.choice(n, size=n_flip, replace=False, p=dist / dist.sum())
            y = y.copy()
            y[flip] = 1 - y[flip]
        return ClassificationDataset(X, y, 2)

    return draw(n_train, True), draw(n_val, True), draw(n_test, False)


def least_squares(data: RegressionDataset) -> np.ndarray:
    theta, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    return theta


# ---------------------------------------------------------------------------
# KL-DRO on linear regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaAlpha:
    theta: np.ndarray
    alpha: float

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        if not (np.all(np.isfinite(theta)) and math.isfinite(self.alpha)):
            raise ValueError("theta and alpha must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True)
class KlDroConfig:
    lam: float = 1.0
    rho: float = 1e-3
    batch_size: int = 10
    stepsize: float = 1e-5
    momentum: float = 0.9
    epochs: int = 30

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        as_rho(self.rho)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.stepsize > 0:
            raise ValueError("stepsize must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def _residuals(theta, X, y):
    return y - X @ theta


def _losses(theta, X, y):
    r = _residuals(theta, X, y)
    return r * r


def loss_and_grad_linreg(theta, i: int, data: RegressionDataset):
    """Squared error of sample ``i`` and its gradient in ``theta``."""
    theta = np.asarray(theta, dtype=float)
    x = data.X[i]
    r = data.y[i] - x @ theta
    return float(r * r), -2.0 * r * x


def _softmax(a):
    a = np.asarray(a, dtype=float)
    e = np.exp(a - np.max(a))
    return e / e.sum()


def _weighted_grad(theta, X, y, weights):
    # sum_i w_i * grad l_i = -2 X^T (w * r)
    r = _residuals(theta, X, y)
    return -2.0 * X.T @ (weights * r)


def kl_dro_objective(theta, data: RegressionDataset, lam: float) -> float:
    """``lam * log((1/n) sum_i e^{l_i / lam})``, evaluated with LogSumExp."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    losses = _losses(np.asarray(theta, dtype=float), data.X, data.y)
    if not np.all(np.isfinite(losses)):
        return math.inf
    return lam * (logsumexp(losses / lam) - math.log(data.n))


def kl_dro_full_gradient(theta, data: RegressionDataset, lam: float) -> np.ndarray:
    """Softmax-weighted average of the per-sample gradients."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    theta = np.asarray(theta, dtype=float)
    p = _softmax(_losses(theta, data.X, data.y) / lam)
    return _weighted_grad(theta, data.X, data.y, p)


def kl_dro_baseline_estimator(theta, batch, data: RegressionDataset, lam: float) -> np.ndarray:
    """Batch-softmax gradient estimator; biased unless the batch is the full set."""
    idx = np.asarray(batch, dtype=int)
    if idx.size == 0:
        raise ValueError("empty batch")
    theta = np.asarray(theta, dtype=float)
    X, y = data.X[idx], data.y[idx]
    p = _softmax(_losses(theta, X, y) / lam)
    return _weighted_grad(theta, X, y, p)


def safe_dro_objective_and_grads(
    pair: ThetaAlpha, batch, data: RegressionDataset, lam: float, rho
):
    """Batch average of ``alpha + (lam/rho) log(1 + rho e^{(l_i - alpha)/lam})``.

    Returns ``(value, grad_theta, grad_alpha)``.  Each gradient is a plain
    per-sample average, so averaging over all batches of a given size gives
    the full-data gradient.
    """
    r = as_rho(rho)
    idx = np.asarray(batch, dtype=int)
    if idx.size == 0:
        raise ValueError("empty batch")
    theta, alpha = pair.theta, pair.alpha
    X, y = data.X[idx], data.y[idx]
    s = (_losses(theta, X, y) - alpha) / lam
    value = alpha + lam / r * float(np.mean(softplus_stable(s + math.log(r))))
    sig = _sigma_rho(s, r)
    g_theta = _weighted_grad(theta, X, y, sig / idx.size)
    g_alpha = 1.0 - float(np.mean(sig))
    return value, g_theta, g_alpha


def safe_dro_objective_shifted(theta, alpha, data: RegressionDataset, lam: float, rho) -> float:
    """Same objective with ``alpha`` shifted by ``lam log rho``:

        alpha + lam (log rho - 1) + (lam/rho) mean log(1 + e^{(l_i - alpha)/lam})

    equals ``G(theta, alpha + lam log rho) - lam``.
    """
    r = as_rho(rho)
    s = (_losses(np.asarray(theta, dtype=float), data.X, data.y) - alpha) / lam
    return alpha + lam * (math.log(r) - 1.0) + lam / r * float(np.mean(softplus_stable(s)))


def optimal_dro_alpha(theta, data: RegressionDataset, lam: float, rho, batch=None) -> float:
    """Minimiser of the SoftPlus objective in ``alpha`` for fixed ``theta``."""
    r = as_rho(rho)
    idx = np.arange(data.n) if batch is None else np.asarray(batch, dtype=int)
    losses = _losses(np.asarray(theta, dtype=float), data.X[idx], data.y[idx])
    w = np.full(idx.size, 1.0 / idx.size)
    alpha, _, _ = _solve(losses / lam, w, r, 1e-12)
    return lam * alpha


class _EpochBatches:
    """Disjoint batches from a fresh permutation each epoch (remainder dropped)."""

    def __init__(self, n: int, batch_size: int):
        self.n = n
        self.b = batch_size
        self.per_epoch = max(n // batch_size, 1)
        self._perm = None
        self._k = self.per_epoch

    def next(self, rng) -> np.ndarray:
        if self._k >= self.per_epoch:
            self._perm = rng.permutation(self.n)
            self._k = 0
        out = self._perm[self._k * self.b:(self._k + 1) * self.b]
        self._k += 1
        return out


def run_kl_dro(
    config: KlDroConfig,
    data: RegressionDataset,
    mode: str,
    rng: np.random.Generator,
    theta0: Optional[np.ndarray] = None,
) -> Trajectory:
    """Nesterov SGD on KL-DRO, logging ``L(theta)`` once per epoch.

    ``mode`` is ``"baseline"`` (batch-softmax estimator on ``theta``) or
    ``"safe"`` (SoftPlus estimator, joint step in ``(theta, alpha)``).  The
    start point is the least-squares fit; in safe mode ``alpha`` starts at
    its exact optimum for that fit.
    """
    if mode not in ("baseline", "safe"):
        raise ValueError(f"unknown mode {mode!r}")
    lam, r = config.lam, as_rho(config.rho)
    B = min(config.batch_size, data.n)
    theta0 = least_squares(data) if theta0 is None else np.asarray(theta0, dtype=float)
    d = theta0.size
    batches = _EpochBatches(data.n, B)
    traj = Trajectory()
    traj.log(0, "L", kl_dro_objective(theta0, data, lam))

    if mode == "baseline":
        x0 = theta0

        def grad(x, rng):
            return kl_dro_baseline_estimator(x, batches.next(rng), data, lam)

        def theta_of(x):
            return x

    else:
        x0 = np.append(theta0, optimal_dro_alpha(theta0, data, lam, r))

        def grad(x, rng):
            if not np.all(np.isfinite(x)):
                raise DivergenceError(-1, "iterate")
            _, gt, ga = safe_dro_objective_and_grads(
                ThetaAlpha(x[:d], x[d]), batches.next(rng), data, lam, r
            )
            return np.append(gt, ga)

        def theta_of(x):
            return x[:d]

    def logger(i, x):
        if i % batches.per_epoch == 0:
            traj.log(i // batches.per_epoch, "L", kl_dro_objective(theta_of(x), data, lam))

    iters = config.epochs * batches.per_epoch
    x = x0
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            x = nesterov_sgd(grad, x0, config.stepsize, config.momentum, iters, rng, logger)
    except DivergenceError as exc:
        traj.event(exc.iteration, "divergence", str(exc))
        next_epoch = exc.iteration // batches.per_epoch + 1 if exc.iteration > 0 else 1
        traj.log(max(next_epoch, traj.series("L")[0][-1] + 1), "L", math.inf)
        x = None
    traj.final = {} if x is None else {"theta": theta_of(x).tolist()}
    if x is not None and mode == "safe":
        traj.final["alpha"] = float(x[d])
    return traj


# ---------------------------------------------------------------------------
# UOT-DRO on a linear classifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UotDroConfig:
    lam: float = 1.0
    beta: float = 1.0
    rho: float = 0.1
    inner_iters: int = 5
    inner_stepsize: Optional[float] = None
    cost_scale: float = 1.0
    stepsize: float = 1e-2
    iters: int = 5000
    eval_every: int = 500

    def __post_init__(self):
        if not (self.lam > 0 and self.beta > 0):
            raise ValueError("lambda and beta must be > 0")
        as_rho(self.rho)
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.inner_stepsize is not None and not self.inner_stepsize > 0:
            raise ValueError("inner_stepsize must be > 0")
        if not self.cost_scale > 0:
            raise ValueError("cost_scale must be > 0")
        if not self.stepsize > 0:
            raise ValueError("stepsize must be > 0")
        if self.iters < 0 or self.eval_every < 1:
            raise ValueError("iters must be >= 0 and eval_every >= 1")

    @property
    def inner_step(self) -> float:
        if self.inner_stepsize is not None:
            return self.inner_stepsize
        return 1.0 / (2.0 * self.lam * self.cost_scale)


def _unpack(theta, d, k):
    theta = np.asarray(theta, dtype=float)
    return theta[: k * d].reshape(k, d), theta[k * d:]


def _logits(theta, Z, d, k):
    W, b = _unpack(theta, d, k)
    return Z @ W.T + b


def _ce_and_dz(theta, Z, y, d, k):
    """Row-wise cross entropy and its gradient in the input ``Z``."""
    W, _ = _unpack(theta, d, k)
    logits = _logits(theta, Z, d, k)
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    P = np.exp(logits - lse[:, None])
    P[np.arange(y.size), y] -= 1.0
    return lse - logits[np.arange(y.size), y], P @ W


def _ce_grad_theta(theta, Z, y, d, k, weights):
    """``sum_i weights_i * grad_theta l(theta; z_i, y_i)``."""
    logits = _logits(theta, Z, d, k)
    m = logits.max(axis=1, keepdims=True)
    P = np.exp(logits - m)
    P /= P.sum(axis=1, keepdims=True)
    P[np.arange(y.size), y] -= 1.0
    P *= weights[:, None]
    return np.concatenate([(P.T @ Z).ravel(), P.sum(axis=0)])


def inner_sup(loss_vg, x, lam: float, cost_scale: float = 1.0, stepsize=None, iters: int = 5):
    """Approximate ``sup_z loss(z) - lam * cost_scale * ||z - x||^2``.

    ``loss_vg(Z)`` returns row-wise loss values and input gradients for a
    stack of points ``Z``; ``x`` may be one point or a stack.  Runs
    ``iters`` accelerated ascent steps from ``z = x``.  Returns
    ``(values, z_hat)`` with the same leading shape as ``x``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    c = lam * cost_scale
    step = 1.0 / (2.0 * c) if stepsize is None else stepsize

    def vg(Z):
        val, gz = loss_vg(Z)
        D = Z - X
        return val - c * np.sum(D * D, axis=1), gz - 2.0 * c * D

    Z, vals = nesterov_ascent_fixed(vg, X, step, iters)
    vals = np.asarray(vals, dtype=float)
    if single:
        return float(vals[0]), Z[0]
    return vals, Z


def uot_inner_sup_batch(theta, idx, data: ClassificationDataset, config: UotDroConfig):
    idx = np.asarray(idx, dtype=int)
    d, k = data.d, data.n_classes
    y = data.y[idx]

    def loss_vg(Z):
        return _ce_and_dz(theta, Z, y, d, k)

    return inner_sup(
        loss_vg, data.X[idx], config.lam, config.cost_scale, config.inner_step, config.inner_iters
    )


def uot_inner_sup(theta, i: int, data: ClassificationDataset, config: UotDroConfig):
    """Perturbed loss ``l_hat_i`` of sample ``i`` and its maximiser ``z_hat``."""
    vals, Z = uot_inner_sup_batch(theta, [i], data, config)
    return float(vals[0]), Z[0]


def uot_dro_objectives(
    pair: ThetaAlpha,
    batch,
    data: ClassificationDataset,
    config: UotDroConfig,
    mode: str,
    inner=None,
):
    """Batch objective and gradients for UOT-DRO.

    ``mode="sumexp_baseline"``: mean of ``e^{l_hat_i/(lam beta)}``; raises
    :class:`FloatOverflowError` once an exponent leaves the float64 range.
    ``mode="safe"``: the SoftPlus objective in ``(theta, alpha)``.
    Gradients in ``theta`` use the envelope rule at the inner maximisers,
    which may be passed precomputed as ``inner=(l_hat, z_hat)``.

    Returns ``(value, grad_theta, grad_alpha)``; ``grad_alpha`` is 0 in
    baseline mode.
    """
    idx = np.asarray(batch, dtype=int)
    if idx.size == 0:
        raise ValueError("empty batch")
    theta, alpha = pair.theta, pair.alpha
    lhat, Z = uot_inner_sup_batch(theta, idx, data, config) if inner is None else inner
    lhat = np.atleast_1d(np.asarray(lhat, dtype=float))
    Z = np.atleast_2d(Z)
    y = data.y[idx]
    scale = config.lam * config.beta
    if mode == "sumexp_baseline":
        expo = lhat / scale
        if np.any(expo >= _LOG_DBL_MAX) or not np.all(np.isfinite(expo)):
            raise FloatOverflowError("float64", f"exponent {float(np.max(expo)):.6g}")
        e = np.exp(expo)
        value = float(np.mean(e))
        g = _ce_grad_theta(theta, Z, y, data.d, data.n_classes, e / (scale * idx.size))
        return value, g, 0.0
    if mode == "safe":
        r = as_rho(config.rho)
        s = (lhat - alpha) / scale
        value = alpha + scale / r * float(np.mean(softplus_stable(s + math.log(r))))
        sig = _sigma_rho(s, r)
        g = _ce_grad_theta(theta, Z, y, data.d, data.n_classes, sig / idx.size)
        return value, g, 1.0 - float(np.mean(sig))
    raise ValueError(f"unknown mode {mode!r}")


def uot_objective(theta, data: ClassificationDataset, config: UotDroConfig) -> float:
    """``lam beta log((1/n) sum_i e^{l_hat_i / (lam beta)})`` over the full set."""
    lhat, _ = uot_inner_sup_batch(theta, np.arange(data.n), data, config)
    scale = config.lam * config.beta
    return scale * (logsumexp(lhat / scale) - math.log(data.n))


def mean_cross_entropy(theta, data: ClassificationDataset) -> float:
    """Average cross-entropy on the clean inputs (the ERM objective)."""
    ce, _ = _ce_and_dz(theta, data.X, data.y, data.d, data.n_classes)
    return float(np.mean(ce))


def accuracy(theta, data: ClassificationDataset) -> float:
    pred = np.argmax(_logits(theta, data.X, data.d, data.n_classes), axis=1)
    return float(np.mean(pred == data.y))


def run_uot_dro(
    config: UotDroConfig,
    data,
    mode: str,
    rng: np.random.Generator,
) -> Trajectory:
    """Batch-size-1 SGD for UOT-DRO or plain ERM.

    ``data`` is a ``(train, val, test)`` triple.  ``mode`` is
    ``"sumexp_baseline"``, ``"safe"`` or ``"erm"``.  Every ``eval_every``
    iterations the full objective ``F`` on the training set and the
    train/validation/test accuracies are logged.

    In baseline mode an overflow stops the run and is recorded as an event.
    In safe mode a non-finite step is recorded and skipped.
    """
    if mode not in ("sumexp_baseline", "safe", "erm"):
        raise ValueError(f"unknown mode {mode!r}")
    train, val, test = data
    d, k = train.d, train.n_classes
    theta = np.zeros(k * d + k)
    alpha = 0.0
    if mode == "safe":
        lhat, _ = uot_inner_sup_batch(theta, np.arange(train.n), train, config)
        scale = config.lam * config.beta
        w = np.full(train.n, 1.0 / train.n)
        a, _, _ = _solve(lhat / scale, w, as_rho(config.rho), 1e-12)
        alpha = scale * a
    traj = Trajectory()

    def evaluate(i):
        with np.errstate(over="ignore", invalid="ignore"):
            F = uot_objective(theta, train, config)
        traj.log(i, "F", F)
        traj.log(i, "train_loss", mean_cross_entropy(theta, train))
        traj.log(i, "train_acc", accuracy(theta, train))
        traj.log(i, "val_acc", accuracy(theta, val))
        traj.log(i, "test_acc", accuracy(theta, test))

    evaluate(0)
    gamma = config.stepsize
    for i in range(1, config.iters + 1):
        j = int(rng.integers(train.n))
        if mode == "erm":
            g = _ce_grad_theta(theta, train.X[j:j + 1], train.y[j:j + 1], d, k, np.ones(1))
            theta = theta - gamma * g
        else:
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    _, g, ga = uot_dro_objectives(
                        ThetaAlpha(theta, alpha), [j], train, config, mode
                    )
                    new_theta = theta - gamma * g
                    new_alpha = alpha - gamma * ga
                if not (np.all(np.isfinite(new_theta)) and math.isfinite(new_alpha)):
                    raise DivergenceError(i, "iterate")
            except FloatOverflowError as exc:
                traj.event(i, "overflow", str(exc))
                if mode == "sumexp_baseline":
                    break
                continue
            except DivergenceError as exc:
                traj.event(i, "divergence", str(exc))
                if mode == "sumexp_baseline":
                    break
                continue
            theta, alpha = new_theta, new_alpha
        if i % config.eval_every == 0 or i == config.iters:
            evaluate(i)
    traj.final = {"theta": theta.tolist(), "alpha": alpha}
    return traj
