"""Client loss functions with exact gradients and minibatch sampling.

Three kinds are provided:

* ``QuadraticObjective``: ``f(x) = 0.5 * sum(a * (x - b)**2)`` with a diagonal
  Hessian ``diag(a)``.  Stochastic gradients add isotropic Gaussian noise
  whose total variance ``E||noise||^2`` equals ``sigma**2``.
* ``LogisticObjective``: multinomial logistic regression with L2 penalty.
* ``MLP2Objective``: one tanh hidden layer, softmax output, cross-entropy.

Every objective samples a *batch token* with :meth:`sample_batch` and can
evaluate the gradient several times on the same token, which SAM-style
two-pass updates rely on.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset


@dataclass
class GradSample:
    grad: np.ndarray
    loss: float
    batch_indices: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class QuadraticObjective:
    kind = "quadratic"

    def __init__(self, a, b, sigma: float = 0.0):
        self.a = np.ascontiguousarray(a, dtype=np.float64)
        self.b = np.ascontiguousarray(b, dtype=np.float64)
        if self.a.ndim != 1 or self.a.shape != self.b.shape:
            raise ValueError("a and b must be 1-D arrays of equal length")
        if np.any(self.a < 0):
            raise ValueError("Hessian diagonal must be non-negative")
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        self.sigma = float(sigma)
        self.dim = self.a.shape[0]
        self.smoothness_L = float(self.a.max())
        # per-coordinate std so that E||noise||^2 == sigma^2
        self.noise_std = self.sigma / np.sqrt(self.dim)

    @property
    def shard_size(self) -> int:
        return 1

    def init_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, x) -> float:
        r = x - self.b
        return 0.5 * float(np.dot(self.a * r, r))

    def full_gradient(self, x) -> GradSample:
        r = x - self.b
        g = self.a * r
        return GradSample(g, 0.5 * float(np.dot(g, r)))

    def sample_batch(self, batch: int, rng):
        if self.sigma == 0.0:
            return None
        return self.noise_std * rng.standard_normal(self.dim)

    def batch_gradient(self, x, token) -> GradSample:
        gs = self.full_gradient(x)
        if token is not None:
            gs.grad = gs.grad + token
        return gs

    def stochastic_gradient(self, x, batch: int, rng) -> GradSample:
        return self.batch_gradient(x, self.sample_batch(batch, rng))


def make_quadratic_ensemble(n_clients: int, dim: int, hetero: float, cond: float,
                            seed: int, sigma: float = 0.0) -> list[QuadraticObjective]:
    """Heterogeneous diagonal quadratics with largest eigenvalue exactly 1.

    Each client's Hessian diagonal is log-uniform in ``[1/cond, 1]``; when
    ``dim >= 2`` the extremes are pinned so the client is exactly 1-smooth
    with condition number ``cond``.  Optima are ``center + hetero * u_i`` with
    ``u_i`` unit vectors, so ``hetero`` is the distance of every client's
    optimum from the common center.
    """
    if dim < 1 or cond < 1 or hetero < 0 or n_clients < 1:
        raise ValueError("need n_clients >= 1, dim >= 1, cond >= 1, hetero >= 0")
    rng = np.random.default_rng(seed)
    center = rng.standard_normal(dim) / np.sqrt(dim)
    objs = []
    for _ in range(n_clients):
        a = np.exp(rng.uniform(-np.log(cond), 0.0, size=dim))
        if dim >= 2:
            a[np.argmax(a)] = 1.0
            a[np.argmin(a)] = 1.0 / cond
        else:
            a[:] = 1.0
        u = rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        objs.append(QuadraticObjective(a, center + hetero * u, sigma))
    return objs


def quadratic_optimum(objs) -> np.ndarray:
    """Minimizer of the uniform average of diagonal quadratics."""
    A = np.array([o.a for o in objs])
    B = np.array([o.b for o in objs])
    return (A * B).sum(axis=0) / A.sum(axis=0)


class _ClassifierObjective:
    """Shared minibatch plumbing for the dataset-backed objectives."""

    def __init__(self, shard: Dataset, classes: int):
        if len(shard) == 0:
            raise ValueError("empty shard")
        self.X = shard.features
        self.y = shard.labels
        self.classes = classes
        self.n = len(shard)
        self._onehot = np.eye(classes)[self.y]

    @property
    def shard_size(self) -> int:
        return self.n

    def sample_batch(self, batch: int, rng) -> np.ndarray:
        if not 1 <= batch <= self.n:
            raise ValueError(f"batch size {batch} outside [1, {self.n}]")
        if batch == self.n:
            return np.arange(self.n)
        return np.sort(rng.choice(self.n, size=batch, replace=False))

    def full_gradient(self, x) -> GradSample:
        g, loss = self._grad(x, self.X, self._onehot)
        return GradSample(g, loss, np.arange(self.n))

    def batch_gradient(self, x, idx) -> GradSample:
        g, loss = self._grad(x, self.X[idx], self._onehot[idx])
        return GradSample(g, loss, idx)

    def stochastic_gradient(self, x, batch: int, rng) -> GradSample:
        return self.batch_gradient(x, self.sample_batch(batch, rng))

    def loss(self, x) -> float:
        return self.full_gradient(x).loss

    def predict(self, x, features) -> np.ndarray:
        return self.logits(x, features).argmax(axis=1)


class LogisticObjective(_ClassifierObjective):
    kind = "logistic"

    def __init__(self, shard: Dataset, classes: int, l2: float = 0.0):
        if l2 < 0:
            raise ValueError("l2 must be >= 0")
        super().__init__(shard, classes)
        self.l2 = float(l2)
        self.p = self.X.shape[1]
        self.dim = classes * (self.p + 1)
        Xt = np.hstack([self.X, np.ones((self.n, 1))])
        self.smoothness_L = 0.5 * float(np.linalg.eigvalsh(Xt.T @ Xt / self.n)[-1]) + self.l2

    def init_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def _unpack(self, x):
        C, p = self.classes, self.p
        return x[:C * p].reshape(C, p), x[C * p:]

    def logits(self, x, features) -> np.ndarray:
        W, c = self._unpack(x)
        return features @ W.T + c

    def _grad(self, x, X, Y):
        z = self.logits(x, X)
        lse = _logsumexp_rows(z)
        m = X.shape[0]
        loss = float(np.mean(lse - (z * Y).sum(axis=1))) + 0.5 * self.l2 * float(x @ x)
        D = (_softmax_rows(z) - Y) / m
        g = np.concatenate([(D.T @ X).ravel(), D.sum(axis=0)]) + self.l2 * x
        return g, loss


def make_logistic(shard: Dataset, classes: int, l2: float = 0.0) -> LogisticObjective:
    return LogisticObjective(shard, classes, l2)


class MLP2Objective(_ClassifierObjective):
    """Parameters are packed as ``[W1 (h x p), b1 (h), W2 (C x h), b2 (C)]``."""

    kind = "mlp2"

    def __init__(self, shard: Dataset, classes: int, hidden: int, seed: int):
        if hidden < 1:
            raise ValueError("hidden must be >= 1")
        super().__init__(shard, classes)
        self.hidden = hidden
        self.p = self.X.shape[1]
        self.seed = seed
        self.dim = hidden * (self.p + 1) + classes * (hidden + 1)
        self.smoothness_L = None

    def init_params(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        h, p, C = self.hidden, self.p, self.classes
        s1, s2 = 1.0 / np.sqrt(p), 1.0 / np.sqrt(h)
        return np.concatenate([
            rng.uniform(-s1, s1, h * p), rng.uniform(-s1, s1, h),
            rng.uniform(-s2, s2, C * h), rng.uniform(-s2, s2, C),
        ])

    def _unpack(self, x):
        h, p, C = self.hidden, self.p, self.classes
        i = 0
        W1 = x[i:i + h * p].reshape(h, p); i += h * p
        b1 = x[i:i + h]; i += h
        W2 = x[i:i + C * h].reshape(C, h); i += C * h
        return W1, b1, W2, x[i:i + C]

    def logits(self, x, features) -> np.ndarray:
        W1, b1, W2, b2 = self._unpack(x)
        return np.tanh(features @ W1.T + b1) @ W2.T + b2

    def _grad(self, x, X, Y):
        W1, b1, W2, b2 = self._unpack(x)
        H = np.tanh(X @ W1.T + b1)
        z = H @ W2.T + b2
        m = X.shape[0]
        loss = float(np.mean(_logsumexp_rows(z) - (z * Y).sum(axis=1)))
        D = (_softmax_rows(z) - Y) / m
        dZ = (D @ W2) * (1.0 - H * H)
        g = np.concatenate([
            (dZ.T @ X).ravel(), dZ.sum(axis=0), (D.T @ H).ravel(), D.sum(axis=0),
        ])
        return g, loss


def make_mlp2(shard: Dataset, classes: int, hidden: int, seed: int) -> MLP2Objective:
    return MLP2Objective(shard, classes, hidden, seed)
