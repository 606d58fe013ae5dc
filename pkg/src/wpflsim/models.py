"""Trainable models over flat parameter vectors.

Three models share one interface (n_params, init_params, loss, grad,
accuracy): multinomial logistic regression, a single-hidden-layer ReLU
network, and a strongly convex quadratic used for bound-validation runs
where the optima are known in closed form. The personalized objective
blends a model's own loss with a proximity penalty toward a reference
parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ModelSpec:
    kind: str                # "mlr" | "mlp" | "quadratic"
    input_dim: int
    n_classes: int
    hidden_dim: int = 100

    @property
    def param_count(self) -> int:
        if self.kind == "mlr":
            return self.input_dim * self.n_classes + self.n_classes
        if self.kind == "mlp":
            return (self.input_dim * self.hidden_dim + self.hidden_dim
                    + self.hidden_dim * self.n_classes + self.n_classes)
        if self.kind == "quadratic":
            return self.input_dim
        raise ConfigError(f"unknown model kind {self.kind!r}")


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_batch(x, y, n_classes=None):
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("batch features and labels do not line up")
    if n_classes is not None and y.size and y.max() >= n_classes:
        raise ValueError("label out of range for this model")


class MLRModel:
    """Softmax regression with cross-entropy loss."""

    def __init__(self, input_dim: int, n_classes: int):
        self.input_dim = input_dim
        self.n_classes = n_classes
        self.n_params = input_dim * n_classes + n_classes

    def unflatten(self, w):
        if w.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {w.shape}")
        d, c = self.input_dim, self.n_classes
        return w[: d * c].reshape(d, c), w[d * c:]

    def flatten(self, weight, bias):
        return np.concatenate([weight.ravel(), bias])

    def init_params(self, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(self.input_dim)
        return rng.uniform(-bound, bound, self.n_params)

    def logits(self, w, x):
        weight, bias = self.unflatten(w)
        return x @ weight + bias

    def loss(self, w, x, y):
        _check_batch(x, y, self.n_classes)
        p = _softmax(self.logits(w, x))
        return float(-np.mean(np.log(p[np.arange(len(y)), y] + 1e-300)))

    def grad(self, w, x, y):
        _check_batch(x, y, self.n_classes)
        p = _softmax(self.logits(w, x))
        p[np.arange(len(y)), y] -= 1.0
        p /= len(y)
        return self.flatten(x.T @ p, p.sum(axis=0))

    def accuracy(self, w, x, y):
        return float(np.mean(self.logits(w, x).argmax(axis=1) == y))


class MLPModel:
    """One ReLU hidden layer; cross-entropy loss."""

    def __init__(self, input_dim: int, n_classes: int, hidden_dim: int = 100):
        self.input_dim = input_dim
        self.n_classes = n_classes
        self.hidden_dim = hidden_dim
        self.n_params = (input_dim * hidden_dim + hidden_dim
                         + hidden_dim * n_classes + n_classes)

    def unflatten(self, w):
        if w.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {w.shape}")
        d, h, c = self.input_dim, self.hidden_dim, self.n_classes
        i = 0
        w1 = w[i:i + d * h].reshape(d, h); i += d * h
        b1 = w[i:i + h]; i += h
        w2 = w[i:i + h * c].reshape(h, c); i += h * c
        b2 = w[i:]
        return w1, b1, w2, b2

    def flatten(self, w1, b1, w2, b2):
        return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])

    def init_params(self, rng: np.random.Generator):
        d, h, c = self.input_dim, self.hidden_dim, self.n_classes
        s1, s2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(h)
        return np.concatenate([
            rng.uniform(-s1, s1, d * h), rng.uniform(-s1, s1, h),
            rng.uniform(-s2, s2, h * c), rng.uniform(-s2, s2, c),
        ])

    def logits(self, w, x):
        w1, b1, w2, b2 = self.unflatten(w)
        hidden = np.maximum(x @ w1 + b1, 0.0)
        return hidden @ w2 + b2

    def loss(self, w, x, y):
        _check_batch(x, y, self.n_classes)
        p = _softmax(self.logits(w, x))
        return float(-np.mean(np.log(p[np.arange(len(y)), y] + 1e-300)))

    def grad(self, w, x, y):
        _check_batch(x, y, self.n_classes)
        w1, b1, w2, b2 = self.unflatten(w)
        pre = x @ w1 + b1
        hidden = np.maximum(pre, 0.0)
        p = _softmax(hidden @ w2 + b2)
        p[np.arange(len(y)), y] -= 1.0
        p /= len(y)
        d_hidden = (p @ w2.T) * (pre > 0)
        return self.flatten(x.T @ d_hidden, d_hidden.sum(axis=0),
                            hidden.T @ p, p.sum(axis=0))

    def accuracy(self, w, x, y):
        return float(np.mean(self.logits(w, x).argmax(axis=1) == y))


class QuadraticModel:
    """F(w) = mean over samples of 0.5 (w - x_i)^T A (w - x_i), A diagonal.

    Strongly convex with known curvature, so per-client and blended optima
    are available in closed form for bound-validation runs. ``accuracy`` is
    undefined for this model and reported as NaN.
    """

    def __init__(self, curvature: np.ndarray):
        self.curvature = np.asarray(curvature, dtype=float)
        if np.any(self.curvature <= 0):
            raise ConfigError("curvature must be strictly positive")
        self.n_params = len(self.curvature)

    def init_params(self, rng: np.random.Generator):
        return rng.uniform(-1.0, 1.0, self.n_params)

    def loss(self, w, x, y):
        diff = w[None, :] - x
        return float(0.5 * np.mean((diff ** 2 * self.curvature).sum(axis=1)))

    def grad(self, w, x, y):
        return self.curvature * (w - x.mean(axis=0))

    def accuracy(self, w, x, y):
        return float("nan")

    def optimum_for(self, x):
        """Minimizer of this client's loss: the sample mean."""
        return x.mean(axis=0)

    def blended_optimum(self, x, reference, lam):
        """Minimizer of (1 - lam/2) F + (lam/2) ||w - reference||^2."""
        a = (1 - lam / 2) * self.curvature
        return (a * x.mean(axis=0) + lam * reference) / (a + lam)


def build_model(spec: ModelSpec, curvature=None):
    if spec.kind == "mlr":
        return MLRModel(spec.input_dim, spec.n_classes)
    if spec.kind == "mlp":
        return MLPModel(spec.input_dim, spec.n_classes, spec.hidden_dim)
    if spec.kind == "quadratic":
        if curvature is None:
            raise ConfigError("quadratic model needs an explicit curvature vector")
        return QuadraticModel(curvature)
    raise ConfigError(f"unknown model kind {spec.kind!r}")


def pl_loss(model, varpi, omega, lam: float, x, y) -> float:
    """Personalized objective: (1 - lam/2) F(varpi) + (lam/2) ||varpi - omega||^2."""
    if not 0.0 <= lam <= 2.0:
        raise ValueError("lambda must be in [0, 2]")
    if varpi.shape != omega.shape:
        raise ValueError("parameter vectors must have equal length")
    prox = float(np.sum((varpi - omega) ** 2))
    return (1 - lam / 2) * model.loss(varpi, x, y) + (lam / 2) * prox


def pl_grad(model, varpi, omega, lam: float, x, y):
    """Gradient of ``pl_loss``: (1 - lam/2) grad F(varpi) + lam (varpi - omega)."""
    if not 0.0 <= lam <= 2.0:
        raise ValueError("lambda must be in [0, 2]")
    if varpi.shape != omega.shape:
        raise ValueError("parameter vectors must have equal length")
    return (1 - lam / 2) * model.grad(varpi, x, y) + lam * (varpi - omega)
