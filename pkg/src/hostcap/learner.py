"""Classifiers used to steer querying and to draw the feasibility boundary.

Both follow the scikit-learn estimator protocol (``fit``, ``predict``,
``predict_proba``/``decision_function``, ``get_params``) so they drop into
pipelines and ``clone``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .grid import DimensionMismatch

PROB_CLIP = (0.01, 0.99)
_Z_CLIP = 30.0


class DegenerateData(ValueError):
    pass


def _sigmoid(z):
    z = np.clip(z, -_Z_CLIP, _Z_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def _logit(p):
    return float(np.log(p / (1.0 - p)))


@dataclass(eq=False)
class ClassifierParams:
    """Weights of a one-hidden-layer tanh network with logistic output.

    Inputs are standardised with ``mean`` and ``scale`` before the first
    layer. ``W1`` is ``[H, D]``, ``w2`` is ``[H]``.
    """

    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    mean: np.ndarray
    scale: np.ndarray
    activation: str = "tanh"
    hyper: dict = field(default_factory=dict)

    @property
    def D(self) -> int:
        return self.W1.shape[1]

    @property
    def H(self) -> int:
        return self.W1.shape[0]

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.D:
            raise DimensionMismatch(f"expected {self.D} features, got {X.shape[1]}")
        Z = (X - self.mean) / self.scale
        return np.tanh(Z @ self.W1.T + self.b1) @ self.w2 + self.b2

    def proba(self, X) -> np.ndarray:
        """P(feasible | x) for each row."""
        return _sigmoid(self.logits(X))

    def to_dict(self) -> dict:
        return {
            "activation": self.activation,
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": float(self.b2),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "hyper": self.hyper,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierParams":
        return cls(
            W1=np.array(d["W1"], dtype=float).reshape(len(d["b1"]), -1),
            b1=np.array(d["b1"], dtype=float),
            w2=np.array(d["w2"], dtype=float),
            b2=float(d["b2"]),
            mean=np.array(d["mean"], dtype=float),
            scale=np.array(d["scale"], dtype=float),
            activation=d.get("activation", "tanh"),
            hyper=dict(d.get("hyper", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def constant_params(D: int, p: float = 0.5, H: int = 1) -> ClassifierParams:
    """A network that outputs ``p`` everywhere (zero weights, biased output)."""
    return ClassifierParams(
        W1=np.zeros((H, D)),
        b1=np.zeros(H),
        w2=np.zeros(H),
        b2=_logit(p),
        mean=np.zeros(D),
        scale=np.ones(D),
    )


def _pack(W1, b1, w2, b2):
    return np.concatenate([W1.ravel(), b1, w2, [b2]])


def _unpack(theta, H, D):
    i = H * D
    W1 = theta[:i].reshape(H, D)
    b1 = theta[i : i + H]
    w2 = theta[i + H : i + 2 * H]
    b2 = theta[i + 2 * H]
    return W1, b1, w2, b2


def loss_and_grad(theta: np.ndarray, Z: np.ndarray, y: np.ndarray, H: int, l2: float = 0.0):
    """Mean binary cross-entropy plus ``l2/2 * ||weights||^2`` and its gradient.

    ``theta`` is the flat parameter vector ``[W1, b1, w2, b2]``; ``Z`` are
    already-standardised inputs. Biases are not penalised.
    """
    n, D = Z.shape
    W1, b1, w2, b2 = _unpack(theta, H, D)
    A = np.tanh(Z @ W1.T + b1)
    z = A @ w2 + b2
    # softplus(z) - y z, computed stably
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (np.sum(W1 * W1) + np.sum(w2 * w2))
    dz = (0.5 * (1.0 + np.tanh(0.5 * z)) - y) / n
    g_w2 = A.T @ dz + l2 * w2
    g_b2 = dz.sum()
    dA = np.outer(dz, w2) * (1.0 - A * A)
    g_W1 = dA.T @ Z + l2 * W1
    g_b1 = dA.sum(axis=0)
    return loss, _pack(g_W1, g_b1, g_w2, g_b2)


class TwoLayerNetClassifier(ClassifierMixin, BaseEstimator):
    """Fully connected ``D -> hidden -> 1`` network, tanh hidden units.

    Trained from a seeded initialisation by full-batch Adam on the
    regularised cross-entropy, step size ``learning_rate / (1 + lr_decay *
    epoch)``. Labels must be 0/1. With a single class present the fit falls
    back to a constant classifier at the class frequency, clipped to
    ``PROB_CLIP``.
    """

    def __init__(self, hidden=32, epochs=500, learning_rate=1e-2, lr_decay=1e-3, l2=1e-4, random_state=0):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.l2 = l2
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        y = y.astype(float)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        D = X.shape[1]
        hyper = self.get_params()
        if y.min() == y.max():
            p = float(np.clip(y.mean(), *PROB_CLIP))
            self.params_ = constant_params(D, p)
            self.params_.hyper = hyper
            self.loss_curve_ = []
            return self

        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        Z = (X - mean) / scale
        H = self.hidden
        rng = np.random.default_rng(self.random_state)
        W1 = rng.normal(0.0, 1.0 / np.sqrt(D), size=(H, D))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(H), size=H)
        theta = _pack(W1, np.zeros(H), w2, 0.0)

        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        curve = []
        for epoch in range(self.epochs):
            loss, g = loss_and_grad(theta, Z, y, H, self.l2)
            curve.append(loss)
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            m_hat = m / (1 - beta1 ** (epoch + 1))
            v_hat = v / (1 - beta2 ** (epoch + 1))
            lr = self.learning_rate / (1.0 + self.lr_decay * epoch)
            theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        W1, b1, w2, b2 = _unpack(theta, H, D)
        self.params_ = ClassifierParams(W1.copy(), b1.copy(), w2.copy(), float(b2), mean, scale, hyper=hyper)
        self.loss_curve_ = curve
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        p1 = self.params_.proba(X)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    @classmethod
    def from_params(cls, params: ClassifierParams) -> "TwoLayerNetClassifier":
        hyper = {k: v for k, v in params.hyper.items() if k in cls().get_params()}
        est = cls(**hyper)
        est.params_ = params
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = params.D
        return est


def train(X, y, hidden=32, epochs=500, learning_rate=1e-2, l2=1e-4, seed=0, lr_decay=1e-3) -> ClassifierParams:
    """Fit a fresh network; an empty training set yields the 0.5 prior."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        return constant_params(X.shape[1] if X.ndim == 2 else 0)
    est = TwoLayerNetClassifier(hidden, epochs, learning_rate, lr_decay, l2, seed).fit(X, y)
    return est.params_


def predict_proba(params: ClassifierParams, x) -> np.ndarray:
    return params.proba(x)


class LinearSVMBoundary(ClassifierMixin, BaseEstimator):
    """Soft-margin linear separator by subgradient descent on
    ``alpha/2 ||w||^2 + mean(max(0, 1 - y (w.x + b)))``.

    Works on standardised features internally; ``coef_`` and
    ``intercept_`` are reported in the original feature units so that
    :meth:`distance` is a Euclidean distance there. Steps are
    ``eta0 / sqrt(t)`` and the returned weights average the second half of
    the iterates.
    """

    def __init__(self, alpha=1e-3, epochs=3000, eta0=0.5):
        self.alpha = alpha
        self.epochs = epochs
        self.eta0 = eta0

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        if len(np.unique(y)) < 2:
            raise DegenerateData("both classes are needed to fit a boundary")
        if np.all(X == X[0]):
            raise DegenerateData("all points are identical")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        s = np.where(y == 1, 1.0, -1.0)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        Z = (X - mean) / scale
        n, D = Z.shape
        w = np.zeros(D)
        b = 0.0
        w_sum = np.zeros(D)
        b_sum = 0.0
        n_avg = 0
        half = self.epochs // 2
        for t in range(1, self.epochs + 1):
            active = s * (Z @ w + b) < 1.0
            g_w = self.alpha * w - (s[active, None] * Z[active]).sum(axis=0) / n
            g_b = -s[active].sum() / n
            eta = self.eta0 / np.sqrt(t)
            w -= eta * g_w
            b -= eta * g_b
            if t > half:
                w_sum += w
                b_sum += b
                n_avg += 1
        w = w_sum / n_avg
        b = b_sum / n_avg
        self.coef_ = w / scale
        self.intercept_ = float(b - np.sum(w * mean / scale))
        norm = np.linalg.norm(self.coef_)
        if norm == 0:
            raise DegenerateData("boundary collapsed to zero weights")
        self.margin_ = float(np.min(s * self.decision_function(X)) / norm)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return X @ self.coef_ + self.intercept_

    def signed_distance(self, X):
        return self.decision_function(X) / np.linalg.norm(self.coef_)

    def distance(self, X):
        return np.abs(self.signed_distance(X))

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(int)


def hyperplane_distance(w, b, X) -> np.ndarray:
    """``|w.x + b| / ||w||`` for each row of ``X``."""
    w = np.asarray(w, dtype=float)
    return np.abs(np.asarray(X, dtype=float) @ w + b) / np.linalg.norm(w)


def fit_boundary(X, y, **kwargs) -> tuple[np.ndarray, float, float]:
    """``(w, b, margin)`` of a linear separator in original feature units."""
    svm = LinearSVMBoundary(**kwargs).fit(X, y)
    return svm.coef_.copy(), svm.intercept_, svm.margin_
