"""
Loss Models
Per-client objectives F_k with exact gradients and mini-batch stochastic gradients:
a data-free quadratic (oracle), softmax regression with L2, and a ReLU MLP.
All parameters are flat float64 vectors.
"""
import logging
from abc import ABC, abstractmethod
from typing import NamedTuple

import numpy as np
from scipy.special import log_softmax, softmax

from core.errors import BatchTooLarge, DimensionMismatch, EmptyData


class Batch(NamedTuple):
    """A labeled sample set: features (n, F) float64 and integer labels (n,)."""
    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return Batch(self.features[idx], self.labels[idx])


class LossModel(ABC):
    """Interface of a client objective F_k(w) over a data slice."""

    uses_data = True

    @property
    @abstractmethod
    def param_dim(self):
        ...

    @abstractmethod
    def _loss(self, w, data):
        ...

    @abstractmethod
    def _grad(self, w, data):
        ...

    def _check(self, w, data):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.param_dim,):
            raise DimensionMismatch(f"{type(self).__name__} expects {self.param_dim} parameters, got {w.shape}")
        if self.uses_data and (data is None or len(data) == 0):
            raise EmptyData(f"{type(self).__name__} needs at least one sample")
        return w

    def loss(self, w, data=None):
        w = self._check(w, data)
        return float(self._loss(w, data))

    def grad(self, w, data=None):
        w = self._check(w, data)
        return self._grad(w, data)

    def stoch_grad(self, w, data, batch_size, rng):
        """Gradient over a batch drawn uniformly without replacement."""
        if not self.uses_data:
            return self.grad(w, data)
        w = self._check(w, data)
        n = len(data)
        if batch_size < 1 or batch_size > n:
            raise BatchTooLarge(f"Batch size {batch_size} not in 1..{n}")
        if batch_size == n:
            return self._grad(w, data)
        idx = rng.choice(n, size=batch_size, replace=False)
        return self._grad(w, data.take(idx))

    def init_params(self, rng):
        return np.zeros(self.param_dim)

    def smoothness_bound(self, data=None):
        """A valid global smoothness constant, or None when none is known."""
        return None


class QuadraticModel(LossModel):
    """F(w) = curvature/2 * ||w - center||^2. Ignores data; zero-variance gradients."""

    uses_data = False

    def __init__(self, center, curvature=1.0):
        self.center = np.array(center, dtype=float).reshape(-1)
        self.center.setflags(write=False)
        if curvature < 0:
            raise ValueError(f"curvature must be non-negative, got {curvature}")
        self.curvature = float(curvature)

    @property
    def param_dim(self):
        return self.center.shape[0]

    def _loss(self, w, data):
        diff = w - self.center
        return 0.5 * self.curvature * float(diff @ diff)

    def _grad(self, w, data):
        return self.curvature * (w - self.center)

    def smoothness_bound(self, data=None):
        return self.curvature


def _with_bias(features):
    return np.hstack([features, np.ones((features.shape[0], 1))])


class MLRModel(LossModel):
    """
    Multinomial logistic regression: mean cross-entropy of softmax(W x~) plus
    (alpha/2) ||W||^2. W has shape (n_classes, n_features + 1); the last column
    is the bias (x~ = [x, 1]) and is regularized like the other weights.
    """

    def __init__(self, n_features, n_classes, l2_alpha=0.0):
        self.n_features = int(n_features)
        self.n_classes = int(n_classes)
        self.l2_alpha = float(l2_alpha)

    @property
    def param_dim(self):
        return self.n_classes * (self.n_features + 1)

    def _weights(self, w):
        return w.reshape(self.n_classes, self.n_features + 1)

    def _logits(self, w, features):
        return _with_bias(features) @ self._weights(w).T

    def _loss(self, w, data):
        logp = log_softmax(self._logits(w, data.features), axis=1)
        nll = -np.mean(logp[np.arange(len(data)), data.labels])
        return nll + 0.5 * self.l2_alpha * float(w @ w)

    def _grad(self, w, data):
        X = _with_bias(data.features)
        P = softmax(X @ self._weights(w).T, axis=1)
        P[np.arange(len(data)), data.labels] -= 1.0
        G = P.T @ X / len(data)
        return G.reshape(-1) + self.l2_alpha * w

    def predict_proba(self, w, features):
        return softmax(self._logits(np.asarray(w, dtype=float), features), axis=1)

    def predict(self, w, features):
        return np.argmax(self._logits(np.asarray(w, dtype=float), features), axis=1)

    def smoothness_bound(self, data=None):
        # lambda_max(diag(p) - p p^T) <= 1/2 for any softmax output p
        if data is None or len(data) == 0:
            return None
        sq_norms = np.sum(data.features ** 2, axis=1) + 1.0
        return 0.5 * float(np.max(sq_norms)) + self.l2_alpha


class MLPModel(LossModel):
    """
    Fully connected ReLU network with a softmax cross-entropy output.
    layer_sizes = [in, hidden..., out]; per layer the flat vector stores the
    weight matrix (out, in) row-major followed by the bias (out,).
    """

    def __init__(self, layer_sizes, l2_alpha=0.0):
        if len(layer_sizes) < 2:
            raise ValueError(f"Need at least input and output sizes, got {layer_sizes}")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.l2_alpha = float(l2_alpha)
        self._shapes = list(zip(self.layer_sizes[1:], self.layer_sizes[:-1]))

    @property
    def n_classes(self):
        return self.layer_sizes[-1]

    @property
    def param_dim(self):
        return sum(o * i + o for o, i in self._shapes)

    def _unpack(self, w):
        layers, pos = [], 0
        for out_dim, in_dim in self._shapes:
            W = w[pos:pos + out_dim * in_dim].reshape(out_dim, in_dim)
            pos += out_dim * in_dim
            b = w[pos:pos + out_dim]
            pos += out_dim
            layers.append((W, b))
        return layers

    def _forward(self, w, features):
        """Returns the logits and the cached (input, pre-activation) per layer."""
        layers = self._unpack(w)
        a = features
        cache = []
        for i, (W, b) in enumerate(layers):
            z = a @ W.T + b
            cache.append((a, z))
            a = np.maximum(z, 0.0) if i < len(layers) - 1 else z
        return a, cache

    def _loss(self, w, data):
        logits, _ = self._forward(w, data.features)
        logp = log_softmax(logits, axis=1)
        nll = -np.mean(logp[np.arange(len(data)), data.labels])
        return nll + 0.5 * self.l2_alpha * float(w @ w)

    def _grad(self, w, data):
        layers = self._unpack(w)
        logits, cache = self._forward(w, data.features)
        delta = softmax(logits, axis=1)
        delta[np.arange(len(data)), data.labels] -= 1.0
        delta /= len(data)

        grads = [None] * len(layers)
        for i in range(len(layers) - 1, -1, -1):
            a_in, _ = cache[i]
            grads[i] = (delta.T @ a_in, delta.sum(axis=0))
            if i > 0:
                # ReLU subgradient at 0 is 0
                delta = (delta @ layers[i][0]) * (cache[i - 1][1] > 0)

        flat = np.concatenate([np.concatenate([gW.reshape(-1), gb]) for gW, gb in grads])
        return flat + self.l2_alpha * w

    def predict_proba(self, w, features):
        logits, _ = self._forward(np.asarray(w, dtype=float), features)
        return softmax(logits, axis=1)

    def predict(self, w, features):
        logits, _ = self._forward(np.asarray(w, dtype=float), features)
        return np.argmax(logits, axis=1)

    def init_params(self, rng):
        """Glorot-uniform weights, zero biases."""
        parts = []
        for out_dim, in_dim in self._shapes:
            s = np.sqrt(6.0 / (in_dim + out_dim))
            parts.append(rng.uniform(-s, s, size=out_dim * in_dim))
            parts.append(np.zeros(out_dim))
        return np.concatenate(parts)


def accuracy(model, w, data):
    """Fraction of correct predictions, or NaN for models without a classifier."""
    if not hasattr(model, 'predict') or data is None or len(data) == 0:
        return float('nan')
    return float(np.mean(model.predict(w, data.features) == data.labels))


def estimate_smoothness(model, data=None, n_probes=20, rng=None, scale=1.0):
    """
    Largest observed ||grad(w) - grad(w')|| / ||w - w'|| over random probe pairs.
    This is a lower bound on the smoothness constant beta.
    """
    if n_probes < 1:
        raise ValueError(f"n_probes must be >= 1, got {n_probes}")
    rng = rng if rng is not None else np.random.default_rng(0)
    best = 0.0
    for _ in range(n_probes):
        w = rng.normal(scale=scale, size=model.param_dim)
        w2 = rng.normal(scale=scale, size=model.param_dim)
        dist = np.linalg.norm(w - w2)
        if dist == 0:
            continue
        ratio = np.linalg.norm(model.grad(w, data) - model.grad(w2, data)) / dist
        best = max(best, float(ratio))
    logging.debug(f"Smoothness estimate for {type(model).__name__}: {best:.6g} over {n_probes} probes")
    return best
