"""Small feedforward classifier: z-scored input, ReLU hidden layers, softmax output,
trained with plain mini-batch gradient descent on mean cross-entropy."""

from __future__ import annotations

import math

import numpy as np

from beltwear.models.base import LabeledSet, TrainedModel, TrainingError, zscore_stats


def init_params(layer_sizes, rng: np.random.Generator, dtype=np.float64) -> list[np.ndarray]:
    """[W1, b1, W2, b2, ...] with W uniform in +-sqrt(6 / (fan_in + fan_out)), b zero."""
    params = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        params.append(np.zeros(fan_out, dtype=dtype))
    return params


def forward(params, X):
    """Logits and the per-layer activations needed for backprop."""
    acts = [X]
    h = X
    n_layers = len(params) // 2
    for layer in range(n_layers):
        z = h @ params[2 * layer] + params[2 * layer + 1]
        h = np.maximum(z, 0) if layer < n_layers - 1 else z
        acts.append(h)
    return h, acts


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(params, X, y, need_input_grad=False):
    """Mean cross-entropy over the batch and its gradient w.r.t. every parameter.

    With ``need_input_grad`` the gradient w.r.t. ``X`` is returned as a third value.
    """
    logits, acts = forward(params, X)
    p = softmax(logits)
    n = len(y)
    loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300))
    delta = p
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    for layer in range(len(params) // 2 - 1, -1, -1):
        grads[2 * layer] = acts[layer].T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0 or need_input_grad:
            delta = delta @ params[2 * layer].T
            if layer > 0:
                delta *= acts[layer] > 0
    if need_input_grad:
        return float(loss), grads, delta
    return float(loss), grads


class MLPClassifier(TrainedModel):
    kind = "mlp"

    def __init__(self, feature_dim, class_names, mean, std, weights, params=None):
        super().__init__(feature_dim, class_names, params)
        self.mean, self.std = mean, std
        self.weights = weights

    def predict_proba(self, X) -> np.ndarray:
        X = self._check(X)
        dtype = self.weights[0].dtype
        logits, _ = forward(self.weights, ((X - self.mean) / self.std).astype(dtype))
        return softmax(logits.astype(np.float64))

    def _predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def state_arrays(self):
        out = {"mean": self.mean, "std": self.std}
        for i, w in enumerate(self.weights):
            out[f"w{i}"] = w
        return out

    @classmethod
    def from_state(cls, feature_dim, class_names, params, arrays):
        n = sum(1 for k in arrays if k.startswith("w"))
        return cls(feature_dim, class_names, arrays["mean"], arrays["std"], [arrays[f"w{i}"] for i in range(n)], params)


# columns per pass when building the Gram matrix of wide inputs
_COL_CHUNK = 8192


def _zscored_columns(X, mean, std):
    for c0 in range(0, X.shape[1], _COL_CHUNK):
        c1 = c0 + _COL_CHUNK
        yield c0, c1, (X[:, c0:c1] - mean[c0:c1]) / std[c0:c1]


def _check_loss(loss, epoch, b0):
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch starting {b0}")


def _sgd_primal(Xz, y, weights, epochs, batch, lr, rng):
    n = len(y)
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for b0 in range(0, n, batch):
            idx = perm[b0 : b0 + batch]
            loss, grads = loss_and_grads(weights, Xz[idx], y[idx])
            _check_loss(loss, epoch, b0)
            for w, g in zip(weights, grads):
                w -= np.asarray(lr, dtype=w.dtype) * g
    return weights


def _sgd_dual(X, mean, std, y, weights, epochs, batch, lr, rng):
    """Same iterates as ``_sgd_primal`` for inputs wider than the training set.

    Every first-layer step adds Z_b^T (-lr * delta), so W1 = W1_init - Z^T A for an
    n x h matrix A. Batch pre-activations are then Z_b W1_init - K_b A with the
    Gram matrix K = Z Z^T, and the d x h weight matrix is never touched in the loop.
    """
    n = len(y)
    W1 = weights[0].astype(np.float64)
    K = np.zeros((n, n))
    P = np.zeros((n, W1.shape[1]))
    for c0, c1, Z in _zscored_columns(X, mean, std):
        K += Z @ Z.T
        P += Z @ W1[c0:c1]
    A = np.zeros_like(P)
    rest = [w.astype(np.float64) for w in weights[1:]]
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for b0 in range(0, n, batch):
            idx = perm[b0 : b0 + batch]
            z = P[idx] - K[idx] @ A + rest[0]
            h = np.maximum(z, 0)
            loss, grads, d_h = loss_and_grads(rest[1:], h, y[idx], need_input_grad=True)
            _check_loss(loss, epoch, b0)
            d_z = d_h * (z > 0)
            A[idx] += lr * d_z  # rows of a permutation slice are distinct
            rest[0] -= lr * d_z.sum(axis=0)
            for w, g in zip(rest[1:], grads):
                w -= lr * g
    for c0, c1, Z in _zscored_columns(X, mean, std):
        W1[c0:c1] -= Z.T @ A
    dtype = weights[0].dtype
    return [W1.astype(dtype)] + [w.astype(dtype) for w in rest]


def train_mlp(
    data: LabeledSet,
    hidden=(128,),
    epochs: int = 200,
    batch: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    dtype: str = "float32",
) -> MLPClassifier:
    """Deterministic given ``seed``: one stream drives initialisation, then per-epoch shuffles.

    Inputs with more columns than rows are trained in the equivalent dual form
    (computed in float64) so wide spectrogram features stay affordable.
    """
    if not hidden:
        raise ValueError("at least one hidden layer is required")
    X = data.X.astype(np.float64, copy=False)
    mean, std = zscore_stats(X)
    rng = np.random.default_rng(seed)
    sizes = [X.shape[1], *hidden, data.n_classes]
    weights = init_params(sizes, rng, np.dtype(dtype))
    if X.shape[1] > len(X):
        weights = _sgd_dual(X, mean, std, data.y, weights, epochs, batch, lr, rng)
    else:
        Xz = np.empty(X.shape, dtype=dtype)
        for c0, c1, Z in _zscored_columns(X, mean, std):
            Xz[:, c0:c1] = Z
        weights = _sgd_primal(Xz, data.y, weights, epochs, batch, lr, rng)
    params = {"hidden": list(hidden), "epochs": epochs, "batch": batch, "lr": lr, "seed": seed, "dtype": dtype}
    return MLPClassifier(X.shape[1], data.class_names, mean, std, weights, params)
