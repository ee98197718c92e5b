from __future__ import annotations

import numpy as np

from beltwear.models.base import LabeledSet, TrainedModel, zscore_stats

_QUERY_CHUNK = 64


class KNearestNeighbors(TrainedModel):
    """Majority vote of the k nearest training rows (Euclidean, z-scored features).

    Distance ties go to the lower training-row index; vote ties to the lowest class id.
    """

    kind = "knn"

    def __init__(self, feature_dim, class_names, mean, std, train_z, labels, params=None):
        super().__init__(feature_dim, class_names, params)
        self.mean, self.std = mean, std
        self.train_z = train_z
        self.labels = labels
        self.k = int(self.params["k"])
        self._sq_norms = np.einsum("ij,ij->i", train_z, train_z)

    def neighbors(self, X) -> np.ndarray:
        """Indices of the k nearest training rows for each query, nearest first."""
        Q = (self._check(X) - self.mean) / self.std
        out = np.empty((len(Q), self.k), dtype=np.int64)
        scale = self._sq_norms.max(initial=0.0)
        for c0 in range(0, len(Q), _QUERY_CHUNK):
            q = Q[c0 : c0 + _QUERY_CHUNK]
            q_sq = np.einsum("ij,ij->i", q, q)
            # expansion gives a cheap screen; exact distances decide among the survivors
            approx = q_sq[:, None] + self._sq_norms[None, :] - 2.0 * (q @ self.train_z.T)
            kth = np.partition(approx, self.k - 1, axis=1)[:, self.k - 1]
            tol = 1e-8 * (q_sq + scale) + 1e-12
            for r in range(len(q)):
                cand = np.flatnonzero(approx[r] <= kth[r] + tol[r])
                diff = self.train_z[cand] - q[r]
                exact = np.einsum("ij,ij->i", diff, diff)
                order = np.lexsort((cand, exact))[: self.k]
                out[c0 + r] = cand[order]
        return out

    def _predict(self, X):
        nb = self.labels[self.neighbors(X)]
        counts = np.zeros((len(nb), self.n_classes), dtype=np.int64)
        for j in range(nb.shape[1]):
            np.add.at(counts, (np.arange(len(nb)), nb[:, j]), 1)
        return np.argmax(counts, axis=1)

    def state_arrays(self):
        return {"mean": self.mean, "std": self.std, "train_z": self.train_z, "labels": self.labels}

    @classmethod
    def from_state(cls, feature_dim, class_names, params, arrays):
        return cls(feature_dim, class_names, arrays["mean"], arrays["std"], arrays["train_z"], arrays["labels"], params)


def train_knn(data: LabeledSet, k: int = 5) -> KNearestNeighbors:
    if not 1 <= k <= len(data):
        raise ValueError(f"k={k} must lie in [1, {len(data)}]")
    X = data.X.astype(np.float64, copy=False)
    mean, std = zscore_stats(X)
    train_z = (X - mean) / std
    return KNearestNeighbors(X.shape[1], data.class_names, mean, std, train_z, data.y.copy(), {"k": k})
