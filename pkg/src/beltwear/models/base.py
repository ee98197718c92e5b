from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("tree", "forest", "knn", "mlp", "random")


class TrainingError(RuntimeError):
    pass


@dataclass(eq=False)
class LabeledSet:
    X: np.ndarray
    y: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X)
        if self.X.dtype != np.float32:
            self.X = self.X.astype(np.float64, copy=False)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-D matrix")
        if len(self.X) == 0:
            raise ValueError("labeled set is empty")
        if len(self.y) != len(self.X):
            raise ValueError(f"{len(self.X)} rows but {len(self.y)} labels")
        if not self.class_names:
            self.class_names = [str(c) for c in range(int(self.y.max()) + 1)]
        if self.y.min() < 0 or self.y.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.y)


class TrainedModel:
    """Common predict contract. Subclasses implement ``_predict`` and the state hooks used by serialization."""

    kind: str = ""

    def __init__(self, feature_dim: int, class_names, params: dict | None = None):
        self.feature_dim = int(feature_dim)
        self.class_names = list(class_names)
        self.params = dict(params or {})

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.feature_dim:
            raise ValueError(f"{self.kind} model expects {self.feature_dim} features, got shape {X.shape}")
        return X

    def predict(self, X) -> np.ndarray:
        return self._predict(self._check(X)).astype(np.int64)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    @classmethod
    def from_state(cls, feature_dim: int, class_names, params: dict, arrays: dict[str, np.ndarray]):
        raise NotImplementedError


def majority(counts: np.ndarray) -> int:
    """Most frequent class; ties go to the lowest class id."""
    return int(np.argmax(counts))


def zscore_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column mean and std from training data; zero-variance columns get std 1."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return mean, std
