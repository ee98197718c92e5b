"""Classifier families sharing one train / predict / serialize contract."""

from beltwear.models.base import KINDS, LabeledSet, TrainedModel, TrainingError
from beltwear.models.baseline import RandomGuess, train_random
from beltwear.models.io import ModelFormatError, ModelVersionError, load_model, save_model
from beltwear.models.knn import KNearestNeighbors, train_knn
from beltwear.models.mlp import MLPClassifier, train_mlp
from beltwear.models.tree import DecisionTree, RandomForest, gini, train_forest, train_tree


def train(kind: str, data: LabeledSet, seed: int = 0, **params) -> TrainedModel:
    """Dispatch to the trainer for ``kind``; seeds go only to the stochastic families."""
    if kind == "tree":
        return train_tree(data, **params)
    if kind == "forest":
        return train_forest(data, seed=seed, **params)
    if kind == "knn":
        return train_knn(data, **params)
    if kind == "mlp":
        return train_mlp(data, seed=seed, **params)
    if kind == "random":
        return train_random(data, seed=seed)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")


__all__ = [
    "KINDS", "LabeledSet", "TrainedModel", "TrainingError", "train",
    "DecisionTree", "RandomForest", "KNearestNeighbors", "MLPClassifier", "RandomGuess",
    "gini", "train_tree", "train_forest", "train_knn", "train_mlp", "train_random",
    "save_model", "load_model", "ModelFormatError", "ModelVersionError",
]
