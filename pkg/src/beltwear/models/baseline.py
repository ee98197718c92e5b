from __future__ import annotations

import numpy as np

from beltwear.models.base import LabeledSet, TrainedModel


class RandomGuess(TrainedModel):
    """Draws each prediction from the training-set class frequencies.

    Every ``predict`` call restarts the stream from ``seed``, so equal inputs give equal outputs.
    """

    kind = "random"

    def __init__(self, feature_dim, class_names, frequencies, params=None):
        super().__init__(feature_dim, class_names, params)
        self.frequencies = np.asarray(frequencies, dtype=np.float64)

    def _predict(self, X):
        rng = np.random.default_rng(int(self.params["seed"]))
        return rng.choice(self.n_classes, size=len(X), p=self.frequencies)

    def state_arrays(self):
        return {"frequencies": self.frequencies}

    @classmethod
    def from_state(cls, feature_dim, class_names, params, arrays):
        return cls(feature_dim, class_names, arrays["frequencies"], params)


def train_random(data: LabeledSet, seed: int = 0) -> RandomGuess:
    counts = np.bincount(data.y, minlength=data.n_classes)
    return RandomGuess(data.X.shape[1], data.class_names, counts / counts.sum(), {"seed": seed})
