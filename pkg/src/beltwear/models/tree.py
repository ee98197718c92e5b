"""CART decision tree (Gini) and a bagged random forest built from it."""

from __future__ import annotations

import math

import numpy as np

from beltwear.models.base import LabeledSet, TrainedModel, majority

# cumulative class-count buffer budget per feature chunk, in elements
_CHUNK_ELEMS = 1 << 22


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    total = counts.sum()
    if total == 0:
        raise ValueError("gini of an empty node")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _best_split(X, rows, y, n_classes, features):
    """Best (feature, threshold) for the node holding ``rows``, or None.

    Maximises S = sum_c L_c^2 / n_L + sum_c R_c^2 / n_R, which is the same as
    minimising the size-weighted child Gini. Exact ties go to the lowest
    feature index, then the lowest threshold.
    """
    m = len(rows)
    yn = y[rows]
    total = np.bincount(yn, minlength=n_classes)
    n_left = np.arange(1, m)[:, None]
    n_right = m - n_left
    best = None  # (num, den, feature, threshold)
    step = max(1, _CHUNK_ELEMS // (m * n_classes))
    contiguous = features is None
    n_feat = X.shape[1] if contiguous else len(features)
    for c0 in range(0, n_feat, step):
        if contiguous:
            feat_ids = np.arange(c0, min(c0 + step, n_feat))
            Xc = X[rows, c0 : c0 + step]
        else:
            feat_ids = features[c0 : c0 + step]
            Xc = X[np.ix_(rows, feat_ids)]
        order = np.argsort(Xc, axis=0, kind="stable")
        xs = np.take_along_axis(Xc, order, axis=0)
        ys = yn[order]
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        sq_left = np.zeros((m - 1, len(feat_ids)))
        sq_right = np.zeros((m - 1, len(feat_ids)))
        for c in range(n_classes):
            left_c = np.cumsum(ys[:-1] == c, axis=0)
            sq_left += left_c.astype(np.float64) ** 2
            sq_right += (total[c] - left_c).astype(np.float64) ** 2
        score = sq_left / n_left + sq_right / n_right
        score[~valid] = -np.inf
        top = score.max()
        # float screening, then exact integer comparison of num/den among near-ties
        ii, jj = np.nonzero(score >= top - 1e-9 * max(top, 1.0))
        order = np.lexsort((ii, jj))
        ii, jj = ii[order], jj[order]
        nl = ii.astype(np.int64) + 1
        num = (m - nl) * sq_left[ii, jj].astype(np.int64) + nl * sq_right[ii, jj].astype(np.int64)
        den = nl * (m - nl)
        k = int(np.argmax(score[ii, jj]))
        while True:
            better = num * den[k] > num[k] * den
            if not better.any():
                break
            k = int(np.argmax(better))
        k = int(np.argmax(num * den[k] == num[k] * den))
        if best is None or num[k] * best[1] > best[0] * den[k]:
            i, j = int(ii[k]), int(jj[k])
            lo, hi = float(xs[i, j]), float(xs[i + 1, j])
            thr = (lo + hi) / 2
            if not lo <= thr < hi:
                thr = lo
            best = (int(num[k]), int(den[k]), int(feat_ids[j]), thr)
    return None if best is None else best[2:]


class _TreeArrays:
    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[int] = []

    def add(self) -> int:
        for lst, v in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1), (self.right, -1), (self.value, 0)):
            lst.append(v)
        return len(self.feature) - 1

    def freeze(self) -> dict[str, np.ndarray]:
        return {
            "feature": np.array(self.feature, dtype=np.int64),
            "threshold": np.array(self.threshold, dtype=np.float64),
            "left": np.array(self.left, dtype=np.int64),
            "right": np.array(self.right, dtype=np.int64),
            "value": np.array(self.value, dtype=np.int64),
        }


def grow_tree(X, y, n_classes, rows=None, min_samples_split=2, max_depth=None, feature_sampler=None):
    """Grow one CART tree depth-first; returns node arrays.

    ``feature_sampler``, if given, is called once per split attempt and returns the
    sorted candidate feature ids for that node.
    """
    rows = np.arange(len(y)) if rows is None else np.asarray(rows)
    nodes = _TreeArrays()
    stack = [(nodes.add(), rows, 0)]
    while stack:
        nid, r, depth = stack.pop()
        counts = np.bincount(y[r], minlength=n_classes)
        nodes.value[nid] = majority(counts)
        if np.count_nonzero(counts) <= 1 or len(r) < min_samples_split:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        feats = feature_sampler() if feature_sampler is not None else None
        split = _best_split(X, r, y, n_classes, feats)
        if split is None:
            continue
        f, thr = split
        go_left = X[r, f] <= thr
        left, right = nodes.add(), nodes.add()
        nodes.feature[nid], nodes.threshold[nid] = f, thr
        nodes.left[nid], nodes.right[nid] = left, right
        stack.append((right, r[~go_left], depth + 1))
        stack.append((left, r[go_left], depth + 1))
    return nodes.freeze()


def apply_tree(arrays: dict[str, np.ndarray], X: np.ndarray) -> np.ndarray:
    """Leaf class for each row of X."""
    feature, threshold = arrays["feature"], arrays["threshold"]
    left, right = arrays["left"], arrays["right"]
    node = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    active = feature[node] >= 0
    while active.any():
        r, nd = rows[active], node[active]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return arrays["value"][node]


def tree_depth(arrays: dict[str, np.ndarray]) -> int:
    depth = np.zeros(len(arrays["feature"]), dtype=np.int64)
    for i in range(len(depth)):
        for child in (arrays["left"][i], arrays["right"][i]):
            if child >= 0:
                depth[child] = depth[i] + 1
    return int(depth.max())


class DecisionTree(TrainedModel):
    kind = "tree"

    def __init__(self, feature_dim, class_names, arrays, params=None):
        super().__init__(feature_dim, class_names, params)
        self.arrays = arrays

    @property
    def n_nodes(self) -> int:
        return len(self.arrays["feature"])

    @property
    def depth(self) -> int:
        return tree_depth(self.arrays)

    def _predict(self, X):
        return apply_tree(self.arrays, X)

    def state_arrays(self):
        return dict(self.arrays)

    @classmethod
    def from_state(cls, feature_dim, class_names, params, arrays):
        return cls(feature_dim, class_names, arrays, params)


def train_tree(data: LabeledSet, min_samples_split: int = 2, max_depth: int | None = None) -> DecisionTree:
    arrays = grow_tree(data.X, data.y, data.n_classes, min_samples_split=min_samples_split, max_depth=max_depth)
    params = {"min_samples_split": min_samples_split, "max_depth": max_depth}
    return DecisionTree(data.X.shape[1], data.class_names, arrays, params)


_TREE_KEYS = ("feature", "threshold", "left", "right", "value")


class RandomForest(TrainedModel):
    kind = "forest"

    def __init__(self, feature_dim, class_names, trees, params=None):
        super().__init__(feature_dim, class_names, params)
        self.trees = trees

    def votes(self, X) -> np.ndarray:
        X = self._check(X)
        counts = np.zeros((len(X), self.n_classes), dtype=np.int64)
        rows = np.arange(len(X))
        for t in self.trees:
            np.add.at(counts, (rows, apply_tree(t, X)), 1)
        return counts

    def _predict(self, X):
        return np.argmax(self.votes(X), axis=1)

    def state_arrays(self):
        sizes = np.array([len(t["feature"]) for t in self.trees], dtype=np.int64)
        out = {"tree_sizes": sizes}
        for key in _TREE_KEYS:
            out[key] = np.concatenate([t[key] for t in self.trees])
        return out

    @classmethod
    def from_state(cls, feature_dim, class_names, params, arrays):
        bounds = np.concatenate([[0], np.cumsum(arrays["tree_sizes"])])
        trees = [{k: arrays[k][a:b] for k in _TREE_KEYS} for a, b in zip(bounds[:-1], bounds[1:])]
        return cls(feature_dim, class_names, trees, params)


def train_forest(
    data: LabeledSet,
    n_trees: int = 100,
    seed: int = 0,
    features_per_split: int | None = -1,
    bootstrap: bool = True,
    min_samples_split: int = 2,
    max_depth: int | None = None,
) -> RandomForest:
    """Bagged CART ensemble.

    ``features_per_split=-1`` means ceil(sqrt(d)); ``None`` considers every feature.
    Tree ``t`` draws from its own stream seeded by ``(seed, t)``.
    """
    n, d = data.X.shape
    k = math.ceil(math.sqrt(d)) if features_per_split == -1 else features_per_split
    if k is not None and not 1 <= k <= d:
        raise ValueError(f"features_per_split={k} outside [1, {d}]")

    def build(t):
        rng = np.random.default_rng([seed, t])
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        sampler = None
        if k is not None and k < d:
            sampler = lambda: np.sort(rng.choice(d, size=k, replace=False))  # noqa: E731
        return grow_tree(data.X, data.y, data.n_classes, rows, min_samples_split, max_depth, sampler)

    from beltwear._util import parallel_map

    trees = parallel_map(build, range(n_trees))
    params = {
        "n_trees": n_trees,
        "seed": seed,
        "features_per_split": k,
        "bootstrap": bootstrap,
        "min_samples_split": min_samples_split,
        "max_depth": max_depth,
    }
    return RandomForest(d, data.class_names, trees, params)
