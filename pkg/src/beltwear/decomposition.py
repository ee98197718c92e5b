"""PCA by thin SVD, with explained-variance ratios and scatter export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from beltwear._util import atomic_path

COLOR_KEYS = ("wear", "feed", "grit", "material")


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # k x d, orthonormal rows
    explained_variance_ratio: np.ndarray  # k
    ratio_spectrum: np.ndarray  # every component's ratio; sums to 1
    scale: np.ndarray | None = None

    @property
    def n_components(self) -> int:
        return len(self.components)


def fit_pca(X, k: int, standardize: bool = False) -> PcaModel:
    """Top-``k`` principal axes of ``X`` (rows are observations).

    Each axis is signed so that its largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise ValueError("PCA needs at least two rows")
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} outside [1, {min(n - 1, d)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    scale = None
    if standardize:
        scale = Xc.std(axis=0)
        scale[scale == 0] = 1.0
        Xc = Xc / scale
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    power = s**2
    total = power.sum()
    if total == 0:
        raise ValueError("all rows are identical; explained variance is undefined")
    ratios = power / total
    comps = vt[:k].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    comps *= signs[:, None]
    return PcaModel(mean, comps, ratios[:k], ratios, scale)


def transform(model: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.mean):
        raise ValueError(f"expected {len(model.mean)} columns, got shape {X.shape}")
    Xc = X - model.mean
    if model.scale is not None:
        Xc = Xc / model.scale
    return Xc @ model.components.T


def inverse_transform(model: PcaModel, scores) -> np.ndarray:
    X = np.asarray(scores) @ model.components
    if model.scale is not None:
        X = X * model.scale
    return X + model.mean


def write_scatter_csv(path, clip_paths, scores, color_key: str, colors) -> None:
    if color_key not in COLOR_KEYS:
        raise ValueError(f"color key {color_key!r} not in {COLOR_KEYS}")
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(f"clip_path,pc1,pc2,{color_key}\n")
            for p, (a, b), c in zip(clip_paths, scores[:, :2], colors):
                fh.write(f"{p},{a:.17g},{b:.17g},{c}\n")


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def write_scatter_svg(path, scores, colors, title: str = "", size: int = 480) -> None:
    """Static scatter of the first two scores, one colour per distinct label."""
    pad = 40
    xy = np.asarray(scores)[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    pix = pad + (xy - lo) / span * (size - 2 * pad)
    groups = sorted(set(colors), key=str)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<text x="{pad}" y="20" font-size="13" font-family="sans-serif">{title}</text>',
    ]
    for gi, g in enumerate(groups):
        color = _PALETTE[gi % len(_PALETTE)]
        for (px, py), c in zip(pix, colors):
            if c == g:
                lines.append(f'<circle cx="{px:.1f}" cy="{size - py:.1f}" r="2.5" fill="{color}" fill-opacity="0.7"/>')
        ly = pad + 16 * gi
        lines.append(f'<rect x="{size - 90}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        lines.append(f'<text x="{size - 75}" y="{ly}" font-size="11" font-family="sans-serif">{g}</text>')
    lines.append("</svg>")
    with atomic_path(path) as tmp:
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
