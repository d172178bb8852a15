"""Gray-level co-occurrence matrices with homogeneity / ASM statistics and
sliding-window feature maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import Image

DEFAULT_LEVELS = 8
DEFAULT_OFFSET = (0, 1)
DEFAULT_WINDOW = 16
DEFAULT_STRIDE = 8


@dataclass
class Glcm:
    levels: int
    matrix: np.ndarray
    offset: tuple[int, int]
    symmetric: bool = True
    normalized: bool = True


def quantize_gray(gray: np.ndarray, levels: int) -> np.ndarray:
    """Map [0, 1] intensities onto integer bins 0..levels-1."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    return np.minimum((np.asarray(gray) * levels).astype(np.int64), levels - 1)


def _gray(img) -> np.ndarray:
    if isinstance(img, Image):
        return img.to_gray()
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        return Image(arr).to_gray()
    return arr


def glcm_from_levels(q: np.ndarray, levels: int, offset=DEFAULT_OFFSET,
                     symmetric: bool = True, normalize: bool = True) -> Glcm:
    dy, dx = offset
    h, w = q.shape
    if abs(dy) >= h or abs(dx) >= w:
        raise ValueError(f"offset {offset} does not fit a {h}x{w} image")
    y0, y1 = max(0, -dy), h - max(0, dy)
    x0, x1 = max(0, -dx), w - max(0, dx)
    a = q[y0:y1, x0:x1]
    b = q[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
    counts = np.bincount((a * levels + b).ravel(), minlength=levels * levels)
    mat = counts.reshape(levels, levels).astype(np.float64)
    if symmetric:
        mat = mat + mat.T
    if normalize:
        total = mat.sum()
        mat = mat / total
    return Glcm(levels, mat, (dy, dx), symmetric, normalize)


def compute_glcm(img, levels: int = DEFAULT_LEVELS, offset=DEFAULT_OFFSET) -> Glcm:
    """Normalized symmetric GLCM of an image (RGB is reduced to luma first)."""
    return glcm_from_levels(quantize_gray(_gray(img), levels), levels, offset)


def _require_normalized(g: Glcm) -> np.ndarray:
    if not g.normalized:
        raise ValueError("statistic is defined on a normalized GLCM")
    return g.matrix


def homogeneity(g: Glcm) -> float:
    p = _require_normalized(g)
    i, j = np.indices(p.shape)
    return float(np.sum(p / (1.0 + (i - j) ** 2)))


def asm(g: Glcm) -> float:
    """Angular second moment: sum of squared entries."""
    p = _require_normalized(g)
    return float(np.sum(p * p))


FEATURES = {"homogeneity": homogeneity, "asm": asm}


def feature_values(img, feature: str = "homogeneity", window: int = DEFAULT_WINDOW,
                   stride: int = DEFAULT_STRIDE, levels: int = DEFAULT_LEVELS,
                   offset=DEFAULT_OFFSET) -> np.ndarray:
    """Raw per-window statistic, shape (rows, cols) of window positions."""
    if feature not in FEATURES:
        raise ValueError(f"unknown feature '{feature}'")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    q = quantize_gray(_gray(img), levels)
    h, w = q.shape
    if window > min(h, w) or window < 1:
        raise ValueError(f"window {window} does not fit a {h}x{w} image")
    fn = FEATURES[feature]
    ys = range(0, h - window + 1, stride)
    xs = range(0, w - window + 1, stride)
    out = np.empty((len(ys), len(xs)))
    for r, y in enumerate(ys):
        for c, x in enumerate(xs):
            out[r, c] = fn(glcm_from_levels(q[y:y + window, x:x + window], levels, offset))
    return out


def feature_map(img, feature: str = "homogeneity", window: int = DEFAULT_WINDOW,
                stride: int = DEFAULT_STRIDE, levels: int = DEFAULT_LEVELS,
                offset=DEFAULT_OFFSET) -> Image:
    """Per-window statistic min-max rescaled to [0, 1] for display.

    A map with no spread (constant image, single window) keeps its raw values,
    which already lie in (0, 1].
    """
    vals = feature_values(img, feature, window, stride, levels, offset)
    lo, hi = vals.min(), vals.max()
    if hi > lo:
        vals = (vals - lo) / (hi - lo)
    return Image(vals)


def texture_delta(original, rendered, feature: str = "homogeneity",
                  levels: int = DEFAULT_LEVELS, offset=DEFAULT_OFFSET) -> float:
    """feature(original) - feature(rendered) over the whole image."""
    fn = FEATURES[feature]
    return fn(compute_glcm(original, levels, offset)) - fn(compute_glcm(rendered, levels, offset))
