"""Per-pixel class maps that guide the texture renderer.

Maps are either read from label images or produced by a seeded k-means over
color and normalized position.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import Tensor
from .imaging import Image

KMEANS_ITERATIONS = 20
DEFAULT_CLASSES = 8


@dataclass
class SegMap:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise ValueError("label map must be 2-D")
        if self.num_classes < 1:
            raise ValueError("class count must be >= 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels outside [0, num_classes)")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple:
        return self.labels.shape


def _features(img: Image) -> np.ndarray:
    h, w = img.height, img.width
    px = img.pixels
    if img.channels == 1:
        px = np.repeat(px, 3, axis=2)
    yy, xx = np.mgrid[0:h, 0:w]
    return np.concatenate(
        [px.reshape(-1, 3), (xx / w).reshape(-1, 1), (yy / h).reshape(-1, 1)], axis=1
    )


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _relabel_by_first_appearance(labels: np.ndarray) -> np.ndarray:
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[np.unique(labels)[order]] = np.arange(len(order))
    return remap[labels]


def segment_simple(img: Image, k: int = DEFAULT_CLASSES,
                   rng: np.random.Generator | None = None,
                   iterations: int = KMEANS_ITERATIONS) -> SegMap:
    """k-means (k-means++ init, fixed iteration count) over (r, g, b, x/W, y/H).

    Cluster ids are renumbered in raster order of first appearance, so equal
    seeds give identical label geometry. ``num_classes`` is always ``k`` even
    if some clusters end up empty.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = img.height * img.width
    if k > n:
        raise ValueError(f"k={k} exceeds the pixel count {n}")
    if k == 1:
        return SegMap(np.zeros((img.height, img.width), dtype=np.int64), 1)
    rng = rng if rng is not None else np.random.default_rng(0)
    x = _features(img)
    centers = _kmeans_pp_init(x, k, rng)
    xx = np.sum(x * x, axis=1)[:, None]
    for _ in range(iterations):
        d = xx - 2 * x @ centers.T + np.sum(centers * centers, axis=1)[None, :]
        labels = d.argmin(axis=1)
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
    d = xx - 2 * x @ centers.T + np.sum(centers * centers, axis=1)[None, :]
    labels = _relabel_by_first_appearance(d.argmin(axis=1))
    return SegMap(labels.reshape(img.height, img.width), k)


def load_segmap(path, expected_shape=None) -> SegMap:
    """Read a single-channel label image; class count is max label + 1."""
    try:
        with PILImage.open(path) as im:
            im.load()
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise OSError(f"cannot read label map {path}: {exc}") from exc
    if arr.ndim != 2:
        raise ValueError(f"label map {path} must be single-channel")
    if expected_shape is not None and tuple(arr.shape) != tuple(expected_shape[:2]):
        raise ValueError(f"label map shape {arr.shape} != expected {tuple(expected_shape[:2])}")
    labels = arr.astype(np.int64)
    return SegMap(labels, int(labels.max()) + 1)


def save_segmap(seg: SegMap, path) -> Path:
    path = Path(path)
    if seg.num_classes > 256:
        raise ValueError("at most 256 classes fit an 8-bit label image")
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = "PNG" if path.suffix.lower() == ".png" else "PPM"
    PILImage.fromarray(seg.labels.astype(np.uint8)).save(path, format=fmt)
    return path


def one_hot(seg: SegMap, dtype=np.float64) -> Tensor:
    """K x H x W indicator tensor; channel k is 1 where the label equals k."""
    out = (np.arange(seg.num_classes)[:, None, None] == seg.labels[None]).astype(dtype)
    return Tensor(out)
