"""Acquisition-trace estimators and a procedural PG / CG image generator.

Camera-like images (PG) go through CFA sampling, demosaicing, sensor noise
and JPEG; computer-generated-like images (CG) are the same kind of scene
shaded smoothly and blurred before JPEG. The trace estimators are the pattern
(denoising residual), compression (rounding/truncation residual) and
rendering (region-averaged re-rendering residual) traces.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from . import jpeg
from .imaging import Image, Provenance, save_image, to_uint8
from .manifest import CG, PG, DatasetManifest, Record, split_counts, write_manifest
from .segmentation import SegMap


# --- demosaicing --------------------------------------------------------------

@dataclass
class DemosaicKernel:
    """(2N+1) x (2N+1) interpolation weights summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ValueError("kernel must be square with odd size")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"kernel weights must sum to 1 (got {w.sum()})")
        self.weights = w

    @property
    def half_size(self) -> int:
        return self.weights.shape[0] // 2

    @classmethod
    def bilinear(cls) -> "DemosaicKernel":
        return cls(np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 16.0)


def bayer_masks(h: int, w: int) -> np.ndarray:
    """H x W x 3 boolean RGGB sampling masks."""
    yy, xx = np.mgrid[0:h, 0:w]
    r = (yy % 2 == 0) & (xx % 2 == 0)
    b = (yy % 2 == 1) & (xx % 2 == 1)
    return np.stack([r, ~(r | b), b], axis=-1)


def bayer_mosaic(img: Image) -> Image:
    """Sample an RGB image through an RGGB color filter array (1 channel out)."""
    if img.channels != 3:
        raise ValueError("bayer_mosaic expects an RGB image")
    m = bayer_masks(img.height, img.width)
    return img.with_pixels((img.pixels * m).sum(axis=2))


def demosaic(raw: Image, kernel: DemosaicKernel | None = None) -> Image:
    """Interpolate an RGGB mosaic with ``kernel`` applied to each channel's sparse samples.

    Each channel is ``conv(samples, h) / conv(mask, h)``, i.e. the kernel
    renormalized by the local sampling density; any kernel summing to one
    reproduces constant scenes exactly.
    """
    if not isinstance(kernel, DemosaicKernel):
        kernel = DemosaicKernel(kernel) if kernel is not None else DemosaicKernel.bilinear()
    if raw.channels != 1 or raw.height % 2 or raw.width % 2:
        raise ValueError("demosaic expects a single-channel RGGB mosaic with even extents")
    mosaic = raw.pixels[:, :, 0]
    masks = bayer_masks(raw.height, raw.width).astype(np.float64)
    h = kernel.weights
    out = np.empty((raw.height, raw.width, 3))
    for c in range(3):
        num = ndimage.convolve(mosaic * masks[:, :, c], h, mode="constant")
        den = ndimage.convolve(masks[:, :, c], h, mode="constant")
        if np.any(np.abs(den) < 1e-12):
            raise ValueError("kernel support does not reach every missing CFA sample")
        out[:, :, c] = num / den
    return raw.with_pixels(out)


# --- trace estimators -------------------------------------------------------

@dataclass(frozen=True)
class QuantTable:
    """8x8 quantization steps Q plus the quality factor they came from."""

    values: np.ndarray
    quality: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (8, 8) or np.any(v < 1):
            raise ValueError("quantization table must be 8x8 with entries >= 1")

    @classmethod
    def from_quality(cls, quality: int) -> "QuantTable":
        return cls(jpeg.quant_table(quality, jpeg.STD_LUMINANCE), quality)

class TraceKind(str, enum.Enum):
    """Concrete trace estimators.

    PATTERN estimates the hardware-acquisition component of PG traces,
    COMPRESSION the software-processing component, RENDERING the
    photorealistic-rendering component of CG traces.
    """

    PATTERN = "pattern"
    COMPRESSION = "compression"
    RENDERING = "rendering"


@dataclass
class TraceReport:
    kind: TraceKind
    map: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def summary(self) -> float:
        return float(np.mean(np.abs(self.map)))


def median_denoise(pixels: np.ndarray) -> np.ndarray:
    size = (3, 3, 1) if pixels.ndim == 3 else (3, 3)
    return ndimage.median_filter(pixels, size=size, mode="reflect")


def gaussian_denoise(pixels: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    s = (sigma, sigma, 0) if pixels.ndim == 3 else sigma
    return ndimage.gaussian_filter(pixels, s, mode="reflect")


DENOISERS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "median": median_denoise,
    "gaussian": gaussian_denoise,
}


def pattern_trace(images, denoiser="median") -> TraceReport:
    """Mean of the denoising residuals ``img - DN(img)`` over the images."""
    images = list(images)
    if not images:
        raise ValueError("pattern_trace needs at least one image")
    dn = DENOISERS[denoiser] if isinstance(denoiser, str) else denoiser
    shape = images[0].shape
    acc = np.zeros(shape)
    for im in images:
        if im.shape != shape:
            raise ValueError(f"image shape {im.shape} differs from {shape}")
        acc += im.pixels - dn(im.pixels)
    return TraceReport(TraceKind.PATTERN, acc / len(images), {"count": len(images)})


def compression_trace(coefficients: np.ndarray, table,
                      level_shift: float = 128.0) -> np.ndarray:
    """``RT(IDCT(D * Q)) - IDCT(D * Q)`` on one 8x8 block of quantized levels.

    The inverse DCT includes the JPEG level shift, so RT rounds and truncates
    to the 0..255 sample range.
    """
    d = np.asarray(coefficients, dtype=np.float64)
    q = np.asarray(table.values if isinstance(table, QuantTable) else table, dtype=np.float64)
    if d.shape != (8, 8) or q.shape != (8, 8):
        raise ValueError("compression_trace works on 8x8 blocks")
    x = jpeg.idct2(d * q) + level_shift
    return np.clip(np.round(x), 0, 255) - x


def rendering_trace(img: Image, segmap: SegMap, renderer) -> TraceReport:
    """Region-averaged rendering residual.

    ``renderer`` is a callable ``(Image, SegMap) -> Image`` (for a
    :class:`~cgtrace.renderer.TextureRenderer` wrap it with
    :func:`cgtrace.renderer.render`). The map is the per-pixel residual
    ``img - rendered``; ``extra['aggregate']`` is the mean over the R occupied
    regions of each region's mean residual (per channel).
    """
    if segmap.shape != (img.height, img.width):
        raise ValueError(f"segmentation {segmap.shape} does not match image {img.shape[:2]}")
    regions = np.unique(segmap.labels)
    if regions.size == 0:
        raise ValueError("segmentation has no regions")
    rendered = renderer(img, segmap)
    residual = img.pixels - rendered.pixels
    means = np.stack([residual[segmap.labels == r].mean(axis=0) for r in regions])
    return TraceReport(TraceKind.RENDERING, residual,
                       {"regions": regions, "region_means": means, "aggregate": means.mean(axis=0)})


# --- procedural scenes --------------------------------------------------------

FAMILIES = ("A", "B")


def _scene(rng: np.random.Generator, size: int, family: str) -> tuple[np.ndarray, np.ndarray]:
    """Flat-shaded base colors and a smooth shading field for one random scene."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    c0, c1 = rng.uniform(0.15, 0.85, 3), rng.uniform(0.15, 0.85, 3)
    angle = rng.uniform(0, 2 * np.pi)
    t = (np.cos(angle) * xx + np.sin(angle) * yy + 1) / 2
    base = c0 * (1 - t[..., None]) + c1 * t[..., None]
    shade = np.zeros((size, size))
    if family == "A":
        for _ in range(rng.integers(3, 7)):
            color = rng.uniform(0.05, 0.95, 3)
            cy, cx = rng.uniform(0, 1, 2)
            if rng.random() < 0.5:
                r = rng.uniform(0.08, 0.3)
                d2 = (yy - cy) ** 2 + (xx - cx) ** 2
                m = d2 < r * r
                base[m] = color
                shade[m] = 0.15 * (1 - d2[m] / (r * r))
            else:
                hh, ww = rng.uniform(0.1, 0.4, 2)
                m = (np.abs(yy - cy) < hh / 2) & (np.abs(xx - cx) < ww / 2)
                base[m] = color
                shade[m] = 0.1 * (xx[m] - cx) / ww
    elif family == "B":
        freq = rng.uniform(2, 6)
        phase = rng.uniform(0, 2 * np.pi)
        stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx + 0.3 * yy) + phase)
        alt = rng.uniform(0.1, 0.9, 3)
        base = base * (1 - 0.5 * stripes[..., None]) + alt * 0.5 * stripes[..., None]
        for _ in range(rng.integers(2, 5)):
            color = rng.uniform(0.05, 0.95, 3)
            pts = rng.uniform(0, 1, (3, 2))
            m = _triangle_mask(yy, xx, pts)
            base[m] = color
            shade[m] = 0.1 * (yy[m] - pts[:, 0].mean())
    else:
        raise ValueError(f"unknown scene family '{family}'")
    return base, shade


def _triangle_mask(yy, xx, pts) -> np.ndarray:
    def edge(a, b):
        return (xx - a[1]) * (b[0] - a[0]) - (yy - a[0]) * (b[1] - a[1])

    e0, e1, e2 = edge(pts[0], pts[1]), edge(pts[1], pts[2]), edge(pts[2], pts[0])
    return ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))


def _band_noise(rng, size, sigma, amplitude):
    n = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    return amplitude * n / (n.std() + 1e-12)


def _jpeg(pixels: np.ndarray, quality: int) -> np.ndarray:
    return jpeg.jpeg_roundtrip_uint8(to_uint8(pixels), quality) / 255.0


def synth_pg(rng: np.random.Generator, size: int = 256, family: str = "A") -> Image:
    """Camera-like image: scene, fine texture, CFA sampling + demosaic, sensor noise, JPEG.

    The scene is drawn first, so an identically seeded ``synth_cg`` call
    renders the same scene.
    """
    base, shade = _scene(rng, size, family)
    texture = _band_noise(rng, size, 0.7, 0.04)
    radiance = np.clip(base + (shade + _band_noise(rng, size, 3.0, 0.03) + texture)[..., None], 0, 1)
    prnu = 1.0 + 0.02 * rng.standard_normal((size, size, 1))
    raw = bayer_mosaic(Image(radiance * prnu))
    sensor_sigma = rng.uniform(0.008, 0.02)
    raw = raw.with_pixels(raw.pixels + sensor_sigma * rng.standard_normal(raw.pixels.shape))
    rgb = demosaic(raw).pixels
    quality = int(rng.integers(85, 96))
    return Image(_jpeg(rgb, quality), Provenance.SYNTHETIC_PG, {"quality": quality})


def synth_cg(rng: np.random.Generator, size: int = 256, family: str = "A") -> Image:
    """Rendered-like image: the same scene family, smooth shading, mild blur, JPEG."""
    base, shade = _scene(rng, size, family)
    smooth = _band_noise(rng, size, 6.0, 0.02)
    img = np.clip(base + (shade + smooth)[..., None], 0, 1)
    sigma = rng.uniform(0.7, 1.2)
    img = ndimage.gaussian_filter(img, (sigma, sigma, 0), mode="reflect")
    quality = int(rng.integers(85, 96))
    return Image(_jpeg(img, quality), Provenance.SYNTHETIC_CG, {"quality": quality})


def image_rng(seed: int, index: int, label: int | None = None) -> np.random.Generator:
    """Per-image stream; without ``label`` PG and CG image ``index`` share a scene."""
    key = [seed, index] if label is None else [seed, index, label]
    return np.random.default_rng(key)


def build_dataset(n_per_class: int, out_dir, rng: np.random.Generator, size: int = 256,
                  splits: tuple[int, int, int] | None = None, family: str = "A") -> DatasetManifest:
    """Write PNG images plus ``manifest.csv`` (label 1 = CG, 0 = PG).

    ``splits`` overrides the default 4.1 : 1 : 1 train / val / test sizes and
    must sum to ``n_per_class``.
    """
    counts = split_counts(n_per_class) if splits is None else tuple(splits)
    if sum(counts) != n_per_class:
        raise ValueError(f"split sizes {counts} do not sum to {n_per_class}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "pg").mkdir(exist_ok=True)
        (out_dir / "cg").mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    seed = int(rng.integers(0, 2**31))
    order = rng.permutation(n_per_class)
    split_of = np.empty(n_per_class, dtype=object)
    split_of[order[:counts[0]]] = "train"
    split_of[order[counts[0]:counts[0] + counts[1]]] = "val"
    split_of[order[counts[0] + counts[1]:]] = "test"
    records = []
    for i in range(n_per_class):
        for label, name, fn in ((PG, "pg", synth_pg), (CG, "cg", synth_cg)):
            img = fn(image_rng(seed, i), size, family)
            rel = f"{name}/{name}_{i:05d}.png"
            save_image(img, out_dir / rel)
            records.append(Record(rel, label, str(split_of[i])))
    manifest = DatasetManifest(records, out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest
