"""Image container, file I/O, rescaling, frequency-domain high-pass filtering,
flip augmentation and the postprocessing attacks used for robustness tests."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import jpeg

DEFAULT_CUTOFF = 30.0
JPEG_QUALITIES = (95, 85, 75)
NOISE_LEVELS = (0.01, 0.02)


class Provenance(str, enum.Enum):
    LOADED = "loaded"
    SYNTHETIC_PG = "synthetic_pg"
    SYNTHETIC_CG = "synthetic_cg"
    RENDERED = "rendered"
    FILTERED = "filtered"
    ATTACKED = "attacked"


@dataclass
class Image:
    """H x W x C pixels in [0, 1] (C is 1 or 3) plus where they came from.

    Pixels are clipped to [0, 1] on construction.
    """

    pixels: np.ndarray
    provenance: Provenance = Provenance.LOADED
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be HxW, HxWx1 or HxWx3, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image has zero extent")
        self.pixels = np.clip(px, 0.0, 1.0)
        self.provenance = Provenance(self.provenance)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple:
        return self.pixels.shape

    def with_pixels(self, pixels: np.ndarray, provenance: Provenance | None = None) -> "Image":
        return Image(pixels, provenance or self.provenance, dict(self.meta))

    def to_gray(self) -> np.ndarray:
        """H x W luma (0.299, 0.587, 0.114); single-channel images pass through."""
        if self.channels == 1:
            return self.pixels[:, :, 0]
        return self.pixels @ np.array([0.299, 0.587, 0.114])

    def to_chw(self, dtype=np.float64) -> np.ndarray:
        return np.ascontiguousarray(self.pixels.transpose(2, 0, 1), dtype=dtype)


# --- I/O ---------------------------------------------------------------------

def load_image(path) -> Image:
    """Read PNG / JPEG / PPM / PGM into [0, 1] floats; raises OSError on failure."""
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                peak = 65535.0 if arr.max(initial=0) > 255 or im.mode.startswith("I;16") else 255.0
                px = arr / peak
            elif im.mode in ("L", "1"):
                px = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            else:
                px = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, SyntaxError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return Image(px, Provenance.LOADED, {"path": str(path)})


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def save_image(img: Image, path) -> Path:
    """Write 8-bit PNG or PPM/PGM (chosen by suffix)."""
    path = Path(path)
    arr = to_uint8(img.pixels)
    if img.channels == 1:
        arr = arr[:, :, 0]
    suffix = path.suffix.lower()
    if suffix not in (".png", ".ppm", ".pgm", ".pnm"):
        raise ValueError(f"unsupported output format '{suffix}'")
    fmt = "PNG" if suffix == ".png" else "PPM"
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path, format=fmt)
    return path


# --- rescaling ---------------------------------------------------------------

def _lerp_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_in == n_out:
        return a
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    shape = [1] * a.ndim
    shape[axis] = n_out
    t = t.reshape(shape)
    lo = np.take(a, i0, axis=axis)
    hi = np.take(a, i1, axis=axis)
    return lo + t * (hi - lo)


def rescale(img: Image, size=(256, 256)) -> Image:
    """Bilinear resize (half-pixel centers, no antialiasing, no requantization).

    Same-size input is returned bit-identical.
    """
    if isinstance(size, int):
        size = (size, size)
    h, w = size
    if h < 1 or w < 1:
        raise ValueError("target size must be positive")
    px = _lerp_axis(_lerp_axis(img.pixels, h, 0), w, 1)
    return img.with_pixels(px)


# --- high-pass filtering ----------------------------------------------------

def highpass_mask(height: int, width: int, cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    """Ideal circular mask for a centered spectrum: 0 within ``cutoff`` bins of DC, else 1."""
    if cutoff <= 0:
        raise ValueError("cutoff radius must be positive")
    u = np.arange(height)[:, None] - height // 2
    v = np.arange(width)[None, :] - width // 2
    return (np.hypot(u, v) > cutoff).astype(np.float64)


def highpass_residual(pixels: np.ndarray, cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    """Signed high-frequency residual per channel of an H x W (x C) array."""
    arr = np.asarray(pixels, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    mask = np.fft.ifftshift(highpass_mask(h, w, cutoff))
    spec = np.fft.fft2(arr, axes=(0, 1))
    res = np.fft.ifft2(spec * mask[:, :, None], axes=(0, 1)).real
    return res[:, :, 0] if squeeze else res


def high_pass(img: Image, cutoff: float = DEFAULT_CUTOFF) -> Image:
    """High-frequency component stored as ``residual + 0.5`` clipped to [0, 1]."""
    res = highpass_residual(img.pixels, cutoff)
    return img.with_pixels(res + 0.5, Provenance.FILTERED)


# --- augmentation -----------------------------------------------------------

def draw_flips(rng: np.random.Generator, p_horizontal: float = 0.3,
               p_vertical: float = 0.3) -> tuple[bool, bool]:
    """Two independent Bernoulli draws, horizontal first."""
    return bool(rng.random() < p_horizontal), bool(rng.random() < p_vertical)


def apply_flips(pixels: np.ndarray, horizontal: bool, vertical: bool,
                layout: str = "hwc") -> np.ndarray:
    h_axis, w_axis = (0, 1) if layout == "hwc" else (-2, -1)
    out = pixels
    if horizontal:
        out = np.flip(out, axis=w_axis)
    if vertical:
        out = np.flip(out, axis=h_axis)
    return out


def augment_flip(img: Image, p_horizontal: float = 0.3, p_vertical: float = 0.3,
                 rng: np.random.Generator | None = None) -> Image:
    rng = rng if rng is not None else np.random.default_rng()
    hf, vf = draw_flips(rng, p_horizontal, p_vertical)
    return img.with_pixels(np.ascontiguousarray(apply_flips(img.pixels, hf, vf)))


# --- postprocessing attacks -------------------------------------------------

def jpeg_recompress(img: Image, qf: int) -> Image:
    """JPEG encode/decode round trip at quality ``qf`` (4:4:4, no entropy coding)."""
    if not isinstance(qf, (int, np.integer)) or not 1 <= qf <= 100:
        raise ValueError(f"invalid JPEG quality factor {qf!r}")
    if img.channels != 3:
        raise ValueError("jpeg_recompress expects a 3-channel image")
    out = jpeg.jpeg_roundtrip_uint8(to_uint8(img.pixels), int(qf))
    return img.with_pixels(out / 255.0, Provenance.ATTACKED)


def add_gaussian_noise(img: Image, level: float, rng: np.random.Generator) -> Image:
    """Zero-mean Gaussian noise with variance ``level``, then clip."""
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0:
        return img.with_pixels(img.pixels.copy(), Provenance.ATTACKED)
    noise = rng.normal(0.0, np.sqrt(level), img.pixels.shape)
    return img.with_pixels(img.pixels + noise, Provenance.ATTACKED)


def add_salt_pepper(img: Image, density: float, rng: np.random.Generator) -> Image:
    """Set a ``density`` fraction of pixel sites (all channels) to 0 or 1, equiprobably."""
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must be in [0, 1]")
    h, w = img.height, img.width
    hit = rng.random((h, w)) < density
    salt = rng.random((h, w)) < 0.5
    px = img.pixels.copy()
    px[hit] = salt[hit][:, None].astype(np.float64)
    return img.with_pixels(px, Provenance.ATTACKED)
