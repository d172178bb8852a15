"""Baseline JPEG quantization math: 8x8 DCT, IJG-scaled tables, YCbCr.

Entropy coding is omitted; everything that changes pixel values (color
conversion, block DCT, quantization and rounding) is reproduced.
"""

from __future__ import annotations

import numpy as np

STD_LUMINANCE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

STD_CHROMINANCE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.int64)


def quant_table(quality: int, base: np.ndarray = STD_LUMINANCE) -> np.ndarray:
    """Scale a base table by the IJG quality rule; entries clipped to [1, 255]."""
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"quality factor must be in [1, 100], got {quality}")
    quality = int(quality)
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    table = (base * scale + 50) // 100
    return np.clip(table, 1, 255)


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * x + 1) * k / (2 * n))
    c[0] *= np.sqrt(1.0 / n)
    c[1:] *= np.sqrt(2.0 / n)
    return c


DCT8 = _dct_matrix(8)


def dct2(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II over the last two axes (8x8 blocks)."""
    return DCT8 @ block @ DCT8.T


def idct2(coef: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct2`."""
    return DCT8.T @ coef @ DCT8


def quantize(coef: np.ndarray, table: np.ndarray) -> np.ndarray:
    return np.round(coef / table)


def dequantize(levels: np.ndarray, table: np.ndarray) -> np.ndarray:
    return levels * table


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """JFIF full-range conversion on 0..255 values."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)


def roundtrip_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Level shift, block DCT, quantize, dequantize, inverse DCT (no rounding)."""
    h, w = plane.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge") if (ph or pw) else plane
    blocks = _blocks(padded - 128.0)
    coef = dct2(blocks)
    rec = idct2(dequantize(quantize(coef, table), table))
    return _unblocks(rec)[:h, :w] + 128.0


def jpeg_roundtrip_uint8(rgb255: np.ndarray, quality: int) -> np.ndarray:
    """Compress and decode an H x W x 3 array of 0..255 values; returns uint8."""
    luma = quant_table(quality, STD_LUMINANCE)
    chroma = quant_table(quality, STD_CHROMINANCE)
    ycc = rgb_to_ycbcr(rgb255.astype(np.float64))
    planes = [roundtrip_plane(ycc[..., 0], luma),
              roundtrip_plane(ycc[..., 1], chroma),
              roundtrip_plane(ycc[..., 2], chroma)]
    rgb = ycbcr_to_rgb(np.stack(planes, axis=-1))
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)
