import numpy as np
import pytest

from cgtrace import jpeg
from cgtrace.imaging import (
    Image,
    Provenance,
    add_gaussian_noise,
    add_salt_pepper,
    augment_flip,
    high_pass,
    highpass_mask,
    highpass_residual,
    jpeg_recompress,
    load_image,
    rescale,
    save_image,
)


def naive_highpass(x, cutoff):
    """O(N^4) DFT -> ideal mask -> inverse DFT, no FFT involved."""
    n, m = x.shape
    ys, xs = np.mgrid[0:n, 0:m]
    spec = np.zeros((n, m), dtype=complex)
    for u in range(n):
        for v in range(m):
            spec[u, v] = np.sum(x * np.exp(-2j * np.pi * (u * ys / n + v * xs / m)))
    for u in range(n):
        for v in range(m):
            fu = u if u < n - n // 2 else u - n
            fv = v if v < m - m // 2 else v - m
            if np.hypot(fu, fv) <= cutoff:
                spec[u, v] = 0
    out = np.zeros((n, m), dtype=complex)
    for y in range(n):
        for x_ in range(m):
            us, vs = np.mgrid[0:n, 0:m]
            out[y, x_] = np.sum(spec * np.exp(2j * np.pi * (us * y / n + vs * x_ / m)))
    return (out / (n * m)).real


def natural_image(rng, h=64, w=64):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    base = np.stack([0.5 + 0.3 * np.sin(4 * xx + c) * np.cos(3 * yy) for c in range(3)], -1)
    return Image(base + 0.05 * rng.standard_normal((h, w, 3)))


# --- I/O --------------------------------------------------------------------

def test_load_ppm_normalizes(tmp_path):
    p = tmp_path / "a.ppm"
    body = bytes([0, 128, 255, 10, 20, 30, 40, 50, 60, 70, 80, 90])
    p.write_bytes(b"P6\n2 2\n255\n" + body)
    img = load_image(p)
    assert img.shape == (2, 2, 3)
    np.testing.assert_allclose(img.pixels[0, 0], [0, 128 / 255, 1])


def test_load_grayscale_png(tmp_path):
    img = Image(np.random.default_rng(0).random((5, 7)))
    path = save_image(img, tmp_path / "g.png")
    back = load_image(path)
    assert back.channels == 1
    assert np.max(np.abs(back.pixels - img.pixels)) <= 0.5 / 255 + 1e-12


def test_load_truncated_raises(tmp_path):
    p = tmp_path / "t.ppm"
    p.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(OSError):
        load_image(p)
    with pytest.raises(OSError):
        load_image(tmp_path / "missing.png")


def test_image_clips_range():
    img = Image(np.array([[-1.0, 2.0]]))
    assert img.pixels.min() == 0 and img.pixels.max() == 1


# --- rescale ----------------------------------------------------------------

def test_rescale_same_size_bit_identical():
    img = Image(np.random.default_rng(1).random((256, 256, 3)))
    assert np.array_equal(rescale(img, 256).pixels, img.pixels)


def test_rescale_constant():
    img = Image(np.full((37, 91, 3), 0.3))
    out = rescale(img, (256, 256))
    assert out.shape == (256, 256, 3)
    assert np.all(out.pixels == 0.3)


def test_rescale_ramp_hand_computed():
    ramp = np.tile(np.arange(4.0), (4, 1)) / 3.0
    out = rescale(Image(ramp), (2, 2)).pixels[:, :, 0]
    # half-pixel centers: output column j samples source x = 2j + 0.5
    expected = np.array([[0.5, 2.5], [0.5, 2.5]]) / 3.0
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_rescale_rejects_zero_target():
    with pytest.raises(ValueError):
        rescale(Image(np.zeros((4, 4))), (0, 4))


# --- high-pass --------------------------------------------------------------

def test_mask_geometry():
    mask = highpass_mask(256, 256, 30)
    assert mask[128, 128] == 0 and mask[128, 158] == 0 and mask[128, 159] == 1
    # point reflection about the center
    inner = mask[1:, 1:]
    assert np.array_equal(inner, inner[::-1, ::-1])


def test_highpass_constant_image():
    out = high_pass(Image(np.full((256, 256, 3), 0.7)))
    np.testing.assert_allclose(out.pixels, 0.5, atol=1e-12)
    assert out.provenance == Provenance.FILTERED


def test_highpass_preserves_sinusoid_above_cutoff():
    x = np.arange(256)
    wave = 0.25 * np.cos(2 * np.pi * 64 * x / 256)
    img = np.tile(0.5 + wave, (256, 1))
    res = highpass_residual(img, 30)
    assert np.max(np.abs(res - np.tile(wave, (256, 1)))) < 1e-6


def test_highpass_removes_sinusoid_below_cutoff():
    x = np.arange(256)
    img = np.tile(0.5 + 0.25 * np.cos(2 * np.pi * 10 * x / 256), (256, 1))
    assert np.max(np.abs(highpass_residual(img, 30))) < 1e-9


def test_highpass_impulse_matches_naive_dft():
    x = np.zeros((16, 16))
    x[5, 9] = 1.0
    np.testing.assert_allclose(highpass_residual(x, 4), naive_highpass(x, 4), atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_highpass_random_matches_naive_dft(seed):
    x = np.random.default_rng(seed).random((16, 16))
    np.testing.assert_allclose(highpass_residual(x, 4), naive_highpass(x, 4), atol=1e-9)


def test_highpass_residual_zero_mean_and_deterministic():
    img = natural_image(np.random.default_rng(2), 256, 256)
    res = highpass_residual(img.pixels)
    assert np.all(np.abs(res.mean(axis=(0, 1))) < 1e-9)
    assert np.array_equal(high_pass(img).pixels, high_pass(img).pixels)


# --- flips ------------------------------------------------------------------

def test_flip_identity_and_rotation():
    img = Image(np.random.default_rng(3).random((6, 5, 3)))
    rng = np.random.default_rng(0)
    assert np.array_equal(augment_flip(img, 0, 0, rng).pixels, img.pixels)
    assert np.array_equal(augment_flip(img, 1, 1, rng).pixels, img.pixels[::-1, ::-1])


def test_flip_rate_monte_carlo():
    img = Image(np.arange(4.0).reshape(2, 2) / 3)
    rng = np.random.default_rng(11)
    hits = 0
    n = 10_000
    for _ in range(n):
        out = augment_flip(img, 0.3, 0.0, rng).pixels
        hits += not np.array_equal(out, img.pixels)
    assert abs(hits / n - 0.3) < 0.02


def test_flip_deterministic_under_seed():
    img = Image(np.random.default_rng(3).random((6, 5, 3)))
    a = [augment_flip(img, rng=r).pixels for r in [np.random.default_rng(5)] * 5]
    b = [augment_flip(img, rng=r).pixels for r in [np.random.default_rng(5)] * 5]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


# --- JPEG -------------------------------------------------------------------

def test_quant_table_scaling():
    np.testing.assert_array_equal(jpeg.quant_table(50), jpeg.STD_LUMINANCE)
    # QF 75 -> scale 50: (16 * 50 + 50) // 100 = 8, (11 * 50 + 50) // 100 = 6
    t75 = jpeg.quant_table(75)
    assert t75[0, 0] == 8 and t75[0, 1] == 6
    assert jpeg.quant_table(100).min() == 1
    with pytest.raises(ValueError):
        jpeg.quant_table(0)


def test_single_block_quantization_oracle():
    coef = np.zeros((8, 8))
    coef[0, 0], coef[0, 1], coef[3, 2] = 100.0, -33.0, 14.0
    table = jpeg.quant_table(75)
    levels = jpeg.quantize(coef, table)
    # 100 / 8 = 12.5 -> 12 (round half to even), -33 / 6 = -5.5 -> -6, 14 / 11 = 1.27 -> 1
    assert table[3, 2] == 11
    assert levels[0, 0] == 12 and levels[0, 1] == -6 and levels[3, 2] == 1
    rec = jpeg.dequantize(levels, table)
    assert rec[0, 0] == 96 and rec[0, 1] == -36 and rec[3, 2] == 11


def test_dct_orthonormal_roundtrip():
    block = np.random.default_rng(0).random((8, 8)) * 255
    np.testing.assert_allclose(jpeg.idct2(jpeg.dct2(block)), block, atol=1e-10)
    const = np.full((8, 8), 10.0)
    coef = jpeg.dct2(const)
    assert abs(coef[0, 0] - 80.0) < 1e-12
    assert np.max(np.abs(coef.reshape(-1)[1:])) < 1e-12


def test_jpeg_constant_image_stays_constant():
    img = Image(np.full((16, 24, 3), 0.4))
    out = jpeg_recompress(img, 75).pixels
    assert np.all(out == out[0, 0])
    assert np.max(np.abs(out - img.pixels)) < 0.02


def _psnr(a, b):
    return 10 * np.log10(1.0 / np.mean((a - b) ** 2))


def test_jpeg_quality_monotone():
    img = natural_image(np.random.default_rng(4))
    p95 = _psnr(jpeg_recompress(img, 95).pixels, img.pixels)
    p85 = _psnr(jpeg_recompress(img, 85).pixels, img.pixels)
    p75 = _psnr(jpeg_recompress(img, 75).pixels, img.pixels)
    assert p95 > p85 > p75


def test_jpeg_idempotent_within_tolerance():
    img = natural_image(np.random.default_rng(5), 40, 56)
    once = jpeg_recompress(img, 85)
    twice = jpeg_recompress(once, 85)
    assert abs(twice.pixels.mean() - once.pixels.mean()) < 0.005
    assert np.mean(np.abs(twice.pixels - once.pixels)) < 0.005


def test_jpeg_invalid_qf():
    with pytest.raises(ValueError):
        jpeg_recompress(Image(np.zeros((8, 8, 3))), 0)
    with pytest.raises(ValueError):
        jpeg_recompress(Image(np.zeros((8, 8, 3))), 101)


# --- noise ------------------------------------------------------------------

def test_gaussian_noise():
    img = Image(np.full((256, 256, 3), 0.5))
    rng = np.random.default_rng(0)
    assert np.array_equal(add_gaussian_noise(img, 0.0, rng).pixels, img.pixels)
    out = add_gaussian_noise(img, 0.01, rng).pixels
    assert out.min() >= 0 and out.max() <= 1
    var = np.var(out - img.pixels)
    assert abs(var - 0.01) < 0.001
    with pytest.raises(ValueError):
        add_gaussian_noise(img, -0.1, rng)


def test_gaussian_noise_clamps_at_extremes():
    img = Image(np.ones((32, 32, 3)))
    out = add_gaussian_noise(img, 0.02, np.random.default_rng(1)).pixels
    assert out.max() <= 1.0 and out.min() >= 0.0


def test_salt_pepper():
    img = Image(np.full((256, 256, 3), 0.5))
    rng = np.random.default_rng(2)
    assert np.array_equal(add_salt_pepper(img, 0.0, rng).pixels, img.pixels)
    full = add_salt_pepper(img, 1.0, rng).pixels
    assert set(np.unique(full)) <= {0.0, 1.0}
    out = add_salt_pepper(img, 0.02, rng).pixels
    corrupted = np.any(out != 0.5, axis=2).mean()
    assert abs(corrupted - 0.02) < 0.005
    with pytest.raises(ValueError):
        add_salt_pepper(img, 1.5, rng)
