import numpy as np
import pytest

from cgtrace.imaging import Image
from cgtrace.segmentation import SegMap, load_segmap, one_hot, save_segmap, segment_simple


def two_color_image():
    rng = np.random.default_rng(0)
    mask = np.zeros((24, 24), dtype=bool)
    yy, xx = np.mgrid[0:24, 0:24]
    mask[(yy - 12) ** 2 + (xx - 9) ** 2 < 40] = True
    mask |= rng.random((24, 24)) < 0.05
    px = np.where(mask[..., None], [0.9, 0.1, 0.1], [0.05, 0.2, 0.95])
    return Image(px), mask


def test_k1_all_zero():
    seg = segment_simple(Image(np.random.default_rng(0).random((5, 5, 3))), 1)
    assert seg.num_classes == 1 and not seg.labels.any()


def test_two_color_partition_exact():
    img, mask = two_color_image()
    seg = segment_simple(img, 2, np.random.default_rng(3))
    labels = seg.labels.astype(bool)
    assert np.array_equal(labels, mask) or np.array_equal(labels, ~mask)


def test_segment_deterministic():
    img = Image(np.random.default_rng(1).random((16, 16, 3)))
    a = segment_simple(img, 4, np.random.default_rng(7))
    b = segment_simple(img, 4, np.random.default_rng(7))
    assert np.array_equal(a.labels, b.labels)
    assert a.labels[0, 0] == 0


def test_k_exceeds_pixels():
    with pytest.raises(ValueError):
        segment_simple(Image(np.zeros((2, 2, 3))), 5)


def test_load_segmap_cases(tmp_path):
    zeros = SegMap(np.zeros((4, 5), dtype=int), 1)
    p = save_segmap(zeros, tmp_path / "z.png")
    seg = load_segmap(p, (4, 5))
    assert seg.num_classes == 1

    lab = np.zeros((4, 5), dtype=int)
    lab[1, 2] = 2
    p2 = save_segmap(SegMap(lab, 3), tmp_path / "l.pgm")
    seg2 = load_segmap(p2)
    assert seg2.num_classes == 3
    assert np.array_equal(seg2.labels, lab)

    with pytest.raises(ValueError):
        load_segmap(p2, (5, 5))


def test_one_hot_partition_and_inverse():
    lab = np.random.default_rng(2).integers(0, 5, (6, 7))
    seg = SegMap(lab, 5)
    oh = one_hot(seg).data
    assert oh.shape == (5, 6, 7)
    assert np.array_equal(oh.sum(axis=0), np.ones((6, 7)))
    assert np.array_equal(oh.argmax(axis=0), lab)
    single = one_hot(SegMap(np.zeros((3, 3), dtype=int), 1)).data
    assert np.array_equal(single, np.ones((1, 3, 3)))
