import math
import warnings

import numpy as np
import pytest
from scipy import ndimage

from scribble2label.core import BG, FG
from scribble2label.errors import InvalidInputError
from scribble2label.scribblegen import (
    SkeletonSet, generate_scribbles, run_length, sample_scribbles, skeleton_components, skeletonize,
)
from scribble2label.synthdata import SynthConfig, generate

EIGHT = np.ones((3, 3), dtype=bool)


def test_single_pixel_component_is_its_own_skeleton():
    m = np.zeros((7, 7), dtype=np.uint8)
    m[3, 3] = 1
    sk = skeletonize(m)
    assert sk.fg_skeleton == {(3, 3)}


def test_tiny_square_keeps_a_pixel():
    m = np.zeros((8, 8), dtype=np.uint8)
    m[2:4, 2:4] = 1
    sk = skeletonize(m)
    assert len(sk.fg_skeleton) >= 1 and sk.fg_skeleton <= {(2, 2), (2, 3), (3, 2), (3, 3)}


def test_bar_skeleton_contains_horizontal_path():
    m = np.zeros((5, 13), dtype=np.uint8)
    m[2, 2:11] = 1
    sk = skeletonize(m)
    assert sk.fg_skeleton <= set(zip(*np.nonzero(m)))
    cols = sorted(c for r, c in sk.fg_skeleton)
    assert len(cols) >= 2 and cols == list(range(cols[0], cols[-1] + 1))


def test_skeleton_containment_on_random_blobs():
    rng = np.random.default_rng(0)
    for _ in range(5):
        m = ndimage.binary_opening(rng.random((32, 32)) > 0.55, iterations=1).astype(np.uint8)
        sk = skeletonize(m)
        assert not np.any(sk.fg & (m == 0))
        assert not np.any(sk.bg & (m == 1))
        # every connected component of either class keeps skeleton pixels
        for region, skel in ((m == 1, sk.fg), (m == 0, sk.bg)):
            lab, k = ndimage.label(region, structure=EIGHT)
            for i in range(1, k + 1):
                assert skel[lab == i].any()


def test_skeleton_is_thin():
    m = np.zeros((30, 30), dtype=np.uint8)
    m[5:25, 8:22] = 1
    sk = skeletonize(m)
    # no 2x2 block fully inside the skeleton
    blocks = sk.fg[:-1, :-1] & sk.fg[1:, :-1] & sk.fg[:-1, 1:] & sk.fg[1:, 1:]
    assert not blocks.any()


def test_empty_class_warns():
    with pytest.warns(UserWarning):
        sk = skeletonize(np.zeros((6, 6), dtype=np.uint8))
    assert not sk.fg.any() and sk.bg.any()


def line_skeleton(n):
    fg = np.zeros((3, n + 2), dtype=bool)
    fg[1, 1:n + 1] = True
    return SkeletonSet(fg=fg, bg=np.zeros_like(fg))


def test_full_fraction_keeps_full_skeleton():
    sk = line_skeleton(20)
    s = sample_scribbles(sk, 1.0, seed=3)
    assert np.array_equal(s.fg, sk.fg)


def test_ten_percent_of_hundred():
    s = sample_scribbles(line_skeleton(100), 0.1, seed=0)
    assert s.fg.sum() == 10
    cols = np.nonzero(s.fg[1])[0]
    # a contiguous (possibly wrapped) run along the line
    gaps = np.diff(cols)
    assert (gaps == 1).sum() >= len(cols) - 2


def test_sampling_determinism_and_nesting():
    m = generate(SynthConfig(n_images=1, seed=4))[0].mask
    a = generate_scribbles(m, 0.3, seed=11)
    b = generate_scribbles(m, 0.3, seed=11)
    assert a == b
    small, big = generate_scribbles(m, 0.1, seed=11), generate_scribbles(m, 0.5, seed=11)
    assert np.all(small.scribbled <= big.scribbled)
    assert np.all(small.codes[small.scribbled] == big.codes[small.scribbled])


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
def test_invalid_fraction(p):
    with pytest.raises(InvalidInputError):
        sample_scribbles(line_skeleton(5), p)


def test_iid_mode_counts():
    sk = line_skeleton(40)
    s = sample_scribbles(sk, 0.25, seed=1, mode="iid")
    assert s.fg.sum() == 10


def test_two_cells_both_scribbled():
    m = np.zeros((20, 30), dtype=np.uint8)
    m[3:9, 3:10] = 1
    m[12:18, 18:27] = 1
    for p in (0.1, 0.3, 1.0):
        s = generate_scribbles(m, p, seed=0)
        lab, k = ndimage.label(m)
        assert k == 2
        for i in (1, 2):
            assert s.fg[lab == i].any()
        assert not np.any(s.bg & (m == 1))
        assert not np.any(s.fg & (m == 0))


def test_run_length_rounding():
    assert run_length(0.3, 10) == 3
    assert run_length(0.1, 100) == 10
    assert run_length(0.1, 5) == 1
    assert run_length(0.5, 7) == 4


def test_aggregate_fraction_close_to_p():
    items = generate(SynthConfig(n_images=6, seed=2))
    kept = total = 0
    for it in items:
        sk = skeletonize(it.mask)
        s = sample_scribbles(sk, 0.3, seed=0)
        kept += s.n_scribbled()
        total += int(sk.fg.sum() + sk.bg.sum())
    assert abs(kept / total - 0.3) < 0.05
