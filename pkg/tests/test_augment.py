import math

import numpy as np
import pytest

from pehop.augment import (
    AugmentSpec,
    affine_matrix,
    compose,
    cutout,
    draw_params,
    random_contrast,
    sample_seed,
    shift_scale_rotate,
    warp_affine,
)

ZERO_SPEC = AugmentSpec(contrast_limit=0, shift_limit=0, scale_limit=0, rotate_limit_deg=0,
                        cutout_holes=0)


def test_contrast_zero_identity(rng):
    s = rng.random((9, 8, 8))
    assert np.array_equal(random_contrast(s, 0.0), s)


def test_contrast_constant_channel():
    s = np.full((9, 6, 6), 0.4)
    assert np.allclose(random_contrast(s, 0.2), s)


def test_contrast_range(rng):
    for _ in range(1000):
        s = rng.random((2, 5, 5))
        out = random_contrast(s, rng.uniform(-1, 1))
        assert out.min() >= 0 and out.max() <= 1


def test_ssr_identity(rng):
    s = rng.random((9, 16, 16))
    assert np.allclose(shift_scale_rotate(s, 0, 0, 0, 0), s, atol=1e-6)


@pytest.mark.parametrize("shape", [(9, 8, 8), (3, 15, 15)])
def test_rotation_90_exact(shape, rng):
    s = rng.random(shape)
    out = shift_scale_rotate(s, 0, 0, 0, 90)
    assert np.allclose(out, np.rot90(s, k=1, axes=(-2, -1)), atol=1e-6)


def test_rotation_sign_convention():
    s = np.zeros((1, 5, 5))
    s[0, 2, 4] = 1.0  # right of center
    out = shift_scale_rotate(s, 0, 0, 0, 90)
    assert out[0, 0, 2] == pytest.approx(1.0)  # counter-clockwise: moves to the top


def test_shift_whole_pixels(rng):
    s = rng.random((2, 10, 10))
    out = shift_scale_rotate(s, 0.2, 0.1, 0, 0)  # dx = 2 px, dy = 1 px
    assert np.allclose(out[:, 1:, 2:], s[:, :-1, :-2], atol=1e-12)
    assert np.all(out[:, :1] == 0) and np.all(out[:, :, :2] == 0)


def test_inverse_warp_recovers_interior():
    h = w = 64
    yy, xx = np.mgrid[0:h, 0:w]
    slab = np.stack([0.2 + 0.6 * xx / w, 0.1 + 0.8 * yy / h,
                     0.5 + 0.3 * np.cos(2 * np.pi * (xx + 2 * yy) / 256)])
    m = affine_matrix(0.04, -0.03, 0.1, 20.0, slab.shape)
    back = warp_affine(warp_affine(slab, m), np.linalg.inv(m))
    inner = (slice(None), slice(16, 48), slice(16, 48))
    assert np.abs(back[inner] - slab[inner]).max() < 1e-3


def test_geometry_shared_across_channels(rng):
    base = rng.random((12, 12))
    slab = np.stack([base] * 9)
    out = compose(AugmentSpec(), slab, seed=7)
    for c in range(1, 9):
        assert np.array_equal(out[c], out[0])


def test_cutout_zero_size_identity(rng):
    s = rng.random((9, 10, 10))
    assert np.array_equal(cutout(s, [(5, 5, 0, 0), (2, 2, 0, 3)]), s)


def test_cutout_known_region():
    s = np.ones((9, 10, 12))
    out = cutout(s, [(4, 6, 4, 2)])
    expected = np.ones((10, 12))
    expected[2:6, 5:7] = 0
    assert np.array_equal(out[0], expected) and np.array_equal(out[8], expected)


def test_cutout_clipped_at_border():
    out = cutout(np.ones((1, 6, 6)), [(0, 0, 4, 4)])
    assert out[0, :2, :2].sum() == 0 and out.sum() == 36 - 4


def test_cutout_area_bound():
    h, w = 64, 48
    spec = AugmentSpec(contrast_limit=0, shift_limit=0, scale_limit=0, rotate_limit_deg=0)
    bound = 2 * math.floor(0.4 * h) * math.floor(0.4 * w)
    for seed in range(1000):
        out = compose(spec, np.ones((1, h, w)), seed=seed)
        assert (out == 0).sum() <= bound


def test_draw_bounds():
    spec = AugmentSpec()
    shape = (9, 64, 64)
    for seed in range(1000):
        d = draw_params(spec, shape, seed)
        assert abs(d.alpha) <= 0.2
        dx, dy, scale, theta = d.affine
        assert abs(dx) <= 0.2 and abs(dy) <= 0.2 and abs(scale) <= 0.2 and abs(theta) <= 45
        assert len(d.holes) == 2
        for _, _, hh, ww in d.holes:
            assert 1 <= hh <= 25 and 1 <= ww <= 25


def test_compose_reproducible(rng):
    s = rng.random((9, 32, 32))
    assert np.array_equal(compose(AugmentSpec(), s, 11), compose(AugmentSpec(), s, 11))
    assert not np.array_equal(compose(AugmentSpec(), s, 11), compose(AugmentSpec(), s, 12))


def test_compose_zero_spec_identity(rng):
    s = rng.random((9, 16, 16))
    assert np.allclose(compose(ZERO_SPEC, s, 3), s, atol=1e-12)


def test_values_stay_in_unit_interval(rng):
    for seed in range(200):
        out = compose(AugmentSpec(), rng.random((3, 16, 16)), seed)
        assert out.min() >= 0 and out.max() <= 1


def test_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(rotate_limit_deg=270)
    with pytest.raises(ValueError):
        AugmentSpec(p_cutout=1.5)


def test_sample_seed_distinct():
    assert len({sample_seed(99, i) for i in range(100)}) == 100
