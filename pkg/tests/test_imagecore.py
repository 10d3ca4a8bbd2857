import colorsys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from shadowlab import imagecore
from shadowlab.exceptions import InvalidInputError


def window_oracle(img, radius, reduce):
    h, w = img.shape
    out = np.empty_like(img)
    for i in range(h):
        for j in range(w):
            vals = []
            for di in range(-radius, radius + 1):
                for dj in range(-radius, radius + 1):
                    ii = min(max(i + di, 0), h - 1)
                    jj = min(max(j + dj, 0), w - 1)
                    vals.append(img[ii, jj])
            out[i, j] = reduce(sorted(vals))
    return out


unit_images = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
                     elements=st.floats(0, 1))


class TestToGray:
    def test_white(self):
        assert np.all(imagecore.to_gray(np.ones((3, 4, 3))) == 1.0)

    def test_pure_red(self):
        red = np.zeros((2, 2, 3))
        red[..., 0] = 1.0
        np.testing.assert_array_equal(imagecore.to_gray(red), 0.299)

    def test_matches_per_pixel_loop(self, rng):
        img = rng.random((4, 4, 3))
        gray = imagecore.to_gray(img)
        for i in range(4):
            for j in range(4):
                r, g, b = img[i, j]
                assert gray[i, j] == pytest.approx(0.299 * r + 0.587 * g + 0.114 * b, abs=1e-15)

    def test_rejects_gray_input(self):
        with pytest.raises(InvalidInputError):
            imagecore.to_gray(np.ones((4, 4)))


class TestDilate:
    def test_radius_zero_identity(self, rng):
        img = rng.random((5, 6))
        np.testing.assert_array_equal(imagecore.dilate(img, 0), img)

    @pytest.mark.parametrize("radius", [1, 2, 5])
    def test_constant(self, radius):
        np.testing.assert_array_equal(imagecore.dilate(np.full((7, 7), 0.3), radius), 0.3)

    def test_dark_dot_erased(self):
        img = np.ones((7, 7))
        img[3, 3] = 0.0
        out = imagecore.dilate(img, 1)
        np.testing.assert_array_equal(out, window_oracle(img, 1, max))
        np.testing.assert_array_equal(out, 1.0)

    @pytest.mark.parametrize("radius", [1, 2])
    def test_matches_window_max(self, rng, radius):
        img = rng.random((9, 7))
        np.testing.assert_array_equal(imagecore.dilate(img, radius),
                                      window_oracle(img, radius, max))

    @settings(max_examples=40, deadline=None)
    @given(unit_images, st.integers(0, 3), st.floats(0, 1))
    def test_monotone(self, a, radius, bump):
        b = np.clip(a + bump, 0, 1)
        assert np.all(imagecore.dilate(a, radius) <= imagecore.dilate(b, radius))

    def test_negative_radius(self):
        with pytest.raises(InvalidInputError):
            imagecore.dilate(np.ones((3, 3)), -1)


class TestMedian:
    def test_radius_zero_identity(self, rng):
        img = rng.random((5, 6))
        np.testing.assert_array_equal(imagecore.median_filter(img, 0), img)

    def test_constant(self):
        np.testing.assert_array_equal(imagecore.median_filter(np.full((6, 6), 0.7), 2), 0.7)

    def test_salt_and_pepper(self, rng):
        img = np.full((9, 9), 0.5)
        for i, j in [(1, 1), (4, 4), (7, 2), (2, 6)]:
            img[i, j] = 1.0 if (i + j) % 2 else 0.0
        out = imagecore.median_filter(img, 1)
        np.testing.assert_array_equal(out, window_oracle(img, 1, lambda v: v[len(v) // 2]))
        np.testing.assert_array_equal(out, 0.5)

    @settings(max_examples=40, deadline=None)
    @given(unit_images, st.integers(0, 2))
    def test_outputs_are_input_values(self, img, radius):
        out = imagecore.median_filter(img, radius)
        assert np.isin(out, img).all()


class TestYCrCb:
    def test_white_black(self):
        np.testing.assert_allclose(imagecore.rgb_to_ycrcb(np.ones((1, 1, 3)))[0, 0],
                                   [1.0, 0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(imagecore.rgb_to_ycrcb(np.zeros((1, 1, 3)))[0, 0],
                                   [0.0, 0.5, 0.5], atol=1e-12)

    def test_matrix_oracle(self, rng):
        img = rng.random((3, 3, 3))
        m = np.array([[0.299, 0.587, 0.114],
                      [0.5, -0.418688, -0.081312],
                      [-0.168736, -0.331264, 0.5]])
        for i in range(3):
            for j in range(3):
                expected = m @ img[i, j] + np.array([0.0, 0.5, 0.5])
                np.testing.assert_allclose(imagecore.rgb_to_ycrcb(img)[i, j], expected,
                                           atol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (4, 5, 3), elements=st.floats(0, 1)))
    def test_y_equals_gray_exactly(self, img):
        np.testing.assert_array_equal(imagecore.rgb_to_ycrcb(img)[..., 0],
                                      imagecore.to_gray(img))


class TestHSV:
    def test_gray(self):
        h, s, v = imagecore.rgb_to_hsv(np.full((1, 1, 3), 0.5))[0, 0]
        assert s == 0 and v == 0.5

    def test_red(self):
        np.testing.assert_allclose(imagecore.rgb_to_hsv(np.array([[[1.0, 0, 0]]]))[0, 0],
                                   [0, 1, 1])

    def test_colorsys_oracle(self, rng):
        img = rng.random((6, 6, 3))
        out = imagecore.rgb_to_hsv(img)
        for i in range(6):
            for j in range(6):
                np.testing.assert_allclose(out[i, j], colorsys.rgb_to_hsv(*img[i, j]),
                                           atol=1e-12)


class TestAffineCrop:
    def test_identity(self, rng):
        img = rng.random((512, 512, 3))
        np.testing.assert_allclose(imagecore.affine_crop(img), img, atol=1e-12)

    def test_full_turn(self, rng):
        img = rng.random((64, 64))
        np.testing.assert_allclose(imagecore.affine_crop(img, rotation=360.0, size=64),
                                   imagecore.affine_crop(img, rotation=0.0, size=64), atol=1e-6)

    def test_quarter_turn_is_rot90(self, rng):
        img = rng.random((48, 48))
        np.testing.assert_allclose(imagecore.affine_crop(img, rotation=90.0, size=48),
                                   np.rot90(img), atol=1e-6)

    def test_deterministic(self, rng):
        img = rng.random((40, 50, 3))
        a = imagecore.affine_crop(img, 1.3, 17.0, (2.5, -3.0), size=32)
        b = imagecore.affine_crop(img, 1.3, 17.0, (2.5, -3.0), size=32)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (32, 32, 3)

    @pytest.mark.parametrize("scale", [0.0, -1.0])
    def test_bad_scale(self, scale):
        with pytest.raises(InvalidInputError):
            imagecore.affine_crop(np.ones((8, 8)), scale=scale, size=8)


class TestHistogramEqualize:
    def test_constant(self):
        out = imagecore.histogram_equalize(np.full((5, 5), 0.4))
        assert np.unique(out).size == 1

    def test_two_levels(self):
        img = np.full((4, 4), 0.2)
        img[:, 2:] = 0.8
        out = imagecore.histogram_equalize(img)
        np.testing.assert_array_equal(out[:, :2], 0.5)
        np.testing.assert_array_equal(out[:, 2:], 1.0)

    def test_flattens_skewed_histogram(self, rng):
        img = rng.random((64, 64)) ** 3
        out = imagecore.histogram_equalize(img)
        bins = np.linspace(0, 1, 17)
        assert np.var(np.histogram(out, bins)[0]) < np.var(np.histogram(img, bins)[0])

    @settings(max_examples=40, deadline=None)
    @given(unit_images)
    def test_monotone_and_bounded(self, img):
        out = imagecore.histogram_equalize(img)
        assert out.min() >= 0 and out.max() <= 1
        order = np.argsort(img, axis=None, kind="stable")
        assert np.all(np.diff(out.ravel()[order]) >= 0)

    def test_ignore_zero_keeps_zeros(self, rng):
        img = rng.random((16, 16))
        img[:8] = 0.0
        out = imagecore.histogram_equalize(img, ignore_zero=True)
        np.testing.assert_array_equal(out[:8], 0.0)
        assert out[8:].min() > 0


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 1), st.integers(0, 3))
def test_filters_idempotent_on_constants(value, radius):
    img = np.full((6, 7), value)
    np.testing.assert_array_equal(imagecore.dilate(img, radius), img)
    np.testing.assert_array_equal(imagecore.median_filter(img, radius), img)


def test_pure(rng):
    img = rng.random((10, 10, 3))
    for fn in (imagecore.to_gray, imagecore.rgb_to_ycrcb, imagecore.rgb_to_hsv):
        np.testing.assert_array_equal(fn(img), fn(img.copy()))


def test_rejects_out_of_range():
    with pytest.raises(InvalidInputError):
        imagecore.dilate(np.full((3, 3), 1.5), 1)


def test_block_mean():
    field = np.arange(16.0).reshape(4, 4)
    np.testing.assert_array_equal(imagecore.block_mean(field, 2), [[2.5, 4.5], [10.5, 12.5]])
    assert imagecore.block_mean(np.ones((5, 6)), 4).shape == (2, 2)
