import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_rgb
from flarebo.imagecore import (
    ColorSpace,
    ImageBuffer,
    ImageSpaceError,
    clip,
    from_unit,
    lab_to_rgb,
    read_png,
    rgb_to_lab,
    srgb8,
    to_gray,
    to_unit,
    write_png,
)


def uniform(value, h=4, w=5):
    return srgb8(np.broadcast_to(np.asarray(value, dtype=float), (h, w, 3)))


def reference_lab(rgb):
    """Textbook sRGB -> XYZ(D65) -> CIELAB for a single pixel."""

    def lin(c):
        c = c / 255.0
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    r, g, b = (lin(c) for c in rgb)
    X = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047
    Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b
    Z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883

    def f(t):
        return t ** (1 / 3) if t > (6 / 29) ** 3 else t / (3 * (6 / 29) ** 2) + 4 / 29

    return 116 * f(Y) - 16, 500 * (f(X) - f(Y)), 200 * (f(Y) - f(Z))


class TestToUnit:
    def test_zero(self):
        assert np.all(to_unit(uniform(0)).data == 0)

    def test_max(self):
        assert np.all(to_unit(uniform(255)).data == 1.0)

    def test_51(self):
        out = to_unit(uniform(51))
        assert out.space is ColorSpace.UNIT_RANGE
        np.testing.assert_allclose(out.data, 0.2, rtol=0, atol=1e-15)

    def test_wrong_space(self):
        with pytest.raises(ImageSpaceError):
            to_unit(to_unit(uniform(3)))

    def test_round_trip(self, rng):
        img = srgb8(rng.random((16, 16, 3)) * 255)
        back = from_unit(to_unit(img))
        assert np.max(np.abs(back.data - img.data)) <= 1e-6


class TestToGray:
    def test_grey_fixed_point(self):
        np.testing.assert_allclose(to_gray(uniform(100)).data, 100.0, atol=1e-6)

    def test_red(self):
        np.testing.assert_allclose(to_gray(uniform((255, 0, 0))).data, 76.245, atol=1e-9)

    def test_green(self):
        np.testing.assert_allclose(to_gray(uniform((0, 255, 0))).data, 149.685, atol=1e-9)

    def test_needs_three_channels(self):
        with pytest.raises(ImageSpaceError):
            to_gray(ImageBuffer(np.zeros((3, 3)), ColorSpace.SRGB_8BIT_RANGE))

    @given(st.floats(0, 255))
    def test_any_grey(self, v):
        assert abs(to_gray(uniform(v, 2, 2)).data[0, 0] - v) <= 1e-6


class TestLab:
    def test_white(self):
        lab = rgb_to_lab(uniform(255)).data[0, 0]
        assert lab[0] == pytest.approx(100.0, abs=1e-4)
        assert abs(lab[1]) <= 0.5 and abs(lab[2]) <= 0.5

    def test_black(self):
        np.testing.assert_allclose(rgb_to_lab(uniform(0)).data, 0.0, atol=1e-12)

    def test_mid_grey(self):
        lab = rgb_to_lab(uniform(119)).data[0, 0]
        L, a, b = reference_lab((119, 119, 119))
        assert lab[0] == pytest.approx(L, abs=1e-9)
        assert abs(lab[1]) < 1e-3 and abs(lab[2]) < 1e-3

    def test_against_skimage(self, rng):
        skcolor = pytest.importorskip("skimage.color")
        img = random_rgb(rng, 8, 8)
        ours = rgb_to_lab(img).data
        theirs = skcolor.rgb2lab(img.data / 255.0, illuminant="D65", observer="2")
        # skimage rounds the sRGB->XYZ matrix to 6 digits instead of 7
        np.testing.assert_allclose(ours, theirs, atol=1e-2)

    def test_round_trip_1000_colours(self, rng):
        img = srgb8(rng.integers(0, 256, size=(1000, 1, 3)))
        back = lab_to_rgb(rgb_to_lab(img))
        assert np.max(np.abs(back.data - img.data)) <= 1.0

    def test_inverse_clamps(self):
        lab = ImageBuffer(np.array([[[100.0, 120.0, -120.0]]]), ColorSpace.LAB)
        rgb = lab_to_rgb(lab).data
        assert rgb.min() >= 0 and rgb.max() <= 255

    def test_wrong_space(self):
        with pytest.raises(ImageSpaceError):
            lab_to_rgb(uniform(10))

    def test_pure(self, rng):
        img = random_rgb(rng, 6, 6)
        assert np.array_equal(rgb_to_lab(img).data, rgb_to_lab(img).data)


class TestClip:
    @pytest.mark.parametrize("value,expected", [(300, 255), (-7, 0), (128, 128)])
    def test_examples(self, value, expected):
        img = ImageBuffer(np.full((2, 2), float(value)), ColorSpace.SRGB_8BIT_RANGE)
        assert np.all(clip(img, 0, 255).data == expected)

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            clip(uniform(0), 5, 5)

    @settings(max_examples=50)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-1e3, 1e3)))
    def test_idempotent(self, data):
        img = ImageBuffer(data, ColorSpace.SRGB_8BIT_RANGE)
        once = clip(img, 0, 255)
        assert np.array_equal(clip(once, 0, 255).data, once.data)


def test_data_length_matches_dims(rng):
    img = random_rgb(rng, 7, 9)
    assert img.data.size == img.width * img.height * img.channels
    assert (img.width, img.height, img.channels) == (9, 7, 3)


def test_png_round_trip(tmp_path, rng):
    img = random_rgb(rng, 10, 12)
    path = write_png(img, tmp_path / "x.png")
    back = read_png(path)
    assert back.array_equal(img)
