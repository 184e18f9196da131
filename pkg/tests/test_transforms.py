"""Tests for pixel-space preprocessing baselines"""

import numpy as np
import pytest

from illusion_guard.core.exceptions import ShapeError
from illusion_guard.engine.transforms import (
    PixelTransform,
    dct_quantize,
    gaussian_blur,
    hflip,
    transform_apply,
    translate,
)
from illusion_guard.schemas.config import TransformSpec


@pytest.fixture
def image():
    return np.random.default_rng(0).uniform(0.1, 0.9, size=(8, 8))


@pytest.fixture
def smooth_image():
    rows, cols = np.meshgrid(np.linspace(0, 1, 8), np.linspace(0, 1, 8), indexing="ij")
    return 0.3 + 0.2 * np.sin(2 * rows) + 0.2 * cols


class TestTransforms:
    """Test the individual image transforms"""

    def test_identity(self, image):
        """Test the identity transform"""
        r = PixelTransform(TransformSpec(name="identity"), (8, 8))
        np.testing.assert_array_equal(transform_apply(r, image.ravel()), image.ravel())

    def test_hflip_twice_is_identity(self, image):
        """Test that hflip is an involution"""
        np.testing.assert_array_equal(hflip(hflip(image)), image)
        assert not np.array_equal(hflip(image), image)

    def test_zero_shift_is_identity(self, image):
        """Test that max_shift 0 never moves the image"""
        r = PixelTransform(TransformSpec(name="translate", max_shift=0), (8, 8))
        for seed in range(5):
            np.testing.assert_array_equal(r.reconstruct(image.ravel(), seed), image.ravel())

    def test_translate_fills_with_zeros(self, image):
        """Test an integer shift by one row"""
        shifted = translate(image, (1, 0))
        np.testing.assert_array_equal(shifted[0], np.zeros(8))
        np.testing.assert_array_equal(shifted[1:], image[:-1])

    def test_blur_with_zero_sigma_is_identity(self, image):
        """Test that a delta kernel leaves the image unchanged"""
        np.testing.assert_array_equal(gaussian_blur(image, 0.0), image)

    def test_blur_smooths(self, image):
        """Test that blurring lowers pixel variance"""
        assert gaussian_blur(image, 1.0).var() < image.var()

    def test_fine_dct_is_near_identity(self, smooth_image):
        """Test fine quantization with every coefficient kept"""
        out = dct_quantize(smooth_image, levels=256, keep_fraction=1.0)
        assert np.max(np.abs(out - smooth_image)) < 1 / 128

    def test_dct_truncation_keeps_dc(self):
        """Test that keeping one coefficient per block keeps the block mean"""
        flat = np.full((8, 8), 0.4)
        out = dct_quantize(flat, levels=4096, keep_fraction=1 / 64)
        np.testing.assert_allclose(out, flat, atol=1e-3)

    def test_dct_pads_partial_blocks(self):
        """Test a grid whose sides are not multiples of eight"""
        image = np.random.default_rng(1).uniform(0, 1, size=(10, 12))
        out = dct_quantize(image, levels=16, keep_fraction=0.25)
        assert out.shape == (10, 12)
        assert out.min() >= 0.0
        assert out.max() <= 1.0

    def test_neutral_jitter_is_identity(self, image):
        """Test contrast 1 and brightness 0"""
        spec = TransformSpec(name="jitter", contrast=(1.0, 1.0), brightness=(0.0, 0.0))
        r = PixelTransform(spec, (8, 8))
        np.testing.assert_allclose(r.reconstruct(image.ravel(), 3), image.ravel())


class TestPixelTransform:
    """Test the sanitizer wrapper"""

    def test_wrong_length_is_shape_error(self):
        """Test that a pixel vector must match the grid"""
        r = PixelTransform(TransformSpec(name="hflip"), (8, 8))
        with pytest.raises(ShapeError):
            r.reconstruct(np.zeros(60), 0)

    def test_stochastic_flags(self):
        """Test which transforms draw randomness"""
        assert PixelTransform(TransformSpec(name="translate"), (8, 8)).is_stochastic
        assert PixelTransform(TransformSpec(name="jitter"), (8, 8)).is_stochastic
        assert not PixelTransform(TransformSpec(name="gaussian_blur"), (8, 8)).is_stochastic

    def test_seeded_draws_repeat(self, image):
        """Test that one draw seed always gives the same jitter"""
        r = PixelTransform(TransformSpec(name="jitter"), (8, 8))
        first = r.reconstruct(image.ravel(), 4)
        np.testing.assert_array_equal(first, r.reconstruct(image.ravel(), 4))

    def test_inverted_range_rejected(self):
        """Test that (low, high) ranges must be ordered"""
        with pytest.raises(ValueError, match="exceeds"):
            TransformSpec(name="jitter", contrast=(1.3, 0.7))
