"""Pixel-space preprocessing baselines on the H x W grid."""

from typing import Tuple

import numpy as np
from scipy import fft, ndimage

from ..core.exceptions import ShapeError
from ..schemas.config import TransformSpec
from .reconstruct import Reconstructor

BLOCK = 8


def _zigzag_rank(block: int = BLOCK) -> np.ndarray:
    """Rank of each DCT coefficient by frequency, (u + v) first, then u."""
    u, v = np.meshgrid(np.arange(block), np.arange(block), indexing="ij")
    order = np.lexsort((u.ravel(), (u + v).ravel()))
    rank = np.empty(block * block, dtype=int)
    rank[order] = np.arange(block * block)
    return rank.reshape(block, block)


def dct_quantize(image: np.ndarray, levels: int, keep_fraction: float) -> np.ndarray:
    """Blockwise 8x8 DCT, low-frequency truncation and uniform quantization.

    Coefficients of the orthonormal DCT are quantized with step ``1 / levels``.
    """
    height, width = image.shape
    pad_h, pad_w = (-height) % BLOCK, (-width) % BLOCK
    padded = np.pad(image, ((0, pad_h), (0, pad_w)), mode="edge")
    keep = int(np.ceil(keep_fraction * BLOCK * BLOCK))
    mask = _zigzag_rank() < keep
    step = 1.0 / levels

    out = np.empty_like(padded)
    for row in range(0, padded.shape[0], BLOCK):
        for col in range(0, padded.shape[1], BLOCK):
            coefficients = fft.dctn(padded[row : row + BLOCK, col : col + BLOCK], norm="ortho")
            coefficients = np.where(mask, np.round(coefficients / step) * step, 0.0)
            out[row : row + BLOCK, col : col + BLOCK] = fft.idctn(coefficients, norm="ortho")
    return np.clip(out[:height, :width], 0.0, 1.0)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return image.copy()
    return ndimage.gaussian_filter(image, sigma=sigma, mode="reflect", truncate=4.0)


def translate(image: np.ndarray, shift: Tuple[int, int]) -> np.ndarray:
    """Integer shift with zero fill."""
    return ndimage.shift(image, shift, order=0, mode="constant", cval=0.0)


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def jitter(image: np.ndarray, contrast: float, brightness: float) -> np.ndarray:
    return np.clip(contrast * image + brightness, 0.0, 1.0)


class PixelTransform(Reconstructor):
    """A named pixel transform wrapped as a sanitizer."""

    kind = "transform"

    def __init__(self, spec: TransformSpec, grid_shape: Tuple[int, int], name: str = "") -> None:
        super().__init__(name or spec.name)
        self.spec = spec
        self.grid_shape = tuple(grid_shape)

    @property
    def is_stochastic(self) -> bool:
        return self.spec.name in {"translate", "jitter"}

    def _grid(self, x: np.ndarray) -> np.ndarray:
        height, width = self.grid_shape
        if x.ndim != 1 or x.shape[0] != height * width:
            raise ShapeError(
                f"pixel vector of shape {x.shape} does not match a {height}x{width} grid",
                {"shape": list(x.shape), "grid": [height, width]},
            )
        return x.reshape(height, width)

    def reconstruct(self, x: np.ndarray, draw_seed: int = 0) -> np.ndarray:
        image = self._grid(x)
        spec = self.spec
        rng = np.random.default_rng(draw_seed)
        if spec.name == "identity":
            out = image.copy()
        elif spec.name == "dct_quantize":
            out = dct_quantize(image, spec.levels, spec.keep_fraction)
        elif spec.name == "gaussian_blur":
            out = gaussian_blur(image, spec.blur_sigma)
        elif spec.name == "translate":
            shift = rng.integers(-spec.max_shift, spec.max_shift + 1, size=2)
            out = translate(image, (int(shift[0]), int(shift[1])))
        elif spec.name == "hflip":
            out = hflip(image)
        else:
            contrast = rng.uniform(*spec.contrast)
            brightness = rng.uniform(*spec.brightness)
            out = jitter(image, contrast, brightness)
        return np.clip(out, 0.0, 1.0).ravel()


def transform_apply(r: PixelTransform, x: np.ndarray, draw_seed: int = 0) -> np.ndarray:
    """Apply a pixel-transform baseline."""
    return r.reconstruct(x, draw_seed)
