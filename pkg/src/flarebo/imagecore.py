"""Pixel buffers, colour-space conversions and PNG I/O.

Every buffer carries its value-range convention so stages can refuse input
they were not written for. Arithmetic is float64 throughout; quantisation to
8 bits happens only in ``write_png`` and ``quantise``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class ColorSpace(enum.Enum):
    SRGB_8BIT_RANGE = "srgb8"
    UNIT_RANGE = "unit"
    LAB = "lab"
    GRAY = "gray"


class ImageSpaceError(ValueError):
    """An image was handed to an operation that expects another space or shape."""


LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# D65 reference white, CIE 1931 2-degree observer
D65_WHITE = np.array([0.95047, 1.0, 1.08883])

_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)

_LAB_DELTA = 6.0 / 29.0


@dataclass(frozen=True)
class ImageBuffer:
    """An ``(H, W)`` or ``(H, W, 3)`` float64 array tagged with its colour space."""

    data: np.ndarray
    space: ColorSpace

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ImageSpaceError(f"expected HxW or HxWx3 data, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def with_data(self, data: np.ndarray, space: ColorSpace | None = None) -> "ImageBuffer":
        return ImageBuffer(data, self.space if space is None else space)

    def array_equal(self, other: "ImageBuffer") -> bool:
        return self.space == other.space and np.array_equal(self.data, other.data)


def require(img: ImageBuffer, space: ColorSpace | tuple, channels: int | None = None):
    spaces = space if isinstance(space, tuple) else (space,)
    if img.space not in spaces:
        names = "/".join(s.name for s in spaces)
        raise ImageSpaceError(f"expected {names} image, got {img.space.name}")
    if channels is not None and img.channels != channels:
        raise ImageSpaceError(f"expected {channels}-channel image, got {img.channels}")


def srgb8(data) -> ImageBuffer:
    """Wrap an array of 0..255 samples (any dtype) as an 8-bit-range RGB buffer."""
    return ImageBuffer(np.asarray(data, dtype=np.float64), ColorSpace.SRGB_8BIT_RANGE)


def to_unit(img: ImageBuffer) -> ImageBuffer:
    require(img, ColorSpace.SRGB_8BIT_RANGE)
    return ImageBuffer(img.data / 255.0, ColorSpace.UNIT_RANGE)


def from_unit(img: ImageBuffer) -> ImageBuffer:
    require(img, ColorSpace.UNIT_RANGE)
    return ImageBuffer(img.data * 255.0, ColorSpace.SRGB_8BIT_RANGE)


def to_gray(img: ImageBuffer) -> ImageBuffer:
    """BT.601 luma of an 8-bit-range RGB image."""
    require(img, ColorSpace.SRGB_8BIT_RANGE, channels=3)
    d = img.data
    y = 0.299 * d[..., 0] + 0.587 * d[..., 1] + 0.114 * d[..., 2]
    return ImageBuffer(y, ColorSpace.GRAY)


def clip(img: ImageBuffer, lo: float, hi: float) -> ImageBuffer:
    if not lo < hi:
        raise ValueError(f"clip bounds must satisfy lo < hi, got [{lo}, {hi}]")
    return img.with_data(np.clip(img.data, lo, hi))


def quantise(img: ImageBuffer) -> ImageBuffer:
    """Round an 8-bit-range buffer to integer sample values in [0, 255]."""
    require(img, (ColorSpace.SRGB_8BIT_RANGE, ColorSpace.GRAY))
    return img.with_data(np.clip(np.floor(img.data + 0.5), 0.0, 255.0))


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _lab_f(t):
    return np.where(t > _LAB_DELTA**3, np.cbrt(t), t / (3 * _LAB_DELTA**2) + 4.0 / 29.0)


def _lab_finv(t):
    return np.where(t > _LAB_DELTA, t**3, 3 * _LAB_DELTA**2 * (t - 4.0 / 29.0))


def rgb_to_lab(img: ImageBuffer) -> ImageBuffer:
    """sRGB (0..255) to CIELAB under D65; L* in [0, 100], a*/b* unscaled."""
    require(img, ColorSpace.SRGB_8BIT_RANGE, channels=3)
    lin = _srgb_to_linear(img.data / 255.0)
    xyz = lin @ _RGB_TO_XYZ.T / D65_WHITE
    f = _lab_f(xyz)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return ImageBuffer(lab, ColorSpace.LAB)


def lab_to_rgb(img: ImageBuffer) -> ImageBuffer:
    """Inverse of ``rgb_to_lab``; the result is clamped to [0, 255]."""
    require(img, ColorSpace.LAB, channels=3)
    lab = img.data
    fy = (lab[..., 0] + 16.0) / 116.0
    f = np.stack([fy + lab[..., 1] / 500.0, fy, fy - lab[..., 2] / 200.0], axis=-1)
    xyz = _lab_finv(f) * D65_WHITE
    lin = xyz @ _XYZ_TO_RGB.T
    rgb = _linear_to_srgb(lin) * 255.0
    return ImageBuffer(np.clip(rgb, 0.0, 255.0), ColorSpace.SRGB_8BIT_RANGE)


def read_png(path) -> ImageBuffer:
    """Load an 8-bit image file as RGB. Grey or RGBA files are converted."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return ImageBuffer(arr, ColorSpace.SRGB_8BIT_RANGE)


def write_png(img: ImageBuffer, path) -> Path:
    require(img, (ColorSpace.SRGB_8BIT_RANGE, ColorSpace.GRAY))
    arr = quantise(img).data.astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")
    return path
