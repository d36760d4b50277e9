"""The eight-stage low-light enhancement chain.

Stages run in a fixed order::

    to_unit -> lime -> gamma/linear -> grey world -> chroma median
            -> bilateral -> NLM -> post smoothing

Each stage is a pure function of its input buffer and its own parameters;
stages with an "off" setting return their input object unchanged.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from . import _kernels
from .imagecore import (
    ColorSpace,
    ImageBuffer,
    ImageSpaceError,
    lab_to_rgb,
    quantise,
    require,
    rgb_to_lab,
    to_unit,
)
from .params import ParamBounds, ParamVector

GUIDED_RADIUS = 15
GUIDED_EPS = 0.01
LIME_EPS = 1e-4
AWB_EPS = 1e-6
BILATERAL_SIGMA_SPATIAL = 75.0
BILATERAL_SIGMA_RANGE = 75.0
NLM_TEMPLATE = 7
NLM_SEARCH = 21
POST_SMOOTH_SKIP = 0.05

# scale from float L*/a*/b* into the 0..255 working range used by the chroma
# median and NLM stages
_L_TO_8BIT = 255.0 / 100.0
_AB_OFFSET = 128.0


def illumination_map(img: ImageBuffer) -> ImageBuffer:
    require(img, ColorSpace.UNIT_RANGE, channels=3)
    return ImageBuffer(img.data.max(axis=2), ColorSpace.UNIT_RANGE)


def _box_mean(a, radius):
    return ndimage.uniform_filter(a, size=2 * radius + 1, mode="nearest")


def guided_filter(guide: ImageBuffer, src: ImageBuffer, radius: int = GUIDED_RADIUS, eps: float = GUIDED_EPS) -> ImageBuffer:
    """Grey-guide guided filter (He et al.) built from box means with edge replication."""
    require(guide, ColorSpace.UNIT_RANGE, channels=1)
    require(src, ColorSpace.UNIT_RANGE, channels=1)
    if guide.shape != src.shape:
        raise ImageSpaceError(f"guide {guide.shape} and source {src.shape} differ in size")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if not eps > 0:
        raise ValueError("eps must be > 0")
    I, p = guide.data, src.data
    mean_I = _box_mean(I, radius)
    mean_p = _box_mean(p, radius)
    cov_Ip = _box_mean(I * p, radius) - mean_I * mean_p
    var_I = _box_mean(I * I, radius) - mean_I * mean_I
    a = cov_Ip / (var_I + eps)
    b = mean_p - a * mean_I
    q = _box_mean(a, radius) * I + _box_mean(b, radius)
    return ImageBuffer(q, ColorSpace.UNIT_RANGE)


def stage_lime(img: ImageBuffer, lam: float) -> ImageBuffer:
    require(img, ColorSpace.UNIT_RANGE, channels=3)
    if lam == 0:
        return img
    L = illumination_map(img)
    L_hat = np.clip(guided_filter(L, L).data, 0.0, None)
    out = img.data / (L_hat[..., None] ** lam + LIME_EPS)
    return ImageBuffer(np.clip(out, 0.0, 1.0), ColorSpace.UNIT_RANGE)


def stage_gamma_linear(img: ImageBuffer, alpha: float, beta: float, gamma: float) -> ImageBuffer:
    require(img, ColorSpace.UNIT_RANGE, channels=3)
    out = alpha * img.data**gamma * 255.0 + beta
    return ImageBuffer(np.clip(out, 0.0, 255.0), ColorSpace.SRGB_8BIT_RANGE)


def grey_world_gains(img: ImageBuffer) -> np.ndarray:
    require(img, ColorSpace.SRGB_8BIT_RANGE, channels=3)
    mu = img.data.reshape(-1, 3).mean(axis=0)
    return mu.mean() / (mu + AWB_EPS)


def stage_grey_world(img: ImageBuffer) -> ImageBuffer:
    gains = grey_world_gains(img)
    return ImageBuffer(np.clip(img.data * gains, 0.0, 255.0), ColorSpace.SRGB_8BIT_RANGE)


def chroma_kernel_size(h_c: float) -> int:
    return max(3, 2 * int(math.floor(h_c / 10.0)) + 1)


def stage_chroma_median(img: ImageBuffer, h_c: float) -> ImageBuffer:
    require(img, ColorSpace.SRGB_8BIT_RANGE, channels=3)
    if h_c == 0:
        return img
    k = chroma_kernel_size(h_c)
    lab = rgb_to_lab(img).data.copy()
    for ch in (1, 2):
        q = np.clip(np.floor(lab[..., ch] + _AB_OFFSET + 0.5), 0.0, 255.0)
        lab[..., ch] = ndimage.median_filter(q, size=k, mode="nearest") - _AB_OFFSET
    return lab_to_rgb(ImageBuffer(lab, ColorSpace.LAB))


def bilateral_diameter(d: float) -> int:
    return int(math.floor(d + 0.5))


def bilateral_offsets(diameter: int, sigma_spatial: float = BILATERAL_SIGMA_SPATIAL):
    """Disc of offsets with ``|offset| <= diameter / 2`` and their spatial weights."""
    r = diameter // 2
    ys, xs, ws = [], [], []
    two_ss2 = 2.0 * sigma_spatial * sigma_spatial
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            r2 = dy * dy + dx * dx
            if 4 * r2 <= diameter * diameter:
                ys.append(dy)
                xs.append(dx)
                ws.append(math.exp(-float(r2) / two_ss2))
    return np.array(ys, dtype=np.int64), np.array(xs, dtype=np.int64), np.array(ws)


def bilateral_filter(data: np.ndarray, diameter: int,
                     sigma_spatial: float = BILATERAL_SIGMA_SPATIAL,
                     sigma_range: float = BILATERAL_SIGMA_RANGE) -> np.ndarray:
    oy, ox, ws = bilateral_offsets(diameter, sigma_spatial)
    pad = diameter // 2
    squeeze = data.ndim == 2
    arr = data[..., None] if squeeze else data
    padded = np.pad(arr, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    out = _kernels.bilateral_padded(
        np.ascontiguousarray(padded), arr.shape[0], arr.shape[1], pad, oy, ox, ws,
        2.0 * sigma_range * sigma_range,
    )
    return out[..., 0] if squeeze else out


def stage_bilateral(img: ImageBuffer, d: float) -> ImageBuffer:
    require(img, ColorSpace.SRGB_8BIT_RANGE, channels=3)
    diameter = bilateral_diameter(d)
    if diameter < 1:
        return img
    return ImageBuffer(bilateral_filter(img.data, diameter), ColorSpace.SRGB_8BIT_RANGE)


def nlm_filter(data: np.ndarray, h: float, template: int = NLM_TEMPLATE, search: int = NLM_SEARCH) -> np.ndarray:
    """Non-local means over an ``(H, W)`` or ``(H, W, C)`` array.

    The patch distance is the mean squared difference over the template
    window and all channels, so ``h`` is in sample units whatever the
    patch size. Weights are ``exp(-distance / h**2)``.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    half_t, half_s = template // 2, search // 2
    pad = half_t + half_s
    squeeze = data.ndim == 2
    arr = data[..., None] if squeeze else data
    padded = np.pad(arr, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    out = _kernels.nlm_padded(np.ascontiguousarray(padded), arr.shape[0], arr.shape[1], half_t, half_s, h * h)
    return out[..., 0] if squeeze else out


def stage_nlm(img: ImageBuffer, h: float, h_c: float) -> ImageBuffer:
    """NLM on the lightness plane with strength ``h`` and jointly on a*/b* with ``h + h_c``."""
    require(img, ColorSpace.SRGB_8BIT_RANGE, channels=3)
    lab = rgb_to_lab(img).data
    light = nlm_filter(lab[..., 0] * _L_TO_8BIT, h)
    chroma = nlm_filter(lab[..., 1:] + _AB_OFFSET, h + h_c)
    out = np.empty_like(lab)
    out[..., 0] = light / _L_TO_8BIT
    out[..., 1:] = chroma - _AB_OFFSET
    return lab_to_rgb(ImageBuffer(out, ColorSpace.LAB))


def gaussian_kernel(sigma: float) -> np.ndarray:
    half = int(math.ceil(3.0 * sigma))
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def stage_post_smooth(img: ImageBuffer, sigma_s: float) -> ImageBuffer:
    if sigma_s <= POST_SMOOTH_SKIP:
        return img
    k = gaussian_kernel(sigma_s)
    out = ndimage.correlate1d(img.data, k, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=1, mode="nearest")
    return img.with_data(out)


STAGE_NAMES = ("lime", "gamma_linear", "grey_world", "chroma_median", "bilateral", "nlm", "post_smooth")


def run_stages(img: ImageBuffer, theta: ParamVector, skip=()) -> ImageBuffer:
    """Apply the chain without bounds checks or final quantisation.

    ``skip`` names stages to leave out; used to compare a bypassed stage
    against its removal.
    """
    unknown = set(skip) - set(STAGE_NAMES)
    if unknown:
        raise ValueError(f"unknown stages: {sorted(unknown)}")
    x = to_unit(img)
    if "lime" not in skip:
        x = stage_lime(x, theta.lam)
    if "gamma_linear" in skip:
        x = ImageBuffer(x.data * 255.0, ColorSpace.SRGB_8BIT_RANGE)
    else:
        x = stage_gamma_linear(x, theta.alpha, theta.beta, theta.gamma)
    if "grey_world" not in skip:
        x = stage_grey_world(x)
    if "chroma_median" not in skip:
        x = stage_chroma_median(x, theta.h_c)
    if "bilateral" not in skip:
        x = stage_bilateral(x, theta.d)
    if "nlm" not in skip:
        x = stage_nlm(x, theta.h, theta.h_c)
    if "post_smooth" not in skip:
        x = stage_post_smooth(x, theta.sigma_s)
    return x


def enhance(img: ImageBuffer, theta: ParamVector, bounds: ParamBounds | None = None) -> ImageBuffer:
    """Run the full chain on an 8-bit RGB image and return 8-bit RGB."""
    require(img, ColorSpace.SRGB_8BIT_RANGE, channels=3)
    (bounds or ParamBounds()).check(theta)
    return quantise(run_stages(img, theta))
