"""Full-reference fidelity metrics and the composite score the optimiser maximises."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import ColorSpace, ImageBuffer, ImageSpaceError, require, to_gray

PSNR_CAP_DB = 100.0

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_RANGE = 255.0

WEIGHT_PSNR = 1.0
WEIGHT_SSIM = 80.0
WEIGHT_NIQE = 5.0


def _check_pair(x: ImageBuffer, ref: ImageBuffer):
    if x.shape != ref.shape:
        raise ImageSpaceError(f"image sizes differ: {x.shape} vs {ref.shape}")


def psnr(x: ImageBuffer, ref: ImageBuffer) -> float:
    """PSNR in dB over all samples; identical inputs give ``PSNR_CAP_DB``."""
    require(x, ColorSpace.SRGB_8BIT_RANGE)
    require(ref, ColorSpace.SRGB_8BIT_RANGE)
    _check_pair(x, ref)
    mse = float(np.mean((x.data - ref.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(255.0**2 / mse))


def _luma(img: ImageBuffer) -> np.ndarray:
    if img.space is ColorSpace.GRAY:
        return img.data
    if img.space is ColorSpace.SRGB_8BIT_RANGE and img.channels == 1:
        return img.data
    return to_gray(img).data


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _valid_filter(a, g):
    half = len(g) // 2
    out = ndimage.correlate1d(a, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim_map(x: ImageBuffer, ref: ImageBuffer) -> np.ndarray:
    """Local SSIM on BT.601 luma, valid region of an 11x11 Gaussian window."""
    _check_pair(x, ref)
    a, b = _luma(x), _luma(ref)
    if min(a.shape) < SSIM_WINDOW:
        raise ImageSpaceError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = _gaussian_window()
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    mu_a = _valid_filter(a, g)
    mu_b = _valid_filter(b, g)
    var_a = _valid_filter(a * a, g) - mu_a * mu_a
    var_b = _valid_filter(b * b, g) - mu_b * mu_b
    cov = _valid_filter(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(x: ImageBuffer, ref: ImageBuffer) -> float:
    return float(np.mean(ssim_map(x, ref)))


def composite_objective(psnr_db: float, ssim_value: float, niqe_value: float) -> float:
    values = (psnr_db, ssim_value, niqe_value)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"objective inputs must be finite, got {values}")
    return WEIGHT_PSNR * psnr_db + WEIGHT_SSIM * ssim_value - WEIGHT_NIQE * niqe_value


@dataclass(frozen=True)
class QualityReport:
    psnr: float
    ssim: float
    niqe: float
    objective: float

    @classmethod
    def from_metrics(cls, psnr_db: float, ssim_value: float, niqe_value: float) -> "QualityReport":
        return cls(psnr_db, ssim_value, niqe_value, composite_objective(psnr_db, ssim_value, niqe_value))

    def as_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "niqe": self.niqe, "objective": self.objective}


def assess(enhanced: ImageBuffer, ref: ImageBuffer, niqe_model, niqe_fallback: float | None = None) -> QualityReport:
    """Score an enhanced image against its reference.

    If NIQE cannot be computed (e.g. a flat, all-black output) and
    ``niqe_fallback`` is given, that value is used instead of raising.
    """
    from .niqe import NiqeError, niqe_score

    p = psnr(enhanced, ref)
    s = ssim(enhanced, ref)
    try:
        n = niqe_score(enhanced, niqe_model)
    except NiqeError:
        if niqe_fallback is None:
            raise
        n = niqe_fallback
    return QualityReport.from_metrics(p, s, n)
