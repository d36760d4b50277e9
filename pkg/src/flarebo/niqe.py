"""No-reference NIQE quality score with a trainable pristine model.

Follows the construction of Mittal, Soundararajan and Bovik: MSCN
coefficients, a GGD fit to them and AGGD fits to four neighbour products per
patch, at the original scale and at half scale (36 features). A pristine
model is the mean and covariance of features over sharp patches of natural
images; an image's score is the Mahalanobis-style distance between its own
patch statistics and the model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage, optimize, special

from .imagecore import ColorSpace, ImageBuffer, ImageSpaceError, to_gray

MODEL_VERSION = 1
DEFAULT_PATCH_SIZE = 96
DEFAULT_SHARPNESS_THRESHOLD = 0.75
MSCN_C = 1.0
N_FEATURES = 36
MIN_TRAIN_IMAGES = 10
MIN_TRAIN_PATCHES = 100
PINV_FLOOR = 1e-10

# shape parameter search interval used by the moment-matching estimators
_SHAPE_LO, _SHAPE_HI = 0.2, 10.0
# (row, col) shifts for horizontal, vertical and the two diagonal neighbours
_PAIR_SHIFTS = ((0, 1), (1, 0), (1, 1), (-1, 1))


class NiqeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NiqeModel:
    mean: np.ndarray
    covariance: np.ndarray
    patch_size: int = DEFAULT_PATCH_SIZE
    sharpness_threshold: float = DEFAULT_SHARPNESS_THRESHOLD

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.shape != (N_FEATURES,) or cov.shape != (N_FEATURES, N_FEATURES):
            raise NiqeError(f"model needs a {N_FEATURES}-vector and {N_FEATURES}x{N_FEATURES} covariance")
        if self.patch_size < 4 or self.patch_size % 2:
            raise NiqeError("patch_size must be an even number >= 4")
        if not 0.0 <= self.sharpness_threshold <= 1.0:
            raise NiqeError("sharpness_threshold must lie in [0, 1]")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    def __eq__(self, other):
        if not isinstance(other, NiqeModel):
            return NotImplemented
        return (
            self.patch_size == other.patch_size
            and self.sharpness_threshold == other.sharpness_threshold
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.covariance, other.covariance)
        )

    def to_json(self) -> str:
        # field order: version, patch_size, threshold, mean, covariance (row-major)
        doc = {
            "version": MODEL_VERSION,
            "patch_size": int(self.patch_size),
            "threshold": float(self.sharpness_threshold),
            "mean": [float(v) for v in self.mean],
            "covariance": [float(v) for v in self.covariance.ravel()],
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "NiqeModel":
        doc = json.loads(text)
        if doc.get("version") != MODEL_VERSION:
            raise NiqeError(f"unsupported NIQE model version {doc.get('version')!r}")
        cov = np.array(doc["covariance"], dtype=np.float64)
        if cov.size != N_FEATURES * N_FEATURES:
            raise NiqeError("covariance must hold 36x36 values")
        return cls(
            mean=np.array(doc["mean"], dtype=np.float64),
            covariance=cov.reshape(N_FEATURES, N_FEATURES),
            patch_size=int(doc["patch_size"]),
            sharpness_threshold=float(doc["threshold"]),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "NiqeModel":
        return cls.from_json(Path(path).read_text())


def default_model() -> NiqeModel:
    """The pristine model shipped with the package."""
    text = resources.files("flarebo").joinpath("data/niqe_pristine.json").read_text()
    return NiqeModel.from_json(text)


# --- natural-scene statistics -------------------------------------------------


def _gauss7():
    x = np.arange(-3, 4, dtype=np.float64)
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2 * (7.0 / 6.0) ** 2))
    return g / g.sum()


_WINDOW = _gauss7()


def mscn(gray: np.ndarray, c: float = MSCN_C):
    """Mean-subtracted contrast-normalised coefficients and the local deviation field."""
    mu = ndimage.correlate(gray, _WINDOW, mode="nearest")
    sigma = np.sqrt(np.abs(ndimage.correlate(gray * gray, _WINDOW, mode="nearest") - mu * mu))
    return (gray - mu) / (sigma + c), sigma


def _log_ggd_ratio(alpha):
    # log of Gamma(1/a) Gamma(3/a) / Gamma(2/a)^2, decreasing in a
    return special.gammaln(1 / alpha) + special.gammaln(3 / alpha) - 2 * special.gammaln(2 / alpha)


def _solve_shape(log_target: float) -> float:
    f = lambda a: _log_ggd_ratio(a) - log_target  # noqa: E731
    f_lo, f_hi = f(_SHAPE_LO), f(_SHAPE_HI)
    if f_lo <= 0:
        return _SHAPE_LO
    if f_hi >= 0:
        return _SHAPE_HI
    return optimize.brentq(f, _SHAPE_LO, _SHAPE_HI, xtol=1e-12)


def fit_ggd(x: np.ndarray):
    """Moment-matching GGD fit; returns (shape, variance), NaN for degenerate data."""
    x = np.asarray(x, dtype=np.float64).ravel()
    var = float(np.mean(x * x))
    e_abs = float(np.mean(np.abs(x)))
    if not var > 0 or not e_abs > 0:
        return math.nan, math.nan
    return _solve_shape(math.log(var / e_abs**2)), var


def fit_aggd(x: np.ndarray):
    """Moment-matching AGGD fit; returns (shape, mean, left variance, right variance)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    left, right = x[x < 0], x[x > 0]
    if left.size == 0 or right.size == 0:
        return math.nan, math.nan, math.nan, math.nan
    left_var = float(np.mean(left * left))
    right_var = float(np.mean(right * right))
    gamma_hat = math.sqrt(left_var) / math.sqrt(right_var)
    r_hat = float(np.mean(np.abs(x))) ** 2 / float(np.mean(x * x))
    r_norm = r_hat * (gamma_hat**3 + 1) * (gamma_hat + 1) / (gamma_hat**2 + 1) ** 2
    alpha = _solve_shape(-math.log(r_norm))
    g1, g2, g3 = (math.gamma(k / alpha) for k in (1, 2, 3))
    mean = (math.sqrt(right_var) - math.sqrt(left_var)) * (g2 / g1) * math.sqrt(g1 / g3)
    return alpha, mean, left_var, right_var


def _patch_features(patch: np.ndarray) -> list:
    feats = list(fit_ggd(patch))
    for shift in _PAIR_SHIFTS:
        pair = patch * np.roll(patch, shift, axis=(0, 1))
        feats.extend(fit_aggd(pair))
    return feats


def _cubic(x):
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return (1.5 * ax3 - 2.5 * ax2 + 1) * (ax <= 1) + (-0.5 * ax3 + 2.5 * ax2 - 4 * ax + 2) * ((ax > 1) & (ax <= 2))


def _half_scale_matrix(n_in: int) -> np.ndarray:
    """Antialiased bicubic x0.5 resampling matrix with symmetric edges (MATLAB ``imresize``)."""
    scale = 0.5
    n_out = int(math.ceil(n_in * scale))
    width = 4.0 / scale
    u = np.arange(1, n_out + 1) / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = scale * _cubic(scale * (u[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(n_in), np.arange(n_in)[::-1]])
    cols = mirror[np.mod(idx.astype(np.int64) - 1, 2 * n_in)]
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        np.add.at(m[i], cols[i], w[i])
    return m


def half_scale(gray: np.ndarray) -> np.ndarray:
    return _half_scale_matrix(gray.shape[0]) @ gray @ _half_scale_matrix(gray.shape[1]).T


def _as_gray(img) -> np.ndarray:
    if isinstance(img, ImageBuffer):
        if img.space is ColorSpace.GRAY or img.channels == 1:
            return img.data
        return to_gray(img).data
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    return arr


def niqe_features(img, patch_size: int = DEFAULT_PATCH_SIZE, with_sharpness: bool = False):
    """Per-patch 36-feature rows (NaN rows mark degenerate patches).

    With ``with_sharpness`` also returns each patch's mean local deviation
    at the original scale.
    """
    gray = _as_gray(img)
    if patch_size < 4 or patch_size % 2:
        raise NiqeError("patch_size must be an even number >= 4")
    rows, cols = gray.shape[0] // patch_size, gray.shape[1] // patch_size
    if gray.shape[0] < 2 * patch_size or gray.shape[1] < 2 * patch_size:
        raise NiqeError(f"image {gray.shape} is smaller than 2x the {patch_size}px patch")
    gray = gray[: rows * patch_size, : cols * patch_size]
    per_scale = []
    sharpness = None
    for scale in (1, 2):
        size = patch_size // scale
        coeffs, sigma = mscn(gray)
        feats = []
        sharp = []
        for r in range(rows):
            for c in range(cols):
                block = np.s_[r * size:(r + 1) * size, c * size:(c + 1) * size]
                feats.append(_patch_features(coeffs[block]))
                if scale == 1:
                    sharp.append(float(np.mean(sigma[block])))
        per_scale.append(np.array(feats))
        if scale == 1:
            sharpness = np.array(sharp)
            gray = half_scale(gray)
    features = np.hstack(per_scale)
    return (features, sharpness) if with_sharpness else features


def _valid_rows(features):
    return features[np.all(np.isfinite(features), axis=1)]


def _fit_gaussian(features):
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False, ddof=1)
    return mean, 0.5 * (cov + cov.T)


def _select_sharp(features, sharpness, threshold):
    keep = sharpness >= threshold * sharpness.max()
    return features[keep]


def _check_training_args(pristine_images, sharpness_threshold):
    if len(pristine_images) < MIN_TRAIN_IMAGES:
        raise NiqeError(f"≥ {MIN_TRAIN_IMAGES} images required, got {len(pristine_images)}")
    if not 0.0 <= sharpness_threshold <= 1.0:
        raise NiqeError("sharpness_threshold must lie in [0, 1]")


def _model_from_features(per_image, patch_size, sharpness_threshold) -> NiqeModel:
    features = np.vstack(per_image) if per_image else np.empty((0, N_FEATURES))
    if len(features) < MIN_TRAIN_PATCHES:
        raise NiqeError(f"only {len(features)} usable patches survived selection; need {MIN_TRAIN_PATCHES}")
    mean, cov = _fit_gaussian(features)
    return NiqeModel(mean, cov, patch_size, sharpness_threshold)


def training_patch_features(pristine_images, patch_size=DEFAULT_PATCH_SIZE,
                            sharpness_threshold=DEFAULT_SHARPNESS_THRESHOLD):
    """The selected, valid feature rows of each training image, one array per image."""
    out = []
    for img in pristine_images:
        feats, sharp = niqe_features(img, patch_size, with_sharpness=True)
        out.append(_valid_rows(_select_sharp(feats, sharp, sharpness_threshold)))
    return out


def niqe_train(pristine_images, patch_size: int = DEFAULT_PATCH_SIZE,
               sharpness_threshold: float = DEFAULT_SHARPNESS_THRESHOLD) -> NiqeModel:
    pristine_images = list(pristine_images)
    _check_training_args(pristine_images, sharpness_threshold)
    per_image = training_patch_features(pristine_images, patch_size, sharpness_threshold)
    return _model_from_features(per_image, patch_size, sharpness_threshold)


@dataclass(frozen=True)
class TrainingSummary:
    model: NiqeModel
    patch_counts: tuple
    loo_scores: np.ndarray

    @property
    def n_patches(self) -> int:
        return int(sum(self.patch_counts))

    @property
    def loo_median(self) -> float:
        return float(np.median(self.loo_scores))


def niqe_train_with_summary(pristine_images, patch_size: int = DEFAULT_PATCH_SIZE,
                            sharpness_threshold: float = DEFAULT_SHARPNESS_THRESHOLD) -> TrainingSummary:
    """Train a model and, from the same features, the leave-one-out scores of the corpus."""
    images = list(pristine_images)
    _check_training_args(images, sharpness_threshold)
    per_image = training_patch_features(images, patch_size, sharpness_threshold)
    model = _model_from_features(per_image, patch_size, sharpness_threshold)
    loo = _leave_one_out(images, per_image, patch_size, sharpness_threshold)
    return TrainingSummary(model, tuple(len(f) for f in per_image), loo)


def symmetric_pinv(a: np.ndarray, floor: float = PINV_FLOOR) -> np.ndarray:
    a = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(a)
    inv = np.where(vals > floor, 1.0 / np.where(vals > floor, vals, 1.0), 0.0)
    return (vecs * inv) @ vecs.T


def niqe_distance(mean1, cov1, mean2, cov2) -> float:
    diff = np.asarray(mean1) - np.asarray(mean2)
    pooled = symmetric_pinv((np.asarray(cov1) + np.asarray(cov2)) / 2.0)
    return float(math.sqrt(max(float(diff @ pooled @ diff), 0.0)))


def niqe_score(img, model: NiqeModel | None = None) -> float:
    model = model or default_model()
    features = _valid_rows(niqe_features(img, model.patch_size))
    if len(features) < 2:
        raise NiqeError("fewer than two patches gave usable NIQE features")
    mean, cov = _fit_gaussian(features)
    return niqe_distance(model.mean, model.covariance, mean, cov)


def _leave_one_out(images, per_image, patch_size, sharpness_threshold):
    scores = []
    for i, img in enumerate(images):
        rest = np.vstack([f for j, f in enumerate(per_image) if j != i])
        mean, cov = _fit_gaussian(rest)
        scores.append(niqe_score(img, NiqeModel(mean, cov, patch_size, sharpness_threshold)))
    return np.array(scores)


def leave_one_out_scores(pristine_images, patch_size=DEFAULT_PATCH_SIZE,
                         sharpness_threshold=DEFAULT_SHARPNESS_THRESHOLD) -> np.ndarray:
    """Score each training image against a model fitted to the others."""
    images = list(pristine_images)
    per_image = training_patch_features(images, patch_size, sharpness_threshold)
    return _leave_one_out(images, per_image, patch_size, sharpness_threshold)


def as_image(arr) -> ImageBuffer:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        return ImageBuffer(arr, ColorSpace.GRAY)
    if arr.ndim == 3 and arr.shape[2] == 3:
        return ImageBuffer(arr, ColorSpace.SRGB_8BIT_RANGE)
    raise ImageSpaceError(f"cannot interpret array of shape {arr.shape} as an image")
