"""Exact Gaussian-process regression on the unit hypercube.

ARD squared-exponential kernel (Matern 5/2 available), zero prior mean on
standardised targets, hyperparameters fitted by multi-start L-BFGS-B on the
exact log marginal likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

LENGTHSCALE_BOUNDS = (0.01, 10.0)
SIGNAL_VARIANCE_BOUNDS = (0.01, 100.0)
NOISE_VARIANCE_BOUNDS = (1e-6, 1.0)
N_RESTARTS = 8
JITTER_START = 1e-6
JITTER_MAX = 1e-2
KERNELS = ("se", "matern52")

_LOG_2PI = math.log(2 * math.pi)
_SQRT5 = math.sqrt(5.0)


class GpFitError(np.linalg.LinAlgError):
    pass


def _check_hyper(lengthscales, signal_variance):
    if np.any(np.asarray(lengthscales) <= 0) or signal_variance <= 0:
        raise ValueError("kernel hyperparameters must be positive")


def _scaled_sqdist(X1, X2, lengthscales):
    a = np.atleast_2d(X1) / lengthscales
    b = np.atleast_2d(X2) / lengthscales
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def kernel_matrix(X1, X2, lengthscales, signal_variance, kind="se"):
    lengthscales = np.asarray(lengthscales, dtype=np.float64)
    _check_hyper(lengthscales, signal_variance)
    r2 = _scaled_sqdist(X1, X2, lengthscales)
    if kind == "se":
        return signal_variance * np.exp(-0.5 * r2)
    if kind == "matern52":
        r = np.sqrt(r2)
        return signal_variance * (1.0 + _SQRT5 * r + 5.0 / 3.0 * r2) * np.exp(-_SQRT5 * r)
    raise ValueError(f"unknown kernel {kind!r}; choose from {KERNELS}")


def kernel(x, y, lengthscales, signal_variance, kind="se") -> float:
    return float(kernel_matrix(np.atleast_2d(x), np.atleast_2d(y), lengthscales, signal_variance, kind)[0, 0])


def cholesky_jitter(K: np.ndarray):
    """Lower Cholesky factor of ``K``, adding diagonal jitter only if plain factorisation fails."""
    try:
        return linalg.cholesky(K, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return linalg.cholesky(K + jitter * eye, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise GpFitError(f"covariance not positive definite even with jitter {JITTER_MAX}")


@dataclass(frozen=True, eq=False)
class GpModel:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float
    train_x: np.ndarray
    train_y: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    kind: str = "se"

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]

    def hyperparameters(self) -> dict:
        return {
            "lengthscales": [float(v) for v in self.lengthscales],
            "signal_variance": float(self.signal_variance),
            "noise_variance": float(self.noise_variance),
            "jitter": float(self.jitter),
            "kernel": self.kind,
        }

    def log_marginal_likelihood(self) -> float:
        n = len(self.train_y)
        return float(-0.5 * self.train_y @ self.alpha - np.log(np.diag(self.chol)).sum() - 0.5 * n * _LOG_2PI)


def condition(train_x, train_y, lengthscales, signal_variance, noise_variance, kind="se") -> GpModel:
    """Build the posterior for fixed hyperparameters."""
    X = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    y = np.asarray(train_y, dtype=np.float64).ravel()
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=np.float64), (X.shape[1],)).copy()
    if noise_variance <= 0:
        raise ValueError("noise variance must be positive")
    K = kernel_matrix(X, X, ls, signal_variance, kind) + noise_variance * np.eye(len(y))
    L, jitter = cholesky_jitter(K)
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    return GpModel(ls, float(signal_variance), float(noise_variance), X, y, L, alpha, jitter, kind)


def log_marginal_likelihood(train_x, train_y, lengthscales, signal_variance, noise_variance, kind="se") -> float:
    return condition(train_x, train_y, lengthscales, signal_variance, noise_variance, kind).log_marginal_likelihood()


def _neg_mll_and_grad(log_params, X, y, diffs, kind):
    d = X.shape[1]
    ls = np.exp(log_params[:d])
    s = math.exp(log_params[d])
    noise = math.exp(log_params[d + 1])
    n = len(y)
    scaled = diffs / (ls * ls)  # (n, n, d) of (x_i - x_j)^2 / l^2
    r2 = scaled.sum(-1)
    if kind == "se":
        k = np.exp(-0.5 * r2)
        dk_common = s * k  # dK/dlog l_i = s k * scaled_i
    else:
        r = np.sqrt(r2)
        e = np.exp(-_SQRT5 * r)
        k = (1.0 + _SQRT5 * r + 5.0 / 3.0 * r2) * e
        dk_common = s * 5.0 / 3.0 * (1.0 + _SQRT5 * r) * e
    K = s * k + noise * np.eye(n)
    try:
        L, jitter = cholesky_jitter(K)
    except GpFitError:
        return 1e25, np.zeros_like(log_params)
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    nll = 0.5 * y @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * _LOG_2PI
    Kinv = linalg.cho_solve((L, True), np.eye(n), check_finite=False)
    W = np.outer(alpha, alpha) - Kinv  # dMLL/dtheta = 0.5 tr(W dK)
    grad = np.empty_like(log_params)
    Wd = W * dk_common
    grad[:d] = -0.5 * np.einsum("ij,ijk->k", Wd, scaled)
    grad[d] = -0.5 * np.sum(W * (s * k))
    grad[d + 1] = -0.5 * noise * np.trace(W)
    return float(nll), grad


def hyperparameter_bounds(dim: int):
    lo = [math.log(LENGTHSCALE_BOUNDS[0])] * dim + [math.log(SIGNAL_VARIANCE_BOUNDS[0]), math.log(NOISE_VARIANCE_BOUNDS[0])]
    hi = [math.log(LENGTHSCALE_BOUNDS[1])] * dim + [math.log(SIGNAL_VARIANCE_BOUNDS[1]), math.log(NOISE_VARIANCE_BOUNDS[1])]
    return np.array(lo), np.array(hi)


def fit(train_x, train_y, seed: int = 0, kind: str = "se", n_restarts: int = N_RESTARTS,
        warm_start: GpModel | None = None) -> GpModel:
    """Maximise the exact log marginal likelihood with multi-start L-BFGS-B.

    Starts are a fixed default (unit lengthscales and signal variance,
    noise 1e-3), the hyperparameters of ``warm_start`` if given, and
    ``n_restarts`` log-uniform draws inside the bounds.
    """
    X = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    y = np.asarray(train_y, dtype=np.float64).ravel()
    if len(y) < 2 or X.shape[0] != len(y):
        raise ValueError("fit needs at least two (x, y) pairs with matching lengths")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise ValueError("training data must be finite")
    if kind not in KERNELS:
        raise ValueError(f"unknown kernel {kind!r}; choose from {KERNELS}")
    dim = X.shape[1]
    lo, hi = hyperparameter_bounds(dim)
    rng = np.random.default_rng(seed)
    starts = [np.r_[np.zeros(dim), 0.0, math.log(1e-3)]]
    if warm_start is not None and warm_start.dim == dim:
        starts.append(np.log(np.r_[warm_start.lengthscales, warm_start.signal_variance, warm_start.noise_variance]))
    starts.extend(lo + (hi - lo) * rng.random((n_restarts, dim + 2)))
    diffs = (X[:, None, :] - X[None, :, :]) ** 2
    best = None
    for x0 in starts:
        x0 = np.clip(x0, lo, hi)
        res = optimize.minimize(
            _neg_mll_and_grad, x0, args=(X, y, diffs, kind), jac=True, method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
        )
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None or best.fun >= 1e25:
        raise GpFitError("no restart produced a finite marginal likelihood")
    p = np.clip(best.x, lo, hi)
    return condition(X, y, np.exp(p[:dim]), math.exp(p[dim]), math.exp(p[dim + 1]), kind)


def predict(model: GpModel, x):
    """Posterior mean and latent variance at one point or a batch of points."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    Xs = np.atleast_2d(x)
    Ks = kernel_matrix(Xs, model.train_x, model.lengthscales, model.signal_variance, model.kind)
    mean = Ks @ model.alpha
    v = linalg.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    var = np.maximum(model.signal_variance - (v * v).sum(0), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var
