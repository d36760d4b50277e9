"""Per-image Bayesian optimisation of the enhancement parameters.

All GP work happens in the unit hypercube. Observed objectives are
re-standardised from scratch before every refit, candidates come from
multi-start L-BFGS-B on LogEI, and the first ``n_init`` evaluations are a
scrambled Sobol design.
"""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize, special
from scipy.stats import qmc

from . import surrogate
from .imagecore import ImageBuffer, ImageSpaceError
from .metrics import QualityReport, assess
from .params import PARAM_NAMES, ParamBounds, ParamVector
from .pipeline import enhance

log = logging.getLogger(__name__)

STANDARDISE_EPS = 1e-6
VARIANCE_FLOOR = 1e-12
FD_STEP = 1e-5
RAW_SAMPLES = 256
# NIQE substituted when an output is too flat to fit (e.g. all black)
NIQE_FAILURE_VALUE = 100.0

BASELINE_ACTIVE = ("alpha", "beta", "h")
BASELINE_PINNED = {"gamma": 1.0, "lam": 0.0, "h_c": 0.0, "d": 0.0, "sigma_s": 0.0}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BoConfig:
    n_init: int = 16
    n_total: int = 50
    acquisition_restarts: int = 8
    seed: int = 0
    baseline_mode: bool = False
    raw_samples: int = RAW_SAMPLES
    kernel: str = "se"

    def __post_init__(self):
        if not (2 <= self.n_init < self.n_total):
            raise ConfigError(
                f"n_init < n_total violated (need 2 <= n_init < n_total, got n_init={self.n_init}, n_total={self.n_total})"
            )
        if self.acquisition_restarts < 1 or self.raw_samples < 1:
            raise ConfigError("acquisition_restarts and raw_samples must be >= 1")
        if self.kernel not in surrogate.KERNELS:
            raise ConfigError(f"kernel must be one of {surrogate.KERNELS}")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class Observation:
    iteration: int
    point: np.ndarray
    raw_objective: float
    theta: ParamVector | None = None
    report: QualityReport | None = None
    incumbent: float = -math.inf

    def as_record(self) -> dict:
        rec = {
            "iter": self.iteration,
            "theta": _theta_record(self.theta) if self.theta is not None else None,
            "point": [float(v) for v in self.point],
        }
        r = self.report
        rec.update(
            psnr=r.psnr if r else None,
            ssim=r.ssim if r else None,
            niqe=r.niqe if r else None,
            objective=self.raw_objective,
            incumbent=self.incumbent,
        )
        return rec


def _theta_record(theta: ParamVector) -> dict:
    d = theta.as_dict()
    d["lambda"] = d.pop("lam")
    return d


# --- hypercube scaling and standardisation -------------------------------------


def scale_to_unit(theta: ParamVector, bounds: ParamBounds | None = None) -> np.ndarray:
    bounds = bounds or ParamBounds()
    bounds.check(theta)
    lo, hi = bounds.lower_array, bounds.upper_array
    return (theta.to_array() - lo) / (hi - lo)


def unscale_from_unit(point, bounds: ParamBounds | None = None) -> ParamVector:
    bounds = bounds or ParamBounds()
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (len(PARAM_NAMES),) or np.any(point < 0) or np.any(point > 1):
        raise ValueError(f"point must be an 8-vector in [0, 1], got {point}")
    lo, hi = bounds.lower_array, bounds.upper_array
    return ParamVector.from_array(np.clip(lo + point * (hi - lo), lo, hi))


def standardise(values):
    """Centre and scale by the population standard deviation plus ``STANDARDISE_EPS``."""
    f = np.asarray(values, dtype=np.float64)
    if f.size == 0 or not np.all(np.isfinite(f)):
        raise ValueError("standardise needs at least one finite value")
    mean = float(f.mean())
    std = float(f.std())
    return (f - mean) / (std + STANDARDISE_EPS), mean, std


# --- Sobol design ---------------------------------------------------------------


def sobol_points(n: int, dim: int = 8, seed: int = 0, scramble: bool = True) -> np.ndarray:
    """First ``n`` points of a Sobol sequence (Joe-Kuo direction numbers).

    Scrambled sequences are keyed by ``seed`` and shifted to the centre of
    their 2^-30 cell so no coordinate sits on the cube boundary. The
    unscrambled sequence drops its leading all-zero point.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if dim > qmc.Sobol.MAXDIM:
        raise ValueError(f"Sobol sequence supports at most {qmc.Sobol.MAXDIM} dimensions")
    engine = qmc.Sobol(d=dim, scramble=scramble, seed=np.random.default_rng(seed) if scramble else None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        if scramble:
            return engine.random(n) + 2.0**-31
        engine.fast_forward(1)
        return engine.random(n)


# --- acquisition ------------------------------------------------------------------

_C1 = 0.5 * math.log(2 * math.pi)
_C2 = 0.5 * math.log(math.pi / 2)
_INV_SQRT_EPS = 1.0 / math.sqrt(np.finfo(float).eps)


def _log1mexp(x):
    """log(1 - exp(x)) for x < 0."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > -math.log(2.0), np.log(-np.expm1(np.minimum(x, -1e-300))), np.log1p(-np.exp(x)))


def log_h(z):
    """log(phi(z) + z Phi(z)) evaluated without underflow for very negative z."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    upper = z > -1
    mid = (~upper) & (z > -_INV_SQRT_EPS)
    tail = ~(upper | mid)
    zu = z[upper]
    out[upper] = np.log(np.exp(-0.5 * zu * zu) / math.sqrt(2 * math.pi) + zu * special.ndtr(zu))
    zm = z[mid]
    out[mid] = -0.5 * zm * zm - _C1 + _log1mexp(np.log(special.erfcx(-zm / math.sqrt(2)) * np.abs(zm)) + _C2)
    zt = z[tail]
    out[tail] = -0.5 * zt * zt - _C1 - 2.0 * np.log(np.abs(zt))
    return out


def log_ei(mean, variance, best):
    """Log expected improvement of a Gaussian posterior over ``best``."""
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    sigma = np.sqrt(variance)
    diff = mean - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, diff / np.where(sigma > 0, sigma, 1.0), 0.0)
        out = np.where(sigma > 0, log_h(z) + np.log(np.where(sigma > 0, sigma, 1.0)), np.log(np.maximum(diff, 0.0)))
    return out if out.ndim else float(out)


def _acq_values(model, best, X):
    mean, var = surrogate.predict(model, np.atleast_2d(X))
    return log_ei(mean, np.maximum(var, VARIANCE_FLOOR), best)


def _acq_with_fd_grad(x, model, best):
    """Negative LogEI and its central finite-difference gradient in one batched predict."""
    dim = x.size
    steps = np.eye(dim) * FD_STEP
    xp = np.minimum(x + steps, 1.0)
    xm = np.maximum(x - steps, 0.0)
    vals = _acq_values(model, best, np.vstack([x[None, :], xp, xm]))
    h = np.diag(xp - xm)
    grad = (vals[1:dim + 1] - vals[dim + 1:]) / h
    return -float(vals[0]), -grad


def maximise_acquisition(model, best: float, restarts: int = 8, seed: int = 0, raw_samples: int = RAW_SAMPLES) -> np.ndarray:
    """Best LogEI point in the unit cube.

    Scores ``raw_samples`` Sobol points, starts L-BFGS-B from the best
    ``restarts`` of them and returns the best point found (never worse than
    the best raw sample).
    """
    dim = model.dim
    raw = sobol_points(raw_samples, dim, seed)
    raw_vals = _acq_values(model, best, raw)
    starts = np.argsort(-raw_vals, kind="stable")[:restarts]
    best_x, best_val = raw[starts[0]].copy(), float(raw_vals[starts[0]])
    failures = 0
    for i in starts:
        try:
            res = optimize.minimize(
                _acq_with_fd_grad, raw[i], args=(model, best), jac=True, method="L-BFGS-B",
                bounds=[(0.0, 1.0)] * dim,
            )
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            failures += 1
            continue
        x = np.clip(res.x, 0.0, 1.0)
        val = float(_acq_values(model, best, x)[0])
        if not math.isfinite(val):
            failures += 1
            continue
        if val > best_val:
            best_x, best_val = x, val
    if failures == len(starts):
        log.warning("all %d acquisition restarts failed; using best probe point", failures)
    return best_x


# --- the loop -----------------------------------------------------------------------


def _derived_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]).generate_state(1)[0])


def bayes_optimise(objective: Callable[[np.ndarray], tuple], dim: int, config: BoConfig,
                   gp_log: str | Path | None = None) -> list:
    """Maximise ``objective`` over ``[0, 1]^dim``.

    ``objective(point)`` returns ``(value, extra)``; ``extra`` is kept
    alongside each point. Returns ``[(point, value, extra), ...]`` in
    evaluation order, ``config.n_total`` entries long.
    """
    history = []
    for p in sobol_points(config.n_init, dim, config.seed):
        value, extra = objective(p)
        history.append((p, float(value), extra))
    log_file = open(gp_log, "a") if gp_log else None
    model = None
    try:
        for it in range(config.n_init, config.n_total):
            X = np.array([h[0] for h in history])
            y, _, _ = standardise([h[1] for h in history])
            model = surrogate.fit(X, y, seed=_derived_seed(config.seed, it, 1), kind=config.kernel, warm_start=model)
            if log_file:
                log_file.write(json.dumps({"iter": it, **model.hyperparameters(),
                                           "mll": model.log_marginal_likelihood()}) + "\n")
            x = maximise_acquisition(model, float(y.max()), config.acquisition_restarts,
                                     _derived_seed(config.seed, it, 2), config.raw_samples)
            value, extra = objective(x)
            history.append((x, float(value), extra))
    finally:
        if log_file:
            log_file.close()
    return history


@dataclass
class OptimisationResult:
    theta: ParamVector
    report: QualityReport
    trace: list = field(default_factory=list)
    image: ImageBuffer | None = None
    seconds: float = 0.0

    def write_trace(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for obs in self.trace:
                fh.write(json.dumps(obs.as_record()) + "\n")
        return path


def _space_mapping(config: BoConfig, bounds: ParamBounds):
    """Map a search-space point to (theta, full 8-d unit point)."""
    if not config.baseline_mode:
        def to_theta(p):
            return unscale_from_unit(p, bounds), np.asarray(p, dtype=np.float64)
        return len(PARAM_NAMES), to_theta
    active = [PARAM_NAMES.index(n) for n in BASELINE_ACTIVE]
    pinned = ParamVector().replace(**BASELINE_PINNED)
    base = scale_to_unit(pinned, bounds)

    def to_theta(p):
        full = base.copy()
        full[active] = p
        theta = unscale_from_unit(full, bounds)
        return theta.replace(**BASELINE_PINNED), full
    return len(active), to_theta


def optimise_image(low: ImageBuffer, ref: ImageBuffer, niqe_model=None, config: BoConfig | None = None,
                   bounds: ParamBounds | None = None, gp_log=None) -> OptimisationResult:
    """Search enhancement parameters for one low/reference pair."""
    from .niqe import default_model

    if low.shape != ref.shape:
        raise ImageSpaceError(f"low {low.shape} and reference {ref.shape} differ in size")
    config = config or BoConfig()
    bounds = bounds or ParamBounds()
    niqe_model = niqe_model or default_model()
    dim, to_theta = _space_mapping(config, bounds)
    best = {"value": -math.inf, "image": None}
    start = time.perf_counter()

    def objective(p):
        theta, full = to_theta(p)
        out = enhance(low, theta, bounds)
        report = assess(out, ref, niqe_model, niqe_fallback=NIQE_FAILURE_VALUE)
        if report.objective > best["value"]:
            best["value"], best["image"] = report.objective, out
        return report.objective, (theta, full, report)

    history = bayes_optimise(objective, dim, config, gp_log)
    trace = []
    incumbent = -math.inf
    for i, (_, value, (theta, full, report)) in enumerate(history):
        incumbent = max(incumbent, value)
        trace.append(Observation(i, full, value, theta, report, incumbent))
    best_obs = max(trace, key=lambda o: o.raw_objective)
    return OptimisationResult(best_obs.theta, best_obs.report, trace, best["image"], time.perf_counter() - start)
