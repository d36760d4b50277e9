import json
import math

import mpmath
import numpy as np
import pytest

from conftest import textured_pair
from flarebo import surrogate
from flarebo.niqe import NiqeModel
from flarebo.optimizer import (
    BoConfig,
    ConfigError,
    _acq_values,
    bayes_optimise,
    log_ei,
    maximise_acquisition,
    optimise_image,
    scale_to_unit,
    sobol_points,
    standardise,
    unscale_from_unit,
)
from flarebo.params import DEFAULT_BOUNDS, PARAM_NAMES, ParamBounds, ParameterBoundsError, ParamVector

mpmath.mp.dps = 60


def exact_log_ei(z):
    """log(phi(z) + z Phi(z)) at sigma = 1, in high precision."""
    z = mpmath.mpf(z)
    phi = mpmath.exp(-z * z / 2) / mpmath.sqrt(2 * mpmath.pi)
    Phi = mpmath.ncdf(z)
    return float(mpmath.log(phi + z * Phi))


# --- scaling ----------------------------------------------------------------------


def test_scale_bound_endpoints():
    assert scale_to_unit(ParamVector(alpha=0.5))[0] == 0.0
    assert scale_to_unit(ParamVector(alpha=5.0))[0] == 1.0
    assert scale_to_unit(ParamVector(beta=15.0))[1] == 0.5


def test_lower_bounds_map_to_origin():
    lower = ParamVector.from_array([DEFAULT_BOUNDS[n][0] for n in PARAM_NAMES])
    np.testing.assert_array_equal(scale_to_unit(lower), np.zeros(8))


def test_scale_rejects_out_of_bounds():
    with pytest.raises(ParameterBoundsError):
        scale_to_unit(ParamVector(alpha=6.0))


def test_scale_round_trip(rng):
    b = ParamBounds()
    for p in rng.random((200, 8)):
        theta = unscale_from_unit(p, b)
        np.testing.assert_allclose(scale_to_unit(theta, b), p, atol=1e-12, rtol=0)
        back = unscale_from_unit(scale_to_unit(theta, b), b)
        np.testing.assert_allclose(back.to_array(), theta.to_array(), atol=1e-12, rtol=0)


def test_unscale_rejects_points_outside_cube():
    with pytest.raises(ValueError):
        unscale_from_unit(np.full(8, 1.5))


# --- standardisation -------------------------------------------------------------


def test_standardise_examples():
    z, mean, std = standardise([1.0, 2.0, 3.0])
    np.testing.assert_allclose(z, [-1.2247, 0.0, 1.2247], atol=1e-4)
    assert mean == 2.0 and std == pytest.approx(0.8165, abs=1e-4)
    np.testing.assert_array_equal(standardise([4.0, 4.0, 4.0])[0], [0.0, 0.0, 0.0])
    assert standardise([5.0])[0][0] == pytest.approx(0.0)


def test_argmax_invariant_under_standardisation(rng):
    for _ in range(50):
        f = rng.normal(scale=rng.uniform(0.01, 100), size=int(rng.integers(1, 40)))
        assert int(np.argmax(f)) == int(np.argmax(standardise(f)[0]))


# --- Sobol ------------------------------------------------------------------------


def test_unscrambled_prefix():
    np.testing.assert_array_equal(sobol_points(3, 8, scramble=False)[:, 0], [0.5, 0.75, 0.25])


def test_scrambled_points_strictly_interior():
    pts = sobol_points(1024, 8, seed=3)
    assert pts.shape == (1024, 8)
    assert np.all(pts > 0) and np.all(pts < 1)


def test_sobol_deterministic_per_seed():
    np.testing.assert_array_equal(sobol_points(16, 8, 7), sobol_points(16, 8, 7))
    assert not np.array_equal(sobol_points(16, 8, 7), sobol_points(16, 8, 8))


def test_sobol_dimension_limit():
    with pytest.raises(ValueError):
        sobol_points(4, 100_000)


def grid_star_discrepancy(pts, levels=(0.25, 0.5, 0.75, 1.0)):
    """max |fraction inside [0, t) - vol([0, t))| over a grid of anchored boxes."""
    dim = pts.shape[1]
    corners = np.array(np.meshgrid(*[levels] * dim, indexing="ij")).reshape(dim, -1).T
    inside = np.ones((len(corners), len(pts)), dtype=bool)
    for k in range(dim):
        inside &= pts[None, :, k] < corners[:, k, None]
    return float(np.max(np.abs(inside.mean(1) - corners.prod(1))))


def test_sobol_discrepancy_beats_random():
    rng = np.random.default_rng(0)
    sob = [grid_star_discrepancy(sobol_points(64, 8, seed=s)) for s in range(5)]
    rnd = [grid_star_discrepancy(rng.random((64, 8))) for _ in range(20)]
    assert max(sob) < np.median(rnd)


# --- LogEI ------------------------------------------------------------------------


def test_log_ei_at_zero():
    assert log_ei(0.0, 1.0, 0.0) == pytest.approx(math.log(0.398942), abs=1e-5)
    assert log_ei(0.0, 1.0, 0.0) == pytest.approx(-0.9189, abs=1e-4)


def test_log_ei_large_positive_z():
    assert log_ei(10.0, 1.0, 0.0) == pytest.approx(math.log(10.0), abs=1e-6)


def test_log_ei_deep_tail_is_finite():
    # the closed form at z = -30 is about -457.7 (the asymptotic
    # -z^2/2 - log(sqrt(2 pi)) - 2 log|z| gives the same to 3 decimals)
    v = log_ei(-30.0, 1.0, 0.0)
    assert math.isfinite(v)
    assert v == pytest.approx(exact_log_ei(-30), rel=1e-9)
    assert v == pytest.approx(-457.72, abs=0.01)


@pytest.mark.parametrize("z", [-45.0, -30.0, -12.0, -5.0, -1.5, -1.0, -0.3, 0.0, 0.7, 3.0, 8.0, 25.0])
def test_log_ei_matches_high_precision(z):
    assert log_ei(z, 1.0, 0.0) == pytest.approx(exact_log_ei(z), abs=1e-9, rel=1e-9)


def test_log_ei_scales_with_sigma():
    assert log_ei(1.0, 4.0, 0.0) == pytest.approx(math.log(2.0) + exact_log_ei(0.5), rel=1e-12)


def test_log_ei_zero_variance():
    assert log_ei(2.0, 0.0, 0.5) == pytest.approx(math.log(1.5))
    assert log_ei(0.0, 0.0, 0.5) == -math.inf


def test_log_ei_rejects_negative_variance():
    with pytest.raises(ValueError):
        log_ei(0.0, -1e-3, 0.0)


def test_log_ei_monotone():
    mu = np.linspace(-50, 50, 2001)
    v = log_ei(mu, np.ones_like(mu), 0.0)
    assert np.all(np.isfinite(v)) and np.all(np.diff(v) > 0)
    sig = np.linspace(0.1, 5, 200)
    w = log_ei(np.full_like(sig, -2.0), sig**2, 0.0)
    assert np.all(np.diff(w) > 0)


# --- acquisition maximisation ---------------------------------------------------


@pytest.fixture(scope="module")
def quad_model():
    rng = np.random.default_rng(1)
    X = rng.random((20, 8))
    f = -np.sum((X - 0.4) ** 2, axis=1)
    y = standardise(f)[0]
    return surrogate.fit(X, y, seed=0), float(y.max())


def test_acquisition_beats_fresh_probes(quad_model):
    model, best = quad_model
    x = maximise_acquisition(model, best, restarts=8, seed=5)
    assert np.all((x >= 0) & (x <= 1))
    got = float(_acq_values(model, best, x)[0])
    for s in (100, 101, 102):
        probes = sobol_points(256, 8, seed=s)
        assert got >= float(np.max(_acq_values(model, best, probes)))


def test_acquisition_deterministic(quad_model):
    model, best = quad_model
    np.testing.assert_array_equal(maximise_acquisition(model, best, seed=5), maximise_acquisition(model, best, seed=5))


def test_acquisition_finds_2d_peak():
    # a smooth posterior with one bump; the grid argmax of LogEI is the oracle
    rng = np.random.default_rng(2)
    X = rng.random((25, 2))
    y = standardise(-np.sum((X - [0.62, 0.35]) ** 2, axis=1))[0]
    model = surrogate.condition(X, y, [0.3, 0.3], 1.0, 1e-4)
    best = float(y.max())
    g = np.linspace(0, 1, 401)
    grid = np.array(np.meshgrid(g, g, indexing="ij")).reshape(2, -1).T
    oracle = grid[np.argmax(_acq_values(model, best, grid))]
    x = maximise_acquisition(model, best, restarts=8, seed=0)
    assert np.max(np.abs(x - oracle)) <= 0.05


# --- BO loop -----------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError, match="n_init < n_total"):
        BoConfig(n_init=50, n_total=50)
    with pytest.raises(ConfigError):
        BoConfig(n_init=1, n_total=5)
    with pytest.raises(ConfigError):
        BoConfig(kernel="rbf-ish")


def test_loop_bookkeeping_on_quadratic(tmp_path):
    def quad(p):
        return -float(np.sum((p - 0.5) ** 2)), None

    cfg = BoConfig(n_init=6, n_total=14, seed=3)
    log_path = tmp_path / "gp.jsonl"
    hist = bayes_optimise(quad, 8, cfg, gp_log=log_path)
    assert len(hist) == 14
    np.testing.assert_array_equal(np.array([h[0] for h in hist[:6]]), sobol_points(6, 8, 3))
    lines = [json.loads(s) for s in log_path.read_text().splitlines()]
    assert [r["iter"] for r in lines] == list(range(6, 14))
    assert {"lengthscales", "signal_variance", "noise_variance", "mll"} <= set(lines[0])
    again = bayes_optimise(quad, 8, cfg)
    assert [h[1] for h in again] == [h[1] for h in hist]


TINY_NIQE = NiqeModel(np.zeros(36), np.eye(36), patch_size=16)


@pytest.fixture(scope="module")
def small_run():
    low, ref = textured_pair(4, 40, 48)
    cfg = BoConfig(n_init=4, n_total=9, seed=11)
    return low, ref, cfg, optimise_image(low, ref, TINY_NIQE, cfg)


def test_optimise_image_bookkeeping(small_run):
    low, ref, cfg, res = small_run
    assert len(res.trace) == cfg.n_total
    values = [o.raw_objective for o in res.trace]
    assert res.report.objective == max(values)
    inc = [o.incumbent for o in res.trace]
    assert inc == list(np.maximum.accumulate(values))
    for o in res.trace:
        np.testing.assert_allclose(o.point, scale_to_unit(o.theta), atol=1e-12)
        assert o.report.objective == o.raw_objective
    assert res.image is not None and res.image.shape == ref.shape


def test_optimise_image_deterministic(small_run):
    low, ref, cfg, res = small_run
    again = optimise_image(low, ref, TINY_NIQE, cfg)
    assert [o.as_record() for o in again.trace] == [o.as_record() for o in res.trace]


def test_trace_jsonl(small_run, tmp_path):
    *_, res = small_run
    path = res.write_trace(tmp_path / "t.jsonl")
    recs = [json.loads(s) for s in path.read_text().splitlines()]
    assert len(recs) == len(res.trace)
    assert list(recs[0]) == ["iter", "theta", "point", "psnr", "ssim", "niqe", "objective", "incumbent"]
    assert "lambda" in recs[0]["theta"] and "lam" not in recs[0]["theta"]


def test_baseline_mode_pins_parameters():
    low, ref = textured_pair(5, 40, 48)
    res = optimise_image(low, ref, TINY_NIQE, BoConfig(n_init=3, n_total=5, seed=2, baseline_mode=True))
    for o in res.trace:
        t = o.theta
        assert (t.gamma, t.lam, t.h_c, t.d, t.sigma_s) == (1.0, 0.0, 0.0, 0.0, 0.0)
        np.testing.assert_allclose(o.point, scale_to_unit(t), atol=1e-12)
    pts = np.array([o.point for o in res.trace])
    active = [PARAM_NAMES.index(n) for n in ("alpha", "beta", "h")]
    frozen = [i for i in range(8) if i not in active]
    assert np.all(pts[:, frozen] == pts[0, frozen])
    assert np.all(pts[:, active].std(axis=0) > 0)


def test_size_mismatch():
    low, _ = textured_pair(1, 40, 48)
    _, ref = textured_pair(1, 40, 40)
    with pytest.raises(ValueError):
        optimise_image(low, ref, TINY_NIQE, BoConfig(n_init=2, n_total=3))


@pytest.mark.slow
def test_self_pair_recovers_identity():
    """Already-perfect input: the search should end up near the identity setting."""
    import skimage.data
    import skimage.transform

    from flarebo.imagecore import srgb8
    from flarebo.metrics import assess, psnr
    from flarebo.niqe import default_model
    from flarebo.pipeline import enhance

    small = skimage.transform.resize(skimage.data.astronaut(), (192, 192), anti_aliasing=True) * 255
    # equalise channel means so grey-world leaves the image alone
    small = small * (small.mean() / small.mean(axis=(0, 1)))
    img = srgb8(np.clip(np.round(small), 0, 255))
    model = default_model()
    identity = assess(enhance(img, ParamVector()), img, model)
    res = optimise_image(img, img, model, BoConfig(seed=0))
    print(f"identity objective {identity.objective:.3f}, found {res.report.objective:.3f}, "
          f"PSNR {psnr(res.image, img):.2f} dB")
    assert res.report.objective >= identity.objective
    assert psnr(res.image, img) >= 45.0
