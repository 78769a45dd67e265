"""Tests for the two-dimensional limit diffusion and its feedback-ratio MC."""

import io
import math

import numpy as np
import pytest
from scipy import stats

from qhawkes import NumericalError
from qhawkes.diffusion import (
    DiffusionParams,
    feedback_ratio_mc,
    integrate,
    price_path,
    sample_stationary,
    write_path_csv,
    write_samples_csv,
)
from qhawkes.estimators import hill_exponent

BASE = DiffusionParams(n_h=0.4, beta_bar=1.0, n_z=0.2, omega_bar=0.5, lambda_inf=1.0)


def no_hawkes_params(n_z: float, psi: float = 1.0) -> DiffusionParams:
    return DiffusionParams(
        n_h=0.0, beta_bar=1.0, n_z=n_z, omega_bar=1.0, lambda_inf=1.0, psi=psi
    )


def no_hawkes_cdf(params: DiffusionParams):
    """Closed-form stationary CDF of V when the smooth memory is absent.

    Z is then an Ornstein-Uhlenbeck process whose own variance feeds its
    noise, and its stationary law is Student-t with 1 + 1/n_z degrees of
    freedom and scale^2 = lambda_inf * n_z / (1 + n_z); V = psi^2 *
    (lambda_inf + Z^2) inherits the folded form below.
    """
    df = 1.0 + 1.0 / params.n_z
    scale2 = params.lambda_inf * params.n_z / (1.0 + params.n_z)
    v_floor = params.psi**2 * params.lambda_inf

    def cdf(x):
        x = np.asarray(x, dtype=float)
        arg = np.sqrt(np.maximum(x - v_floor, 0.0) / (params.psi**2 * scale2))
        return 2.0 * stats.t.cdf(arg, df) - 1.0

    return cdf


# ---------------------------------------------------------------------------
# parameters


def test_params_validation():
    with pytest.raises(ValueError):
        DiffusionParams(n_h=1.0, beta_bar=1.0, n_z=0.0, omega_bar=1.0, lambda_inf=1.0)
    with pytest.raises(ValueError):
        DiffusionParams(n_h=-0.1, beta_bar=1.0, n_z=0.0, omega_bar=1.0, lambda_inf=1.0)
    with pytest.raises(ValueError):
        DiffusionParams(n_h=0.0, beta_bar=1.0, n_z=1.0, omega_bar=1.0, lambda_inf=1.0)
    with pytest.raises(ValueError):
        DiffusionParams(n_h=0.6, beta_bar=1.0, n_z=0.4, omega_bar=1.0, lambda_inf=1.0)
    with pytest.raises(ValueError):
        DiffusionParams(n_h=0.4, beta_bar=0.0, n_z=0.2, omega_bar=1.0, lambda_inf=1.0)
    with pytest.raises(ValueError):
        DiffusionParams(n_h=0.4, beta_bar=1.0, n_z=0.2, omega_bar=-1.0, lambda_inf=1.0)
    with pytest.raises(ValueError):
        DiffusionParams(n_h=0.4, beta_bar=1.0, n_z=0.2, omega_bar=1.0, lambda_inf=-1.0)
    with pytest.raises(ValueError):
        DiffusionParams(
            n_h=0.4, beta_bar=1.0, n_z=0.2, omega_bar=1.0, lambda_inf=math.inf
        )
    with pytest.raises(ValueError):
        DiffusionParams(
            n_h=0.4, beta_bar=1.0, n_z=0.2, omega_bar=1.0, lambda_inf=1.0, psi=0.0
        )


def test_params_derived_quantities():
    p = DiffusionParams(
        n_h=0.4, beta_bar=2.0, n_z=0.2, omega_bar=0.5, lambda_inf=1.5, psi=2.0
    )
    assert p.chi == 0.5
    assert p.noise_scale == pytest.approx(math.sqrt(2.0 * 0.2 * 0.5), rel=1e-15)
    assert p.trace == pytest.approx(0.6, rel=1e-15)
    assert p.mean_v() == pytest.approx(4.0 * 1.5 / 0.4, rel=1e-15)
    # slower of: signed memory at rate 0.5, smooth memory at (1-0.4)*2 = 1.2
    assert p.relaxation_time() == pytest.approx(2.0, rel=1e-15)
    # without the smooth channel only omega_bar counts
    q = no_hawkes_params(0.2)
    assert q.relaxation_time() == pytest.approx(1.0, rel=1e-15)


# ---------------------------------------------------------------------------
# integrator


def test_relaxation_without_noise_matches_ode():
    # with n_z = 0 and z0 = 0 the dynamics reduce to a linear ODE for H whose
    # affine recursion the integrator reproduces with exact coefficients
    p = DiffusionParams(n_h=0.4, beta_bar=2.0, n_z=0.0, omega_bar=1.0, lambda_inf=1.5)
    h0 = 3.0
    path = integrate(p, 0.004, 20.0, seed=1, h0=h0)
    a = (1.0 - p.n_h) * p.beta_bar
    h_fix = p.n_h * p.lambda_inf / (1.0 - p.n_h)
    expected = h_fix + (h0 - h_fix) * np.exp(-a * path.times)
    np.testing.assert_allclose(path.h, expected, rtol=1e-12, atol=1e-14)
    assert np.all(path.z == 0.0)


def test_first_moment_balance():
    path = integrate(BASE, 0.01, 1e5, seed=2, store_every=5)
    # drop the first 1000 relaxation times, then compare to the exact
    # stationary mean lambda_inf / (1 - n_h - n_z)
    v = path.v[path.times > 2000.0]
    assert abs(v.mean() - BASE.mean_v()) / BASE.mean_v() < 0.03


def test_mean_v_consistent_across_dt():
    m = {}
    for dt, stride in [(0.01, 10), (0.005, 20)]:
        path = integrate(BASE, dt, 2e4, seed=11, store_every=stride)
        m[dt] = path.v[path.times > 400.0].mean()
    assert abs(m[0.01] - m[0.005]) / m[0.005] < 0.03
    for val in m.values():
        assert abs(val - BASE.mean_v()) / BASE.mean_v() < 0.03


def test_integrate_grid_and_initial_state():
    path = integrate(BASE, 0.01, 10.0, seed=3, h0=0.7, z0=-0.3, store_every=4)
    assert path.times[0] == 0.0
    assert path.h[0] == 0.7
    assert path.z[0] == -0.3
    assert path.times.shape == (251,)
    np.testing.assert_allclose(np.diff(path.times), 0.04, rtol=1e-12)
    np.testing.assert_allclose(
        path.v, BASE.psi**2 * (BASE.lambda_inf + path.h + path.z**2), rtol=1e-15
    )
    assert path.v.min() >= BASE.lambda_inf * (1.0 - 1e-15)


def test_integrate_validation():
    with pytest.raises(ValueError):
        integrate(BASE, 0.2, 10.0, seed=0)  # dt * beta_bar >= 0.1
    with pytest.raises(ValueError):
        integrate(BASE, -0.01, 10.0, seed=0)
    with pytest.raises(ValueError):
        integrate(BASE, 0.01, 0.0, seed=0)
    with pytest.raises(ValueError):
        integrate(BASE, 0.01, 10.0, seed=0, store_every=0)
    with pytest.raises(ValueError):
        integrate(BASE, 0.01, 10.0, seed=0, h0=-1.0)
    with pytest.raises(ValueError):
        integrate(BASE, 0.01, 0.005, seed=0)  # shorter than one stride


# ---------------------------------------------------------------------------
# stationary sampling


def test_no_hawkes_stationary_law_is_folded_student():
    p = no_hawkes_params(0.5)
    v = sample_stationary(p, 20000, seed=3)
    ks = stats.kstest(v, no_hawkes_cdf(p)).statistic
    assert ks < 0.02
    assert v.min() >= p.lambda_inf * (1.0 - 1e-15)


def test_no_hawkes_stationary_law_light_tail_case():
    p = no_hawkes_params(0.1)
    v = sample_stationary(p, 20000, seed=3)
    ks = stats.kstest(v, no_hawkes_cdf(p)).statistic
    assert ks < 0.02


def test_v_support_floor_scales_with_jump_size():
    p = no_hawkes_params(0.3, psi=2.0)
    v = sample_stationary(p, 2000, seed=6)
    assert v.min() >= 4.0 * p.lambda_inf * (1.0 - 1e-15)
    assert v.mean() > 4.0 * p.lambda_inf


def test_sqrt_v_tail_exponent_matches_student_prediction():
    # for n_z = 1/2 the stationary Z is Student-t with 3 degrees of freedom,
    # so sqrt(V) ~ |Z| has survival exponent 3 and density exponent 4, which
    # is what the tail-index estimator targets
    p = no_hawkes_params(0.5)
    v = sample_stationary(p, 200000, seed=5)
    rep = hill_exponent(np.sqrt(v), tail_fraction=0.02)
    assert rep.n_tail == 4000
    assert abs(rep.nu_hill - 4.0) < 0.5


def test_sample_stationary_validation():
    with pytest.raises(ValueError):
        sample_stationary(BASE, 0, seed=0)
    with pytest.raises(ValueError):
        sample_stationary(BASE, 10, burn_in_time=1.0, seed=0)  # < 20 relaxations
    with pytest.raises(ValueError):
        sample_stationary(BASE, 10, thinning_interval=0.0, seed=0)


# ---------------------------------------------------------------------------
# feedback-ratio Monte Carlo


def test_feedback_ratio_slaved_regime():
    # chi = 0.01: the smooth memory tracks the signed one, and the ratio tends
    # to n_h / (1 - n_h) = 1 as chi -> 0
    p = DiffusionParams(n_h=0.5, beta_bar=1.0, n_z=0.05, omega_bar=0.005, lambda_inf=1.0)
    est = feedback_ratio_mc(p, total_time=2000.0 * p.relaxation_time(), seed=4)
    assert est.mode == "conditional_ratio"
    assert abs(est.ratio - 1.0) < 0.15
    assert est.stderr > 0.0
    assert est.n_exceed > 200
    assert est.thresholds[0] < est.thresholds[1] < est.thresholds[2]
    assert math.isfinite(est.sensitivity)


def test_feedback_ratio_scale_separated_regime():
    # chi = 50: the additive offset dominates E[H | Z^2 > u], so the estimate
    # comes from the slope between thresholds; the limit value is
    # n_h / (chi * (1 - n_z)) = 0.3 / 35 ~ 0.00857
    p = DiffusionParams(n_h=0.3, beta_bar=0.04, n_z=0.3, omega_bar=1.0, lambda_inf=1.0)
    est = feedback_ratio_mc(p, total_time=8000.0 * p.relaxation_time(), seed=4)
    assert est.mode == "two_threshold"
    assert 0.004 < est.ratio < 0.017
    assert est.stderr > 0.0


def test_feedback_ratio_input_validation():
    with pytest.raises(ValueError):
        feedback_ratio_mc(no_hawkes_params(0.3), total_time=1e4, seed=0)  # n_h = 0
    with pytest.raises(ValueError):
        feedback_ratio_mc(BASE, y_threshold_quantile=0.5, total_time=1e4, seed=0)
    with pytest.raises(ValueError):
        feedback_ratio_mc(BASE, total_time=10.0, seed=0)  # too short to batch


def test_feedback_ratio_rejects_sparse_exceedances():
    p = DiffusionParams(n_h=0.5, beta_bar=1.0, n_z=0.2, omega_bar=0.5, lambda_inf=1.0)
    with pytest.raises(NumericalError):
        feedback_ratio_mc(p, total_time=100.0, seed=0, n_batches=8)


# ---------------------------------------------------------------------------
# price path


def test_price_path_variance_and_determinism():
    path = integrate(BASE, 0.01, 1e4, seed=12)
    prices = price_path(path, seed=77)
    assert prices.shape == path.times.shape
    assert prices[0] == 0.0
    np.testing.assert_array_equal(prices, price_path(path, seed=77))
    assert not np.array_equal(prices, price_path(path, seed=78))
    realized = np.sum(np.diff(prices) ** 2)
    predicted = np.sum(path.v[:-1] * np.diff(path.times))
    assert abs(realized - predicted) / predicted < 0.02


def test_price_increments_are_leptokurtic():
    # the random variance mixes Gaussians, so increments have kurtosis > 3
    path = integrate(BASE, 0.01, 1e4, seed=12)
    r = np.diff(price_path(path, seed=77))
    assert stats.kurtosis(r, fisher=False) > 3.2


def test_price_path_needs_grid():
    path = integrate(BASE, 0.01, 1.0, seed=1)
    short = type(path)(
        times=path.times[:1], h=path.h[:1], z=path.z[:1], v=path.v[:1], params=BASE
    )
    with pytest.raises(ValueError):
        price_path(short, seed=0)


# ---------------------------------------------------------------------------
# CSV export


def test_write_path_csv_round_trip():
    path = integrate(BASE, 0.01, 1.0, seed=9, store_every=10)
    buf = io.StringIO()
    write_path_csv(path, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("# n_h=0.4 ")
    assert lines[1] == "t,h,z,v"
    assert len(lines) == 2 + path.times.size
    t, h, z, v = (float(x) for x in lines[12].split(","))
    assert t == path.times[10]
    assert h == path.h[10]
    assert z == path.z[10]
    assert v == path.v[10]


def test_write_path_csv_includes_price_column():
    path = integrate(BASE, 0.01, 1.0, seed=9, store_every=10)
    prices = price_path(path, seed=1)
    priced = type(path)(
        times=path.times, h=path.h, z=path.z, v=path.v, params=BASE, p=prices
    )
    buf = io.StringIO()
    write_path_csv(priced, buf)
    lines = buf.getvalue().splitlines()
    assert lines[1] == "t,h,z,v,p"
    assert float(lines[2].split(",")[4]) == 0.0
    assert float(lines[5].split(",")[4]) == prices[3]


def test_write_samples_csv():
    p = no_hawkes_params(0.3)
    values = np.array([1.5, 2.25, 7.0])
    buf = io.StringIO()
    write_samples_csv(values, p, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("# n_h=0.0 ")
    assert lines[1] == "v"
    assert [float(x) for x in lines[2:]] == [1.5, 2.25, 7.0]
