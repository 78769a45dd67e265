"""Tests for correlation, tail, and asymmetry estimators.

The binned rate autocovariance of an exponential self-exciting model with no
signed memory has the closed form A*exp(-gamma*tau) with A and gamma fixed by
the kernel, smeared by the triangular bin window; those values are frozen
below and used as the oracle.
"""

import io
import math

import numpy as np
import pytest

from qhawkes import (
    BinSeries,
    EventStream,
    ExponentialHawkes,
    ExponentialZumbach,
    ModelParams,
    NumericalError,
    ZeroKernel,
    apparent_branching,
    bin_series,
    estimate_correlations,
    hill_exponent,
    rate_autocovariance,
    rate_return_pair_covariance,
    rs_vol,
    simulate_markovian,
    tra_curve,
)
from qhawkes.estimators import write_c_grid_csv, write_d_grid_csv, write_tra_csv

DELTA = 0.25
Q = 16

# closed form for ExponentialHawkes(n=0.5, beta=1), lambda_inf=1 (mean rate 2):
# C(tau) = A * exp(-gamma*tau) with A = rate*n*beta*(2-n)/(2*(1-n)), gamma = beta*(1-n)
A_EXACT = 1.5
GAMMA_EXACT = 0.5
# a bin of width delta sees C smeared by the triangular window, a factor
# 2*(cosh(gamma*delta)-1)/(gamma*delta)^2 per exponential component
SMEAR = 1.0013027616909937
assert abs(SMEAR - 2.0 * (math.cosh(GAMMA_EXACT * DELTA) - 1.0) / (GAMMA_EXACT * DELTA) ** 2) < 1e-13


def binned_c_exact(lag: int) -> float:
    return A_EXACT * math.exp(-GAMMA_EXACT * lag * DELTA) * SMEAR


# frozen spot values of the oracle itself
assert abs(binned_c_exact(1) - 1.3254698786125552) < 1e-12
assert abs(binned_c_exact(16) - 0.20326738928857974) < 1e-12


@pytest.fixture(scope="module")
def hawkes_bins():
    model = ModelParams(ExponentialHawkes(0.5, 1.0), ZeroKernel(), lambda_inf=1.0)
    stream = simulate_markovian(model, 2.0e5, seed=6021)
    return bin_series(stream, DELTA)


@pytest.fixture(scope="module")
def zhawkes_bins():
    model = ModelParams(ExponentialHawkes(0.4, 1.0), ExponentialZumbach(0.2, 0.5), lambda_inf=1.0)
    stream = simulate_markovian(model, 2.0e5, seed=6022)
    return bin_series(stream, DELTA)


def test_autocovariance_matches_closed_form(hawkes_bins):
    est = estimate_correlations(hawkes_bins, q=Q)
    assert abs(est.lambda_bar - 2.0) < 0.05
    for lag, c, se in zip(est.lags, est.c, est.c_se):
        assert abs(c - binned_c_exact(int(lag))) < 5.0 * se


def test_autocovariance_poisson_zero():
    model = ModelParams(ZeroKernel(), ZeroKernel(), lambda_inf=2.0)
    stream = simulate_markovian(model, 5.0e4, seed=6023)
    b = bin_series(stream, DELTA)
    lags, c, se, lambda_bar = rate_autocovariance(b.counts, DELTA, Q)
    assert abs(lambda_bar - 2.0) < 0.05
    assert np.all(np.abs(c) <= 3.0 * se)


def test_autocovariance_unbiased_over_seeds():
    model = ModelParams(ZeroKernel(), ZeroKernel(), lambda_inf=2.0)
    cs, ses = [], []
    for sd in range(25):
        b = bin_series(simulate_markovian(model, 2.0e4, seed=9000 + sd), DELTA)
        _, c, se, _ = rate_autocovariance(b.counts, DELTA, 8)
        cs.append(c)
        ses.append(se)
    mean_c = np.mean(cs, axis=0)
    combined_se = np.sqrt(np.mean(np.square(ses), axis=0) / len(cs))
    assert np.all(np.abs(mean_c) <= 3.0 * combined_se)


def test_autocovariance_even_under_time_reversal(hawkes_bins):
    model = ModelParams(ExponentialHawkes(0.5, 1.0), ZeroKernel(), lambda_inf=1.0)
    stream = simulate_markovian(model, 2.0e5, seed=6021)
    rev = EventStream(
        times=(stream.horizon - stream.times)[::-1].copy(),
        signs=stream.signs[::-1].copy(),
        psi=stream.psi,
        horizon=stream.horizon,
        seed=stream.seed,
    )
    _, c_fwd, _, _ = rate_autocovariance(hawkes_bins.counts, DELTA, Q)
    b_rev = bin_series(rev, DELTA)
    _, c_rev, _, _ = rate_autocovariance(b_rev.counts, DELTA, Q)
    # reversing the stream reverses the count series; lagged products are the
    # same multiset, so the estimates agree to rounding
    np.testing.assert_allclose(c_rev, c_fwd, rtol=1e-9, atol=1e-12)


def test_pair_covariance_zero_without_sign_memory(hawkes_bins):
    est = estimate_correlations(hawkes_bins, q=Q)
    z = np.abs(est.d / est.d_se)
    # sign-blind intensity: all pair covariances vanish; allow the usual
    # statistical exceedances
    assert (z <= 3.0).mean() >= 0.99
    assert np.max(z) < 5.0


def test_pair_covariance_positive_with_sign_memory(zhawkes_bins):
    est = estimate_correlations(zhawkes_bins, q=Q)
    assert est.d_at(1, 2) > 5.0 * est.d_se[0]


def test_pair_accessor_symmetric(zhawkes_bins):
    est = estimate_correlations(zhawkes_bins, q=Q)
    assert est.d_at(3, 7) == est.d_at(7, 3)
    for a, b in [(1, 2), (2, 5), (15, 16)]:
        idx = np.flatnonzero((est.pairs[:, 0] == a) & (est.pairs[:, 1] == b))[0]
        assert est.d_at(a, b) == est.d[idx]
    with pytest.raises(ValueError, match="coincident"):
        est.d_at(4, 4)
    with pytest.raises(ValueError):
        est.d_at(0, 3)
    with pytest.raises(ValueError):
        est.d_at(1, Q + 1)


def test_pair_covariance_independent_of_jump_size(zhawkes_bins):
    b = zhawkes_bins
    scaled = BinSeries(
        bin_index=b.bin_index, open=2.0 * b.open, high=2.0 * b.high, low=2.0 * b.low,
        close=2.0 * b.close, ret=2.0 * b.ret, rs_vol=2.0 * b.rs_vol,
        counts=b.counts, delta=b.delta, psi=2.0 * b.psi,
    )
    _, d1, _ = rate_return_pair_covariance(b.counts, b.ret, b.delta, 6, psi=b.psi)
    _, d2, _ = rate_return_pair_covariance(scaled.counts, scaled.ret, b.delta, 6, psi=scaled.psi)
    np.testing.assert_array_equal(d1, d2)


def test_estimator_input_validation():
    with pytest.raises(ValueError, match="longer than q"):
        rate_autocovariance(np.ones(50), 0.5, 16)
    with pytest.raises(ValueError):
        rate_autocovariance(np.ones(500), -1.0, 16)
    with pytest.raises(ValueError, match="equal length"):
        rate_return_pair_covariance(np.ones(500), np.ones(400), 0.5, 4)
    with pytest.raises(ValueError):
        estimate_correlations((np.ones(500), np.zeros(500)), q=4)  # missing delta/psi


# ---------------------------------------------------------------------------
# Hill tail exponent


def test_hill_all_tail_at_e_times_threshold():
    data = np.concatenate([np.ones(9800), np.full(200, math.e)])
    rep = hill_exponent(data, tail_fraction=0.02)
    assert rep.nu_hill == 2.0
    assert rep.sigma_min == 1.0
    assert rep.n_tail == 200


def test_hill_pareto_density_exponent():
    # survival P(X > x) = (x/sigma)^-2, so the density decays with exponent 3
    rng = np.random.default_rng(314)
    x = 0.37 * rng.random(1_000_000) ** -0.5
    rep = hill_exponent(x, tail_fraction=0.01)
    assert abs(rep.nu_hill - 3.0) < 0.15
    assert rep.n_tail == 10_000


def test_hill_scale_invariance_exact():
    rng = np.random.default_rng(11)
    x = rng.lognormal(size=20_000)
    base = hill_exponent(x, 0.02)
    scaled = hill_exponent(np.ldexp(x, 40), 0.02)  # power-of-two scaling
    assert scaled.nu_hill == base.nu_hill
    arbitrary = hill_exponent(7.3 * x, 0.02)
    assert math.isclose(arbitrary.nu_hill, base.nu_hill, rel_tol=1e-12)
    assert math.isclose(arbitrary.sigma_min, 7.3 * base.sigma_min, rel_tol=1e-12)


def test_hill_errors():
    with pytest.raises(NumericalError, match="need >= 50"):
        hill_exponent(np.ones(100) + np.arange(100), tail_fraction=0.02)
    with pytest.raises(ValueError, match="tail_fraction"):
        hill_exponent(np.ones(10_000), tail_fraction=0.5)
    with pytest.raises(NumericalError):
        hill_exponent(np.full(10_000, 3.7), tail_fraction=0.02)  # degenerate tail
    with pytest.raises(NumericalError, match="positive"):
        hill_exponent(np.zeros(10_000), tail_fraction=0.02)


# ---------------------------------------------------------------------------
# Range volatility


def test_rs_vol_values():
    assert rs_vol(5.0, 5.0, 5.0, 5.0) == 0.0
    v = rs_vol(100.0, 101.0, 99.0, 100.0)
    assert abs(float(v) - 0.014142783843914378) < 1e-12
    v2 = rs_vol(1.0, math.e**2, math.exp(-1.0), math.e)
    assert abs(float(v2) - 2.0) < 1e-12


def test_rs_vol_rejects_bad_ordering():
    with pytest.raises(ValueError, match="ordering"):
        rs_vol(100.0, 99.5, 99.0, 100.0)  # high below open
    with pytest.raises(ValueError, match="positive"):
        rs_vol(1.0, 2.0, -0.5, 1.0)


# ---------------------------------------------------------------------------
# Time-reversal asymmetry


def _causal_vol_series(n=120_000, seed=7):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(n)
    sig = np.abs(np.roll(r, 1)) + 0.5 * np.abs(np.roll(r, 2))
    sig[:2] = sig[2]
    return sig, r


def test_tra_detects_causal_asymmetry():
    sig, r = _causal_vol_series()
    rep = tra_curve(sig, r, q=20)
    assert rep.delta_ratio[4] > 0.01
    assert np.max(rep.delta_ratio) > 0.1


def test_tra_antisymmetric_under_reversal():
    sig, r = _causal_vol_series()
    fwd = tra_curve(sig, r, q=20)
    rev = tra_curve(sig[::-1], r[::-1], q=20)
    np.testing.assert_allclose(rev.delta_ratio, -fwd.delta_ratio, atol=1e-12)


def test_tra_zero_for_symmetric_input():
    rng = np.random.default_rng(21)
    r = rng.standard_normal(50_000)
    rep = tra_curve(np.abs(r), r, q=20)
    assert np.max(np.abs(rep.delta_ratio)) < 1e-12


def test_tra_bound_and_errors():
    sig, r = _causal_vol_series(n=20_000, seed=3)
    rep = tra_curve(sig, r, q=36)
    assert np.all(rep.delta_ratio <= 1.0) and np.all(rep.delta_ratio >= -1.0)
    with pytest.raises(NumericalError, match="variance"):
        tra_curve(np.ones(5000), np.ones(5000), q=10)
    with pytest.raises(ValueError, match="longer"):
        tra_curve(sig[:100], r[:100], q=36)


# ---------------------------------------------------------------------------
# Apparent feedback mass


def test_apparent_branching_poisson_near_zero():
    rng = np.random.default_rng(55)
    x = rng.poisson(5.0, 20_000).astype(float)
    assert apparent_branching(x, window=10) < 0.1


def test_apparent_branching_overdispersed():
    rng = np.random.default_rng(55)
    x = 5.0 * rng.poisson(5.0, 20_000).astype(float)
    assert apparent_branching(x, window=10) > 0.4


def test_apparent_branching_errors():
    with pytest.raises(NumericalError, match="variance"):
        apparent_branching(np.full(2000, 3.0), window=10)
    with pytest.raises(ValueError, match="window"):
        apparent_branching(np.ones(2000), window=1)
    with pytest.raises(ValueError, match="100 windows"):
        apparent_branching(np.arange(300.0), window=10)


def test_apparent_branching_accepts_bin_series(hawkes_bins):
    val = apparent_branching(hawkes_bins, window=20)
    assert 0.0 <= val <= 1.0


# ---------------------------------------------------------------------------
# CSV output


def test_csv_writers_round_trip(zhawkes_bins):
    est = estimate_correlations(zhawkes_bins, q=6)
    buf = io.StringIO()
    write_c_grid_csv(est, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("# delta=0.25")
    assert lines[1] == "lag,value,stderr"
    assert len(lines) == 2 + 6
    lag, val, err = lines[2].split(",")
    assert int(lag) == 1 and float(val) == est.c[0] and float(err) == est.c_se[0]

    buf = io.StringIO()
    write_d_grid_csv(est, buf)
    lines = buf.getvalue().splitlines()
    assert lines[1] == "lag1,lag2,value,stderr"
    assert len(lines) == 2 + est.pairs.shape[0]
    l1, l2, val, _ = lines[2].split(",")
    assert (int(l1), int(l2)) == (1, 2) and float(val) == est.d[0]

    sig, r = _causal_vol_series(n=20_000, seed=3)
    rep = tra_curve(sig, r, q=5)
    buf = io.StringIO()
    write_tra_csv(rep, buf)
    lines = buf.getvalue().splitlines()
    assert lines[1] == "tau,c_pos,c_neg,delta"
    assert len(lines) == 2 + 5
    tau, cp, cn, dl = lines[2].split(",")
    assert int(tau) == 1
    assert float(cp) == rep.c_cross[rep.q + 1]
    assert float(cn) == rep.c_cross[rep.q - 1]
    assert float(dl) == rep.delta_ratio[0]
