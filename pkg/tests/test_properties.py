"""Randomized invariant suite: structural properties that must hold exactly
(or to a pinned tolerance) across the whole input space, not just at
hand-picked fixtures."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from qhawkes import (
    DiffusionParams,
    ExponentialHawkes,
    ExponentialZumbach,
    ModelParams,
    PowerLawHawkes,
    ZeroKernel,
    hill_exponent,
    integrate,
    kernel_norms,
    tra_curve,
)
from qhawkes._rng import philox
from qhawkes import dataio

# ---------------------------------------------------------------------------
# kernel masses agree with direct quadrature of the kernel definitions


def _quad_mass(kernel) -> float:
    if isinstance(kernel, ZeroKernel):
        return 0.0
    if isinstance(kernel, PowerLawHawkes):
        # head directly, tail via y = 1/(1 + c t) to a finite interval
        head = quad(lambda t: kernel.evaluate(t), 0, 1.0 / kernel.c, epsabs=0, epsrel=1e-11)[0]
        c, a, g = kernel.c, kernel.alpha, kernel.g
        tail = quad(lambda y: g * y ** (a - 2.0) / c, 0, 0.5, epsabs=0, epsrel=1e-11)[0]
        return head + tail
    return quad(lambda t: kernel.evaluate(t), 0, np.inf, epsabs=0, epsrel=1e-11)[0]


def _quad_sq_mass(kernel) -> float:
    if isinstance(kernel, ZeroKernel):
        return 0.0
    return quad(lambda t: kernel.evaluate(t) ** 2, 0, np.inf, epsabs=0, epsrel=1e-11)[0]


@settings(max_examples=25, deadline=None)
@given(
    kind=st.sampled_from(["exp", "powerlaw", "zero"]),
    n_h=st.floats(0.01, 0.95),
    rate=st.floats(0.05, 10.0),
    alpha=st.floats(1.05, 3.5),
    c=st.floats(1e-3, 2.0),
    zkind=st.sampled_from(["exp", "zero"]),
    n_z=st.floats(0.01, 0.9),
    omega=st.floats(0.05, 10.0),
)
def test_kernel_norm_quadrature(kind, n_h, rate, alpha, c, zkind, n_z, omega):
    if kind == "exp":
        diag = ExponentialHawkes(n_h=n_h, beta=rate)
    elif kind == "powerlaw":
        diag = PowerLawHawkes.from_norm(n_h=n_h, c=c, alpha=alpha)
    else:
        diag = ZeroKernel()
    zum = ExponentialZumbach(n_z=n_z, omega=omega) if zkind == "exp" else ZeroKernel()
    model = ModelParams(diagonal=diag, zumbach=zum, lambda_inf=1.0)
    norms = kernel_norms(model)
    assert norms["n_h"] == pytest.approx(_quad_mass(diag), rel=1e-8, abs=1e-12)
    assert norms["n_z"] == pytest.approx(_quad_sq_mass(zum), rel=1e-8, abs=1e-12)
    assert norms["trace"] == norms["n_h"] + norms["n_z"]


# ---------------------------------------------------------------------------
# Hill tail estimates are invariant under positive rescaling of the data


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    log2_scale=st.integers(-30, 30),
    scale=st.floats(1e-6, 1e6),
)
def test_hill_scale_invariance(seed, log2_scale, scale):
    x = np.exp(philox(seed, 0x48494C4C).standard_normal(5_000))
    base = hill_exponent(x, 0.02)
    two_pow = hill_exponent(np.ldexp(x, log2_scale), 0.02)
    assert two_pow.nu_hill == base.nu_hill  # exact: log-ratios untouched
    arb = hill_exponent(scale * x, 0.02)
    assert math.isclose(arb.nu_hill, base.nu_hill, rel_tol=1e-9)
    assert math.isclose(arb.sigma_min, scale * base.sigma_min, rel_tol=1e-9)


# ---------------------------------------------------------------------------
# the time-asymmetry ratio is a normalized quantity in [-1, 1]


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    q=st.integers(2, 20),
    coupling=st.floats(0.05, 0.95),
)
def test_tra_ratio_bounded(seed, q, coupling):
    rng = philox(seed, 0x54524131)
    n = 4_000
    r = rng.standard_normal(n)
    vol = np.ones(n)
    for t in range(1, n):  # causal volatility feedback, strength `coupling`
        vol[t] = 1.0 + coupling * (0.9 * (vol[t - 1] - 1.0) + 0.5 * abs(r[t - 1]))
    rep = tra_curve(vol, r, q=q)
    assert np.all(rep.delta_ratio <= 1.0)
    assert np.all(rep.delta_ratio >= -1.0)
    # reversing time flips the sign exactly
    rev = tra_curve(vol[::-1].copy(), r[::-1].copy(), q=q)
    np.testing.assert_allclose(rev.delta_ratio, -rep.delta_ratio, atol=1e-10)


# ---------------------------------------------------------------------------
# the smooth memory of the limit diffusion never goes negative


@settings(max_examples=20, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    n_h=st.floats(0.0, 0.7),
    n_z=st.floats(0.01, 0.29),
    beta_bar=st.floats(0.1, 5.0),
    omega_bar=st.floats(0.1, 5.0),
    lambda_inf=st.floats(0.1, 5.0),
)
def test_diffusion_smooth_memory_nonnegative(
    seed, n_h, n_z, beta_bar, omega_bar, lambda_inf
):
    params = DiffusionParams(
        n_h=n_h, beta_bar=beta_bar, n_z=n_z, omega_bar=omega_bar,
        lambda_inf=lambda_inf,
    )
    dt = 0.05 / max(beta_bar, omega_bar)
    path = integrate(params, dt, 1_000 * dt, seed=seed)
    assert path.h.min() >= 0.0
    assert path.v.min() >= params.psi**2 * params.lambda_inf * (1.0 - 1e-12)


# ---------------------------------------------------------------------------
# normalization is idempotent on its fixed-point family


def _balanced_signs(rng, n_days, n_bins):
    total = n_days * n_bins
    signs = np.resize([1.0, -1.0], total)
    rng.shuffle(signs)
    return signs.reshape(n_days, n_bins)


def _panel_csv_from_returns(mats):
    rows = ["stock_id,date,bin,open,high,low,close\n"]
    for u, mat in enumerate(mats):
        for t in range(mat.shape[0]):
            for b in range(mat.shape[1]):
                r = float(mat[t, b])
                o = 100.0
                c = o * math.exp(r)
                h = max(o, c) * 1.001
                low = min(o, c) / 1.001
                rows.append(f"S{u},2020-01-{t + 1:02d},{b},{o!r},{h!r},{low!r},{c!r}\n")
    return "".join(rows)


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    n_stocks=st.integers(2, 4),
    n_days=st.integers(2, 4),
    half_bins=st.integers(2, 4),
    level=st.floats(1e-4, 0.05),
)
def test_normalization_idempotent_on_flat_panels(
    seed, n_stocks, n_days, half_bins, level
):
    import io

    n_bins = 2 * half_bins  # even count so per-stock sign balance is possible
    rng = philox(seed, 0x4944454D)
    mats = [level * _balanced_signs(rng, n_days, n_bins) for _ in range(n_stocks)]
    first = dataio.normalize(dataio.load_csv(io.StringIO(_panel_csv_from_returns(mats))))
    again = dataio.normalize(
        dataio.load_csv(
            io.StringIO(_panel_csv_from_returns([first.ret[u] for u in range(n_stocks)]))
        )
    )
    assert first.excluded.sum() == 0 and again.excluded.sum() == 0
    np.testing.assert_allclose(again.ret, first.ret, atol=1e-9)
