import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from qhawkes.errors import ConfigError
from qhawkes.kernels import (
    ExponentialHawkes,
    ExponentialZumbach,
    ModelParams,
    PowerLawHawkes,
    ZeroKernel,
    discretize_qarch,
    evaluate_kernel,
    kernel_norms,
    load_model,
    model_from_keyvalues,
    model_to_keyvalues,
    save_model,
    stationarity_check,
)


def test_exponential_values():
    k = ExponentialHawkes(n_h=0.4, beta=2.0)
    assert k.evaluate(0.0) == pytest.approx(0.8)
    assert k.evaluate(1.0) == pytest.approx(0.8 * math.exp(-2.0))
    assert k.evaluate(-1e-9) == 0.0
    assert k.norm() == 0.4


def test_powerlaw_values_and_norm():
    k = PowerLawHawkes(g=0.0016, c=0.01, alpha=1.2)
    assert k.evaluate(0.0) == pytest.approx(0.0016)
    assert k.evaluate(100.0) == pytest.approx(0.0016 * 2.0**-1.2)
    # norm = g / (c (alpha-1)) = 0.0016 / 0.002
    assert k.norm() == pytest.approx(0.8)
    assert PowerLawHawkes.from_norm(0.8, c=0.01, alpha=1.2).g == pytest.approx(0.0016)


def test_zumbach_amplitude_fixed_by_squared_norm():
    k = ExponentialZumbach(n_z=0.1, omega=0.03)
    assert k.k0 == pytest.approx(math.sqrt(0.006))
    assert k.squared_norm() == 0.1
    assert k.evaluate(0.0) == pytest.approx(k.k0)


@pytest.mark.parametrize(
    "bad",
    [
        lambda: ExponentialHawkes(n_h=-0.1, beta=1.0),
        lambda: ExponentialHawkes(n_h=0.5, beta=0.0),
        lambda: PowerLawHawkes(g=0.1, c=0.0, alpha=1.5),
        lambda: PowerLawHawkes(g=0.1, c=1.0, alpha=1.0),
        lambda: ExponentialZumbach(n_z=-0.2, omega=1.0),
        lambda: ExponentialZumbach(n_z=0.2, omega=-1.0),
    ],
)
def test_domain_errors(bad):
    with pytest.raises(ValueError):
        bad()


# Independent oracle for every closed-form norm: adaptive quadrature.
@settings(max_examples=40, deadline=None)
@given(
    n_h=st.floats(0.01, 0.99),
    beta=st.floats(0.05, 20.0),
    n_z=st.floats(0.01, 0.99),
    omega=st.floats(0.05, 20.0),
)
def test_exponential_norms_match_quadrature(n_h, beta, n_z, omega):
    model = ModelParams(
        diagonal=ExponentialHawkes(n_h=n_h, beta=beta),
        zumbach=ExponentialZumbach(n_z=n_z, omega=omega),
        lambda_inf=1.0,
    )
    norms = kernel_norms(model)
    phi_int, _ = quad(lambda t: model.diagonal.evaluate(t), 0, np.inf, epsabs=0, epsrel=1e-11)
    k2_int, _ = quad(lambda t: model.zumbach.evaluate(t) ** 2, 0, np.inf, epsabs=0, epsrel=1e-11)
    assert norms["n_h"] == pytest.approx(phi_int, rel=1e-8)
    assert norms["n_z"] == pytest.approx(k2_int, rel=1e-8)
    assert norms["trace"] == pytest.approx(phi_int + k2_int, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(
    g=st.floats(1e-4, 2.0),
    c=st.floats(1e-3, 5.0),
    alpha=st.floats(1.05, 4.0),
)
def test_powerlaw_norm_matches_quadrature(g, c, alpha):
    k = PowerLawHawkes(g=g, c=c, alpha=alpha)
    # Head directly; tail via the substitution y = 1/(1+c*t), dt = dy/(c*y^2),
    # which maps [1/c, inf) to a finite interval quad can resolve.
    val = quad(lambda t: k.evaluate(t), 0, 1.0 / c, epsabs=0, epsrel=1e-11)[0]
    val += quad(lambda y: g * y ** (alpha - 2.0) / c, 0.0, 0.5, points=[0.0], epsabs=0, epsrel=1e-11)[0]
    assert k.norm() == pytest.approx(val, rel=1e-8)


def test_stationarity_classification():
    model = ModelParams(
        diagonal=ExponentialHawkes(n_h=0.8, beta=1.0),
        zumbach=ExponentialZumbach(n_z=0.1, omega=0.5),
        lambda_inf=1.0,
    )
    rep = stationarity_check(model)
    assert rep.stationary and not rep.critical
    assert rep.trace == pytest.approx(0.9)
    assert rep.mean_rate == pytest.approx(10.0)

    crit = ModelParams(
        diagonal=ExponentialHawkes(n_h=1.0, beta=1.0),
        zumbach=ZeroKernel(),
        lambda_inf=0.0,
    )
    rep = stationarity_check(crit)
    assert rep.critical and not rep.stationary
    assert math.isnan(rep.mean_rate)

    runaway = ModelParams(
        diagonal=ExponentialHawkes(n_h=1.2, beta=1.0),
        zumbach=ZeroKernel(),
        lambda_inf=1.0,
    )
    rep = stationarity_check(runaway)
    assert not rep.stationary and not rep.critical
    with pytest.raises(ValueError):
        runaway.mean_rate()


def test_phi_d_combines_diagonal_and_squared_sqrt_kernel():
    model = ModelParams(
        diagonal=ExponentialHawkes(n_h=0.4, beta=1.0),
        zumbach=ExponentialZumbach(n_z=0.2, omega=0.5),
        lambda_inf=1.0,
    )
    t = np.array([0.0, 0.3, 2.0])
    expected = model.diagonal.evaluate(t) + model.zumbach.evaluate(t) ** 2
    np.testing.assert_allclose(model.phi_d(t), expected, rtol=1e-15)
    np.testing.assert_allclose(evaluate_kernel(model, t, "phi_d"), expected, rtol=1e-15)


def test_discretize_qarch_matrix_entries():
    model = ModelParams(
        diagonal=ExponentialHawkes(n_h=0.4, beta=1.0),
        zumbach=ExponentialZumbach(n_z=0.2, omega=0.5),
        lambda_inf=2.0,
        psi=0.5,
    )
    delta, q = 0.25, 8
    qm = discretize_qarch(model, delta, q)
    assert qm.q == q and qm.delta == delta
    assert qm.sigma_inf2 == pytest.approx(0.5**2 * 2.0 * delta)
    assert qm.leverage.shape == (q,) and np.all(qm.leverage == 0.0)
    tau = np.arange(1, q + 1) * delta
    kv = model.zumbach.evaluate(tau)
    for a in range(q):
        for b in range(q):
            if a == b:
                want = (model.diagonal.evaluate(tau[a]) + kv[a] ** 2) * delta
            else:
                want = kv[a] * kv[b] * delta
            assert qm.kmat[a, b] == pytest.approx(float(want), rel=1e-14)
    # symmetry comes for free from the construction
    np.testing.assert_allclose(qm.kmat, qm.kmat.T, rtol=0, atol=0)


def test_serialization_round_trip_exact():
    models = [
        ModelParams(
            diagonal=PowerLawHawkes(g=0.0016, c=0.01, alpha=1.2),
            zumbach=ExponentialZumbach(n_z=0.1, omega=0.03),
            lambda_inf=0.123456789012345,
            psi=1e-4,
        ),
        ModelParams(
            diagonal=ExponentialHawkes(n_h=0.4, beta=1.0),
            zumbach=ZeroKernel(),
            lambda_inf=1.0,
        ),
        ModelParams(diagonal=ZeroKernel(), zumbach=ExponentialZumbach(n_z=0.5, omega=1.0), lambda_inf=1.0),
    ]
    for model in models:
        buf = io.StringIO()
        save_model(model, buf)
        buf.seek(0)
        back = load_model(buf)
        assert back == model  # bit-exact via repr round trip


def test_parse_errors_are_config_errors():
    with pytest.raises(ConfigError):
        model_from_keyvalues({"diagonal.kind": "exp"})  # missing fields
    with pytest.raises(ConfigError):
        model_from_keyvalues(
            {
                "diagonal.kind": "nope",
                "zumbach.kind": "zero",
                "lambda_inf": "1.0",
            }
        )
    with pytest.raises(ConfigError):
        load_model(io.StringIO("diagonal.kind exp\n"))
    d = model_to_keyvalues(
        ModelParams(diagonal=ZeroKernel(), zumbach=ZeroKernel(), lambda_inf=1.0)
    )
    d["lambda_inf"] = "-3"
    with pytest.raises(ConfigError):
        model_from_keyvalues(d)
