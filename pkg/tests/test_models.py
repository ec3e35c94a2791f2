import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otlpf.models import (
    KuramotoSivashinskyModel,
    KuramotoSivashinskyParams,
    ModelBlowUpError,
    ObservationOperator,
    StochasticTurbulenceModel,
    StochasticTurbulenceParams,
    TransformedModel,
    TransformSpec,
    complex_normal,
    inverse_real_dft,
    ks_drift,
    ks_etdrk4_step,
    make_model,
    real_dft,
    st_spectral_tables,
)


def test_dft_constant_and_cosine():
    c = real_dft(np.full(16, 2.5))
    assert c[0] == pytest.approx(2.5)
    assert np.abs(c[1:]).max() < 1e-14
    s = np.arange(16) / 16
    c = real_dft(np.cos(2 * np.pi * s))
    assert np.count_nonzero(np.abs(c) > 1e-12) == 1
    assert c[1] == pytest.approx(0.5)


@given(arrays(float, st.sampled_from([7, 8, 32]), elements=st.floats(-1e3, 1e3)))
def test_dft_round_trip(x):
    assert np.abs(inverse_real_dft(real_dft(x), x.size) - x).max() < 1e-12 * (1 + np.abs(x).max())


def test_st_tables_examples():
    tab = st_spectral_tables(StochasticTurbulenceParams())
    assert tab.kernel[0] == pytest.approx(0.1)
    assert tab.psi[0] == pytest.approx(0.1)
    assert tab.b[0] == pytest.approx(np.exp(-0.25), abs=1e-12)
    assert tab.a[0] == pytest.approx(0.1 / np.sqrt(0.2))
    assert np.all(np.abs(tab.b) < 1)
    assert np.all(np.isreal(tab.c)) and np.all(tab.c >= 0)
    assert tab.xi[-1].imag == 0


def test_st_params_reject_zero_psi():
    with pytest.raises(ValueError):
        StochasticTurbulenceParams(theta1=0.0, theta3=0.0)


def test_st_init_variance_matches_stationary():
    model = StochasticTurbulenceModel()
    X = model.init(20_000, np.random.default_rng(0))
    var = X.var(axis=0).mean()
    assert var == pytest.approx(model.stationary_variance(), rel=0.02)
    cov = model.stationary_covariance()
    assert np.diag(cov).mean() == pytest.approx(model.stationary_variance(), rel=1e-10)


def test_st_init_zero_amplitude_and_seeded():
    params = StochasticTurbulenceParams(M=32, L=4, amplitude=0.0)
    model = StochasticTurbulenceModel(params)
    assert np.all(model.init(5, np.random.default_rng(0)) == 0)
    model = StochasticTurbulenceModel(StochasticTurbulenceParams(M=32, L=4))
    a = model.init(4, np.random.default_rng(9))
    b = model.init(4, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_st_forward_noise_variance_per_mode():
    params = StochasticTurbulenceParams(M=16, L=2)
    model = StochasticTurbulenceModel(params)
    X = model.forward(np.zeros((100_000, 16)), np.random.default_rng(1))
    coeffs = real_dft(X)
    c = params.tables.c
    interior = np.mean(np.abs(coeffs[:, 1:-1]) ** 2, axis=0)
    np.testing.assert_allclose(interior, c[1:-1] ** 2, rtol=0.02)
    assert np.mean(coeffs[:, 0].real ** 2) == pytest.approx(c[0] ** 2, rel=0.02)


def test_st_forward_matches_transition_matrix():
    model = StochasticTurbulenceModel(StochasticTurbulenceParams(M=16, L=2))
    x0 = np.random.default_rng(2).normal(size=(1, 16))
    A = model.transition_matrix()
    N = 100_000
    X = model.forward(np.repeat(x0, N, axis=0), np.random.default_rng(3))
    mean = X.mean(axis=0)
    Q = model.noise_covariance()
    assert np.all(np.abs(mean - A @ x0[0]) < 4 * np.sqrt(np.diag(Q) / N))
    np.testing.assert_allclose(np.cov(X.T), Q, atol=0.02 * np.abs(Q).max())


def test_st_pure_advection_shifts_field():
    params = StochasticTurbulenceParams(theta1=0.0, theta3=1e-9, amplitude=1e-300)
    model = StochasticTurbulenceModel(params)
    s = model.mesh.positions
    x = np.exp(-((s - 0.2) ** 2) / 0.001)[None]
    rng = np.random.default_rng(0)
    y = model.forward(model.forward(x, rng), rng)
    lags = [np.dot(np.roll(x[0], k), y[0]) for k in range(params.M)]
    expected = round(params.M * params.theta2 * params.delta * 2) % params.M
    shift = int(np.argmax(lags))
    assert min(abs(shift - expected), params.M - abs(shift - expected)) <= 1


def test_observation_operator_index_and_density():
    obs = ObservationOperator(512, 64)
    assert obs.indices[0] == 3
    x = np.random.default_rng(0).normal(size=512)
    y = obs.predict(x)
    assert np.allclose(obs.log_density(y, x), -np.log(0.5 * np.sqrt(2 * np.pi)))
    tanh = ObservationOperator(512, 64, kind="tanh")
    assert np.all(tanh.predict(np.zeros(512)) == 0)
    with pytest.raises(ValueError):
        ObservationOperator(512, 3)
    with pytest.raises(ValueError):
        tanh.matrix()
    H = obs.matrix()
    assert np.array_equal(H @ x, y)


def test_complex_normal_convention():
    u = complex_normal(np.random.default_rng(0), (200_000,), 8)
    assert np.all(u[:, 0].imag == 0) and np.all(u[:, -1].imag == 0)
    assert np.var(u[:, 2].real) == pytest.approx(0.5, rel=0.02)
    assert np.var(u[:, 0].real) == pytest.approx(1.0, rel=0.02)


def test_ks_defaults():
    p = KuramotoSivashinskyParams()
    assert p.theta1 == 32 * np.pi and p.theta2 == 1 / 6
    assert p.theta3 == pytest.approx(1 / (32 * np.pi))
    assert p.theta4 == pytest.approx((32 * np.pi) ** -0.5)
    assert p.delta == 0.25 and p.S == 10


def test_ks_drift_examples():
    p = KuramotoSivashinskyParams(M=64, L=4)
    zero = np.zeros(33, dtype=complex)
    assert np.all(ks_drift(zero, p) == 0)
    eps = 1e-2
    v = np.zeros(33, dtype=complex)
    v[1] = eps / 2  # eps * cos(2 pi s)
    drift = ks_drift(v, p)
    # cos^2 = (1 + cos 2.)/2, so DFT_2(x^2) = eps^2 / 4
    expected2 = 1j * p.omega[2] / (2 * p.theta1) * eps**2 / 4
    assert drift[2] == pytest.approx(expected2, rel=1e-12)
    assert drift[1] == pytest.approx(p.linear_symbol[1] * eps / 2, rel=1e-12)
    assert drift[-1] == 0
    x = inverse_real_dft(drift, 64)
    assert np.all(np.isfinite(x))


def test_ks_linear_etdrk4_exact():
    p = KuramotoSivashinskyParams(M=64, L=4)
    v = complex_normal(np.random.default_rng(0), (), 64) * 0.1
    w = v.copy()
    for _ in range(p.S):
        w = ks_etdrk4_step(w, p, nonlinear=False)
    np.testing.assert_allclose(w, np.exp(p.linear_symbol * p.S * p.delta) * v, atol=1e-10)


def test_ks_damped_deterministic_decay():
    p = KuramotoSivashinskyParams(M=64, L=4, theta2=5.0)
    s = np.arange(64) / 64
    v = real_dft(np.sin(2 * np.pi * s) + 0.5 * np.cos(4 * np.pi * s))
    norms = []
    for _ in range(100):
        v = ks_etdrk4_step(v, p)
        norms.append(np.linalg.norm(v))
    assert np.all(np.diff(norms) < 0)


def test_ks_reduced_model_runs_and_is_seeded():
    params = KuramotoSivashinskyParams(M=32, L=4, T=5, theta1=8 * np.pi, spinup_intervals=2)
    model = KuramotoSivashinskyModel(params, "tanh")
    X = model.init(3, np.random.default_rng(4))
    Y = model.forward(X, np.random.default_rng(5))
    again = model.forward(X, np.random.default_rng(5))
    assert np.array_equal(Y, again) and np.all(np.isfinite(Y))
    assert model.name == "ks_tanh"


def test_ks_blow_up_is_reported():
    params = KuramotoSivashinskyParams(M=32, L=4, spinup_intervals=1)
    model = KuramotoSivashinskyModel(params)
    with pytest.raises(ModelBlowUpError):
        model.forward(np.full((1, 32), 1e300), np.random.default_rng(0))


@settings(max_examples=50)
@given(arrays(float, 20, elements=st.floats(-100, 100)))
def test_transform_round_trip(x):
    spec = TransformSpec(5.0)
    assert np.abs(spec.invert(spec.apply(x)) - x).max() <= 1e-10 * max(1.0, np.abs(x).max())


def test_transform_overflow_reported():
    with pytest.raises(ModelBlowUpError):
        TransformSpec(5.0).invert(np.array([1e4]))


def test_transformed_model_identity_equals_base():
    base = StochasticTurbulenceModel(StochasticTurbulenceParams(M=32, L=4))
    model = TransformedModel(base, TransformSpec(kind="identity"))
    x0 = base.init(3, np.random.default_rng(0))
    assert np.array_equal(model.init(3, np.random.default_rng(0)), x0)
    assert np.array_equal(model.forward(x0, np.random.default_rng(1)),
                          base.forward(x0, np.random.default_rng(1)))
    y = np.zeros(4)
    assert np.array_equal(model.obs.log_density(y, x0), base.obs.log_density(y, x0))


def test_transformed_model_conjugates_base():
    base = StochasticTurbulenceModel(StochasticTurbulenceParams(M=32, L=4))
    model = TransformedModel(base, TransformSpec(5.0))
    x0 = base.init(3, np.random.default_rng(0))
    z1 = model.forward(model.transform.apply(x0), np.random.default_rng(1))
    x1 = base.forward(x0, np.random.default_rng(1))
    np.testing.assert_allclose(z1, model.transform.apply(x1), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(model.obs.predict(z1), base.obs.predict(x1), atol=1e-12)


def test_make_model_kinds():
    assert make_model("st_linear").name == "st_linear"
    model = make_model("st_transformed")
    assert model.name == "st_transformed" and model.transform.scale == 5.0
    params = dataclasses.replace(KuramotoSivashinskyParams(), M=64, L=8)
    assert make_model("ks_tanh", params).obs.kind == "tanh"
    with pytest.raises(ValueError):
        make_model("lorenz96")
