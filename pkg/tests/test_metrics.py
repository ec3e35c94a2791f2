import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from otlpf.filters import iter_kalman_filter, kalman_filter_st
from otlpf.metrics import (
    chi_square_uniform,
    ensemble_stats,
    gaussian_smoothness,
    kalman_ground_truth,
    pushforward_ground_truth,
    rank_counts,
    rank_histogram,
    rmse_mean,
    rmse_smoothness,
    rmse_std,
    smoothness_coefficient,
    state_ground_truth,
)
from otlpf.models import StochasticTurbulenceModel, StochasticTurbulenceParams, TransformSpec

fields = arrays(float, st.integers(2, 40), elements=st.floats(-100, 100))


def test_ensemble_stats_examples():
    mean, std = ensemble_stats(np.array([[0.0], [2.0]]))
    assert mean[0] == 1.0 and std[0] == 1.0
    _, std = ensemble_stats(np.ones((4, 3)))
    assert np.all(std == 0)


@given(arrays(float, (5, 3), elements=st.floats(-10, 10)))
def test_ensemble_mean_permutation_invariant(X):
    np.testing.assert_allclose(ensemble_stats(X[::-1])[0], ensemble_stats(X)[0], atol=1e-12)


def test_rmse_examples():
    a = np.random.default_rng(0).normal(size=(4, 5))
    assert rmse_mean(a, a) == 0.0
    assert rmse_std(a + 0.3, a) == pytest.approx(0.3)
    assert rmse_smoothness(np.arange(3.0) + 2, np.arange(3.0)) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        rmse_mean(a, a[:2])


@given(arrays(float, (3, 4), elements=st.floats(-10, 10)),
       arrays(float, (3, 4), elements=st.floats(-10, 10)), st.floats(-5, 5))
def test_rmse_offset_invariant_and_nonnegative(a, b, c):
    assert rmse_mean(a, b) >= 0
    assert rmse_mean(a + c, b + c) == pytest.approx(rmse_mean(a, b), abs=1e-9)


def test_smoothness_examples():
    assert smoothness_coefficient(np.full(8, 3.0)) == 0
    spike = np.zeros(8)
    spike[2] = 1.5
    assert smoothness_coefficient(spike) == pytest.approx(3.0)
    alt = 0.7 * (-1.0) ** np.arange(8)
    assert smoothness_coefficient(alt) == pytest.approx(2 * 8 * 0.7)


@given(fields, st.floats(-10, 10), st.integers(0, 50))
def test_smoothness_shift_invariance(x, c, k):
    base = smoothness_coefficient(x)
    assert smoothness_coefficient(x + c) == pytest.approx(base, rel=1e-9, abs=1e-6)
    assert smoothness_coefficient(np.roll(x, k)) == pytest.approx(base, rel=1e-12, abs=1e-12)


def test_gaussian_smoothness_matches_monte_carlo():
    model = StochasticTurbulenceModel(StochasticTurbulenceParams(M=32, L=4))
    cov = model.stationary_covariance()
    exact = gaussian_smoothness(np.zeros(32) + 0.1 * np.arange(32), cov)
    rng = np.random.default_rng(0)
    X = 0.1 * np.arange(32) + rng.multivariate_normal(np.zeros(32), cov, size=40_000)
    assert smoothness_coefficient(X) == pytest.approx(exact, rel=0.01)


def test_rank_examples():
    X = np.arange(5.0)[:, None]
    assert rank_counts(X, np.array([-1.0]))[0] == 1
    assert rank_counts(X, np.array([10.0]))[5] == 1
    ensembles = np.random.default_rng(0).normal(size=(3, 5, 7))
    truths = np.zeros((3, 7))
    assert rank_histogram(ensembles, truths).sum() == 21


def test_rank_histogram_exchangeable_is_uniform():
    rng = np.random.default_rng(1)
    P = 9
    draws = rng.normal(size=(100_000, P + 1))
    counts = np.bincount((draws[:, 1:] < draws[:, :1]).sum(1), minlength=P + 1)
    stat = chi_square_uniform(counts)
    assert stats.chi2.sf(stat, P) > 1e-3


def test_chi_square_uniform_zero_for_flat():
    assert chi_square_uniform(np.full(5, 10)) == 0


def _beliefs(model, T=3):
    y = np.random.default_rng(2).normal(size=(T, model.obs.L))
    return list(iter_kalman_filter(model, y)), y


def test_kalman_ground_truth_shapes():
    model = StochasticTurbulenceModel(StochasticTurbulenceParams(M=32, L=4))
    beliefs, y = _beliefs(model)
    gt = kalman_ground_truth(beliefs)
    means, stds = kalman_filter_st(model, y)
    assert gt.source == "kalman_exact"
    assert np.array_equal(gt.means, means) and np.array_equal(gt.stds, stds)
    assert gt.smoothness.shape == (3,) and np.all(gt.stds >= 0)


def test_pushforward_identity_recovers_kalman():
    model = StochasticTurbulenceModel(StochasticTurbulenceParams(M=32, L=4))
    beliefs, _ = _beliefs(model)
    N = 10_000
    gt = pushforward_ground_truth(beliefs, TransformSpec(kind="identity"), N,
                                  np.random.default_rng(3))
    exact = kalman_ground_truth(beliefs)
    assert gt.source == f"pushforward_mc({N})"
    assert np.all(np.abs(gt.means - exact.means) <= 4 * exact.stds / np.sqrt(N))
    assert np.all(np.abs(gt.stds - exact.stds) <= 4 * exact.stds / np.sqrt(N))
    np.testing.assert_allclose(gt.smoothness, exact.smoothness, rtol=4 / np.sqrt(N))


def test_pushforward_asinh_is_platykurtic():
    model = StochasticTurbulenceModel(StochasticTurbulenceParams(M=32, L=4, amplitude=2.0))
    belief = next(iter_kalman_filter(model, np.zeros((1, 4)) + 1e-3))
    rng = np.random.default_rng(4)
    z = TransformSpec(5.0).apply(rng.multivariate_normal(belief.mean, belief.cov, size=20_000))
    assert stats.kurtosis(z[:, 1]) < 0


def test_state_ground_truth_placeholders():
    gt = state_ground_truth(np.zeros((2, 3)))
    assert gt.source == "true_state" and np.isnan(gt.stds).all()
