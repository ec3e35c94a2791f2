"""Accuracy metrics, rank histograms and ground-truth generators."""

from dataclasses import dataclass

import numpy as np
from scipy.special import erf


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """True filtering means, standard deviations and smoothness coefficients.

    Attributes:
        means: ``(T, M)``.
        stds: ``(T, M)``.
        smoothness: ``(T,)``.
        source: ``kalman_exact``, ``pushforward_mc(N)``, ``reference_ensemble``
            or ``true_state``.
    """

    means: np.ndarray
    stds: np.ndarray
    smoothness: np.ndarray
    source: str


@dataclass
class MetricsRecord:
    """Scalar summary of one filtering run against a ground truth."""

    rmse_mean: float
    rmse_std: float
    rmse_smooth: float
    median_n_eff: float
    assim_seconds: float


def ensemble_stats(X):
    """Equal-weight ensemble mean and standard deviation (``1 / P`` convention)."""
    X = np.asarray(X, dtype=float)
    return X.mean(axis=0), X.std(axis=0)


def _rmse(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_mean(estimates, truth):
    """Root mean squared error over all times and nodes."""
    return _rmse(estimates, truth)


def rmse_std(estimates, truth):
    """Root mean squared error of standard deviations over all times and nodes."""
    return _rmse(estimates, truth)


def rmse_smoothness(estimates, truth):
    """Root mean squared error of smoothness coefficients over time."""
    return _rmse(estimates, truth)


def smoothness_coefficient(X):
    """Mean over particles of ``sum_m |x_m - x_{m+1}|`` with periodic wrap.

    Args:
        X: A single field ``(M,)`` or an ensemble ``(P, M)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return float(np.abs(X - np.roll(X, -1, axis=1)).sum(axis=1).mean())


def rank_counts(X, truth, P=None):
    """Rank histogram counts of one time step.

    The rank is the number of members strictly below the true value.
    """
    X = np.atleast_2d(X)
    P = X.shape[0] if P is None else P
    ranks = (X < np.asarray(truth)[None, :]).sum(axis=0)
    return np.bincount(ranks, minlength=P + 1)


def rank_histogram(ensembles, truths):
    """Rank histogram over all times and nodes.

    Args:
        ensembles: ``(T, P, M)`` ensembles.
        truths: ``(T, M)`` true states.

    Returns:
        Integer counts of length ``P + 1``.
    """
    ensembles = np.asarray(ensembles)
    P = ensembles.shape[1]
    counts = np.zeros(P + 1, dtype=np.int64)
    for X, z in zip(ensembles, truths):
        counts += rank_counts(X, z, P)
    return counts


def chi_square_uniform(counts):
    """Pearson chi-square statistic of ``counts`` against a uniform histogram."""
    counts = np.asarray(counts, dtype=float)
    expected = counts.sum() / counts.size
    return float(((counts - expected) ** 2).sum() / expected)


def _folded_normal_mean(mu, sigma):
    """``E|D|`` for ``D ~ N(mu, sigma^2)``."""
    sigma = np.maximum(sigma, 1e-300)
    z = mu / sigma
    return sigma * np.sqrt(2 / np.pi) * np.exp(-0.5 * z**2) + mu * erf(z / np.sqrt(2))


def gaussian_smoothness(mean, cov):
    """Exact expected smoothness coefficient of ``N(mean, cov)``."""
    nxt = np.roll(np.arange(mean.size), -1)
    diff_mean = mean - mean[nxt]
    var = np.diag(cov) + np.diag(cov)[nxt] - 2 * cov[np.arange(mean.size), nxt]
    return float(_folded_normal_mean(diff_mean, np.sqrt(np.clip(var, 0, None))).sum())


def kalman_ground_truth(beliefs):
    """Exact ground truth from a sequence of Gaussian filtering beliefs."""
    means, stds, smooth = [], [], []
    for belief in beliefs:
        means.append(belief.mean)
        stds.append(belief.std)
        smooth.append(gaussian_smoothness(belief.mean, belief.cov))
    return GroundTruth(np.array(means), np.array(stds), np.array(smooth), "kalman_exact")


def pushforward_ground_truth(beliefs, transform, N=10_000, rng=None, chunk=2_000):
    """Monte Carlo ground truth of a transformed linear-Gaussian model.

    Each Gaussian belief is sampled ``N`` times through a Cholesky factor of its
    covariance and the samples are mapped through the transform. The Monte
    Carlo error is ``O(N^{-1/2})``.

    Args:
        beliefs: Iterable of :class:`otlpf.filters.GaussianBelief`.
        transform: Object with an ``apply`` method.
        N: Samples per time step.
        rng: Generator for the samples.
        chunk: Samples processed at once, to bound memory.

    Returns:
        :class:`GroundTruth`.
    """
    rng = np.random.default_rng() if rng is None else rng
    means, stds, smooth = [], [], []
    for belief in beliefs:
        M = belief.mean.size
        cov = belief.cov + 1e-12 * np.eye(M) * max(1.0, np.abs(np.diag(belief.cov)).max())
        factor = np.linalg.cholesky(cov)
        total = np.zeros(M)
        total_sq = np.zeros(M)
        total_smooth = 0.0
        done = 0
        while done < N:
            n = min(chunk, N - done)
            z = transform.apply(belief.mean + rng.standard_normal((n, M)) @ factor.T)
            total += z.sum(axis=0)
            total_sq += (z * z).sum(axis=0)
            total_smooth += np.abs(z - np.roll(z, -1, axis=1)).sum()
            done += n
        mu = total / N
        means.append(mu)
        stds.append(np.sqrt(np.clip(total_sq / N - mu**2, 0, None)))
        smooth.append(total_smooth / N)
    return GroundTruth(np.array(means), np.array(stds), np.array(smooth), f"pushforward_mc({N})")


def ensemble_ground_truth(means, stds, smoothness):
    """Ground truth taken from a large reference ensemble's summaries."""
    return GroundTruth(np.asarray(means), np.asarray(stds), np.asarray(smoothness),
                       "reference_ensemble")


def state_ground_truth(states):
    """Fallback ground truth: the true state, with unknown spread and smoothness."""
    states = np.asarray(states)
    T, M = states.shape
    return GroundTruth(states, np.full((T, M), np.nan), np.full(T, np.nan), "true_state")


def evaluate(output, truth):
    """Compare a :class:`otlpf.filters.FilterOutput` with a :class:`GroundTruth`."""
    return MetricsRecord(
        rmse_mean=rmse_mean(output.means, truth.means),
        rmse_std=rmse_std(output.stds, truth.stds),
        rmse_smooth=rmse_smoothness(output.smoothness, truth.smoothness),
        median_n_eff=output.median_n_eff,
        assim_seconds=output.assim_seconds,
    )
