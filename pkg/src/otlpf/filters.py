"""Assimilation updates: Kalman, ensemble transform Kalman, particle and OT-based filters."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from otlpf import rng as rngs
from otlpf.metrics import ensemble_stats, rank_counts, smoothness_coefficient
from otlpf.models import ModelBlowUpError
from otlpf.spatial import LocalisationSpec, make_pou, patch_obs_distances
from otlpf.transport import TransportProblem, solve


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Gaussian belief ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def std(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def kf_predict(belief, A, Q):
    """Push a Gaussian belief through ``x -> A x + N(0, Q)``."""
    cov = A @ belief.cov @ A.T + Q
    return GaussianBelief(A @ belief.mean, 0.5 * (cov + cov.T))


def kf_assimilate(belief, H, R, y):
    """Kalman filter update for ``y = H x + N(0, R)``.

    Args:
        belief: Predictive :class:`GaussianBelief`.
        H: ``(L, M)`` observation matrix.
        R: ``(L, L)`` observation noise covariance.
        y: Observation vector.

    Returns:
        The filtering :class:`GaussianBelief`.
    """
    H = np.atleast_2d(H)
    R = np.atleast_2d(R)
    CHt = belief.cov @ H.T
    innovation = R + H @ CHt
    if np.linalg.cond(innovation) > 1e14:
        raise np.linalg.LinAlgError("innovation covariance is singular")
    gain = np.linalg.solve(innovation, CHt.T).T
    cov = belief.cov - gain @ CHt.T
    cov = 0.5 * (cov + cov.T)
    mean = belief.mean + gain @ (np.atleast_1d(y) - H @ belief.mean)
    return GaussianBelief(mean, cov)


def iter_kalman_filter(model, observations):
    """Exact filtering beliefs for the linear-Gaussian turbulence model.

    Yields:
        One :class:`GaussianBelief` per observation time, starting from the
        stationary prior at the first time.
    """
    A = model.transition_matrix()
    Q = model.noise_covariance()
    H = model.obs.matrix()
    R = model.obs.std**2 * np.eye(model.obs.L)
    belief = GaussianBelief(np.zeros(model.M), model.stationary_covariance())
    for t, y in enumerate(observations):
        if t > 0:
            belief = kf_predict(belief, A, Q)
        belief = kf_assimilate(belief, H, R, y)
        yield belief


def kalman_filter_st(model, observations):
    """Filtering means and standard deviations, each of shape ``(T, M)``."""
    means, stds = [], []
    for belief in iter_kalman_filter(model, observations):
        means.append(belief.mean)
        stds.append(belief.std)
    return np.array(means), np.array(stds)


def _symmetric_inverse_sqrt(A, clamp=1e-12):
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    vals = np.maximum(vals, clamp)
    return (vecs * vals**-0.5) @ vecs.T


def etkf_coefficients(Y, R, y):
    """ETKF transform matrix ``W`` such that the analysis ensemble is ``W @ X``.

    Args:
        Y: ``(P, L)`` predicted observations of the ensemble.
        R: ``(L, L)`` observation noise covariance.
        y: Observation vector.

    Returns:
        ``(P, P)`` coefficient matrix with symmetric square root (``Q = I``).
    """
    Y = np.asarray(Y, dtype=float)
    P = Y.shape[0]
    if P < 2:
        raise ValueError("ETKF needs at least two particles")
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite ETKF inputs")
    ones = np.ones((P, 1))
    eps = np.full((1, P), 1.0 / P)
    delta = (np.eye(P) - ones @ eps) / np.sqrt(P - 1)
    Rinv = np.linalg.inv(np.atleast_2d(R))
    dY = delta @ Y
    S = _symmetric_inverse_sqrt(np.eye(P) + dY @ Rinv @ dY.T)
    innov = np.atleast_1d(y)[None, :] - eps @ Y
    mean_row = innov @ Rinv @ dY.T @ S @ S @ delta
    return ones @ eps + ones @ mean_row + np.sqrt(P - 1) * S @ delta


def etkf_assimilate(X, Y, R, y):
    """Global ETKF update of a ``(P, M)`` ensemble."""
    return etkf_coefficients(Y, R, y) @ X


def node_localisation(mesh, obs_locations, loc):
    """``(M, L)`` localisation weights ``ell_r(d(s_m, s_l))``."""
    return loc(mesh.distance_matrix(obs_locations))


def patch_localisation(pou, obs_locations, loc):
    """``(B, L)`` localisation weights from patch-to-observation distances."""
    return loc(patch_obs_distances(pou, obs_locations))


def letkf_assimilate(X, Y, y, obs_std, localisation):
    """Local ETKF: one square-root update per node with tapered precision.

    The local precision is ``R^{-1} * (k k^T)`` with ``k = ell^{1/2}``, which for
    diagonal ``R`` scales each observation precision by ``ell``. With the scaled
    observation anomalies ``A_m`` of node ``m`` the update uses the push-through
    identities ``(I + A A^T)^{-1} A = A (I + A^T A)^{-1}`` and
    ``(I + A A^T)^{-1/2} = I + A V f(s^2) V^T A^T`` for ``A^T A = V s^2 V^T``, so
    only small local Gram matrices are decomposed. Nodes without observations
    in range are unchanged.

    Args:
        X: ``(P, M)`` predictive ensemble.
        Y: ``(P, L)`` predicted observations.
        y: ``(L,)`` observations.
        obs_std: Observation noise standard deviation.
        localisation: ``(M, L)`` localisation weights.

    Returns:
        The ``(P, M)`` analysis ensemble.
    """
    P, M = X.shape
    if P < 2:
        raise ValueError("LETKF needs at least two particles")
    mask = localisation > 0
    counts = mask.sum(axis=1)
    width = int(counts.max()) if counts.size else 0
    if width == 0:
        return X.copy()
    # each node's local observations first, padded with zero-weight ones
    order = np.argsort(~mask, axis=1, kind="stable")[:, :width]
    sqrt_prec = np.sqrt(np.take_along_axis(localisation, order, axis=1)) / obs_std
    y_mean = Y.mean(axis=0)
    y_anom = (Y - y_mean) / np.sqrt(P - 1)
    x_mean = X.mean(axis=0)
    x_anom = X - x_mean
    gram_all = y_anom.T @ y_anom
    gram = gram_all[order[:, :, None], order[:, None, :]]
    gram *= sqrt_prec[:, :, None] * sqrt_prec[:, None, :]
    s2, V = np.linalg.eigh(gram)
    s2 = np.clip(s2, 0.0, None)
    d = (y - y_mean)[order] * sqrt_prec
    b = np.take_along_axis((y_anom.T @ x_anom).T, order, axis=1) * sqrt_prec
    Vb = np.einsum("mkj,mk->mj", V, b)
    Vd = np.einsum("mkj,mk->mj", V, d)
    shift = np.einsum("mj,mj->m", Vb, Vd / (1.0 + s2))
    q = np.sqrt(1.0 + s2)
    # (1 + s^2)^(-1/2) - 1 = s^2 f(s^2) with f written to avoid cancellation
    coeff = np.einsum("mkj,mj->mk", V, -Vb / (q * (1.0 + q))) * sqrt_prec
    scatter = np.zeros((M, Y.shape[1]))
    np.put_along_axis(scatter, order, coeff, axis=1)
    out = x_mean + shift / np.sqrt(P - 1) + x_anom + y_anom @ scatter.T
    out[:, counts == 0] = X[:, counts == 0]
    return out


@dataclass(frozen=True, eq=False)
class LocalWeights:
    """Normalised particle weights per unit (node, patch or the whole domain).

    Attributes:
        log_unnorm: ``(U, P)`` unnormalised log-weights.
        weights: ``(U, P)`` normalised weights.
        granularity: ``"per_node"``, ``"per_patch"`` or ``"global"``.
        degenerate_count: Units that fell back to uniform weights.
    """

    log_unnorm: np.ndarray
    weights: np.ndarray
    granularity: str
    degenerate_count: int = 0


def normalise_log_weights(log_unnorm, granularity="global"):
    """Log-sum-exp normalisation of ``(U, P)`` log-weights, uniform on degeneracy."""
    log_unnorm = np.atleast_2d(log_unnorm)
    P = log_unnorm.shape[1]
    with np.errstate(invalid="ignore"):
        norm = logsumexp(log_unnorm, axis=1, keepdims=True)
        weights = np.exp(log_unnorm - norm)
    bad = ~np.isfinite(norm[:, 0]) | ~np.all(np.isfinite(weights), axis=1)
    weights[bad] = 1.0 / P
    weights /= weights.sum(axis=1, keepdims=True)
    return LocalWeights(log_unnorm, weights, granularity, int(bad.sum()))


def compute_local_weights(loglik, localisation=None, granularity="global"):
    """Tapered particle weights ``log w~ = sum_l ell_l log g_l``.

    Args:
        loglik: ``(P, L)`` per-location log-likelihoods.
        localisation: ``(U, L)`` taper per unit; ``None`` for global weights.
        granularity: Label stored on the result.

    Returns:
        :class:`LocalWeights` with one row per unit.
    """
    loglik = np.asarray(loglik, dtype=float)
    if localisation is None:
        log_unnorm = loglik.sum(axis=1)[None, :]
        granularity = "global"
    else:
        log_unnorm = np.asarray(localisation) @ loglik.T
    return normalise_log_weights(log_unnorm, granularity)


def resample_multinomial(weights, rng, size=None):
    """Ancestor indices drawn i.i.d. from ``weights``."""
    w = np.asarray(weights, dtype=float)
    size = w.size if size is None else size
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right")


def resample_systematic(weights, rng):
    """Systematic resampling from a single uniform draw."""
    w = np.asarray(weights, dtype=float)
    P = w.size
    points = (rng.random() + np.arange(P)) / P
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, points, side="right")


def resample_local_independent(weights, rng):
    """Independent multinomial ancestors per node.

    Args:
        weights: ``(M, P)`` per-node weights.
        rng: Generator.

    Returns:
        ``(M, P)`` ancestor indices.
    """
    W = np.asarray(weights, dtype=float)
    cdf = np.cumsum(W, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(W.shape)
    return np.stack([np.searchsorted(c, row, side="right") for c, row in zip(cdf, u)])


def transport_costs(X, nodes=None):
    """Pairwise squared Euclidean distances over the selected nodes."""
    sub = X if nodes is None else X[:, nodes]
    return cdist(sub, sub, "sqeuclidean")


def _transport_plan(weights, cost, ot_kind, lam, max_iter):
    if ot_kind == "entropic":
        scale = cost.max()
        scaled = cost / scale if scale > 0 else cost
        return solve(TransportProblem(weights, scaled), "entropic", lam=lam, max_iter=max_iter).coupling
    return solve(TransportProblem(weights, cost), "exact").coupling


def etpf_assimilate(X, weights, nodes=None, ot_kind="exact", lam=None, max_iter=10_000):
    """Global ETPF: ``x_p = sum_q rho[p, q] x_q`` with ``rho`` from optimal transport.

    Args:
        X: ``(P, M)`` predictive ensemble.
        weights: ``(P,)`` normalised weights.
        nodes: Optional node subset used for the transport costs.
        ot_kind: ``"exact"`` or ``"entropic"``; entropic ``lam`` is relative to
            the largest cost.
        lam: Entropic regularisation.
        max_iter: Sinkhorn iteration cap.

    Returns:
        The ``(P, M)`` analysis ensemble.
    """
    rho = _transport_plan(np.ravel(weights), transport_costs(X, nodes), ot_kind, lam, max_iter)
    return rho @ X


def sletpf_assimilate(X, pou, weights, ot_kind="exact", lam=None, max_iter=10_000, executor=None):
    """Smooth local ETPF update with one OT problem per patch.

    Each patch ``b`` gets a plan ``rho_b`` from its weights and the costs over
    its subsampled support nodes. Node ``m`` is then updated with the
    partition-of-unity blend ``sum_b phi_b(s_m) rho_b``.

    Args:
        X: ``(P, M)`` predictive ensemble.
        pou: :class:`otlpf.spatial.PartitionOfUnity`.
        weights: ``(B, P)`` per-patch weights.
        ot_kind: ``"exact"`` or ``"entropic"``.
        lam: Entropic regularisation relative to the largest cost of each patch.
        max_iter: Sinkhorn iteration cap.
        executor: Optional ``concurrent.futures`` executor for the per-patch solves.

    Returns:
        The ``(P, M)`` analysis ensemble.
    """
    weights = np.atleast_2d(weights)

    def plan(b):
        try:
            return _transport_plan(
                weights[b], transport_costs(X, pou.cost_nodes[b]), ot_kind, lam, max_iter
            )
        except Exception as exc:
            raise RuntimeError(f"transport failed on patch {b}: {exc}") from exc

    patches = range(pou.patch_count)
    plans = list(executor.map(plan, patches)) if executor else [plan(b) for b in patches]
    out = np.zeros_like(X)
    for b, rho in enumerate(plans):
        supp = pou.supports[b]
        out[:, supp] += rho @ (X[:, supp] * pou.bumps[b, supp])
    return out


@dataclass
class FilterConfig:
    """Settings shared by all filters.

    Attributes:
        kind: ``letkf``, ``etpf``, ``sletpf`` or ``bootstrap_pf``.
        P: Ensemble size.
        r: Localisation radius as a half-width: the taper reaches zero at
            ``support_factor * r``.
        loc_kind: Localisation function.
        support_factor: Ratio of taper support to ``r``. The default 2 makes
            ``r`` the Gaspari-Cohn half-width used in the reference
            experiments; 1 makes ``r`` the support radius itself.
        B: Patch count for the SLETPF.
        w: Kernel width for the SLETPF.
        ot_kind: ``exact`` or ``entropic``.
        lam: Entropic regularisation relative to the largest cost.
        inflation: Multiplicative anomaly inflation applied before assimilation.
        resampling: ``systematic`` or ``multinomial`` for the bootstrap PF.
        max_iter: Sinkhorn iteration cap.
    """

    kind: str = "sletpf"
    P: int = 100
    r: float = 0.02
    loc_kind: str = "gaspari_cohn"
    support_factor: float = 2.0
    B: int = 128
    w: float = 1.0 / 256
    ot_kind: str = "exact"
    lam: float = 1e-2
    inflation: float = 1.0
    resampling: str = "systematic"
    max_iter: int = 10_000


class Assimilator:
    """Binds a filter configuration to a model's mesh and observation layout."""

    def __init__(self, config, model, threads=1):
        self.config = config
        self.model = model
        self.obs = model.obs
        self.threads = max(1, int(threads))
        self.pou = None
        self.localisation = None
        self.degenerate_count = 0
        kind = config.kind
        loc = None
        if kind in ("letkf", "sletpf"):
            loc = LocalisationSpec(config.support_factor * config.r, config.loc_kind)
        if kind == "letkf":
            self.localisation = node_localisation(model.mesh, self.obs.locations, loc)
            self.n_eff = self.localisation.sum(axis=1)
        elif kind == "sletpf":
            self.pou = make_pou(model.M, config.B, config.w)
            self.localisation = patch_localisation(self.pou, self.obs.locations, loc)
            self.n_eff = self.localisation.sum(axis=1)
        elif kind in ("etpf", "bootstrap_pf"):
            self.n_eff = np.array([float(self.obs.L)])
        else:
            raise ValueError(f"unknown filter {kind!r}")

    @property
    def median_n_eff(self):
        return float(np.median(self.n_eff))

    def __call__(self, X, y, rng, executor=None):
        cfg = self.config
        if cfg.kind == "letkf":
            return letkf_assimilate(X, self.obs.predict(X), y, self.obs.std, self.localisation)
        loglik = self.obs.log_density(y, X)
        if cfg.kind == "sletpf":
            lw = compute_local_weights(loglik, self.localisation, "per_patch")
            self.degenerate_count += lw.degenerate_count
            return sletpf_assimilate(
                X, self.pou, lw.weights, cfg.ot_kind, cfg.lam, cfg.max_iter, executor
            )
        lw = compute_local_weights(loglik)
        self.degenerate_count += lw.degenerate_count
        if cfg.kind == "etpf":
            return etpf_assimilate(X, lw.weights[0], None, cfg.ot_kind, cfg.lam, cfg.max_iter)
        if cfg.resampling == "multinomial":
            return X[resample_multinomial(lw.weights[0], rng)]
        return X[resample_systematic(lw.weights[0], rng)]


@dataclass
class FilterOutput:
    """Per-time ensemble summaries of a filtering run.

    Attributes:
        means: ``(T, M)`` ensemble means.
        stds: ``(T, M)`` ensemble standard deviations (``1 / P`` convention).
        smoothness: ``(T,)`` ensemble smoothness coefficients.
        assim_seconds: Total wall time spent in assimilation updates.
        median_n_eff: Median effective observations per localisation unit.
        rank_counts: Rank histogram against ``truth`` if one was supplied.
        ensembles: ``(T, P, M)`` analysis ensembles if requested.
        degenerate_count: Weight units that fell back to uniform.
    """

    means: np.ndarray
    stds: np.ndarray
    smoothness: np.ndarray
    assim_seconds: float
    median_n_eff: float
    rank_counts: np.ndarray = None
    ensembles: np.ndarray = None
    degenerate_count: int = 0
    step_seconds: list = field(default_factory=list)


def filter_run(model, config, observations, seed, repeat=0, truth=None, keep_ensembles=False,
               threads=1, purpose=rngs.FILTER):
    """Alternate model prediction and assimilation over all observation times.

    Args:
        model: Forward model with ``init``, ``forward`` and ``obs``.
        config: :class:`FilterConfig`.
        observations: ``(T, L)`` observation sequence.
        seed: Master seed; the filter stream is split from it by ``repeat``.
        repeat: Index of the independent repeat.
        truth: Optional ``(T, M)`` true states for an online rank histogram.
        keep_ensembles: Store every analysis ensemble.
        threads: Worker threads for per-patch transport solves.
        purpose: Stream label, so reference runs never share draws with filters.

    Returns:
        :class:`FilterOutput`.
    """
    assimilate = Assimilator(config, model, threads)
    T = len(observations)
    P = config.P
    means = np.empty((T, model.M))
    stds = np.empty((T, model.M))
    smooth = np.empty(T)
    ranks = np.zeros(P + 1, dtype=np.int64) if truth is not None else None
    ensembles = np.empty((T, P, model.M)) if keep_ensembles else None
    step_seconds = []
    executor = ThreadPoolExecutor(assimilate.threads) if assimilate.threads > 1 else None
    try:
        X = None
        for t in range(T):
            forecast_rng = rngs.stream(seed, purpose, repeat, t, rngs.FORECAST)
            X = model.init(P, forecast_rng) if t == 0 else model.forward(X, forecast_rng)
            if not np.all(np.isfinite(X)):
                raise ModelBlowUpError("forecast ensemble became non-finite", t)
            if config.inflation != 1.0:
                mean = X.mean(axis=0)
                X = mean + config.inflation * (X - mean)
            analysis_rng = rngs.stream(seed, purpose, repeat, t, rngs.ANALYSIS)
            start = time.perf_counter()
            X = assimilate(X, observations[t], analysis_rng, executor)
            step_seconds.append(time.perf_counter() - start)
            means[t], stds[t] = ensemble_stats(X)
            smooth[t] = smoothness_coefficient(X)
            if ranks is not None:
                ranks += rank_counts(X, truth[t], P)
            if keep_ensembles:
                ensembles[t] = X
    finally:
        if executor is not None:
            executor.shutdown()
    return FilterOutput(
        means=means,
        stds=stds,
        smoothness=smooth,
        assim_seconds=float(np.sum(step_seconds)),
        median_n_eff=assimilate.median_n_eff,
        rank_counts=ranks,
        ensembles=ensembles,
        degenerate_count=assimilate.degenerate_count,
        step_seconds=step_seconds,
    )
