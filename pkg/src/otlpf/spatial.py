"""Periodic 1-D mesh geometry, localisation functions and partitions of unity."""

from dataclasses import dataclass, field

import numpy as np

SUPPORT_THRESHOLD = 1e-14


def periodic_distance(a, b):
    """Distance between positions on the unit circle.

    Inputs outside [0, 1) are wrapped modulo 1.

    Args:
        a: Position or array of positions.
        b: Position or array of positions, broadcastable against ``a``.

    Returns:
        ``min(|a - b|, 1 - |a - b|)`` elementwise, in [0, 0.5].
    """
    diff = np.abs(np.mod(a, 1.0) - np.mod(b, 1.0))
    return np.minimum(diff, 1.0 - diff)


@dataclass(frozen=True)
class PeriodicMesh:
    """Regular mesh of ``M`` nodes at ``s_m = (m - 1) / M`` on the unit circle.

    Node indices are zero-based internally, so node ``m`` sits at ``m / M``.
    """

    node_count: int

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be positive")

    @property
    def positions(self):
        return np.arange(self.node_count) / self.node_count

    def distance_matrix(self, points=None):
        """Distances from every node to ``points`` (defaults to the nodes)."""
        pts = self.positions if points is None else np.asarray(points, dtype=float)
        return periodic_distance(self.positions[:, None], pts[None, :])


def _gc_inner(z):
    return -8 * z**5 + 8 * z**4 + 5 * z**3 - 20 / 3 * z**2 + 1


def _gc_outer(z):
    return 8 / 3 * z**5 - 8 * z**4 + 5 * z**3 + 20 / 3 * z**2 - 10 * z + 4 - 1 / (3 * z)


def gaspari_cohn(d, r):
    """Fifth-order piecewise rational Gaspari-Cohn taper.

    Args:
        d: Nonnegative distances.
        r: Radius of the compact support.

    Returns:
        Weights in [0, 1], equal to one at zero and exactly zero for ``d >= r``.
    """
    if r <= 0:
        raise ValueError("localisation radius must be positive")
    z = np.asarray(d, dtype=float) / r
    out = np.zeros_like(z)
    inner = z < 0.5
    outer = (z >= 0.5) & (z < 1.0)
    out[inner] = _gc_inner(z[inner])
    out[outer] = _gc_outer(z[outer])
    # clip tiny negative round-off near the support boundary
    return np.clip(out, 0.0, 1.0)


def uniform_taper(d, r):
    """Indicator of ``d <= r``.

    The closed boundary makes ``r -> 0`` select exactly the coincident points.
    """
    if r <= 0:
        raise ValueError("localisation radius must be positive")
    return (np.asarray(d, dtype=float) <= r).astype(float)


def triangular_taper(d, r):
    """Linear taper ``max(0, 1 - d / r)``."""
    if r <= 0:
        raise ValueError("localisation radius must be positive")
    return np.maximum(0.0, 1.0 - np.asarray(d, dtype=float) / r)


_TAPERS = {
    "gaspari_cohn": gaspari_cohn,
    "uniform": uniform_taper,
    "triangular": triangular_taper,
}


@dataclass(frozen=True)
class LocalisationSpec:
    """Localisation function ``ell_r`` of a given kind and radius."""

    radius: float
    kind: str = "gaspari_cohn"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("localisation radius must be positive")
        if self.kind not in _TAPERS:
            raise ValueError(f"unknown localisation kind {self.kind!r}")

    def __call__(self, d):
        return _TAPERS[self.kind](d, self.radius)


def build_equal_partition(mesh, B):
    """Split the nodes into ``B`` contiguous, equally sized core sets.

    Args:
        mesh: The periodic mesh.
        B: Number of patches, must divide ``M``.

    Returns:
        List of ``B`` integer index arrays.
    """
    M = mesh.node_count
    if B < 1 or B > M or M % B != 0:
        raise ValueError(f"B={B} must divide M={M}")
    size = M // B
    return [np.arange(b * size, (b + 1) * size) for b in range(B)]


def subsample_stride(M, B, w):
    """Subsampling factor ``min(4, p_n)`` with ``p_n = M(1/B + 2w) - 1``."""
    p_n = int(round(M * (1.0 / B + 2.0 * w))) - 1
    return max(1, min(4, p_n))


def subsample_nodes(M, B, w):
    """Every k-th node index, with k from :func:`subsample_stride`."""
    return np.arange(0, M, subsample_stride(M, B, w))


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Bump functions on the mesh nodes and the patch bookkeeping built on them.

    Attributes:
        mesh: The mesh the bumps are evaluated on.
        bumps: ``(B, M)`` array of bump values.
        supports: Per-patch node indices where the bump exceeds the support threshold.
        core_sets: Disjoint core partition sets.
        kernel_width: Width ``w`` of the smoothing kernel.
        subsample: Node indices used when computing transport costs.
    """

    mesh: PeriodicMesh
    bumps: np.ndarray
    supports: list
    core_sets: list
    kernel_width: float
    subsample: np.ndarray
    cost_nodes: list = field(default=None)

    @property
    def patch_count(self):
        return self.bumps.shape[0]


def _kernel_offsets(M, w):
    """Nonzero entries of the circulant smoothing kernel as (offset, value)."""
    offsets = np.arange(M)
    values = gaspari_cohn(periodic_distance(0.0, offsets / M), w)
    keep = values > 0
    return offsets[keep], values[keep]


def build_pou(partition, mesh, w, subsample=None):
    """Smooth the core-set indicators into a partition of unity.

    The bumps are ``phi_b(s_n) = sum_{m in S_b} ell_w(d(s_n, s_m)) / sum_m ell_w(d(s_n, s_m))``
    with a Gaspari-Cohn kernel of width ``w``.

    Args:
        partition: Core sets as returned by :func:`build_equal_partition`.
        mesh: The periodic mesh.
        w: Kernel width, at least ``1 / M``.
        subsample: Optional explicit cost node set. By default it comes from
            :func:`subsample_nodes`, with the stride reduced when needed so that
            every patch support contains at least one subsampled node.

    Returns:
        The :class:`PartitionOfUnity`.
    """
    M = mesh.node_count
    if w < 1.0 / M - 1e-15:
        raise ValueError("kernel width must be at least 1/M")
    B = len(partition)
    offsets, values = _kernel_offsets(M, w)
    denom = values.sum()
    bumps = np.zeros((B, M))
    for b, core in enumerate(partition):
        core = np.asarray(core, dtype=int)
        if core.size == 0:
            raise ValueError(f"core set {b} is empty")
        indicator = np.zeros(M)
        indicator[core] = 1.0
        acc = np.zeros(M)
        for off, val in zip(offsets, values):
            acc += val * np.roll(indicator, off)
        bumps[b] = acc / denom
    supports = [np.flatnonzero(row > SUPPORT_THRESHOLD) for row in bumps]
    if subsample is None:
        stride = subsample_stride(M, B, w)
        min_support = min(len(s) for s in supports)
        stride = max(1, min(stride, min_support))
        subsample = np.arange(0, M, stride)
    subsample = np.asarray(subsample, dtype=int)
    in_subsample = np.zeros(M, dtype=bool)
    in_subsample[subsample] = True
    cost_nodes = [s[in_subsample[s]] for s in supports]
    if any(c.size == 0 for c in cost_nodes):
        raise ValueError("a patch support contains no subsampled node")
    return PartitionOfUnity(
        mesh=mesh,
        bumps=bumps,
        supports=supports,
        core_sets=[np.asarray(c, dtype=int) for c in partition],
        kernel_width=float(w),
        subsample=subsample,
        cost_nodes=cost_nodes,
    )


def make_pou(M, B, w):
    """Equal partition of an ``M`` node mesh smoothed with width ``w``."""
    mesh = PeriodicMesh(M)
    return build_pou(build_equal_partition(mesh, B), mesh, w)


def patch_point_distance(support, s, mesh):
    """Smallest periodic distance from the support nodes to position(s) ``s``."""
    support = np.asarray(support, dtype=int)
    if support.size == 0:
        raise ValueError("patch support is empty")
    pos = mesh.positions[support]
    d = periodic_distance(pos[:, None], np.atleast_1d(np.asarray(s, dtype=float))[None, :])
    out = d.min(axis=0)
    return out if np.ndim(s) else float(out[0])


def patch_obs_distances(pou, obs_locations):
    """``(B, L)`` matrix of patch-to-observation distances."""
    node_obs = pou.mesh.distance_matrix(obs_locations)
    return np.stack([node_obs[s].min(axis=0) for s in pou.supports])


def effective_observations(pou, obs_locations, loc):
    """Effective number of observations per patch.

    Returns:
        Tuple ``(n, median)`` with ``n_b = sum_l ell_r(d(S_b, s_l))``.
    """
    n = loc(patch_obs_distances(pou, obs_locations)).sum(axis=1)
    return n, float(np.median(n))


def node_effective_observations(mesh, obs_locations, loc):
    """Effective number of observations per node, as seen by per-node schemes."""
    n = loc(mesh.distance_matrix(obs_locations)).sum(axis=1)
    return n, float(np.median(n))
