"""Spectral SPDE forward models, observation operators and the transformed SSM.

Fields live on the periodic mesh of :mod:`otlpf.spatial`. Ensembles are
``(P, M)`` arrays, one particle per row. Spectral coefficients use the real
DFT with a ``1 / M`` factor on the forward transform and zero-based node
indices, so ``x_m = sum_k x~_k exp(i 2 pi k m / M)`` over the full spectrum.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from otlpf.spatial import PeriodicMesh


class ModelBlowUpError(FloatingPointError):
    """Raised when a forward model produces non-finite values."""

    def __init__(self, message, time_index=None):
        super().__init__(message if time_index is None else f"{message} at t={time_index}")
        self.time_index = time_index


def real_dft(x):
    """Forward real DFT along the last axis, scaled by ``1 / M``."""
    x = np.asarray(x, dtype=float)
    return np.fft.rfft(x, axis=-1) / x.shape[-1]


def inverse_real_dft(coeffs, M):
    """Inverse of :func:`real_dft` for fields of length ``M``."""
    return np.fft.irfft(np.asarray(coeffs) * M, n=M, axis=-1)


def wavenumbers(M):
    """Angular frequencies ``omega_k = 2 pi k`` for ``k = 0..floor(M/2)``."""
    return 2.0 * np.pi * np.arange(M // 2 + 1)


def complex_normal(rng, shape, M):
    """Standard complex normal spectral noise for real fields of length ``M``.

    Interior modes have independent ``N(0, 1/2)`` real and imaginary parts; the
    zero mode, and the Nyquist mode for even ``M``, are real ``N(0, 1)``.

    Args:
        rng: A numpy ``Generator``.
        shape: Leading batch shape.
        M: Field length.

    Returns:
        Complex array of shape ``(*shape, M // 2 + 1)``.
    """
    K1 = M // 2 + 1
    z = rng.standard_normal((*shape, K1, 2))
    u = (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)
    u[..., 0] = z[..., 0, 0]
    if M % 2 == 0:
        u[..., -1] = z[..., -1, 0]
    return u


def _real_dof_factor(coeffs, M):
    """Matrix ``G`` with ``irdft(coeffs * u) = G z`` for ``u`` from :func:`complex_normal`.

    ``z`` collects the real degrees of freedom of ``u`` as standard normals, so
    ``G @ G.T`` is the node-space covariance of the spectral noise.
    """
    K1 = M // 2 + 1
    columns = []
    for k in range(K1):
        real_only = k == 0 or (M % 2 == 0 and k == K1 - 1)
        scale = 1.0 if real_only else np.sqrt(0.5)
        for unit in (1.0,) if real_only else (1.0, 1j):
            spec = np.zeros(K1, dtype=complex)
            spec[k] = coeffs[k] * unit * scale
            columns.append(inverse_real_dft(spec, M))
    return np.stack(columns, axis=1)


@dataclass(frozen=True)
class ObservationOperator:
    """Equispaced Gaussian observations of a possibly nonlinear state function.

    Observation ``l`` (zero-based) is taken at the one-based node
    ``(M / L)(l + 1/2)``.

    Attributes:
        M: Mesh size.
        L: Number of observations.
        std: Observation noise standard deviation.
        kind: ``"linear"`` or ``"tanh"``.
    """

    M: int
    L: int
    std: float = 0.5
    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "tanh"):
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.M % (2 * self.L) != 0:
            raise ValueError("observation nodes (M/L)(l - 1/2) must be integers")
        if not self.std > 0:
            raise ValueError("observation noise std must be positive")

    @cached_property
    def indices(self):
        """Zero-based observed node indices."""
        one_based = (self.M // (2 * self.L)) * (2 * np.arange(1, self.L + 1) - 1)
        return one_based - 1

    @property
    def locations(self):
        return self.indices / self.M

    def predict(self, X):
        """Noise-free observation of each particle, shape ``(..., L)``."""
        values = np.asarray(X)[..., self.indices]
        return np.tanh(values) if self.kind == "tanh" else values

    def log_density(self, y, X):
        """Per-location Gaussian log-likelihoods ``log g_l(y_l | x)``, shape ``(..., L)``."""
        resid = (np.asarray(y) - self.predict(X)) / self.std
        return -0.5 * resid**2 - np.log(self.std * np.sqrt(2.0 * np.pi))

    def sample(self, x, rng):
        """Noisy observation of a single state."""
        return self.predict(x) + self.std * rng.standard_normal(self.L)

    def matrix(self):
        """Linear observation matrix ``H``; only defined for linear observations."""
        if self.kind != "linear":
            raise ValueError("observation matrix only exists for linear observations")
        H = np.zeros((self.L, self.M))
        H[np.arange(self.L), self.indices] = 1.0
        return H


@dataclass(frozen=True)
class StochasticTurbulenceParams:
    """Parameters of the stochastic turbulence (linear advection-diffusion) model.

    Defaults are the settings of the reference experiments.
    """

    M: int = 512
    T: int = 200
    L: int = 64
    delta: float = 2.5
    theta1: float = 4e-5
    theta2: float = 0.1
    theta3: float = 0.1
    theta4: float = 5.0
    length_scale: float = 4e-3
    amplitude: float = 0.1
    obs_std: float = 0.5

    def __post_init__(self):
        if self.theta1 < 0 or self.theta3 < 0:
            raise ValueError("theta1 and theta3 must be nonnegative")
        if self.theta1 == 0 and self.theta3 == 0:
            raise ValueError("psi_k vanishes when theta1 = theta3 = 0")

    @cached_property
    def tables(self):
        return st_spectral_tables(self)


@dataclass(frozen=True)
class SpectralTables:
    """Per-mode coefficients of the stochastic turbulence transition."""

    omega: np.ndarray
    psi: np.ndarray
    xi: np.ndarray
    kernel: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


def st_spectral_tables(params):
    """Stationary scale ``a``, transition ``b`` and noise scale ``c`` per mode."""
    M = params.M
    omega = wavenumbers(M)
    psi = params.theta1 * omega**2 + params.theta3
    xi = 1j * params.theta2 * omega - psi
    if M % 2 == 0:
        xi[-1] = -psi[-1]
    kernel = params.amplitude * np.exp(-(omega**2) * params.length_scale**2)
    a = kernel / np.sqrt(2.0 * psi)
    b = np.exp(xi * params.delta)
    c = a * np.sqrt(1.0 - np.exp(-2.0 * psi * params.delta))
    return SpectralTables(omega=omega, psi=psi, xi=xi, kernel=kernel, a=a, b=b, c=c)


@dataclass(frozen=True)
class KuramotoSivashinskyParams:
    """Parameters of the stochastic Kuramoto-Sivashinsky model.

    ``theta3`` and ``theta4`` default to ``1 / theta1`` and ``theta1 ** -0.5``.
    ``spinup_intervals`` sets how many observation intervals the zero field is
    integrated forward to draw the initial state.
    """

    M: int = 512
    T: int = 200
    L: int = 64
    S: int = 10
    delta: float = 0.25
    theta1: float = 32 * np.pi
    theta2: float = 1.0 / 6.0
    theta3: float = None
    theta4: float = None
    obs_std: float = 0.5
    spinup_intervals: int = 20
    contour_points: int = 32

    def __post_init__(self):
        if self.theta3 is None:
            object.__setattr__(self, "theta3", 1.0 / self.theta1)
        if self.theta4 is None:
            object.__setattr__(self, "theta4", self.theta1**-0.5)

    @cached_property
    def omega(self):
        return wavenumbers(self.M)

    @cached_property
    def linear_symbol(self):
        q = self.omega / self.theta1
        return q**2 - q**4 - self.theta2

    @cached_property
    def noise_scale(self):
        return self.theta4 * np.exp(-(self.omega**2) * self.theta3**2)

    @cached_property
    def etdrk4(self):
        return etdrk4_coefficients(self.linear_symbol, self.delta, self.contour_points)


def etdrk4_coefficients(linear, h, n_points=32):
    """ETDRK4 coefficients via contour-integral means over the unit circle.

    Args:
        linear: Diagonal linear operator per mode.
        h: Time step.
        n_points: Number of contour points.

    Returns:
        Dict with ``E``, ``E2``, ``Q``, ``f1``, ``f2``, ``f3``.
    """
    hL = h * np.asarray(linear, dtype=float)
    roots = np.exp(1j * np.pi * (np.arange(1, n_points + 1) - 0.5) / n_points)
    LR = hL[:, None] + roots[None, :]
    eLR = np.exp(LR)
    return {
        "E": np.exp(hL),
        "E2": np.exp(hL / 2),
        "Q": h * np.mean((np.exp(LR / 2) - 1) / LR, axis=1).real,
        "f1": h * np.mean((-4 - LR + eLR * (4 - 3 * LR + LR**2)) / LR**3, axis=1).real,
        "f2": h * np.mean((2 + LR + eLR * (LR - 2)) / LR**3, axis=1).real,
        "f3": h * np.mean((-4 - 3 * LR - LR**2 + eLR * (4 - LR)) / LR**3, axis=1).real,
    }


def ks_nonlinear(coeffs, params):
    """Spectral nonlinear term ``(i omega_k / 2 theta1) DFT_k(x^2)``, zero at Nyquist."""
    M = params.M
    x = inverse_real_dft(coeffs, M)
    out = (1j * params.omega / (2.0 * params.theta1)) * real_dft(x * x)
    if M % 2 == 0:
        out[..., -1] = 0.0
    return out


def ks_drift(coeffs, params):
    """Full spectral drift ``L_k x~_k + N_k``."""
    return params.linear_symbol * coeffs + ks_nonlinear(coeffs, params)


def ks_etdrk4_step(v, params, nonlinear=True):
    """One deterministic ETDRK4 step of the spectral KS dynamics."""
    co = params.etdrk4
    nl = (lambda z: ks_nonlinear(z, params)) if nonlinear else (lambda z: np.zeros_like(z))
    Nv = nl(v)
    a = co["E2"] * v + co["Q"] * Nv
    Na = nl(a)
    b = co["E2"] * v + co["Q"] * Na
    Nb = nl(b)
    c = co["E2"] * a + co["Q"] * (2 * Nb - Nv)
    Nc = nl(c)
    return co["E"] * v + co["f1"] * Nv + 2 * co["f2"] * (Na + Nb) + co["f3"] * Nc


class StochasticTurbulenceModel:
    """Linear-Gaussian stochastic turbulence SPDE with exact spectral transitions.

    Args:
        params: :class:`StochasticTurbulenceParams`.
        obs_kind: Observation nonlinearity, ``"linear"`` by default.
    """

    name = "st_linear"

    def __init__(self, params=None, obs_kind="linear"):
        self.params = params or StochasticTurbulenceParams()
        p = self.params
        self.M = p.M
        self.mesh = PeriodicMesh(p.M)
        self.obs = ObservationOperator(p.M, p.L, p.obs_std, obs_kind)

    def init(self, P, rng):
        """Draw ``P`` particles from the stationary distribution."""
        u = complex_normal(rng, (P,), self.M)
        return inverse_real_dft(self.params.tables.a * u, self.M)

    def forward(self, X, rng):
        """Exact Gaussian transition over one observation interval."""
        tab = self.params.tables
        u = complex_normal(rng, (X.shape[0],), self.M)
        return inverse_real_dft(tab.b * real_dft(X) + tab.c * u, self.M)

    def transition_matrix(self):
        """Node-space matrix ``A`` with ``x_next = A x + noise``."""
        eye = np.eye(self.M)
        return inverse_real_dft(self.params.tables.b * real_dft(eye), self.M).T

    def noise_covariance(self):
        G = _real_dof_factor(self.params.tables.c, self.M)
        return G @ G.T

    def stationary_covariance(self):
        G = _real_dof_factor(self.params.tables.a, self.M)
        return G @ G.T

    def stationary_variance(self):
        """Node variance ``a_0^2 + 2 sum a_k^2 + a_K^2`` of the stationary law."""
        a2 = self.params.tables.a ** 2
        total = a2[0] + 2 * a2[1:].sum()
        if self.M % 2 == 0:
            total -= a2[-1]
        return total


class KuramotoSivashinskyModel:
    """Stochastic Kuramoto-Sivashinsky SPDE integrated with ETDRK4 plus additive noise.

    Each integrator step applies a deterministic ETDRK4 step and then adds the
    Euler-Maruyama increment ``lambda_k sqrt(delta) u_k`` in spectral space.

    Args:
        params: :class:`KuramotoSivashinskyParams`.
        obs_kind: ``"linear"`` or ``"tanh"``.
    """

    def __init__(self, params=None, obs_kind="linear"):
        self.params = params or KuramotoSivashinskyParams()
        p = self.params
        self.M = p.M
        self.mesh = PeriodicMesh(p.M)
        self.obs = ObservationOperator(p.M, p.L, p.obs_std, obs_kind)
        self.name = f"ks_{obs_kind}"

    def _integrate(self, v, rng, steps):
        p = self.params
        scale = p.noise_scale * np.sqrt(p.delta)
        # overflow is detected below and reported as a blow-up
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(steps):
                v = ks_etdrk4_step(v, p)
                v = v + scale * complex_normal(rng, v.shape[:-1], self.M)
                if not np.all(np.isfinite(v)):
                    raise ModelBlowUpError("Kuramoto-Sivashinsky state became non-finite")
        return v

    def init(self, P, rng):
        """Spin up ``P`` independent particles from the zero field."""
        p = self.params
        v = np.zeros((P, p.M // 2 + 1), dtype=complex)
        v = self._integrate(v, rng, p.spinup_intervals * p.S)
        return inverse_real_dft(v, self.M)

    def forward(self, X, rng):
        """Advance ``S`` integrator steps (one observation interval)."""
        v = self._integrate(real_dft(X), rng, self.params.S)
        return inverse_real_dft(v, self.M)


@dataclass(frozen=True)
class TransformSpec:
    """Elementwise diffeomorphism ``T(x) = asinh(scale * x)`` or the identity."""

    scale: float = 5.0
    kind: str = "asinh"

    def __post_init__(self):
        if self.kind not in ("asinh", "identity"):
            raise ValueError(f"unknown transform {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("transform scale must be positive")

    def apply(self, x):
        return np.arcsinh(self.scale * np.asarray(x)) if self.kind == "asinh" else np.asarray(x)

    def invert(self, x):
        if self.kind == "identity":
            return np.asarray(x)
        with np.errstate(over="ignore"):
            out = np.sinh(np.asarray(x)) / self.scale
        if not np.all(np.isfinite(out)):
            raise ModelBlowUpError("inverse transform overflowed")
        return out


@dataclass(frozen=True)
class TransformedObservation:
    """Observation operator acting on transformed states."""

    base: ObservationOperator
    transform: TransformSpec
    M: int = field(init=False)
    L: int = field(init=False)
    std: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "M", self.base.M)
        object.__setattr__(self, "L", self.base.L)
        object.__setattr__(self, "std", self.base.std)

    @property
    def indices(self):
        return self.base.indices

    @property
    def locations(self):
        return self.base.locations

    def predict(self, X):
        # only the observed nodes need inverting
        values = np.asarray(X)[..., self.indices]
        full = self.transform.invert(values)
        return np.tanh(full) if self.base.kind == "tanh" else full

    def log_density(self, y, X):
        resid = (np.asarray(y) - self.predict(X)) / self.std
        return -0.5 * resid**2 - np.log(self.std * np.sqrt(2.0 * np.pi))

    def sample(self, x, rng):
        return self.predict(x) + self.std * rng.standard_normal(self.L)


class TransformedModel:
    """State-space model conjugated by a transform: states are ``T(x)``.

    Args:
        base: Model on the original state.
        transform: :class:`TransformSpec`.
    """

    def __init__(self, base, transform=None):
        self.base = base
        self.transform = transform or TransformSpec()
        self.params = base.params
        self.M = base.M
        self.mesh = base.mesh
        self.obs = TransformedObservation(base.obs, self.transform)
        self.name = "st_transformed" if base.name == "st_linear" else f"{base.name}_transformed"

    def init(self, P, rng):
        return self.transform.apply(self.base.init(P, rng))

    def forward(self, X, rng):
        return self.transform.apply(self.base.forward(self.transform.invert(X), rng))


def make_model(kind, params=None, transform_scale=None):
    """Build one of the named experiment models.

    Args:
        kind: ``st_linear``, ``st_transformed``, ``ks_linear`` or ``ks_tanh``.
        params: Optional parameter dataclass matching the model family.
        transform_scale: Scale of the asinh transform; defaults to ``theta4``.
    """
    if kind in ("st_linear", "st_transformed"):
        base = StochasticTurbulenceModel(params or StochasticTurbulenceParams())
        if kind == "st_linear":
            return base
        scale = transform_scale or base.params.theta4
        return TransformedModel(base, TransformSpec(scale))
    if kind in ("ks_linear", "ks_tanh"):
        return KuramotoSivashinskyModel(params or KuramotoSivashinskyParams(), kind[3:])
    raise ValueError(f"unknown model {kind!r}")
