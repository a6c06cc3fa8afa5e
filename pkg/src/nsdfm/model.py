"""Domain types and state-space assembly for the non-stationary DFM.

The observation model for series i at time t is

    x[i,t] = alpha[i,t] + beta[i,t] * t + sum_k b_ik' f[t-k] + xi[i,t]

with a VAR(p) factor process, random-walk idiosyncratic components for a
subset of series, and local level / local linear trend states for further
subsets.  ``build_state_space`` packs the model into a compact linear
state-space form whose state vector is

    [ factor companion block | xi_i, i in idio_i1 | alpha_i, i in local_level
      | beta_i, i in local_trend ]

Series whose idiosyncratic dynamics live in the state carry a small
artificial measurement-error variance (``sigma2_nu``) so the filter stays
well defined; all other series keep their idiosyncratic variance in the
measurement equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelSpec",
    "Params",
    "Panel",
    "StateSpace",
    "StateLayout",
    "build_state_space",
    "common_component",
    "common_component_path",
]


def _frozen(a: np.ndarray, dtype=float) -> np.ndarray:
    """Return a locked copy so instances are safe to share across workers."""
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions and index sets of a model instance.

    Index sets use zero-based series positions.  ``idio_i1`` marks series
    with a random-walk idiosyncratic component, ``local_level`` series with
    a time-varying intercept, ``local_trend`` series with a time-varying
    trend slope.
    """

    n: int
    T: int
    q: int
    s: int = 0
    p: int = 1
    idio_i1: frozenset[int] = frozenset()
    local_level: frozenset[int] = frozenset()
    local_trend: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "idio_i1", frozenset(self.idio_i1))
        object.__setattr__(self, "local_level", frozenset(self.local_level))
        object.__setattr__(self, "local_trend", frozenset(self.local_trend))
        if self.n <= 0 or self.T <= 0:
            raise ValueError("n and T must be positive")
        if not 0 < self.q < self.n:
            raise ValueError(f"q must satisfy 0 < q < n, got q={self.q}, n={self.n}")
        if self.s < 0:
            raise ValueError("loading lag order s must be >= 0")
        if self.p < 1:
            raise ValueError("VAR order p must be >= 1")
        for name in ("idio_i1", "local_level", "local_trend"):
            idx = getattr(self, name)
            if any(i < 0 or i >= self.n for i in idx):
                raise ValueError(f"{name} contains indices outside 0..{self.n - 1}")

    @property
    def n1(self) -> int:
        return len(self.idio_i1)

    @property
    def n_a(self) -> int:
        return len(self.local_level)

    @property
    def n_b(self) -> int:
        return len(self.local_trend)

    @property
    def idio_im(self) -> frozenset[int]:
        """Series with any extra latent state (measurement error is phi-tiny)."""
        return self.idio_i1 | self.local_level | self.local_trend

    @property
    def n_states(self) -> int:
        """Total state dimension q*max(s+1, p) + n1 + n_a + n_b."""
        return self.q * max(self.s + 1, self.p) + self.n1 + self.n_a + self.n_b


@dataclass
class Params:
    """Full parameter set for a :class:`ModelSpec`.

    ``loadings`` holds s+1 arrays of shape (n, q); ``var_coeffs`` holds p
    arrays of shape (q, q).  Per-series variance vectors follow the spec's
    structural zeros: ``sigma2_omega`` is zero off ``local_level``,
    ``sigma2_eta`` zero off ``local_trend``, ``sigma2_nu`` zero off the
    union of the three index sets, and ``rho`` is 1 on ``idio_i1``, 0
    elsewhere.
    """

    loadings: list[np.ndarray]
    var_coeffs: list[np.ndarray]
    gamma_u: np.ndarray
    gamma_e_diag: np.ndarray
    rho: np.ndarray
    sigma2_omega: np.ndarray
    sigma2_eta: np.ndarray
    sigma2_nu: np.ndarray
    alpha0: np.ndarray
    beta0: np.ndarray

    def __post_init__(self):
        self.loadings = [_frozen(B) for B in self.loadings]
        self.var_coeffs = [_frozen(A) for A in self.var_coeffs]
        self.gamma_u = _frozen(self.gamma_u)
        self.gamma_e_diag = _frozen(self.gamma_e_diag)
        self.rho = _frozen(self.rho)
        self.sigma2_omega = _frozen(self.sigma2_omega)
        self.sigma2_eta = _frozen(self.sigma2_eta)
        self.sigma2_nu = _frozen(self.sigma2_nu)
        self.alpha0 = _frozen(self.alpha0)
        self.beta0 = _frozen(self.beta0)

    def validate(self, spec: ModelSpec) -> None:
        n, q = spec.n, spec.q
        if len(self.loadings) != spec.s + 1:
            raise ValueError(f"expected {spec.s + 1} loading matrices, got {len(self.loadings)}")
        for k, B in enumerate(self.loadings):
            if B.shape != (n, q):
                raise ValueError(f"loadings[{k}] has shape {B.shape}, expected {(n, q)}")
        if len(self.var_coeffs) != spec.p:
            raise ValueError(f"expected {spec.p} VAR coefficient matrices, got {len(self.var_coeffs)}")
        for k, A in enumerate(self.var_coeffs):
            if A.shape != (q, q):
                raise ValueError(f"var_coeffs[{k}] has shape {A.shape}, expected {(q, q)}")
        if self.gamma_u.shape != (q, q):
            raise ValueError("gamma_u has wrong shape")
        if not np.allclose(self.gamma_u, self.gamma_u.T):
            raise ValueError("gamma_u must be symmetric")
        if np.linalg.eigvalsh(self.gamma_u)[0] <= 0:
            raise ValueError("gamma_u must be positive definite")
        for name in ("gamma_e_diag", "rho", "sigma2_omega", "sigma2_eta", "sigma2_nu", "alpha0", "beta0"):
            v = getattr(self, name)
            if v.shape != (n,):
                raise ValueError(f"{name} has shape {v.shape}, expected {(n,)}")
        if np.any(self.gamma_e_diag <= 0):
            raise ValueError("gamma_e_diag entries must be positive")
        i1 = np.zeros(n, dtype=bool)
        i1[list(spec.idio_i1)] = True
        if not np.array_equal(self.rho != 0, i1):
            bad = np.nonzero((self.rho != 0) != i1)[0]
            raise ValueError(f"rho inconsistent with idio_i1 at series {bad.tolist()}")
        if not np.all(np.isin(self.rho, (0.0, 1.0))):
            raise ValueError("rho entries must be 0 or 1")
        for name, idx in (("sigma2_omega", spec.local_level), ("sigma2_eta", spec.local_trend)):
            v = getattr(self, name)
            members = np.zeros(n, dtype=bool)
            members[list(idx)] = True
            if np.any(v[~members] != 0) or np.any(v[members] <= 0):
                raise ValueError(f"{name} must be positive exactly on its index set")
        im = np.zeros(n, dtype=bool)
        im[list(spec.idio_im)] = True
        if np.any(self.sigma2_nu[~im] != 0) or np.any(self.sigma2_nu[im] <= 0):
            raise ValueError("sigma2_nu must be positive exactly on idio_i1|local_level|local_trend")


@dataclass(frozen=True)
class Panel:
    """n x T observation matrix plus a boolean mask (True = observed).

    Fully missing time columns are allowed; the filter treats them as
    prediction-only steps.
    """

    data: np.ndarray
    missing_mask: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if self.missing_mask is None:
            mask = np.isfinite(data)
        else:
            mask = np.asarray(self.missing_mask, dtype=bool)
        if mask.shape != data.shape:
            raise ValueError("missing_mask shape must match data")
        if not np.all(np.isfinite(data[mask])):
            raise ValueError("observed cells must be finite")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "missing_mask", _frozen(mask, dtype=bool))

    @classmethod
    def from_data(cls, data: np.ndarray) -> "Panel":
        """Build a panel from an array where NaN marks missing cells."""
        return cls(np.asarray(data, dtype=float), None)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def T(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class StateLayout:
    """Maps state-vector positions to model components."""

    q: int
    n_lags: int            # companion length max(s+1, p)
    xi_series: tuple[int, ...]
    alpha_series: tuple[int, ...]
    beta_series: tuple[int, ...]

    @property
    def n_factor_states(self) -> int:
        return self.q * self.n_lags

    @property
    def K(self) -> int:
        return self.n_factor_states + len(self.xi_series) + len(self.alpha_series) + len(self.beta_series)

    def factor_block(self, lag: int) -> slice:
        """Slice of the state holding f_{t-lag}."""
        if not 0 <= lag < self.n_lags:
            raise ValueError(f"lag {lag} outside companion range 0..{self.n_lags - 1}")
        return slice(self.q * lag, self.q * (lag + 1))

    @property
    def xi_slice(self) -> slice:
        return slice(self.n_factor_states, self.n_factor_states + len(self.xi_series))

    @property
    def alpha_slice(self) -> slice:
        a0 = self.n_factor_states + len(self.xi_series)
        return slice(a0, a0 + len(self.alpha_series))

    @property
    def beta_slice(self) -> slice:
        b0 = self.n_factor_states + len(self.xi_series) + len(self.alpha_series)
        return slice(b0, b0 + len(self.beta_series))

    def describe(self) -> list[str]:
        names = [f"f[{j}] lag {lag}" for lag in range(self.n_lags) for j in range(self.q)]
        names += [f"xi[{i}]" for i in self.xi_series]
        names += [f"alpha[{i}]" for i in self.alpha_series]
        names += [f"beta[{i}]" for i in self.beta_series]
        return names


@dataclass(frozen=True)
class StateSpace:
    """Assembled state-space system.

    ``measurement_base`` holds the time-invariant part of the measurement
    matrix; the loading on a trend-slope state is the (one-based) time
    index, so callers must go through :meth:`measurement_map`.
    """

    layout: StateLayout
    transition_map: np.ndarray        # K x K
    state_innovation_cov: np.ndarray  # K x K
    measurement_base: np.ndarray      # n x K
    measurement_cov_diag: np.ndarray  # n
    time_varying: bool

    def measurement_map(self, t: int) -> np.ndarray:
        """Measurement matrix at zero-based time index t (label t+1)."""
        if not self.time_varying:
            return self.measurement_base
        Z = self.measurement_base.copy()
        Z[:, self.layout.beta_slice] *= float(t + 1)
        return Z

    @property
    def K(self) -> int:
        return self.layout.K


def build_state_space(spec: ModelSpec, params: Params) -> StateSpace:
    """Assemble the compact state-space system for (spec, params).

    The factor companion block uses q*max(s+1, p) states so one block
    serves both the measurement lags and the VAR lags; slots beyond the
    available coefficients load zeros.  Deterministic given its inputs.
    """
    params.validate(spec)
    q, s, p = spec.q, spec.s, spec.p
    layout = StateLayout(
        q=q,
        n_lags=max(s + 1, p),
        xi_series=tuple(sorted(spec.idio_i1)),
        alpha_series=tuple(sorted(spec.local_level)),
        beta_series=tuple(sorted(spec.local_trend)),
    )
    K = layout.K
    r = layout.n_factor_states

    Theta = np.zeros((K, K))
    for k, A in enumerate(params.var_coeffs):
        Theta[0:q, layout.factor_block(k)] = A
    if layout.n_lags > 1:
        Theta[q:r, 0:r - q] = np.eye(r - q)
    for j, i in enumerate(layout.xi_series):
        Theta[layout.xi_slice.start + j, layout.xi_slice.start + j] = params.rho[i]
    for blk in (layout.alpha_slice, layout.beta_slice):
        Theta[blk, blk] = np.eye(blk.stop - blk.start)

    Q = np.zeros((K, K))
    Q[0:q, 0:q] = params.gamma_u
    Q[layout.xi_slice, layout.xi_slice] = np.diag(params.gamma_e_diag[list(layout.xi_series)])
    if layout.alpha_series:
        Q[layout.alpha_slice, layout.alpha_slice] = np.diag(params.sigma2_omega[list(layout.alpha_series)])
    if layout.beta_series:
        Q[layout.beta_slice, layout.beta_slice] = np.diag(params.sigma2_eta[list(layout.beta_series)])

    Z = np.zeros((spec.n, K))
    for k in range(s + 1):
        Z[:, layout.factor_block(k)] = params.loadings[k]
    for j, i in enumerate(layout.xi_series):
        Z[i, layout.xi_slice.start + j] = 1.0
    for j, i in enumerate(layout.alpha_series):
        Z[i, layout.alpha_slice.start + j] = 1.0
    for j, i in enumerate(layout.beta_series):
        Z[i, layout.beta_slice.start + j] = 1.0  # scaled by the time label in measurement_map

    im = spec.idio_im
    R = np.array([params.sigma2_nu[i] if i in im else params.gamma_e_diag[i] for i in range(spec.n)])

    return StateSpace(
        layout=layout,
        transition_map=_frozen(Theta),
        state_innovation_cov=_frozen(Q),
        measurement_base=_frozen(Z),
        measurement_cov_diag=_frozen(R),
        time_varying=bool(layout.beta_series),
    )


def common_component(loadings: list[np.ndarray], factors: np.ndarray, t: int, i: int) -> float:
    """chi[i,t] = sum_k b_ik' f[:, t-k] from a q x T factor path.

    ``t`` is a zero-based time index and must be >= s so every lag exists.
    """
    s = len(loadings) - 1
    if not s <= t < factors.shape[1]:
        raise ValueError(f"t={t} out of range for s={s}, T={factors.shape[1]}")
    return float(sum(loadings[k][i] @ factors[:, t - k] for k in range(s + 1)))


def common_component_path(loadings: list[np.ndarray], factor_states: np.ndarray, layout: StateLayout) -> np.ndarray:
    """n x T common component from smoothed companion states (T x K_f).

    Uses the in-state lagged factors, so every t (including t < s) is
    covered by the smoother's pre-sample estimates.
    """
    n = loadings[0].shape[0]
    T = factor_states.shape[0]
    chi = np.zeros((n, T))
    for k, B in enumerate(loadings):
        chi += B @ factor_states[:, layout.factor_block(k)].T
    return chi
