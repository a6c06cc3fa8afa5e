"""Pre-estimation: the parameter values that seed the first EM iteration.

Everything here runs on first differences of (optionally detrended) data:
principal components of the differenced panel give the contemporaneous
loadings, a regression of the residual differences on lagged factor
differences gives the lagged loadings, and an unrestricted VAR fitted on
the implied factor path gives the transition parameters.  Levels never
enter any regression in this module, which keeps the initialization free
of spurious effects from idiosyncratic unit roots or linear trends.

Missing cells are tolerated: gaps in the differenced panel are filled
with per-series means before the PCA (pre-estimators need not be
consistent; the EM iterations handle missingness exactly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kalman import DEFAULT_KAPPA
from .model import ModelSpec, Panel, Params

__all__ = [
    "PreEstimate",
    "detrend_ols",
    "pc_first_differences",
    "lagged_loadings",
    "var_prefit",
    "gamma_e_init",
    "p00_init",
    "pre_estimate",
]

# Fixed initial values for the innovation variances of the extra states
SIGMA2_OMEGA_INIT = 1.0e-2
SIGMA2_ETA_INIT = 1.0e-2
SIGMA2_NU_INIT = 1.0e-5

VARIANCE_FLOOR = 1.0e-12


@dataclass
class PreEstimate:
    """Iteration-0 estimates plus the Kalman filter initialization."""

    loadings: list[np.ndarray]
    f_tilde: np.ndarray              # q x T pre-factor path
    var_coeffs: list[np.ndarray]
    companion: np.ndarray            # factor-block companion (q*c x q*c)
    gamma_u: np.ndarray
    gamma_e_diag: np.ndarray
    alpha_check: np.ndarray          # OLS intercepts (0 off the detrend set)
    beta_check: np.ndarray           # OLS slopes (0 off the detrend set)
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    params: Params
    init_state_mean: np.ndarray
    init_state_cov: np.ndarray
    detrend_set: frozenset[int]


def detrend_ols(series: np.ndarray, in_trend_set: bool, mask: np.ndarray | None = None):
    """OLS of a series on (1, t) with t = 1..T; identity if not flagged.

    Returns (alpha, beta, residual series).  Only observed cells enter the
    regression when a mask is given; residuals at missing cells are NaN.
    """
    y = np.asarray(series, dtype=float)
    T = y.shape[0]
    if not in_trend_set:
        return 0.0, 0.0, y.copy()
    if T < 3:
        raise ValueError("detrending needs T >= 3")
    t = np.arange(1, T + 1, dtype=float)
    obs = np.ones(T, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if obs.sum() < 2:
        return 0.0, 0.0, y.copy()
    X = np.column_stack([np.ones(obs.sum()), t[obs]])
    coef, *_ = np.linalg.lstsq(X, y[obs], rcond=None)
    alpha, beta = float(coef[0]), float(coef[1])
    return alpha, beta, y - alpha - beta * t


def _filled_differences(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """n x (T-1) differenced panel with gaps filled by per-series means."""
    n, T = x.shape
    dx = x[:, 1:] - x[:, :-1]
    ok = mask[:, 1:] & mask[:, :-1]
    out = np.zeros((n, T - 1))
    for i in range(n):
        if ok[i].any():
            m = dx[i, ok[i]].mean()
            out[i] = np.where(ok[i], dx[i], m)
    return out


def _filled_levels(x: np.ndarray, mask: np.ndarray, dx_fill: np.ndarray) -> np.ndarray:
    """Complete levels: observed cells kept, gaps walked with filled steps."""
    n, T = x.shape
    out = np.where(mask, x, np.nan)
    for i in range(n):
        if not mask[i].any():
            out[i] = 0.0
            continue
        for t in range(1, T):
            if np.isnan(out[i, t]):
                out[i, t] = out[i, t - 1] + dx_fill[i, t - 1]
        for t in range(T - 2, -1, -1):
            if np.isnan(out[i, t]):
                out[i, t] = out[i, t + 1] - dx_fill[i, t]
    return out


def _ordered_eigh(G: np.ndarray):
    """Eigenpairs in descending eigenvalue order with a lexicographic tie-break."""
    vals, vecs = np.linalg.eigh(G)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    order = sorted(range(len(vals)), key=lambda j: (-vals[j], tuple(-vecs[:, j])))
    return vals[order], vecs[:, order]


def pc_first_differences(dx: np.ndarray, q: int):
    """Loadings from the q leading eigenpairs of the differenced covariance.

    Returns (B0, eigenvalues, eigenvectors) with B0 = V M^{1/2}, columns
    ordered by descending eigenvalue and signed so the first row of V is
    positive (falling back to the first nonzero entry of a column).
    """
    T_d = dx.shape[1]
    centered = dx - dx.mean(axis=1, keepdims=True)
    G = centered @ centered.T / T_d
    vals, vecs = _ordered_eigh(G)
    if np.sum(vals > 0) < q:
        raise ValueError(f"differenced covariance has fewer than q={q} positive eigenvalues")
    M = vals[:q]
    V = vecs[:, :q]
    for j in range(q):
        col = V[:, j]
        nz = np.nonzero(col)[0]
        lead = col[0] if col[0] != 0 else (col[nz[0]] if nz.size else 1.0)
        if lead < 0:
            V[:, j] = -col
    B0 = V * np.sqrt(M)
    return B0, M, V


def lagged_loadings(dx: np.ndarray, B0: np.ndarray, f_tilde: np.ndarray, s: int) -> list[np.ndarray]:
    """Project residual differences on lagged factor differences.

    Returns [B_1, ..., B_s]; empty for s = 0.  The s = 1 case is the
    single-lag projection of the residual (dx - B0 df_t) on df_{t-1}.
    """
    if s == 0:
        return []
    df = np.diff(f_tilde, axis=1)             # q x (T-1)
    resid = dx - B0 @ df                      # n x (T-1)
    q = B0.shape[1]
    cols = np.arange(s, df.shape[1])
    if cols.size < s * q + 1:
        raise ValueError("too few periods to fit lagged loadings")
    Rg = np.vstack([df[:, cols - k] for k in range(1, s + 1)])   # (s q) x len(cols)
    G = Rg @ Rg.T
    try:
        Bs = resid[:, cols] @ Rg.T @ np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular Gram matrix of lagged factor differences") from exc
    return [Bs[:, (k - 1) * q:k * q] for k in range(1, s + 1)]


def var_prefit(f_tilde: np.ndarray, p: int):
    """Unrestricted VAR(p) in levels on the pre-factor path.

    Returns (coefficient list, companion matrix, innovation covariance);
    the innovation covariance is normalized by T as in the rest of the
    initialization.  No cointegration-rank restriction is imposed.
    """
    q, T = f_tilde.shape
    if T < p * q + p + 1:
        raise ValueError(f"T={T} too small for a VAR({p}) on {q} factors")
    ts = np.arange(p, T)
    Y = f_tilde[:, ts]
    X = np.vstack([f_tilde[:, ts - k] for k in range(1, p + 1)])  # (p q) x (T-p)
    G = X @ X.T
    try:
        A_stack = Y @ X.T @ np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular regressor moment matrix in the factor VAR") from exc
    A = [A_stack[:, (k - 1) * q:k * q] for k in range(1, p + 1)]
    resid = Y - A_stack @ X
    gamma_u = resid @ resid.T / T
    c = p
    comp = np.zeros((q * c, q * c))
    for k in range(p):
        comp[:q, k * q:(k + 1) * q] = A[k]
    if c > 1:
        comp[q:, :q * (c - 1)] = np.eye(q * (c - 1))
    return A, comp, gamma_u


def gamma_e_init(
    dx: np.ndarray,
    loadings: list[np.ndarray],
    f_tilde: np.ndarray,
    idio_i1: frozenset[int],
    x_detrended: np.ndarray | None = None,
    levels_for_stationary: bool = False,
) -> np.ndarray:
    """Per-series idiosyncratic variances from differenced residuals.

    The residual variance is normalized by 1/T for random-walk series and
    by 1/(2T) otherwise, since a differenced stationary component is an
    MA(1) with twice the level variance.  ``levels_for_stationary``
    switches the stationary series to the levels-based alternative.
    """
    n, T_d = dx.shape
    T = T_d + 1
    s = len(loadings) - 1
    df = np.diff(f_tilde, axis=1)
    cols = np.arange(s, T_d)
    resid = dx[:, cols].copy()
    for k, B in enumerate(loadings):
        resid -= B @ df[:, cols - k]
    ssq = (resid ** 2).sum(axis=1)
    out = np.empty(n)
    for i in range(n):
        if i in idio_i1:
            out[i] = ssq[i] / T
        elif levels_for_stationary:
            if x_detrended is None:
                raise ValueError("levels_for_stationary requires the detrended panel")
            lcols = np.arange(s, T)
            lres = x_detrended[i, lcols].copy()
            for k, B in enumerate(loadings):
                lres -= B[i] @ f_tilde[:, lcols - k]
            out[i] = (lres ** 2).sum() / T
        else:
            out[i] = ssq[i] / (2 * T)
    return out


def p00_init(companion: np.ndarray, gamma_u: np.ndarray) -> np.ndarray:
    """Initial factor-block covariance from a shrunk discrete Lyapunov equation.

    The companion is scaled so its largest-modulus eigenvalue is 0.99 (a
    cointegrated factor VAR has a unit eigenvalue, so this turns the unit
    roots into near-unit roots and the stationary covariance is large but
    finite), then P = A P A' + Q is solved by inverting the vectorized
    system; Q places gamma_u in the contemporaneous block.
    """
    m = companion.shape[0]
    q = gamma_u.shape[0]
    radius = np.max(np.abs(np.linalg.eigvals(companion)))
    A = companion if radius == 0 else 0.99 * companion / radius
    Q = np.zeros((m, m))
    Q[:q, :q] = gamma_u
    lhs = np.eye(m * m) - np.kron(A, A)
    P = np.linalg.solve(lhs, Q.reshape(-1)).reshape(m, m)
    return 0.5 * (P + P.T)


def pre_estimate(
    spec: ModelSpec,
    panel: Panel,
    detrend: frozenset[int] | None = None,
    kappa: float = DEFAULT_KAPPA,
    levels_gamma_e: bool = False,
) -> PreEstimate:
    """Full iteration-0 estimation for (spec, panel).

    ``detrend`` defaults to local_level | local_trend; passing a larger
    set also removes constant linear trends from series that carry no
    time-varying state.  The returned initial state covariance uses the
    Lyapunov block for the factors and kappa * I for the extra states.
    """
    n, T, q = spec.n, spec.T, spec.q
    if (panel.n, panel.T) != (n, T):
        raise ValueError(f"panel is {panel.n}x{panel.T}, spec says {n}x{T}")
    if T < q + 2:
        raise ValueError("T too small for the differenced PCA")
    D = frozenset(detrend) if detrend is not None else (spec.local_level | spec.local_trend)
    if any(i < 0 or i >= n for i in D):
        raise ValueError("detrend set contains out-of-range indices")

    x, mask = panel.data, panel.missing_mask
    alpha_check = np.zeros(n)
    beta_check = np.zeros(n)
    x_det = np.array(x)
    tgrid = np.arange(1, T + 1, dtype=float)
    for i in range(n):
        a, b, _ = detrend_ols(x[i], i in D, mask[i])
        alpha_check[i], beta_check[i] = a, b
        x_det[i] = x[i] - a - b * tgrid

    dx = _filled_differences(x_det, mask)
    x_fill = _filled_levels(x_det, mask, dx)

    B0, M, V = pc_first_differences(dx, q)
    f_tilde = (B0.T @ x_fill) / M[:, None]      # M^{-1} B0' x
    lag = lagged_loadings(dx, B0, f_tilde, spec.s)
    loadings = [B0] + lag
    A, companion, gamma_u = var_prefit(f_tilde, spec.p)
    gamma_u = 0.5 * (gamma_u + gamma_u.T)
    if np.linalg.eigvalsh(gamma_u)[0] <= VARIANCE_FLOOR:
        gamma_u = gamma_u + (VARIANCE_FLOOR + abs(min(0.0, np.linalg.eigvalsh(gamma_u)[0]))) * np.eye(q)
    ge = np.maximum(
        gamma_e_init(dx, loadings, f_tilde, spec.idio_i1, x_det, levels_gamma_e),
        VARIANCE_FLOOR,
    )

    im = spec.idio_im
    s2w = np.zeros(n)
    s2w[list(spec.local_level)] = SIGMA2_OMEGA_INIT
    s2e = np.zeros(n)
    s2e[list(spec.local_trend)] = SIGMA2_ETA_INIT
    s2nu = np.zeros(n)
    s2nu[list(im)] = SIGMA2_NU_INIT
    rho = np.zeros(n)
    rho[list(spec.idio_i1)] = 1.0

    params = Params(
        loadings=loadings,
        var_coeffs=A,
        gamma_u=gamma_u,
        gamma_e_diag=ge,
        rho=rho,
        sigma2_omega=s2w,
        sigma2_eta=s2e,
        sigma2_nu=s2nu,
        alpha0=alpha_check,
        beta0=beta_check,
    )

    c = max(spec.s + 1, spec.p)
    comp_state = np.zeros((q * c, q * c))
    for k in range(spec.p):
        comp_state[:q, k * q:(k + 1) * q] = A[k]
    if c > 1:
        comp_state[q:, :q * (c - 1)] = np.eye(q * (c - 1))
    P00_f = p00_init(comp_state, gamma_u)

    K = spec.n_states
    init_cov = np.eye(K) * kappa
    init_cov[:q * c, :q * c] = P00_f
    init_mean = np.zeros(K)
    for k in range(c):
        init_mean[k * q:(k + 1) * q] = f_tilde[:, 0]
    off = q * c
    off += spec.n1  # xi states start at zero
    for j, i in enumerate(sorted(spec.local_level)):
        init_mean[off + j] = alpha_check[i]
    off += spec.n_a
    for j, i in enumerate(sorted(spec.local_trend)):
        init_mean[off + j] = beta_check[i]

    return PreEstimate(
        loadings=loadings,
        f_tilde=f_tilde,
        var_coeffs=A,
        companion=companion,
        gamma_u=gamma_u,
        gamma_e_diag=ge,
        alpha_check=alpha_check,
        beta_check=beta_check,
        eigenvalues=M,
        eigenvectors=V,
        params=params,
        init_state_mean=init_mean,
        init_state_cov=init_cov,
        detrend_set=D,
    )
