"""EM estimation: smoother-based E-step and closed-form M-step updates.

The E-step runs the Kalman filter and smoother and reduces the smoothed
moments to sufficient statistics; the M-step solves per-series weighted
least squares for the loadings, a companion-form regression for the
factor VAR, and per-state variance updates.  All second moments are
exact conditional expectations (cross-covariances between factor and
idiosyncratic states included), which keeps the observed log-likelihood
non-decreasing across iterations up to floating point.

Series flagged for detrending keep a per-series constant and linear
trend in the measurement equation.  Both coefficients are bona fide
model parameters, re-estimated in every M-step jointly with the
loadings: a one-shot OLS detrend is badly contaminated by stochastic
trends, and freezing it would leave a residual deterministic component
that nothing in the state can absorb.

Across iterations the filter is re-seeded with the previous smoothed
time-0 mean and covariance, which is itself the maximizer of the initial
state term of the expected complete-data log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kalman import DEFAULT_KAPPA, SmootherOutput, kf_filter, ks_smooth
from .model import ModelSpec, Panel, Params, StateLayout, build_state_space, common_component_path
from .pre_estimate import VARIANCE_FLOOR, PreEstimate, pre_estimate

__all__ = [
    "EMOptions",
    "EMResult",
    "SufficientStats",
    "e_step",
    "m_step_loadings",
    "m_step_var",
    "m_step_variances",
    "fit",
]


@dataclass(frozen=True)
class EMOptions:
    """Knobs of the EM loop.

    ``phi_policy`` is either "estimated" (the small measurement variances
    of series with extra states are updated every iteration) or a float,
    which fixes them at that value.  ``detrend`` lists series that carry
    a deterministic intercept and linear trend in the measurement
    equation; it defaults to the series with time-varying intercepts or
    slopes (whose states then absorb only the stochastic part).
    """

    max_iter: int = 500
    tolerance: float = 1.0e-4
    phi_policy: str | float = "estimated"
    kappa: float = DEFAULT_KAPPA
    detrend: frozenset[int] | None = None
    standardize: bool = False
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if isinstance(self.phi_policy, str) and self.phi_policy != "estimated":
            raise ValueError("phi_policy must be 'estimated' or a fixed value")
        if not isinstance(self.phi_policy, str) and self.phi_policy <= 0:
            raise ValueError("a fixed phi must be positive")


@dataclass
class SufficientStats:
    """Expected sufficient statistics of one E-step.

    State moments are summed over the transition range t = 1..T:
    ``SA`` = sum E[s_t s_t'], ``SB`` = sum E[s_t s_{t-1}'], ``SC`` =
    sum E[s_{t-1} s_{t-1}'].  Measurement moments are per series, summed
    over each series' observed time points, for the augmented regressor
    z_t = (F_t, 1, t): ``gram_aug`` = sum E[z z'], ``cross_aug`` =
    sum E[z (x - w)], ``sum_zw`` = sum E[z w], where w is the series'
    extra-state combination (zero off those series).
    """

    SA: np.ndarray
    SB: np.ndarray
    SC: np.ndarray
    gram_aug: np.ndarray             # (n, r0+2, r0+2)
    cross_aug: np.ndarray            # (n, r0+2)
    sum_zw: np.ndarray               # (n, r0+2)
    sum_xx: np.ndarray               # (n,)
    sum_xw: np.ndarray               # (n,)
    sum_ww: np.ndarray               # (n,)
    n_obs: np.ndarray                # (n,)
    loglik: float
    layout: StateLayout

    @property
    def r0(self) -> int:
        return self.gram_aug.shape[1] - 2

    @property
    def gram(self) -> np.ndarray:
        """Factor-block expected Gram matrices (n, r0, r0)."""
        return self.gram_aug[:, : self.r0, : self.r0]

    @property
    def cross(self) -> np.ndarray:
        """Factor-block cross moments sum E[F (x - w)] per series."""
        return self.cross_aug[:, : self.r0]


@dataclass
class EMResult:
    """Fit output: final parameters, smoothed states and diagnostics."""

    spec: ModelSpec
    params: Params
    chi: np.ndarray                  # n x T estimated common component
    factors: np.ndarray              # q x T smoothed factors
    smoothed: SmootherOutput
    loglik_path: list[float]
    iterations: int
    converged: bool
    pre: PreEstimate
    options: EMOptions
    trend_alpha: np.ndarray          # estimated deterministic intercepts
    trend_beta: np.ndarray           # estimated deterministic slopes
    layout: StateLayout = field(repr=False, default=None)

    def fitted_deterministic(self) -> np.ndarray:
        """The deterministic component excluded from the common component."""
        T = self.chi.shape[1]
        t = np.arange(1, T + 1)
        return self.trend_alpha[:, None] + self.trend_beta[:, None] * t

    def smoothed_state_paths(self) -> dict[str, np.ndarray]:
        """xi/alpha/beta smoothed paths as n x T arrays (zero off their sets)."""
        lay = self.layout
        n, T = self.chi.shape
        out = {}
        for name, series, sl in (
            ("xi", lay.xi_series, lay.xi_slice),
            ("alpha", lay.alpha_series, lay.alpha_slice),
            ("beta", lay.beta_series, lay.beta_slice),
        ):
            path = np.zeros((n, T))
            block = self.smoothed.smoothed_means[1:, sl]
            for j, i in enumerate(series):
                path[i] = block[:, j]
            out[name] = path
        return out


def e_step(
    spec: ModelSpec,
    params: Params,
    panel: Panel,
    init_mean: np.ndarray,
    init_cov: np.ndarray,
    deterministic: np.ndarray | None = None,
) -> tuple[SufficientStats, SmootherOutput]:
    """Smoother pass plus reduction to expected sufficient statistics.

    ``deterministic`` (n x T) is subtracted from the data before
    filtering; the measurement moments are still reported against the
    original data so the M-step can re-estimate the per-series intercept
    and slope.
    """
    ss = build_state_space(spec, params)
    if deterministic is None:
        panel_f = panel
    else:
        shifted = panel.data - deterministic
        panel_f = Panel(np.where(panel.missing_mask, shifted, np.nan), panel.missing_mask)
    filt = kf_filter(ss, panel_f, init_mean, init_cov)
    smooth = ks_smooth(filt, ss)
    stats = reduce_moments(spec, ss.layout, panel, smooth, filt.loglik)
    return stats, smooth


def reduce_moments(
    spec: ModelSpec,
    layout: StateLayout,
    panel: Panel,
    smooth: SmootherOutput,
    loglik: float,
) -> SufficientStats:
    """Turn smoothed means/covariances into the M-step sufficient statistics."""
    x, mask = panel.data, panel.missing_mask
    n, T = x.shape
    K = layout.K
    r0 = (spec.s + 1) * spec.q
    S = smooth.smoothed_means          # (T+1, K)
    P = smooth.smoothed_covs           # (T+1, K, K)
    L1 = smooth.lag_one_covs           # (T+1, K, K)

    SA = S[1:].T @ S[1:] + P[1:].sum(axis=0)
    SB = np.einsum("ti,tj->ij", S[1:], S[:-1]) + L1[1:].sum(axis=0)
    SC = S[:-1].T @ S[:-1] + P[:-1].sum(axis=0)

    tlab = np.arange(1, T + 1, dtype=float)
    F = S[1:, :r0]
    Z = np.concatenate([F, np.ones((T, 1)), tlab[:, None]], axis=1)      # (T, r0+2)
    EZZ = Z[:, :, None] * Z[:, None, :]
    EZZ[:, :r0, :r0] += P[1:, :r0, :r0]
    m = mask.astype(float)
    gram_aug = np.einsum("it,tjk->ijk", m, EZZ)
    xz = np.where(mask, x, 0.0)
    cross_aug = xz @ Z                                                   # sum E[z x]
    sum_xx = (xz ** 2).sum(axis=1)
    n_obs = mask.sum(axis=1)

    # w_it = xi + alpha + t * beta for series with extra latent states
    im = sorted(spec.idio_im)
    sum_ww = np.zeros(n)
    sum_xw = np.zeros(n)
    sum_zw = np.zeros((n, r0 + 2))
    if im:
        sentinel = K
        pos: dict[int, dict[str, int]] = {}
        for name, sl, series in (
            ("xi", layout.xi_slice, layout.xi_series),
            ("alpha", layout.alpha_slice, layout.alpha_series),
            ("beta", layout.beta_slice, layout.beta_series),
        ):
            for j, i in enumerate(series):
                pos.setdefault(i, {})[name] = sl.start + j
        mxi = np.array([pos[i].get("xi", sentinel) for i in im])
        mal = np.array([pos[i].get("alpha", sentinel) for i in im])
        mbe = np.array([pos[i].get("beta", sentinel) for i in im])

        tcol = tlab[:, None]
        Spad = np.concatenate([S[1:], np.zeros((T, 1))], axis=1)
        Ppad = np.pad(P[1:], ((0, 0), (0, 1), (0, 1)))
        tt = np.arange(T)[:, None]
        wbar = Spad[:, mxi] + Spad[:, mal] + tcol * Spad[:, mbe]          # (T, n_m)
        var_w = (
            Ppad[tt, mxi, mxi] + Ppad[tt, mal, mal] + tcol ** 2 * Ppad[tt, mbe, mbe]
            + 2.0 * Ppad[tt, mxi, mal] + 2.0 * tcol * Ppad[tt, mxi, mbe]
            + 2.0 * tcol * Ppad[tt, mal, mbe]
        )
        cov_Fw = (
            Ppad[:, :r0, mxi] + Ppad[:, :r0, mal] + tcol[:, None] * Ppad[:, :r0, mbe]
        )                                                                 # (T, r0, n_m)
        mask_m = m[im].T                                                  # (T, n_m)
        xz_m = xz[im].T
        sum_ww[im] = (mask_m * (wbar ** 2 + var_w)).sum(axis=0)
        sum_xw[im] = (mask_m * xz_m * wbar).sum(axis=0)
        sum_zw_m = np.einsum("tn,tr->nr", mask_m * wbar, Z)
        sum_zw_m[:, :r0] += np.einsum("tn,trn->nr", mask_m, cov_Fw)
        sum_zw[im] = sum_zw_m

    cross_aug -= sum_zw
    return SufficientStats(
        SA=SA, SB=SB, SC=SC,
        gram_aug=gram_aug, cross_aug=cross_aug, sum_zw=sum_zw,
        sum_xx=sum_xx, sum_xw=sum_xw, sum_ww=sum_ww,
        n_obs=n_obs, loglik=float(loglik), layout=layout,
    )


def m_step_loadings(stats: SufficientStats, i: int) -> np.ndarray:
    """Loadings update for one series: solve its expected Gram system."""
    try:
        return np.linalg.solve(stats.gram[i], stats.cross[i])
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"singular expected factor Gram for series {i}; smoothed factors are collinear"
        ) from exc


def _solve_measurement(
    stats: SufficientStats,
    alpha_free: np.ndarray,
    beta_free: np.ndarray,
    prev_coef: np.ndarray,
) -> np.ndarray:
    """Per-series (loadings, intercept, slope) solve.

    The intercept/slope columns enter only for series whose deterministic
    component is a parameter (not covered by a latent state); series with
    no observations keep their previous coefficients.
    """
    r0 = stats.r0
    coef = prev_coef.copy()
    obs = stats.n_obs > 0
    groups = [
        (~alpha_free & ~beta_free, list(range(r0))),
        (alpha_free & ~beta_free, list(range(r0)) + [r0]),
        (~alpha_free & beta_free, list(range(r0)) + [r0 + 1]),
        (alpha_free & beta_free, list(range(r0 + 2))),
    ]
    try:
        for sel, cols in groups:
            idx = np.nonzero(obs & sel)[0]
            if not idx.size:
                continue
            G = stats.gram_aug[np.ix_(idx, cols, cols)]
            rhs = stats.cross_aug[np.ix_(idx, cols)]
            sol = np.linalg.solve(G, rhs[:, :, None])[:, :, 0]
            coef[np.ix_(idx, [c for c in range(r0 + 2) if c not in cols])] = 0.0
            coef[np.ix_(idx, cols)] = sol
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular expected factor Gram; smoothed factors are collinear") from exc
    return coef


def _factor_moment(stats: SufficientStats, j: int, l: int) -> np.ndarray:
    """sum_t E[f_{t-j} f_{t-l}'] from the state accumulators."""
    lay = stats.layout
    q, c = lay.q, lay.n_lags

    def block(M, a, b):
        return M[q * a:q * (a + 1), q * b:q * (b + 1)]

    if j <= c - 1 and l <= c - 1:
        return block(stats.SA, j, l)
    if j <= c - 1 and l == c:
        return block(stats.SB, j, c - 1)
    if j == c and l <= c - 1:
        return block(stats.SB, l, c - 1).T
    if j == c and l == c:
        return block(stats.SC, c - 1, c - 1)
    raise ValueError(f"factor moment lag ({j},{l}) outside companion range")


def m_step_var(stats: SufficientStats, spec: ModelSpec, T: int):
    """VAR coefficient and innovation covariance updates.

    The coefficient blocks solve the expected companion regression; the
    innovation covariance is the full quadratic form sum over lags of the
    expected residual outer product, normalized by T.
    """
    q, p = spec.q, spec.p
    mu = {(j, l): _factor_moment(stats, j, l) for j in range(p + 1) for l in range(p + 1)}
    gram_lag = np.block([[mu[(j + 1, l + 1)] for l in range(p)] for j in range(p)])
    cross = np.hstack([mu[(0, l + 1)] for l in range(p)])
    try:
        A_stack = np.linalg.solve(gram_lag.T, cross.T).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular lagged factor Gram in the VAR update") from exc
    A = [A_stack[:, k * q:(k + 1) * q] for k in range(p)]
    tilde = [np.eye(q)] + [-Ak for Ak in A]
    gamma_u = np.zeros((q, q))
    for j in range(p + 1):
        for l in range(p + 1):
            gamma_u += tilde[j] @ mu[(j, l)] @ tilde[l].T
    gamma_u = 0.5 * (gamma_u + gamma_u.T) / T
    return A, gamma_u


def m_step_variances(
    stats: SufficientStats,
    spec: ModelSpec,
    coef: np.ndarray,
    params_prev: Params,
    options: EMOptions,
    T: int,
):
    """Random-walk innovation variances and measurement variances.

    The measurement variance of each series is the expected squared
    measurement residual with the new coefficients; series with extra
    states include the w terms and update the phi device unless a fixed
    policy is set.  Everything is floored to keep the filter defined.
    """
    lay = stats.layout
    floor = options.variance_floor
    n = spec.n

    def rw_update(sl: slice, series) -> np.ndarray:
        out = np.zeros(n)
        for j, i in enumerate(series):
            k = sl.start + j
            out[i] = max((stats.SA[k, k] + stats.SC[k, k] - 2.0 * stats.SB[k, k]) / T, floor)
        return out

    ge = np.array(params_prev.gamma_e_diag)
    for j, i in enumerate(lay.xi_series):
        k = lay.xi_slice.start + j
        ge[i] = max((stats.SA[k, k] + stats.SC[k, k] - 2.0 * stats.SB[k, k]) / T, floor)

    sum_zx = stats.cross_aug + stats.sum_zw
    quad = np.einsum("nr,nrs,ns->n", coef, stats.gram_aug, coef)
    resid = (
        stats.sum_xx + quad + stats.sum_ww
        - 2.0 * np.einsum("nr,nr->n", coef, sum_zx)
        - 2.0 * stats.sum_xw
        + 2.0 * np.einsum("nr,nr->n", coef, stats.sum_zw)
    )
    denom = np.maximum(stats.n_obs, 1)
    sig2 = np.maximum(resid / denom, floor)

    im = np.zeros(n, dtype=bool)
    im[list(spec.idio_im)] = True
    ge[~im] = sig2[~im]

    s2nu = np.array(params_prev.sigma2_nu)
    if isinstance(options.phi_policy, str):
        s2nu[im] = sig2[im]
    else:
        s2nu[im] = float(options.phi_policy)

    s2w = rw_update(lay.alpha_slice, lay.alpha_series)
    s2e = rw_update(lay.beta_slice, lay.beta_series)
    return ge, s2w, s2e, s2nu


def _m_step(
    stats: SufficientStats,
    spec: ModelSpec,
    params_prev: Params,
    options: EMOptions,
    alpha_free: np.ndarray,
    beta_free: np.ndarray,
    prev_coef: np.ndarray,
    T: int,
) -> tuple[Params, np.ndarray]:
    q, s = spec.q, spec.s
    r0 = (s + 1) * q
    coef = _solve_measurement(stats, alpha_free, beta_free, prev_coef)
    A, gamma_u = m_step_var(stats, spec, T)
    if np.linalg.eigvalsh(gamma_u)[0] <= options.variance_floor:
        gamma_u = gamma_u + options.variance_floor * np.eye(q)
    ge, s2w, s2e, s2nu = m_step_variances(stats, spec, coef, params_prev, options, T)
    params = Params(
        loadings=[coef[:, k * q:(k + 1) * q] for k in range(s + 1)],
        var_coeffs=A,
        gamma_u=gamma_u,
        gamma_e_diag=ge,
        rho=params_prev.rho,
        sigma2_omega=s2w,
        sigma2_eta=s2e,
        sigma2_nu=s2nu,
        alpha0=coef[:, r0],
        beta0=coef[:, r0 + 1],
    )
    return params, coef


def _relative_change(curr: float, prev: float) -> float:
    denom = 0.5 * (abs(curr) + abs(prev))
    return abs(curr - prev) / denom if denom > 0 else 0.0


def fit(spec: ModelSpec, panel: Panel, options: EMOptions | None = None) -> EMResult:
    """Estimate the model by EM and return the common component.

    Runs the pre-estimation, alternates E- and M-steps until the relative
    log-likelihood change drops below the tolerance, then refreshes the
    smoothed states with the final parameters.  Non-convergence returns
    the best-so-far fit with ``converged=False``.
    """
    options = options or EMOptions()
    if (panel.n, panel.T) != (spec.n, spec.T):
        raise ValueError(f"panel is {panel.n}x{panel.T}, spec says {spec.n}x{spec.T}")

    scale = np.ones(spec.n)
    if options.standardize:
        dx = np.diff(panel.data, axis=1)
        ok = panel.missing_mask[:, 1:] & panel.missing_mask[:, :-1]
        for i in range(spec.n):
            sd = np.std(dx[i, ok[i]]) if ok[i].any() else 1.0
            scale[i] = sd if sd > 0 else 1.0
        panel = Panel(panel.data / scale[:, None], panel.missing_mask)

    pre = pre_estimate(spec, panel, options.detrend, options.kappa)

    # deterministic intercept/slope parameters: active for the detrend set,
    # minus any component that lives in the state instead
    n, T = spec.n, spec.T
    tgrid = np.arange(1, T + 1, dtype=float)
    r0 = (spec.s + 1) * spec.q
    detrend_mask = np.zeros(n, dtype=bool)
    detrend_mask[list(pre.detrend_set)] = True
    coef = np.zeros((n, r0 + 2))
    coef[:, :r0] = np.hstack([np.asarray(B) for B in pre.params.loadings])
    alpha_free = detrend_mask & ~np.isin(np.arange(n), list(spec.local_level))
    beta_free = detrend_mask & ~np.isin(np.arange(n), list(spec.local_trend))
    coef[alpha_free, r0] = pre.alpha_check[alpha_free]
    coef[beta_free, r0 + 1] = pre.beta_check[beta_free]

    params = pre.params
    init_mean = pre.init_state_mean
    init_cov = pre.init_state_cov
    logliks: list[float] = []
    converged = False
    smooth = None
    iterations = 0

    for k in range(options.max_iter):
        det = coef[:, r0][:, None] + coef[:, r0 + 1][:, None] * tgrid
        stats, smooth = e_step(spec, params, panel, init_mean, init_cov, det)
        logliks.append(stats.loglik)
        iterations = k + 1
        params, coef = _m_step(stats, spec, params, options, alpha_free, beta_free, coef, T)
        init_mean = smooth.smoothed_means[0]
        init_cov = smooth.smoothed_covs[0]
        if k >= 1 and _relative_change(logliks[-1], logliks[-2]) < options.tolerance:
            converged = True
            break

    det = coef[:, r0][:, None] + coef[:, r0 + 1][:, None] * tgrid
    final_stats, smooth = e_step(spec, params, panel, init_mean, init_cov, det)
    logliks.append(final_stats.loglik)

    layout = build_state_space(spec, params).layout
    chi = common_component_path(params.loadings, smooth.smoothed_means[1:], layout)
    factors = smooth.smoothed_means[1:, :spec.q].T
    trend_alpha = coef[:, r0].copy()
    trend_beta = coef[:, r0 + 1].copy()

    if options.standardize:
        chi = chi * scale[:, None]
        params = _rescale_params(params, scale)
        trend_alpha *= scale
        trend_beta *= scale

    return EMResult(
        spec=spec,
        params=params,
        chi=chi,
        factors=factors,
        smoothed=smooth,
        loglik_path=logliks,
        iterations=iterations,
        converged=converged,
        pre=pre,
        options=options,
        trend_alpha=trend_alpha,
        trend_beta=trend_beta,
        layout=layout,
    )


def _rescale_params(params: Params, scale: np.ndarray) -> Params:
    """Map parameters of the standardized panel back to the raw scale."""
    return Params(
        loadings=[B * scale[:, None] for B in params.loadings],
        var_coeffs=list(params.var_coeffs),
        gamma_u=params.gamma_u,
        gamma_e_diag=params.gamma_e_diag * scale ** 2,
        rho=params.rho,
        sigma2_omega=params.sigma2_omega * scale ** 2,
        sigma2_eta=params.sigma2_eta * scale ** 2,
        sigma2_nu=params.sigma2_nu * scale ** 2,
        alpha0=params.alpha0 * scale,
        beta0=params.beta0 * scale,
    )
