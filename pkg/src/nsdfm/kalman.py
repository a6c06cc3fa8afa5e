"""Kalman filter and fixed-interval smoother for the compact state space.

Handles missing observations by row selection, accumulates the Gaussian
log-likelihood over observed rows only, and returns the lag-one smoothed
covariances needed by the EM sufficient statistics.

Two algebraically equivalent measurement updates are used: a direct
update that factorizes the innovation covariance when few rows are
observed, and a Woodbury-style gain for wide panels, which costs
O(n K^2) instead of O(n^3) per step.  Either way the filtered covariance
is formed in Joseph form and re-symmetrized, which keeps the recursion
stable under the near-diffuse initialization used for unit-root states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Panel, StateSpace

__all__ = [
    "FilterOutput",
    "SmootherOutput",
    "kf_filter",
    "ks_smooth",
    "steady_state_diagnostics",
    "DEFAULT_KAPPA",
]

# Default variance for diffuse state blocks ("very large value" initialization).
DEFAULT_KAPPA = 1.0e7

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class FilterOutput:
    """Filter pass results; arrays are indexed 0..T with slot 0 = initial state.

    ``predicted_means[t]`` is a_{t|t-1} and ``filtered_means[t]`` a_{t|t}
    for t >= 1; slot 0 of both holds the initial mean/covariance.
    ``loglik_terms[t]`` is the prediction-error log-density of the rows
    observed at t and ``innovations[t]`` the corresponding prediction
    errors (empty at fully missing time points).
    """

    predicted_means: np.ndarray      # (T+1, K)
    predicted_covs: np.ndarray       # (T+1, K, K)
    filtered_means: np.ndarray       # (T+1, K)
    filtered_covs: np.ndarray        # (T+1, K, K)
    loglik_terms: np.ndarray         # (T+1,)
    innovations: list[np.ndarray] = field(default_factory=list)
    burn_in: int = 0

    @property
    def T(self) -> int:
        return self.predicted_means.shape[0] - 1

    @property
    def loglik(self) -> float:
        return float(self.loglik_terms[self.burn_in + 1:].sum())

    def innovation_cov(self, ss: StateSpace, panel: Panel, t: int) -> np.ndarray:
        """Innovation covariance of the rows observed at time t (1-based slot)."""
        obs = np.nonzero(panel.missing_mask[:, t - 1])[0]
        Z = ss.measurement_map(t - 1)[obs]
        return Z @ self.predicted_covs[t] @ Z.T + np.diag(ss.measurement_cov_diag[obs])


@dataclass
class SmootherOutput:
    """Fixed-interval smoother results, indexed like :class:`FilterOutput`.

    ``lag_one_covs[t]`` holds Cov(s_t, s_{t-1} | all data) for t >= 1.
    """

    smoothed_means: np.ndarray       # (T+1, K)
    smoothed_covs: np.ndarray        # (T+1, K, K)
    lag_one_covs: np.ndarray         # (T+1, K, K); slot 0 unused (zeros)

    @property
    def T(self) -> int:
        return self.smoothed_means.shape[0] - 1


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _chol_lower_inv(c: np.ndarray) -> np.ndarray:
    """Inverse of a lower-triangular Cholesky factor."""
    return np.linalg.solve(c, np.eye(c.shape[0]))


def kf_filter(
    ss: StateSpace,
    panel: Panel,
    init_mean: np.ndarray,
    init_cov: np.ndarray,
    burn_in: int = 0,
) -> FilterOutput:
    """Run the Kalman filter over a panel with missing-data row selection.

    At a fully missing time index the update is skipped and the
    log-likelihood contribution is zero.  Raises on non-finite inputs and
    on a numerically singular innovation covariance (which usually
    signals a degenerate measurement variance).
    """
    x, mask = panel.data, panel.missing_mask
    n, T = x.shape
    K = ss.K
    if ss.measurement_base.shape[0] != n:
        raise ValueError(f"panel has {n} series but the system measures {ss.measurement_base.shape[0]}")
    init_mean = np.asarray(init_mean, dtype=float)
    init_cov = np.asarray(init_cov, dtype=float)
    if init_mean.shape != (K,) or init_cov.shape != (K, K):
        raise ValueError("initial moments have wrong shape")
    if not (np.all(np.isfinite(init_mean)) and np.all(np.isfinite(init_cov))):
        raise ValueError("initial moments must be finite")

    Theta = ss.transition_map
    Q = ss.state_innovation_cov
    R_full = ss.measurement_cov_diag

    a_pred = np.zeros((T + 1, K))
    P_pred = np.zeros((T + 1, K, K))
    a_filt = np.zeros((T + 1, K))
    P_filt = np.zeros((T + 1, K, K))
    ll = np.zeros(T + 1)
    innovations: list[np.ndarray] = [np.zeros(0)]

    a_pred[0] = a_filt[0] = init_mean
    P_pred[0] = P_filt[0] = _symmetrize(init_cov)

    eye_K = np.eye(K)
    for t in range(1, T + 1):
        a = Theta @ a_filt[t - 1]
        P = _symmetrize(Theta @ P_filt[t - 1] @ Theta.T + Q)
        a_pred[t], P_pred[t] = a, P

        obs = np.nonzero(mask[:, t - 1])[0]
        if obs.size == 0:
            a_filt[t], P_filt[t] = a, P
            innovations.append(np.zeros(0))
            continue

        Z = ss.measurement_map(t - 1)[obs]
        r_diag = R_full[obs]
        v = x[obs, t - 1] - Z @ a
        innovations.append(v)

        try:
            if obs.size <= K:
                # direct update: factorize the n_obs x n_obs innovation covariance
                S = Z @ P @ Z.T + np.diag(r_diag)
                cS = np.linalg.cholesky(S)
                ci = _chol_lower_inv(cS)
                gain = P @ Z.T @ (ci.T @ ci)
                half = ci @ v
                quad = half @ half
                logdet_S = 2.0 * np.log(np.diag(cS)).sum()
            else:
                # Woodbury gain: O(n K^2) using the diagonal measurement covariance
                Zr = Z.T / r_diag                        # K x n_obs
                C = Zr @ Z
                cP = np.linalg.cholesky(P)
                cPi = _chol_lower_inv(cP)
                M_inv = _symmetrize(cPi.T @ cPi + C)     # P^{-1} + Z' R^{-1} Z
                cM = np.linalg.cholesky(M_inv)
                cMi = _chol_lower_inv(cM)
                M = cMi.T @ cMi
                gain = M @ Zr
                zv = Zr @ v
                quad = v @ (v / r_diag) - zv @ M @ zv
                logdet_S = (
                    np.log(r_diag).sum()
                    + 2.0 * np.log(np.diag(cP)).sum()
                    + 2.0 * np.log(np.diag(cM)).sum()
                )
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"innovation covariance singular at t={t}; check measurement variances"
            ) from exc

        a_filt[t] = a + gain @ v
        IKZ = eye_K - gain @ Z
        P_filt[t] = _symmetrize(IKZ @ P @ IKZ.T + (gain * r_diag) @ gain.T)
        ll[t] = -0.5 * (obs.size * _LOG_2PI + logdet_S + quad)

    if not np.all(np.isfinite(ll)):
        raise FloatingPointError("non-finite log-likelihood term; filter diverged")
    return FilterOutput(a_pred, P_pred, a_filt, P_filt, ll, innovations, burn_in=burn_in)


def ks_smooth(filt: FilterOutput, ss: StateSpace) -> SmootherOutput:
    """Fixed-interval (RTS) smoother with lag-one covariances.

    The smoothed cross-covariance uses Cov(s_t, s_{t-1} | data) =
    P_{t|T} J_{t-1}', with J the usual smoother gain; slot 0 of the output
    arrays carries the smoothed initial state, which re-seeds the filter
    across EM iterations.
    """
    Theta = ss.transition_map
    T = filt.T
    K = Theta.shape[0]
    s_mean = np.zeros((T + 1, K))
    s_cov = np.zeros((T + 1, K, K))
    lag1 = np.zeros((T + 1, K, K))

    s_mean[T] = filt.filtered_means[T]
    s_cov[T] = filt.filtered_covs[T]
    for t in range(T - 1, -1, -1):
        Pf = filt.filtered_covs[t]
        Pp = filt.predicted_covs[t + 1]
        # J_t = P_{t|t} Theta' P_{t+1|t}^{-1}, via a solve on the symmetric Pp
        J = np.linalg.solve(Pp, Theta @ Pf).T
        s_mean[t] = filt.filtered_means[t] + J @ (s_mean[t + 1] - filt.predicted_means[t + 1])
        s_cov[t] = _symmetrize(Pf + J @ (s_cov[t + 1] - Pp) @ J.T)
        lag1[t + 1] = s_cov[t + 1] @ J.T
    return SmootherOutput(s_mean, s_cov, lag1)


def _covariance_step(ss: StateSpace, P_filt: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
    """One data-free covariance recursion step (all rows observed)."""
    P = _symmetrize(ss.transition_map @ P_filt @ ss.transition_map.T + ss.state_innovation_cov)
    Z = ss.measurement_map(t)
    r_diag = ss.measurement_cov_diag
    Zr = Z.T / r_diag
    cP = np.linalg.cholesky(P)
    cPi = _chol_lower_inv(cP)
    M_inv = _symmetrize(cPi.T @ cPi + Zr @ Z)
    M = np.linalg.inv(M_inv)
    gain = M @ Zr
    IKZ = np.eye(ss.K) - gain @ Z
    Pf = _symmetrize(IKZ @ P @ IKZ.T + (gain * r_diag) @ gain.T)
    return P, Pf


def steady_state_diagnostics(
    systems: dict[int, tuple[StateSpace, np.ndarray]],
    horizon: int = 10,
    tol: float = 1.0e-6,
    T_total: int | None = None,
) -> dict[int, dict]:
    """Per-t traces of the filter/smoother MSE matrices over an n-grid.

    ``systems`` maps a cross-section size to (state space, initial state
    covariance); the recursion is data-free because the covariance of the
    Kalman filter does not depend on the realized observations.  For each
    n the result holds tr(P_{t|t-1})/q, tr(P_{t|t})/q and tr(P_{t|T})/q
    over the factor companion block for t = 1..horizon, n-scaled variants
    at t = horizon computed on the current-factor block (whose MSE decays
    at rate n), and ``steady_state_t``: the first t after which the
    one-step-ahead trace changes by less than ``tol``.  The smoother runs
    back from ``T_total`` (default: the horizon) so the smoothed traces
    condition on the full sample length.
    """
    T_full = max(T_total or horizon, horizon)
    out: dict[int, dict] = {}
    for n, (ss, P0) in systems.items():
        q = ss.layout.q
        fb = slice(0, ss.layout.n_factor_states)
        P_pred = np.zeros((T_full + 1, ss.K, ss.K))
        P_filt = np.zeros((T_full + 1, ss.K, ss.K))
        P_filt[0] = _symmetrize(np.asarray(P0, dtype=float))
        for t in range(1, T_full + 1):
            P_pred[t], P_filt[t] = _covariance_step(ss, P_filt[t - 1], t - 1)
        P_smooth = np.zeros_like(P_filt)
        P_smooth[T_full] = P_filt[T_full]
        for t in range(T_full - 1, -1, -1):
            J = np.linalg.solve(P_pred[t + 1], ss.transition_map @ P_filt[t]).T
            P_smooth[t] = _symmetrize(P_filt[t] + J @ (P_smooth[t + 1] - P_pred[t + 1]) @ J.T)

        cur = slice(0, q)
        tr_pred = np.array([np.trace(P_pred[t][fb, fb]) for t in range(1, horizon + 1)])
        tr_filt = np.array([np.trace(P_filt[t][fb, fb]) for t in range(1, horizon + 1)])
        tr_smooth = np.array([np.trace(P_smooth[t][fb, fb]) for t in range(1, horizon + 1)])
        diffs = np.abs(np.diff(tr_pred))
        settled = np.nonzero(diffs < tol)[0]
        flag = int(settled[0] + 1) if settled.size else None
        out[n] = {
            "tr_pred_over_q": tr_pred / q,
            "tr_filt_over_q": tr_filt / q,
            "tr_smooth_over_q": tr_smooth / q,
            "tr_init_over_q": float(np.trace(P_filt[0][fb, fb])) / q,
            "tr_filt_scaled": float(np.trace(P_filt[horizon][cur, cur])) * n / q,
            "tr_smooth_scaled": float(np.trace(P_smooth[horizon][cur, cur])) * n / q,
            "steady_state_t": flag,
        }
    return out
