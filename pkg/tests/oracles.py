"""Independent brute-force oracles used to validate the recursive code.

The joint-Gaussian oracle stacks every state and every observed cell of a
small instance into one multivariate normal and computes conditional
moments and the log-density directly, with no Kalman recursion involved.
"""

from __future__ import annotations

import numpy as np

from nsdfm.model import Panel, StateSpace


def joint_gaussian_moments(ss: StateSpace, panel: Panel, init_mean, init_cov):
    """Exact conditional moments of all states given the observed cells.

    Returns a dict with the stacked prior/posterior moments of states
    s_0..s_T, the observation log-likelihood, and per-t views of the
    posterior mean, covariance and lag-one covariance.  Only feasible for
    tiny instances (dimension grows with (T+1) * K + #observed).
    """
    x, mask = panel.data, panel.missing_mask
    n, T = x.shape
    K = ss.K
    Theta = ss.transition_map
    Q = ss.state_innovation_cov
    R = ss.measurement_cov_diag

    dim_s = (T + 1) * K
    mean_s = np.zeros(dim_s)
    cov_s = np.zeros((dim_s, dim_s))
    mean_s[0:K] = init_mean
    cov_s[0:K, 0:K] = init_cov
    for t in range(1, T + 1):
        mean_s[t * K:(t + 1) * K] = Theta @ mean_s[(t - 1) * K:t * K]
    # diagonal blocks by the state recursion, off-diagonals by propagation
    for t in range(1, T + 1):
        prev = cov_s[(t - 1) * K:t * K, (t - 1) * K:t * K]
        cov_s[t * K:(t + 1) * K, t * K:(t + 1) * K] = Theta @ prev @ Theta.T + Q
    for t in range(T + 1):
        block_t = cov_s[t * K:(t + 1) * K, t * K:(t + 1) * K]
        acc = block_t
        for u in range(t + 1, T + 1):
            acc = acc @ Theta.T
            cov_s[t * K:(t + 1) * K, u * K:(u + 1) * K] = acc
            cov_s[u * K:(u + 1) * K, t * K:(t + 1) * K] = acc.T

    # stack observed cells: row selection of the measurement equation
    rows = []
    y = []
    H = []          # dim_obs x dim_s selection of Z_t into the state stack
    r_list = []
    for t in range(1, T + 1):
        obs = np.nonzero(mask[:, t - 1])[0]
        if obs.size == 0:
            continue
        Zt = ss.measurement_map(t - 1)[obs]
        for j, i in enumerate(obs):
            row = np.zeros(dim_s)
            row[t * K:(t + 1) * K] = Zt[j]
            H.append(row)
            y.append(x[i, t - 1])
            r_list.append(R[i])
            rows.append((i, t))
    H = np.array(H) if H else np.zeros((0, dim_s))
    y = np.array(y)
    r_arr = np.array(r_list)

    mean_y = H @ mean_s
    cov_sy = cov_s @ H.T
    cov_y = H @ cov_sy + np.diag(r_arr)

    if y.size:
        sol = np.linalg.solve(cov_y, np.column_stack([y - mean_y, cov_sy.T]))
        post_mean = mean_s + cov_sy @ sol[:, 0]
        post_cov = cov_s - cov_sy @ sol[:, 1:]
        sign, logdet = np.linalg.slogdet(cov_y)
        assert sign > 0
        quad = (y - mean_y) @ sol[:, 0]
        loglik = -0.5 * (y.size * np.log(2 * np.pi) + logdet + quad)
    else:
        post_mean, post_cov, loglik = mean_s, cov_s, 0.0

    def state_mean(t):
        return post_mean[t * K:(t + 1) * K]

    def state_cov(t):
        return post_cov[t * K:(t + 1) * K, t * K:(t + 1) * K]

    def lag_one(t):
        return post_cov[t * K:(t + 1) * K, (t - 1) * K:t * K]

    return {
        "loglik": float(loglik),
        "state_mean": state_mean,
        "state_cov": state_cov,
        "lag_one": lag_one,
        "prior_mean": mean_s,
        "prior_cov": cov_s,
        "cells": rows,
    }


def ols_line_fit(y: np.ndarray):
    """Closed-form OLS of y on (1, t) with t = 1..T, via normal equations."""
    T = y.shape[0]
    t = np.arange(1, T + 1, dtype=float)
    X = np.column_stack([np.ones(T), t])
    coef = np.linalg.solve(X.T @ X, X.T @ y)
    return float(coef[0]), float(coef[1])


def power_iteration_leading_eig(S: np.ndarray, iters: int = 5000, seed: int = 0):
    """Leading eigenpair of a symmetric PSD matrix by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(S.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = S @ v
        lam_new = float(np.linalg.norm(w))
        v_new = w / lam_new
        if np.linalg.norm(v_new - v) < 1e-14 or np.linalg.norm(v_new + v) < 1e-14:
            v, lam = v_new, lam_new
            break
        v, lam = v_new, lam_new
    return lam, v


def lyapunov_fixed_point(A: np.ndarray, Q: np.ndarray, iters: int = 20000, tol: float = 1e-14):
    """Solve P = A P A' + Q by iterating the map from P = Q."""
    P = Q.copy()
    for _ in range(iters):
        P_next = A @ P @ A.T + Q
        if np.max(np.abs(P_next - P)) < tol:
            return P_next
        P = P_next
    return P


def var2_polynomial_roots(A1: np.ndarray, A2: np.ndarray) -> np.ndarray:
    """Roots of det(I - A1 z - A2 z^2) via the companion eigenvalues.

    The determinantal roots are the reciprocals of the nonzero eigenvalues
    of the companion matrix [[A1, A2], [I, 0]]; zero eigenvalues map to
    roots at infinity and are dropped.
    """
    q = A1.shape[0]
    comp = np.zeros((2 * q, 2 * q))
    comp[:q, :q] = A1
    comp[:q, q:] = A2
    comp[q:, :q] = np.eye(q)
    eig = np.linalg.eigvals(comp)
    nz = eig[np.abs(eig) > 1e-12]
    return 1.0 / nz
