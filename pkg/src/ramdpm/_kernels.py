"""Compiled inner loops for the Monte-Carlo estimands.

Random numbers are drawn by the caller with numpy; these kernels only do the
deterministic per-sample arithmetic, so results depend on the seed alone.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _search(cdf, u):
    n = cdf.shape[0]
    target = u * cdf[n - 1]
    for i in range(n):
        if cdf[i] > target:
            return i
    return n - 1


@njit(cache=True)
def _covariate_logw(h_count, const, log_eta, m, half_prec, has_cont, xc, x, out):
    """log pi_h + log p(x, z; eta_h); ``const`` folds the pi, arm and Normal constants."""
    mx = -np.inf
    for h in range(h_count):
        v = const[h] + log_eta[h, xc]
        if has_cont:
            d = x - m[h]
            v -= half_prec[h] * d * d
        out[h] = v
        if v > mx:
            mx = v
    return mx


@njit(cache=True)
def _pattern_mean_fast(h_count, pw, xi, k, xb, alpha_z, level):
    """Same as ``_pattern_mean`` using pre-exponentiated weights; NaN if they underflow."""
    num = 0.0
    den = 0.0
    for h in range(h_count):
        w = pw[h] * xi[h, k]
        num += w * (alpha_z[h, level] + xb[h])
        den += w
    if den > 0.0:
        return num / den
    return np.nan


@njit(cache=True)
def _pattern_mean(h_count, base, log_xi, k, xb, alpha_z, level):
    """sum_h w_h(k) (alpha[h, level] + xb[h]) with w proportional to exp(base + log xi[:, k])."""
    mx = -np.inf
    for h in range(h_count):
        v = base[h] + log_xi[h, k]
        if v > mx:
            mx = v
    if mx == -np.inf:
        return np.nan
    num = 0.0
    den = 0.0
    for h in range(h_count):
        w = math.exp(base[h] + log_xi[h, k] - mx)
        num += w * (alpha_z[h, level] + xb[h])
        den += w
    return num / den


@njit(cache=True)
def _xbeta(h_count, beta, has_cont, xc, x, out):
    off = 1 if has_cont else 0
    for h in range(h_count):
        v = 0.0
        if has_cont:
            v = beta[h, 0] * x
        if xc >= 1:
            v += beta[h, off + xc - 1]
        out[h] = v


@njit(cache=True, nogil=True)
def mc_kernel(pi_cdf, const, eta_cdf, log_eta, m, tau2, half_prec, beta, alpha_z, xi, xi_cdf, log_xi,
              xi_lev, log_xi_lev, merge_idx, has_cont, n_patterns, u_comp, u_cat, z_norm, u_m, u_r):
    """Steps 1-5 of the E[Y|Z=z] recipe for every sample.

    With ``n_patterns == K`` the pattern is drawn from p(r | x, z, r <= K): the
    component weights are multiplied by each component's observed-pattern mass
    before the attempt is drawn from its restricted xi.

    Returns (value, missing flag, lo, hi): rows drawn into the hidden pattern get
    the min/max of the conditional means of the outcome levels instead of a
    value.  ``xi_lev[h, j]`` is component h's mass on the observed attempts of
    level j, so with the identity map the levels are the K patterns.
    """
    S = u_comp.shape[0]
    H = const.shape[0]
    K = merge_idx.shape[0]
    L = log_eta.shape[1]
    completers = n_patterns == K
    out = np.empty(S)
    miss = np.zeros(S, dtype=np.bool_)
    lo = np.empty(S)
    hi = np.empty(S)
    base = np.empty(H)
    pw = np.empty(H)
    w = np.empty(H)
    xb = np.empty(H)
    for s in range(S):
        l = _search(pi_cdf, u_comp[s])
        xc = _search(eta_cdf[l], u_cat[s]) if L > 1 else 0
        x = m[l] + math.sqrt(tau2[l]) * z_norm[s] if has_cont else 0.0
        mx = _covariate_logw(H, const, log_eta, m, half_prec, has_cont, xc, x, base)
        if mx == -np.inf:
            out[s] = np.nan
            continue
        tot = 0.0
        for h in range(H):
            pw[h] = math.exp(base[h] - mx)
            # completers only: condition the component on an observed pattern
            tot += pw[h] * xi_cdf[h, n_patterns - 1] if completers else pw[h]
            w[h] = tot
        if tot <= 0.0:
            out[s] = np.nan
            continue
        target = u_m[s] * tot
        comp = H - 1
        for h in range(H):
            if w[h] > target:
                comp = h
                break
        r = _search(xi_cdf[comp, :n_patterns], u_r[s])
        _xbeta(H, beta, has_cont, xc, x, xb)
        if r < K:
            v = _pattern_mean_fast(H, pw, xi, r, xb, alpha_z, merge_idx[r])
            if v != v:
                v = _pattern_mean(H, base, log_xi, r, xb, alpha_z, merge_idx[r])
            out[s] = v
        else:
            miss[s] = True
            a = np.inf
            b = -np.inf
            for j in range(xi_lev.shape[1]):
                v = _pattern_mean_fast(H, pw, xi_lev, j, xb, alpha_z, j)
                if v != v:
                    v = _pattern_mean(H, base, log_xi_lev, j, xb, alpha_z, j)
                if v < a:
                    a = v
                if v > b:
                    b = v
            lo[s] = a
            hi[s] = b
            out[s] = a
    return out, miss, lo, hi


@njit(cache=True, nogil=True)
def gof_kernel(const, log_eta, m, half_prec, beta, alpha_z, log_xi, merge_idx, has_cont, rr, x_cat, x):
    """sum_h w_h(r, x, z) (alpha + x beta) for pre-drawn (pattern, covariates)."""
    S = rr.shape[0]
    H = const.shape[0]
    out = np.empty(S)
    base = np.empty(H)
    xb = np.empty(H)
    for s in range(S):
        xc = x_cat[s]
        _covariate_logw(H, const, log_eta, m, half_prec, has_cont, xc, x[s], base)
        _xbeta(H, beta, has_cont, xc, x[s], xb)
        out[s] = _pattern_mean(H, base, log_xi, rr[s], xb, alpha_z, merge_idx[rr[s]])
    return out
