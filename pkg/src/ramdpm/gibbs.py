"""Blocked Gibbs sampler for the truncated stick-breaking mixture.

One sweep updates, in this order: component assignments, stick fractions,
component parameters (conjugate draws), hyperparameters, and the missing
continuous covariates.  Shape hyperparameters of the inverse-gamma priors are
non-conjugate and use a univariate slice sampler on ``log(S - 2)``.

All sampler functions update the state in place and return it.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    ContractError,
    Components,
    Dataset,
    DomainError,
    Layout,
    ModelConfig,
    PosteriorDraw,
    StandardizationRecord,
    IDENTITY_STANDARDIZATION,
    StickWeights,
    norm_logpdf,
    stick_break,
)

log = logging.getLogger(__name__)

MU_PRIOR_VAR = 0.5      # prior variance of mu_alpha and mu_m
MASS_PRIOR = (1.0, 1.0)  # Gamma(shape, rate) prior on the DP mass
SLICE_WIDTH = 1.0
SLICE_MAX_STEPS = 100
PROB_FLOOR = 1e-300


@dataclass
class HyperState:
    mu_alpha: np.ndarray          # (2, K_cond)
    sigma2_alpha: np.ndarray      # (2,)
    mu_beta: np.ndarray           # (n_cov,) fixed, from OLS
    var_beta: np.ndarray          # (n_cov,) fixed, from OLS
    c: float                      # inflation of var_beta
    mu_m: float
    sigma2_m: float
    S1: float
    W1: float
    S2: float
    W2: float
    s_z: np.ndarray               # (2,)
    lambda_z: np.ndarray          # (2,)
    s_2: float
    lambda_2: float
    mass: float
    G_Y: float = 0.5
    G_X2: float = 0.5
    g_z: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))

    def __post_init__(self):
        for name in ("S1", "S2", "s_2"):
            if not getattr(self, name) > 2:
                raise DomainError(f"{name} must exceed 2")
        if not (np.asarray(self.s_z) > 2).all():
            raise DomainError("s_z must exceed 2")
        for name in ("W1", "W2", "lambda_2", "mass", "sigma2_m"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if not (np.asarray(self.lambda_z) > 0).all() or not (np.asarray(self.sigma2_alpha) > 0).all():
            raise DomainError("lambda_z and sigma2_alpha must be positive")

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else float(v)
        return out

    def copy(self) -> "HyperState":
        return HyperState(**{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()})


@dataclass(frozen=True)
class HyperConstants:
    """Data-derived constants of the hyperpriors (standardized scale)."""

    G_Y: float
    G_X2: float
    g_z: np.ndarray
    mu_beta: np.ndarray
    var_beta: np.ndarray
    c: float
    df: int


class ChainData:
    """Dataset arrays laid out for the sampler (0-based codes)."""

    def __init__(self, data: Dataset, layout: Layout):
        self.data = data
        self.layout = layout
        self.n = len(data)
        self.y = data.y
        self.yobs = data.y_observed
        self.obs_idx = np.flatnonzero(self.yobs)
        self.r0 = data.r - 1
        self.rs0 = layout.merge_index[self.r0]
        self.z = data.z
        self.xcat0 = data.x_cat - 1
        self.xmiss = np.isnan(data.x_cont) if layout.has_cont else np.zeros(self.n, dtype=bool)
        self.miss_idx = np.flatnonzero(self.xmiss)
        self.design = layout.design(data.x_cat, np.where(np.isnan(data.x_cont), 0.0, data.x_cont))
        if (self.yobs & (data.r > layout.K)).any():
            raise ContractError("observed outcome in pattern K+1; run normalize_attempts first")

    def x_full(self, imputed: np.ndarray) -> np.ndarray:
        x = np.where(self.xmiss, 0.0, self.data.x_cont)
        if len(self.miss_idx):
            x[self.miss_idx] = imputed
        return x

    def set_imputed(self, imputed: np.ndarray) -> None:
        if self.layout.has_cont and len(self.miss_idx):
            self.design[self.miss_idx, 0] = imputed


@dataclass
class GibbsState:
    assignments: np.ndarray       # 0-based component index per record
    sticks: StickWeights
    clusters: Components
    hypers: HyperState
    imputed_x: np.ndarray         # one value per record with missing x_cont
    layout: Layout

    def to_draw(self, standardization: StandardizationRecord = IDENTITY_STANDARDIZATION) -> PosteriorDraw:
        return PosteriorDraw(
            sticks=StickWeights(self.sticks.v.copy(), self.sticks.pi.copy()),
            clusters=self.clusters.copy(),
            layout=self.layout,
            standardization=standardization,
            hypers=self.hypers.to_dict(),
        )


# --------------------------------------------------------------------------
# small distribution helpers
# --------------------------------------------------------------------------


def _inv_gamma(rng, shape, scale):
    """Inverse-gamma draw(s) with density proportional to x^(-shape-1) exp(-scale/x)."""
    return scale / rng.gamma(shape)


def _dirichlet_rows(rng, conc: np.ndarray) -> np.ndarray:
    g = rng.gamma(conc)
    g = np.maximum(g, PROB_FLOOR)
    return g / g.sum(axis=-1, keepdims=True)


def _categorical_rows(rng, logp: np.ndarray) -> np.ndarray:
    """One draw per row of an unnormalized log-probability matrix."""
    p = np.exp(logp - logp.max(axis=1, keepdims=True))
    cum = np.cumsum(p, axis=1)
    u = rng.random(len(p)) * cum[:, -1]
    return np.minimum((cum < u[:, None]).sum(axis=1), p.shape[1] - 1)


def _log_inv_gamma_shape_target(S: float, B: float, n: int, sum_log: float, sum_inv: float) -> float:
    """log prod_i IG(x_i; S, S*B) as a function of S, from sufficient statistics."""
    return n * (S * math.log(S * B) - math.lgamma(S)) - (S + 1.0) * sum_log - S * B * sum_inv


def slice_sample(x0: float, logf: Callable[[float], float], rng: np.random.Generator,
                 width: float = SLICE_WIDTH, max_steps: int = SLICE_MAX_STEPS) -> float:
    """Univariate slice sampler with stepping out and shrinkage."""
    f0 = logf(x0)
    if not np.isfinite(f0):
        raise DomainError("slice sampler started outside the support")
    level = f0 + math.log(rng.random())
    left = x0 - width * rng.random()
    right = left + width
    steps = 0
    while logf(left) > level:
        left -= width
        steps += 1
        if steps > max_steps:
            raise DomainError("slice sampler step-out exceeded its bound")
    steps = 0
    while logf(right) > level:
        right += width
        steps += 1
        if steps > max_steps:
            raise DomainError("slice sampler step-out exceeded its bound")
    for _ in range(10_000):
        x1 = left + (right - left) * rng.random()
        if logf(x1) > level:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1
    raise DomainError("slice sampler failed to shrink onto the slice")


def _update_shape(current: float, B: float, n: int, sum_log: float, sum_inv: float, rng) -> float:
    """Slice update of an IG shape S with shifted prior S - 2 ~ IG(1, 1)."""

    def logf(t):
        if t > 700:
            return -math.inf
        u = math.exp(t)
        if u == 0.0:
            return -math.inf
        return _log_inv_gamma_shape_target(2.0 + u, B, n, sum_log, sum_inv) - t - 1.0 / u

    t = slice_sample(math.log(current - 2.0), logf, rng)
    return 2.0 + math.exp(t)


# --------------------------------------------------------------------------
# initialisation
# --------------------------------------------------------------------------


def empirical_hyperconstants(data: Dataset, layout: Layout | None = None, cfg: ModelConfig | None = None) -> HyperConstants:
    """Variances and OLS-based prior constants from the observed data.

    The regression is fit on completers with an observed covariate, with one
    intercept per occupied (arm, merged attempt) cell plus the covariate design.
    """
    if layout is None:
        if cfg is None:
            raise ContractError("need a layout or a model config")
        layout = Layout.for_data(data, cfg)
    yobs = data.y_observed
    y = data.y[yobs]
    if len(y) < 2:
        raise ContractError("need at least 2 observed outcomes")
    G_Y = float(y.var())
    G_X2 = float(data.x_cont[data.x_observed].var()) if layout.has_cont else 0.5
    g_z = np.empty(2)
    for arm in (0, 1):
        ya = data.y[yobs & (data.z == arm)]
        if len(ya) < 2:
            raise ContractError(f"need at least 2 complete cases in arm {arm}")
        g_z[arm] = ya.var()
        if not g_z[arm] > 1e-12 * G_Y:
            raise DomainError(f"outcome is constant in arm {arm}")

    keep = yobs & (data.x_observed if layout.has_cont else True)
    rs0 = layout.merge_index[data.r[keep] - 1]
    cell = data.z[keep] * layout.K_cond + rs0
    cells = np.unique(cell)
    cell_cols = (cell[:, None] == cells[None, :]).astype(float)
    cov = layout.design(data.x_cat[keep], data.x_cont[keep])
    X = np.hstack([cell_cols, cov])
    n, p = X.shape
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        raise DomainError("singular design matrix in the empirical regression")
    df = n - p
    if df < 1:
        raise ContractError("no residual degrees of freedom for the empirical regression")
    coef, *_ = np.linalg.lstsq(X, data.y[keep], rcond=None)
    resid = data.y[keep] - X @ coef
    s2 = float(resid @ resid) / df
    cov_coef = s2 * np.linalg.inv(X.T @ X)
    k = cell_cols.shape[1]
    return HyperConstants(
        G_Y=G_Y, G_X2=G_X2, g_z=g_z,
        mu_beta=coef[k:].copy(), var_beta=np.diag(cov_coef)[k:].copy(),
        c=float(math.ceil(df / 5)), df=int(df),
    )


def _shifted_shape(rng) -> float:
    return 2.0 + _inv_gamma(rng, 1.0, 1.0)


def init_hypers(consts: HyperConstants, layout: Layout, rng: np.random.Generator) -> HyperState:
    """Draw every hyperparameter from its prior."""
    Kc = layout.K_cond
    s_z = np.array([_shifted_shape(rng), _shifted_shape(rng)])
    lambda_z = rng.gamma(1.0, 1.0, size=2)
    sigma2_alpha = _inv_gamma(rng, s_z, s_z * lambda_z * consts.g_z)
    s_2 = _shifted_shape(rng)
    lambda_2 = float(rng.gamma(1.0, 1.0))
    S1 = _shifted_shape(rng)
    S2 = _shifted_shape(rng)
    return HyperState(
        mu_alpha=rng.normal(0.0, math.sqrt(MU_PRIOR_VAR), size=(2, Kc)),
        sigma2_alpha=sigma2_alpha,
        mu_beta=np.asarray(consts.mu_beta, dtype=float).copy(),
        var_beta=np.asarray(consts.var_beta, dtype=float).copy(),
        c=consts.c,
        mu_m=float(rng.normal(0.0, math.sqrt(MU_PRIOR_VAR))),
        sigma2_m=float(_inv_gamma(rng, s_2, s_2 * lambda_2 * consts.G_X2)),
        S1=S1, W1=float(rng.gamma(1.0, consts.G_Y / 2.0)),
        S2=S2, W2=float(rng.gamma(1.0, consts.G_X2 / 2.0)),
        s_z=s_z, lambda_z=lambda_z, s_2=s_2, lambda_2=lambda_2,
        mass=float(rng.gamma(MASS_PRIOR[0], 1.0 / MASS_PRIOR[1])),
        G_Y=consts.G_Y, G_X2=consts.G_X2, g_z=np.asarray(consts.g_z, dtype=float).copy(),
    )


def draw_base_measure(hypers: HyperState, layout: Layout, H: int, rng: np.random.Generator) -> Components:
    """H independent component parameter blocks from the base measure."""
    Kc, K, L, p = layout.K_cond, layout.K, layout.L, layout.n_cov
    sd_alpha = np.sqrt(hypers.sigma2_alpha)[None, :, None]
    alpha = hypers.mu_alpha[None] + sd_alpha * rng.standard_normal((H, 2, Kc))
    beta = hypers.mu_beta[None, :] + np.sqrt(hypers.c * hypers.var_beta)[None, :] * rng.standard_normal((H, p))
    return Components(
        alpha=alpha,
        beta=beta,
        sigma2=_inv_gamma(rng, np.full(H, hypers.S1), hypers.S1 * hypers.W1),
        xi=_dirichlet_rows(rng, np.full((H, K + 1), 1.0 / (K + 1))),
        eta_cat=_dirichlet_rows(rng, np.full((H, L), 1.0 / L)),
        m=hypers.mu_m + math.sqrt(hypers.sigma2_m) * rng.standard_normal(H),
        tau2=_inv_gamma(rng, np.full(H, hypers.S2), hypers.S2 * hypers.W2),
        p_z=np.clip(rng.beta(1.0, 1.0, size=H), 1e-12, 1 - 1e-12),
    )


def _prior_sticks(mass: float, H: int, rng) -> StickWeights:
    v = np.ones(H)
    if H > 1:
        v[:-1] = rng.beta(1.0, mass, size=H - 1)
    return StickWeights(v)


def init_state(data: Dataset | ChainData, cfg: ModelConfig, rng: np.random.Generator,
               consts: HyperConstants | None = None) -> GibbsState:
    cd = data if isinstance(data, ChainData) else ChainData(data, Layout.for_data(data, cfg))
    layout = cd.layout
    n_levels = len(np.unique(cd.rs0))
    if n_levels < layout.K_cond + 1:
        warnings.warn(f"only {n_levels} of {layout.K_cond + 1} merged attempt levels are observed", stacklevel=2)
    if consts is None:
        consts = empirical_hyperconstants(cd.data, layout)
    hypers = init_hypers(consts, layout, rng)
    clusters = draw_base_measure(hypers, layout, cfg.H, rng)
    assignments = rng.integers(0, cfg.H, size=cd.n)
    h_miss = assignments[cd.miss_idx]
    imputed = clusters.m[h_miss] + np.sqrt(clusters.tau2[h_miss]) * rng.standard_normal(len(cd.miss_idx))
    cd.set_imputed(imputed)
    return GibbsState(assignments, _prior_sticks(hypers.mass, cfg.H, rng), clusters, hypers, imputed, layout)


# --------------------------------------------------------------------------
# sweep components
# --------------------------------------------------------------------------


def _as_chain_data(data, state: GibbsState) -> ChainData:
    if isinstance(data, ChainData):
        return data
    cd = ChainData(data, state.layout)
    cd.set_imputed(state.imputed_x)
    return cd


def component_log_kernels(state: GibbsState, cd: ChainData) -> np.ndarray:
    """``log`` of the per-component joint density of every record; shape (n, H)."""
    c = state.clusters
    with np.errstate(divide="ignore"):
        lk = np.log(c.xi.T[cd.r0]) + np.log(c.eta_cat.T[cd.xcat0])
    lk += np.where(cd.z[:, None] == 1, np.log(c.p_z), np.log1p(-c.p_z))
    if state.layout.has_cont:
        lk += norm_logpdf(cd.design[:, :1], c.m[None, :], c.tau2[None, :])
    idx = cd.obs_idx
    if len(idx):
        mean = cd.design[idx] @ c.beta.T + c.alpha[:, cd.z[idx], cd.rs0[idx]].T
        lk[idx] += norm_logpdf(cd.y[idx][:, None], mean, c.sigma2[None, :])
    return lk


def sample_assignments(state: GibbsState, data, cfg: ModelConfig, rng: np.random.Generator) -> GibbsState:
    cd = _as_chain_data(data, state)
    if cd.n == 0:
        return state
    with np.errstate(divide="ignore"):
        logp = component_log_kernels(state, cd) + np.log(state.sticks.pi)[None, :]
    state.assignments = _categorical_rows(rng, logp)
    return state


def stick_posterior_params(counts: np.ndarray, mass: float) -> tuple[np.ndarray, np.ndarray]:
    """Beta parameters of v[0..H-2] given component occupancy counts."""
    tail = np.cumsum(counts[::-1])[::-1]  # tail[h] = sum_{l >= h} n_l
    after = np.append(tail[1:], 0)
    return 1.0 + counts[:-1], mass + after[:-1]


def sample_sticks(state: GibbsState, cfg: ModelConfig, rng: np.random.Generator) -> GibbsState:
    H = len(state.sticks)
    counts = np.bincount(state.assignments, minlength=H)
    v = np.ones(H)
    if H > 1:
        a, b = stick_posterior_params(counts, state.hypers.mass)
        v[:-1] = np.clip(rng.beta(a, b), 0.0, 1.0)
    state.sticks = StickWeights(v)
    return state


def sample_cluster_params(state: GibbsState, data, cfg: ModelConfig, rng: np.random.Generator) -> GibbsState:
    """Conjugate full-conditional draws of every component block.

    Components without members get fresh base-measure draws because every
    sufficient statistic is zero.
    """
    cd = _as_chain_data(data, state)
    c, hp, lay = state.clusters, state.hypers, state.layout
    H = len(c)
    Kc, K, L, p = lay.K_cond, lay.K, lay.L, lay.n_cov
    assign = state.assignments
    idx = cd.obs_idx
    h_obs = assign[idx]
    z_obs = cd.z[idx]
    rs_obs = cd.rs0[idx]
    X_obs = cd.design[idx]
    y_obs = cd.y[idx]

    # intercepts, one Normal-Normal update per (component, arm, merged level)
    xb = np.einsum("ij,ij->i", X_obs, c.beta[h_obs]) if p else np.zeros(len(idx))
    cell = (h_obs * 2 + z_obs) * Kc + rs_obs
    sums = np.bincount(cell, weights=y_obs - xb, minlength=H * 2 * Kc).reshape(H, 2, Kc)
    cnts = np.bincount(cell, minlength=H * 2 * Kc).reshape(H, 2, Kc)
    prior_prec = 1.0 / hp.sigma2_alpha[None, :, None]
    prec = prior_prec + cnts / c.sigma2[:, None, None]
    mean = (hp.mu_alpha[None] * prior_prec + sums / c.sigma2[:, None, None]) / prec
    c.alpha = mean + rng.standard_normal((H, 2, Kc)) / np.sqrt(prec)

    # slopes, multivariate Normal per component
    a_obs = c.alpha[h_obs, z_obs, rs_obs]
    if p:
        res = y_obs - a_obs
        XtX = np.empty((H, p, p))
        for j in range(p):
            for k in range(j, p):
                XtX[:, j, k] = XtX[:, k, j] = np.bincount(h_obs, weights=X_obs[:, j] * X_obs[:, k], minlength=H)
        Xty = np.stack([np.bincount(h_obs, weights=X_obs[:, j] * res, minlength=H) for j in range(p)], axis=1)
        prior_p = 1.0 / (hp.c * hp.var_beta)
        Prec = XtX / c.sigma2[:, None, None] + np.eye(p)[None] * prior_p[None, :, None]
        rhs = Xty / c.sigma2[:, None] + (hp.mu_beta * prior_p)[None, :]
        chol = np.linalg.cholesky(Prec)
        mean_b = np.linalg.solve(Prec, rhs[..., None])[..., 0]
        noise = np.linalg.solve(np.swapaxes(chol, 1, 2), rng.standard_normal((H, p, 1)))[..., 0]
        c.beta = mean_b + noise
        xb = np.einsum("ij,ij->i", X_obs, c.beta[h_obs])
    else:
        xb = np.zeros(len(idx))

    # outcome variance
    resid = y_obs - a_obs - xb
    ssr = np.bincount(h_obs, weights=resid * resid, minlength=H)
    n_obs = np.bincount(h_obs, minlength=H)
    c.sigma2 = _inv_gamma(rng, hp.S1 + 0.5 * n_obs, hp.S1 * hp.W1 + 0.5 * ssr)

    # attempt and categorical simplexes
    r_counts = np.bincount(assign * (K + 1) + cd.r0, minlength=H * (K + 1)).reshape(H, K + 1)
    c.xi = _dirichlet_rows(rng, r_counts + 1.0 / (K + 1))
    cat_counts = np.bincount(assign * L + cd.xcat0, minlength=H * L).reshape(H, L)
    c.eta_cat = _dirichlet_rows(rng, cat_counts + 1.0 / L)

    # continuous covariate mean then variance
    n_h = np.bincount(assign, minlength=H)
    if lay.has_cont:
        x = cd.design[:, 0]
        sx = np.bincount(assign, weights=x, minlength=H)
        sxx = np.bincount(assign, weights=x * x, minlength=H)
    else:
        sx = sxx = np.zeros(H)
        n_x = np.zeros(H)
    n_x = n_h if lay.has_cont else np.zeros(H)
    prec_m = 1.0 / hp.sigma2_m + n_x / c.tau2
    mean_m = (hp.mu_m / hp.sigma2_m + sx / c.tau2) / prec_m
    c.m = mean_m + rng.standard_normal(H) / np.sqrt(prec_m)
    ss_x = np.maximum(sxx - 2.0 * c.m * sx + n_x * c.m ** 2, 0.0)
    c.tau2 = _inv_gamma(rng, hp.S2 + 0.5 * n_x, hp.S2 * hp.W2 + 0.5 * ss_x)

    # treatment probability
    n_treat = np.bincount(assign, weights=cd.z.astype(float), minlength=H)
    c.p_z = np.clip(rng.beta(1.0 + n_treat, 1.0 + n_h - n_treat), 1e-12, 1 - 1e-12)
    return state


def sample_hypers(state: GibbsState, cfg: ModelConfig, rng: np.random.Generator) -> GibbsState:
    c, hp = state.clusters, state.hypers
    H = len(c)
    Kc = state.layout.K_cond

    # intercept hierarchy, per arm
    for arm in (0, 1):
        a = c.alpha[:, arm, :]                                  # (H, Kc)
        prec = 1.0 / MU_PRIOR_VAR + H / hp.sigma2_alpha[arm]
        mean = a.sum(axis=0) / hp.sigma2_alpha[arm] / prec
        hp.mu_alpha[arm] = mean + rng.standard_normal(Kc) / math.sqrt(prec)
        ss = float(((a - hp.mu_alpha[arm][None, :]) ** 2).sum())
        scale0 = hp.s_z[arm] * hp.lambda_z[arm] * hp.g_z[arm]
        hp.sigma2_alpha[arm] = _inv_gamma(rng, hp.s_z[arm] + 0.5 * H * Kc, scale0 + 0.5 * ss)
        hp.lambda_z[arm] = rng.gamma(1.0 + hp.s_z[arm], 1.0 / (1.0 + hp.s_z[arm] * hp.g_z[arm] / hp.sigma2_alpha[arm]))
        B = hp.lambda_z[arm] * hp.g_z[arm]
        s2a = float(hp.sigma2_alpha[arm])
        hp.s_z[arm] = _update_shape(hp.s_z[arm], B, 1, math.log(s2a), 1.0 / s2a, rng)

    # covariate-mean hierarchy
    prec = 1.0 / MU_PRIOR_VAR + H / hp.sigma2_m
    hp.mu_m = float(c.m.sum() / hp.sigma2_m / prec + rng.standard_normal() / math.sqrt(prec))
    ss = float(((c.m - hp.mu_m) ** 2).sum())
    hp.sigma2_m = float(_inv_gamma(rng, hp.s_2 + 0.5 * H, hp.s_2 * hp.lambda_2 * hp.G_X2 + 0.5 * ss))
    hp.lambda_2 = float(rng.gamma(1.0 + hp.s_2, 1.0 / (1.0 + hp.s_2 * hp.G_X2 / hp.sigma2_m)))
    hp.s_2 = _update_shape(hp.s_2, hp.lambda_2 * hp.G_X2, 1, math.log(hp.sigma2_m), 1.0 / hp.sigma2_m, rng)

    # variance-scale hierarchies
    inv_s = float((1.0 / c.sigma2).sum())
    hp.W1 = float(rng.gamma(1.0 + H * hp.S1, 1.0 / (2.0 / hp.G_Y + hp.S1 * inv_s)))
    hp.S1 = _update_shape(hp.S1, hp.W1, H, float(np.log(c.sigma2).sum()), inv_s, rng)
    inv_t = float((1.0 / c.tau2).sum())
    hp.W2 = float(rng.gamma(1.0 + H * hp.S2, 1.0 / (2.0 / hp.G_X2 + hp.S2 * inv_t)))
    hp.S2 = _update_shape(hp.S2, hp.W2, H, float(np.log(c.tau2).sum()), inv_t, rng)

    hp.mass = sample_mass(state.sticks.v, rng)
    return state


def mass_posterior_params(v: np.ndarray) -> tuple[float, float]:
    """Gamma(shape, rate) conditional of the DP mass given the stick fractions."""
    H = len(v)
    v_head = np.minimum(np.asarray(v[:-1], dtype=float), 1.0 - 1e-16)
    return MASS_PRIOR[0] + H - 1, MASS_PRIOR[1] - float(np.log1p(-v_head).sum())


def sample_mass(v: np.ndarray, rng: np.random.Generator) -> float:
    shape, rate = mass_posterior_params(v)
    return float(max(rng.gamma(shape, 1.0 / rate), 1e-300))


def impute_missing_covariates(state: GibbsState, data, rng: np.random.Generator) -> GibbsState:
    """Redraw each missing x_cont from its full conditional given its component."""
    cd = _as_chain_data(data, state)
    if not state.layout.has_cont or not len(cd.miss_idx):
        return state
    c = state.clusters
    idx = cd.miss_idx
    h = state.assignments[idx]
    m, tau2 = c.m[h], c.tau2[h]
    prec = 1.0 / tau2
    num = m / tau2
    yo = cd.yobs[idx]
    if yo.any():
        j = idx[yo]
        hj = h[yo]
        bx = c.beta[hj, 0]
        other = c.alpha[hj, cd.z[j], cd.rs0[j]] + np.einsum("ij,ij->i", cd.design[j, 1:], c.beta[hj, 1:])
        resid = cd.y[j] - other
        prec[yo] = prec[yo] + bx ** 2 / c.sigma2[hj]
        num[yo] = num[yo] + bx * resid / c.sigma2[hj]
    state.imputed_x = num / prec + rng.standard_normal(len(idx)) / np.sqrt(prec)
    cd.set_imputed(state.imputed_x)
    return state


def sweep(state: GibbsState, cd: ChainData, cfg: ModelConfig, rng: np.random.Generator) -> GibbsState:
    sample_assignments(state, cd, cfg, rng)
    sample_sticks(state, cfg, rng)
    sample_cluster_params(state, cd, cfg, rng)
    sample_hypers(state, cfg, rng)
    impute_missing_covariates(state, cd, rng)
    return state


def run_chain(data: Dataset, cfg: ModelConfig, rng: np.random.Generator | int | None = None,
              standardization: StandardizationRecord = IDENTITY_STANDARDIZATION,
              callback: Callable[[int, GibbsState], None] | None = None) -> list[PosteriorDraw]:
    """Run ``cfg.n_iter`` sweeps and keep every ``thin``-th state after burn-in.

    ``data`` must already be normalized and standardized; pass the matching
    ``standardization`` so retained draws can be back-transformed.
    """
    if rng is None:
        rng = cfg.seed
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    cd = ChainData(data, Layout.for_data(data, cfg))
    state = init_state(cd, cfg, rng)
    draws = []
    for it in range(cfg.n_iter):
        sweep(state, cd, cfg, rng)
        if it >= cfg.n_burn and (it - cfg.n_burn + 1) % cfg.thin == 0:
            draws.append(state.to_draw(standardization))
        if callback is not None:
            callback(it, state)
    return draws
