"""Monte-Carlo estimands computed from posterior draws.

``E[Y | Z=z]`` integrates the covariates out by simulation.  Outcomes in the
never-observed pattern K+1 get a mean drawn from the identifying prior, with
bounds computed at each sampled covariate value from the conditional means of
the outcome levels (the merged attempt groups, or every attempt when unmerged).  The goodness-of-fit means
use the same weighted sums restricted to the observed patterns.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ._kernels import gof_kernel, mc_kernel
from .core import LOG_2PI, ContractError, DomainError, PosteriorDraw, _log
from .extrapolation import ExtrapolationPriorSpec, PriorKind, draw_extrapolation_means

DEFAULT_MC_DRAWS = 10_000


@dataclass(frozen=True)
class EstimandSummary:
    mean: float
    ci_low: float
    ci_high: float
    ci_length: float
    n_draws: int

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_posterior(samples) -> EstimandSummary:
    """Posterior mean and equal-tail 95% interval (linear order-statistic interpolation)."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ContractError("cannot summarize an empty sample")
    if not np.isfinite(s).all():
        raise DomainError("non-finite posterior samples")
    lo, hi = np.quantile(s, [0.025, 0.975])
    return EstimandSummary(float(s.mean()), float(lo), float(hi), float(hi - lo), int(s.size))


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _categorical(rng, p: np.ndarray) -> np.ndarray:
    """Row-wise categorical draws from (possibly unnormalized) probabilities."""
    cum = np.cumsum(p, axis=-1)
    u = rng.random(cum.shape[:-1]) * cum[..., -1]
    return np.minimum((cum < u[..., None]).sum(axis=-1), p.shape[-1] - 1)


def _softmax(logw: np.ndarray) -> np.ndarray:
    mx = logw.max(axis=-1, keepdims=True)
    if not np.isfinite(mx).all():
        raise DomainError("all component weights vanish")
    w = np.exp(logw - mx)
    return w / w.sum(axis=-1, keepdims=True)


def _draw_covariates(draw: PosteriorDraw, comp: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """Sample (x_cat, x_cont) from the covariate law of the given components."""
    c = draw.clusters
    if draw.layout.L > 1:
        x_cat = _categorical(rng, c.eta_cat[comp]) + 1
    else:
        x_cat = np.ones(len(comp), dtype=int)
    if draw.layout.has_cont:
        x_cont = c.m[comp] + np.sqrt(c.tau2[comp]) * rng.standard_normal(len(comp))
    else:
        x_cont = np.zeros(len(comp))
    return x_cat, x_cont


def _draw_arrays(draw: PosteriorDraw, z: int) -> dict:
    """Per-draw constants shared by the compiled kernels."""
    c, lay = draw.clusters, draw.layout
    const = draw.log_pi + (np.log(c.p_z) if z == 1 else np.log1p(-c.p_z))
    if lay.has_cont:
        const = const - 0.5 * (LOG_2PI + np.log(c.tau2))
    # mass of each outcome level among the observed attempts
    xi_lev = np.zeros((draw.H, c.alpha.shape[2]))
    np.add.at(xi_lev.T, lay.merge_index[: lay.K], c.xi[:, : lay.K].T)
    return dict(
        xi_lev=xi_lev, log_xi_lev=_log(xi_lev),
        const=const, log_eta=_log(c.eta_cat), m=c.m, tau2=c.tau2, half_prec=0.5 / c.tau2,
        beta=np.ascontiguousarray(c.beta), alpha_z=np.ascontiguousarray(c.alpha[:, z, :]),
        xi=c.xi, log_xi=_log(c.xi), merge_idx=np.ascontiguousarray(lay.merge_index[: lay.K]),
        has_cont=lay.has_cont,
    )


def _check_z(z):
    if z not in (0, 1):
        raise ContractError(f"arm must be 0 or 1, got {z!r}")


# --------------------------------------------------------------------------
# E[Y | Z = z]
# --------------------------------------------------------------------------


def mc_samples_y_given_z(draw: PosteriorDraw, z: int, spec: ExtrapolationPriorSpec, S: int,
                         rng: np.random.Generator) -> np.ndarray:
    """The S Monte-Carlo samples (standardized scale) whose mean is ``E[Y | Z=z]``."""
    _check_z(z)
    if S < 1:
        raise ContractError("need at least one Monte-Carlo draw")
    c, lay = draw.clusters, draw.layout
    K = lay.K
    n_patterns = K if spec.kind is PriorKind.NONE else K + 1
    if spec.kind is PriorKind.NONE and not (c.xi[:, :K].sum(axis=1) > 0).any():
        raise DomainError("no component puts mass on observed patterns")
    u = rng.random((4, S))
    z_norm = rng.standard_normal(S)
    a = _draw_arrays(draw, z)
    # steps 1-5; rows landing in pattern K+1 come back with their bounds
    out, miss, lo, hi = mc_kernel(
        np.cumsum(draw.sticks.pi), a["const"], np.cumsum(c.eta_cat, axis=1), a["log_eta"], a["m"], a["tau2"],
        a["half_prec"], a["beta"], a["alpha_z"], a["xi"], np.cumsum(c.xi, axis=1), a["log_xi"],
        a["xi_lev"], a["log_xi_lev"], a["merge_idx"],
        a["has_cont"], n_patterns, u[0], u[1], z_norm, u[2], u[3],
    )
    if not np.isfinite(out).all():
        raise DomainError("all component weights vanish at a sampled covariate value")
    if miss.any():
        # step 6: identifying prior around the smallest conditional mean
        out[miss] = draw_extrapolation_means(spec, lo[miss], (hi[miss] - lo[miss]) * spec.P / 100.0, rng)
    return out


def mc_expectation_y_given_z(draw: PosteriorDraw, z: int, spec: ExtrapolationPriorSpec,
                             S: int = DEFAULT_MC_DRAWS, rng: np.random.Generator | None = None) -> float:
    """``E[Y | Z=z]`` under one posterior draw, on the original outcome scale."""
    rng = np.random.default_rng(rng)
    value = float(mc_samples_y_given_z(draw, z, spec, S, rng).mean())
    return float(draw.standardization.y_inverse(value))


# --------------------------------------------------------------------------
# treatment effect
# --------------------------------------------------------------------------


def _seed_sequence(rng) -> np.random.SeedSequence:
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(2 ** 63)))
    return np.random.SeedSequence(rng)


def substream(seq: np.random.SeedSequence, *key: int) -> np.random.Generator:
    """Generator keyed by integers, independent of evaluation order."""
    return np.random.default_rng(np.random.SeedSequence(seq.entropy, spawn_key=tuple(seq.spawn_key) + key))


def treatment_effect(draws: Sequence[PosteriorDraw], spec: ExtrapolationPriorSpec, S: int = DEFAULT_MC_DRAWS,
                     rng=None, threads: int = 1) -> tuple[np.ndarray, EstimandSummary]:
    """Per-draw ``E[Y|Z=1] - E[Y|Z=0]`` and its posterior summary."""
    if len(draws) < 2:
        raise ContractError("need at least 2 posterior draws")
    seq = _seed_sequence(rng)

    def one(i: int) -> float:
        d = draws[i]
        e1 = mc_samples_y_given_z(d, 1, spec, S, substream(seq, i, 1)).mean()
        e0 = mc_samples_y_given_z(d, 0, spec, S, substream(seq, i, 0)).mean()
        return float(d.standardization.y_scale * (e1 - e0))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            theta = np.array(list(ex.map(one, range(len(draws)))))
    else:
        theta = np.array([one(i) for i in range(len(draws))])
    return theta, summarize_posterior(theta)


# --------------------------------------------------------------------------
# goodness of fit
# --------------------------------------------------------------------------


def _pattern_group(r, K: int) -> np.ndarray:
    group = np.atleast_1d(np.asarray(r, dtype=int))
    if group.size == 0:
        raise ContractError("empty attempt group")
    if (group < 1).any():
        raise DomainError("attempt index must be >= 1")
    if (group > K).any():
        raise ContractError("goodness-of-fit means are defined for observed patterns 1..K only")
    return group


def gof_samples(draw: PosteriorDraw, z: int, r, S: int, rng: np.random.Generator) -> np.ndarray:
    """MC samples (standardized) of ``E[Y | Z=z, R in group]`` under one draw.

    ``r`` is one attempt or a group of attempts (a merged level); a group is
    handled by drawing the (component, attempt) pair jointly.
    """
    _check_z(z)
    if S < 1:
        raise ContractError("need at least one Monte-Carlo draw")
    c, lay = draw.clusters, draw.layout
    group = _pattern_group(r, lay.K)
    arm = np.log(c.p_z) if z == 1 else np.log1p(-c.p_z)
    joint = draw.log_pi[:, None] + arm[:, None] + _log(c.xi[:, group - 1])   # (H, G)
    cdf = np.cumsum(_softmax(joint.ravel()))
    pick = np.minimum(np.searchsorted(cdf, rng.random(S) * cdf[-1], side="right"), cdf.size - 1)
    comp, rr = pick // len(group), group[pick % len(group)]
    x_cat, x_cont = _draw_covariates(draw, comp, rng)
    a = _draw_arrays(draw, z)
    out = gof_kernel(a["const"], a["log_eta"], a["m"], a["half_prec"], a["beta"], a["alpha_z"],
                     a["log_xi"], a["merge_idx"], a["has_cont"], rr - 1, x_cat - 1, x_cont)
    if not np.isfinite(out).all():
        raise DomainError("all component weights vanish")
    return out


def gof_expectation(draw: PosteriorDraw, z: int, r, S: int = DEFAULT_MC_DRAWS, rng=None) -> float:
    rng = np.random.default_rng(rng)
    return float(draw.standardization.y_inverse(gof_samples(draw, z, r, S, rng).mean()))


def gof_cells(layout) -> list[tuple[int, int, tuple[int, ...]]]:
    """(arm, merged level, attempts in that level) for every identified cell."""
    cells = []
    for z in (0, 1):
        for k in range(1, layout.K_cond + 1):
            group = tuple(int(r) for r in range(1, layout.K + 1) if layout.merge_index[r - 1] == k - 1)
            cells.append((z, k, group))
    return cells


def gof_table(draws: Sequence[PosteriorDraw], S: int = DEFAULT_MC_DRAWS, rng=None, data=None) -> list[dict]:
    """Posterior mean and 95% interval of each cell mean, plus the observed mean if ``data`` is given."""
    if not draws:
        raise ContractError("need posterior draws")
    seq = _seed_sequence(rng)
    rows = []
    for ci, (z, k, group) in enumerate(gof_cells(draws[0].layout)):
        vals = np.array([
            d.standardization.y_inverse(gof_samples(d, z, group, S, substream(seq, i, ci)).mean())
            for i, d in enumerate(draws)
        ])
        summ = summarize_posterior(vals)
        row = {"z": z, "r_star": k, "attempts": list(group), "mean": summ.mean,
               "ci_low": summ.ci_low, "ci_high": summ.ci_high}
        if data is not None:
            sel = data.y_observed & (data.z == z) & np.isin(data.r, group)
            row["observed_mean"] = float(data.y[sel].mean()) if sel.any() else None
            row["n_observed"] = int(sel.sum())
        rows.append(row)
    return rows


# --------------------------------------------------------------------------
# draws file
# --------------------------------------------------------------------------


def save_draws(draws: Sequence[PosteriorDraw], path) -> None:
    with open(path, "w") as fh:
        json.dump([d.to_dict() for d in draws], fh)


def load_draws(path) -> list[PosteriorDraw]:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ContractError("draws file must hold a JSON array of draw objects")
    return [PosteriorDraw.from_dict(d) for d in raw]
