"""Synthetic repeated-attempt trials and their true treatment effects.

Every scenario draws ``z ~ Bernoulli(0.5)``, one continuous covariate
``x ~ N(2, var 0.2)`` and an attempt count ``r`` in 1..10.  The outcome is
hidden when ``r = 10``.  The generators also know the mean of the hidden
outcomes, so the true effect is available in closed form.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np
from scipy import special

from .core import ContractError, Dataset, DomainError, quatro_merge_map

K_DEFAULT = 9
SCENARIOS = ("s2", "s3", "s5", "s6", "s1_custom", "s4_custom")
ERRORS = ("normal", "t3", "skew_normal")
SKEW_SHAPE = 3.0
S4_MAX_ATTEMPTS = 8

# attempt counts 1..9 and missing, control then treatment
_QUATRO_COUNTS = (
    (77, 94, 7, 7, 3, 2, 1, 1, 0, 13),
    (73, 90, 7, 1, 3, 0, 0, 1, 0, 29),
)

# pr(C = c | R = r) for scenario 6; rows r = 1, 2, 3..9, 10
_LCM_TABLE = np.array([
    [0.8, 0.1, 0.1, 0.0],
    [0.1, 0.8, 0.1, 0.0],
    [0.1, 0.1, 0.8, 0.0],
    [0.0, 0.0, 0.0, 1.0],
])
assert np.allclose(_LCM_TABLE.sum(axis=1), 1.0)


def quatro_attempt_probs(exact: bool = False):
    """(control, treatment) attempt distributions over r = 1..10.

    Attempts 4..9 share their pooled count equally.  With ``exact=True`` the
    entries are ``Fraction`` objects.
    """
    out = []
    for counts in _QUATRO_COUNTS:
        n = sum(counts)
        tail = Fraction(sum(counts[3:9]), 6 * n)
        p = [Fraction(c, n) for c in counts[:3]] + [tail] * 6 + [Fraction(counts[9], n)]
        out.append(tuple(p) if exact else np.array([float(v) for v in p]))
    return tuple(out)


def merge_attempts(r, merge_map=None):
    mm = np.asarray(quatro_merge_map() if merge_map is None else merge_map, dtype=int)
    r = np.asarray(r, dtype=int)
    if (r < 1).any() or (r > len(mm)).any():
        raise DomainError(f"attempt outside 1..{len(mm)}")
    out = mm[r - 1]
    return int(out) if out.ndim == 0 else out


def rescale_missingness(probs, target: float) -> np.ndarray:
    """Set p(K+1) to ``target`` and scale the observed patterns proportionally."""
    p = np.asarray(probs, dtype=float)
    if not 0 < target < 1:
        raise DomainError("target missing fraction must lie in (0, 1)")
    old = p[-1]
    if old >= 1:
        raise DomainError("cannot rescale a distribution with all mass on the missing pattern")
    out = p * (1.0 - target) / (1.0 - old)
    out[-1] = target
    return out


# --------------------------------------------------------------------------
# mean functions
# --------------------------------------------------------------------------


def h_star(z, r_star):
    z = np.asarray(z, dtype=float)
    r_star = np.asarray(r_star, dtype=float)
    return z * (27.24 - 1.91 * r_star) + (1 - z) * (25.58 - 1.65 * r_star)


def h_exp(z, r):
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    return z * 30.0 * np.exp(-0.13 * r) + (1 - z) * 29.0 * np.exp(-0.15 * r)


def g_lin(z, r):
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    return (60.24 - 1.91 * r) * z + (60.58 - 1.65 * r) * (1 - z)


def expit(a):
    return special.expit(np.asarray(a, dtype=float))


def s5_weight(z, r):
    """Probability of the linear component in scenario 5."""
    return expit(2.0 * np.asarray(z) - 0.2 * np.asarray(r) - 1.0)


BETA1 = 0.4
BETA2 = 1.0


# --------------------------------------------------------------------------
# scenario definition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    id: str = "s2"
    n: int = 500
    error: str = "normal"
    sigma: float = 2.0
    K: int = K_DEFAULT
    attempt_probs: Any = None          # (control, treatment) over 1..K+1; None = QUATRO
    missing_frac_override: float | None = None
    custom_coefficients: dict | None = None
    x_mean: float = 2.0
    x_var: float = 0.2

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ContractError(f"unknown scenario {self.id!r}; allowed: {', '.join(SCENARIOS)}")
        if self.error not in ERRORS:
            raise ContractError(f"unknown error law {self.error!r}; allowed: {', '.join(ERRORS)}")
        if self.n < 2:
            raise DomainError("need n >= 2")
        if not self.sigma > 0 or not self.x_var > 0:
            raise DomainError("sigma and x_var must be positive")
        if self.K != K_DEFAULT and self.id != "s4_custom" and self.attempt_probs is None:
            raise ContractError("non-default K needs explicit attempt_probs")
        if self.attempt_probs is not None:
            probs = tuple(np.asarray(p, dtype=float) for p in self.attempt_probs)
            for p in probs:
                if p.shape != (self.K + 1,) or (p < 0).any() or abs(p.sum() - 1) > 1e-9:
                    raise DomainError("attempt_probs must be two simplexes over 1..K+1")
            object.__setattr__(self, "attempt_probs", tuple(tuple(float(v) for v in p) for p in probs))
        if self.id in ("s1_custom", "s4_custom") and not self.custom_coefficients:
            raise ContractError(f"scenario {self.id} needs custom_coefficients")
        if self.missing_frac_override is not None and not 0 < self.missing_frac_override < 1:
            raise DomainError("missing_frac_override must lie in (0, 1)")

    def probs(self) -> tuple[np.ndarray, np.ndarray]:
        """Attempt distributions actually used, after any missingness override."""
        base = quatro_attempt_probs() if self.attempt_probs is None else tuple(np.array(p) for p in self.attempt_probs)
        if self.missing_frac_override is not None:
            base = tuple(rescale_missingness(p, self.missing_frac_override) for p in base)
        return base

    def to_dict(self) -> dict:
        return asdict(self) | {"attempt_probs": None if self.attempt_probs is None else [list(p) for p in self.attempt_probs]}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ContractError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        return cls(**d)


# --------------------------------------------------------------------------
# error laws
# --------------------------------------------------------------------------


def skew_delta(shape: float = SKEW_SHAPE) -> float:
    return shape / math.sqrt(1.0 + shape * shape)


def draw_errors(law: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Standardized errors: N(0,1), t3, or skew-normal(0, 1, shape 3) (not mean-corrected)."""
    if law == "normal":
        return rng.standard_normal(n)
    if law == "t3":
        return rng.standard_t(3, size=n)
    if law == "skew_normal":
        d = skew_delta()
        u0 = np.abs(rng.standard_normal(n))
        u1 = rng.standard_normal(n)
        return d * u0 + math.sqrt(1.0 - d * d) * u1
    raise ContractError(f"unknown error law {law!r}")


def error_mean(law: str) -> float:
    return skew_delta() * math.sqrt(2.0 / math.pi) if law == "skew_normal" else 0.0


# --------------------------------------------------------------------------
# pattern-level mean structure, shared by generators and truth
# --------------------------------------------------------------------------


def _s1_alpha(spec: ScenarioSpec) -> np.ndarray:
    """(2, 3) intercept table of scenario 1 by arm and merged attempt level."""
    a = np.asarray(spec.custom_coefficients["alpha"], dtype=float)
    if a.shape != (2, 3):
        raise ContractError("s1_custom alpha must be a 2x3 table (arm by merged level 1..3)")
    return a


def _s1_beta(spec: ScenarioSpec) -> float:
    return float(spec.custom_coefficients.get("beta", BETA1))


def _location(spec: ScenarioSpec, z, r, x, rng=None, cls=None, comp=None):
    """Outcome location for each subject at pattern ``r`` (hidden pattern included)."""
    z = np.asarray(z)
    r = np.asarray(r)
    K = spec.K
    if spec.id == "s2":
        rs = np.minimum(merge_attempts(r), 4)  # 10 -> 4, the extrapolation truth
        return h_star(z, rs) + BETA1 * x
    if spec.id == "s3":
        return h_exp(z, r) + BETA1 * x
    if spec.id == "s5":
        lin = g_lin(z, r) + BETA1 * x
        nonlin = h_exp(z, r) + BETA2 * x
        return np.where(comp == 1, lin, nonlin)
    if spec.id == "s6":
        return h_star(z, cls) + BETA1 * x
    if spec.id == "s1_custom":
        a = _s1_alpha(spec)
        rs = np.minimum(merge_attempts(r), 3) - 1  # pattern 10 shares level 3
        return a[z, rs] + _s1_beta(spec) * x
    raise ContractError(f"no location for scenario {spec.id}")


def _lcm_row(r):
    r = np.asarray(r)
    return np.where(r <= 2, r - 1, np.where(r <= 9, 2, 3))


def _draw_class(r, rng):
    rows = _LCM_TABLE[_lcm_row(r)]
    u = rng.random(len(rows))
    return np.minimum((np.cumsum(rows, axis=1) < u[:, None]).sum(axis=1), 3) + 1


def _draw_component(z, r, rng):
    return np.where(rng.random(len(z)) < s5_weight(z, r), 1, 2)


# --------------------------------------------------------------------------
# scenario 4: sequential hazard
# --------------------------------------------------------------------------

_S4_KEYS = ("beta0", "xi", "beta", "sigma", "lambda0", "gamma", "lambda", "delta1", "delta2")


def _s4_coefficients(spec: ScenarioSpec) -> dict:
    c = spec.custom_coefficients or {}
    missing = [k for k in _S4_KEYS if k not in c]
    if missing:
        raise ContractError(f"s4_custom coefficients missing: {', '.join(missing)}")
    out = {k: c[k] for k in _S4_KEYS}
    for k in ("lambda0", "gamma", "lambda"):
        out[k] = np.asarray(c[k], dtype=float)
        if out[k].shape != (S4_MAX_ATTEMPTS,):
            raise ContractError(f"s4_custom {k} needs {S4_MAX_ATTEMPTS} entries")
    return out


def s4_hazards(coef: dict, z, x, y) -> np.ndarray:
    """Per-attempt success probabilities; shape (n, 8)."""
    z, x, y = (np.asarray(a, dtype=float)[:, None] for a in (z, x, y))
    lin = coef["lambda0"][None] + coef["gamma"][None] * z + coef["lambda"][None] * x
    lin = lin + coef["delta1"] * y + coef["delta2"] * y * z
    return expit(lin)


def s4_attempt_probs(hazards: np.ndarray) -> np.ndarray:
    """Discrete-hazard pattern probabilities over 1..8 plus non-response; shape (n, 9)."""
    surv = np.cumprod(1.0 - hazards, axis=1)
    before = np.hstack([np.ones((len(hazards), 1)), surv[:, :-1]])
    return np.hstack([before * hazards, surv[:, -1:]])


def gen_scenario4_custom(spec: ScenarioSpec, rng: np.random.Generator) -> Dataset:
    coef = _s4_coefficients(spec)
    n = spec.n
    z = rng.integers(0, 2, n)
    x = spec.x_mean + math.sqrt(spec.x_var) * rng.standard_normal(n)
    y = coef["beta0"] + coef["xi"] * z + coef["beta"] * x + coef["sigma"] * draw_errors(spec.error, n, rng)
    haz = s4_hazards(coef, z, x, y)
    success = rng.random(haz.shape) < haz
    first = np.where(success.any(axis=1), success.argmax(axis=1) + 1, spec.K + 1)
    y = np.where(first <= spec.K, y, np.nan)
    return Dataset.from_arrays(y, first, z, K=spec.K, x_cont=x)


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


def _draw_design(spec: ScenarioSpec, rng):
    n = spec.n
    z = rng.integers(0, 2, n)
    x = spec.x_mean + math.sqrt(spec.x_var) * rng.standard_normal(n)
    p0, p1 = spec.probs()
    cum = np.where(z[:, None] == 1, np.cumsum(p1)[None], np.cumsum(p0)[None])
    u = rng.random(n) * cum[:, -1]
    r = np.minimum((cum < u[:, None]).sum(axis=1), spec.K) + 1
    return z, x, r


def _generate_pattern_scenario(spec: ScenarioSpec, rng) -> Dataset:
    z, x, r = _draw_design(spec, rng)
    cls = _draw_class(r, rng) if spec.id == "s6" else None
    comp = _draw_component(z, r, rng) if spec.id == "s5" else None
    loc = _location(spec, z, r, x, cls=cls, comp=comp)
    y = loc + spec.sigma * draw_errors(spec.error, spec.n, rng)
    y = np.where(r <= spec.K, y, np.nan)
    return Dataset.from_arrays(y, r, z, K=spec.K, x_cont=x)


def _check_id(spec, ids):
    if spec.id not in ids:
        raise ContractError(f"generator for {ids} called with scenario {spec.id}")


def gen_scenario2(spec: ScenarioSpec, rng) -> Dataset:
    _check_id(spec, ("s2",))
    return _generate_pattern_scenario(spec, rng)


def gen_scenario3(spec: ScenarioSpec, rng) -> Dataset:
    _check_id(spec, ("s3",))
    return _generate_pattern_scenario(spec, rng)


def gen_scenario5(spec: ScenarioSpec, rng) -> Dataset:
    _check_id(spec, ("s5",))
    return _generate_pattern_scenario(spec, rng)


def gen_scenario6(spec: ScenarioSpec, rng) -> Dataset:
    _check_id(spec, ("s6",))
    return _generate_pattern_scenario(spec, rng)


def gen_scenario1_custom(spec: ScenarioSpec, rng) -> Dataset:
    _check_id(spec, ("s1_custom",))
    return _generate_pattern_scenario(spec, rng)


_GENERATORS = {
    "s1_custom": gen_scenario1_custom,
    "s2": gen_scenario2,
    "s3": gen_scenario3,
    "s4_custom": gen_scenario4_custom,
    "s5": gen_scenario5,
    "s6": gen_scenario6,
}


def generate(spec: ScenarioSpec, rng: np.random.Generator | int | None = None) -> Dataset:
    rng = np.random.default_rng(rng)
    return _GENERATORS[spec.id](spec, rng)


# --------------------------------------------------------------------------
# truth
# --------------------------------------------------------------------------

N_QUAD = 80


def _x_quadrature(spec: ScenarioSpec, n_nodes: int = N_QUAD):
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    return spec.x_mean + math.sqrt(spec.x_var) * nodes, weights / weights.sum()


def conditional_means(spec: ScenarioSpec, z: int, x) -> tuple[np.ndarray, np.ndarray]:
    """``p(r | z, x)`` and ``E[Y | z, r, x]`` over r = 1..K+1; each shape (len(x), K+1).

    The last column of the means is the hidden-pattern truth.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nx = len(x)
    K = spec.K
    r = np.arange(1, K + 2)
    if spec.id == "s4_custom":
        coef = _s4_coefficients(spec)
        if spec.error != "normal":
            raise ContractError("scenario 4 truths are implemented for normal errors")
        e_nodes, e_w = np.polynomial.hermite_e.hermegauss(60)
        e_w = e_w / e_w.sum()
        y = coef["beta0"] + coef["xi"] * z + coef["beta"] * x[:, None] + coef["sigma"] * e_nodes[None, :]
        pr = s4_attempt_probs(s4_hazards(coef, np.full(y.size, z), np.repeat(x, len(e_nodes)), y.ravel()))
        pr = pr.reshape(nx, len(e_nodes), S4_MAX_ATTEMPTS + 1)
        p = np.zeros((nx, K + 1))
        mu = np.full((nx, K + 1), np.nan)
        mass = np.einsum("e,xer->xr", e_w, pr)
        first = np.einsum("e,xe,xer->xr", e_w, y, pr)
        p[:, :S4_MAX_ATTEMPTS] = mass[:, :-1]
        p[:, K] = mass[:, -1]
        with np.errstate(invalid="ignore", divide="ignore"):
            mu[:, :S4_MAX_ATTEMPTS] = first[:, :-1] / mass[:, :-1]
            mu[:, K] = first[:, -1] / mass[:, -1]
        return p, mu
    p = np.broadcast_to(spec.probs()[z], (nx, K + 1)).copy()
    zz = np.full((nx, K + 1), z)
    rr = np.broadcast_to(r, (nx, K + 1))
    xx = np.broadcast_to(x[:, None], (nx, K + 1))
    if spec.id == "s5":
        w = s5_weight(zz, rr)
        mu = w * (g_lin(zz, rr) + BETA1 * xx) + (1 - w) * (h_exp(zz, rr) + BETA2 * xx)
    elif spec.id == "s6":
        rows = _LCM_TABLE[_lcm_row(r)]
        mu = (rows @ h_star(z, np.arange(1, 5)))[None, :] + BETA1 * xx
    else:
        mu = _location(spec, zz, rr, xx)
    return p, mu + spec.sigma * error_mean(spec.error)


def _pool_levels(p_obs: np.ndarray, mu_obs: np.ndarray, merge_map) -> np.ndarray:
    """Replace each pattern mean by the probability-weighted mean of its merged level."""
    idx = np.asarray(merge_map, dtype=int)[: p_obs.shape[1]]
    out = mu_obs.copy()
    filled = np.where(p_obs > 0, p_obs * np.nan_to_num(mu_obs), 0.0)
    for level in np.unique(idx):
        cols = idx == level
        mass = p_obs[:, cols].sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            pooled = filled[:, cols].sum(axis=1) / mass
        out[:, cols] = np.where(p_obs[:, cols] > 0, pooled[:, None], np.nan)
    return out


def _arm_mean_under_prior(spec: ScenarioSpec, z: int, prior, merge_map=None) -> float:
    from .extrapolation import PriorKind, extrapolation_mean_expectation

    x, wx = _x_quadrature(spec)
    p, mu = conditional_means(spec, z, x)
    K = spec.K
    p_obs, mu_obs = p[:, :K], mu[:, :K]
    if merge_map is not None:
        mu_obs = _pool_levels(p_obs, mu_obs, merge_map)
    if prior is None:
        return float(wx @ (p * mu).sum(axis=1))
    if prior.kind is PriorKind.NONE:
        q = p_obs / p_obs.sum(axis=1, keepdims=True)
        return float(wx @ np.nansum(q * mu_obs, axis=1))
    seen = p_obs > 0
    lo = np.where(seen, mu_obs, np.inf).min(axis=1)
    hi = np.where(seen, mu_obs, -np.inf).max(axis=1)
    hidden = extrapolation_mean_expectation(prior, lo, (hi - lo) * prior.P / 100.0)
    return float(wx @ (np.nansum(p_obs * mu_obs, axis=1) + p[:, K] * hidden))


def true_theta(spec: ScenarioSpec, prior=None, merge_map=None) -> float:
    """Population ``E[Y|Z=1] - E[Y|Z=0]``.

    With ``prior=None`` the hidden pattern uses the generating truth.  With an
    extrapolation prior, the hidden mean is the prior mean implied by the true
    identified conditional means, i.e. the value that prior's estimand targets;
    kind ``none`` gives the completers-only contrast.  ``merge_map`` pools the
    identified pattern means within merged levels, as a merged-attempt fit does.
    """
    if prior is None and spec.id == "s4_custom":
        return float(_s4_coefficients(spec)["xi"])
    if prior is None and spec.id != "s4_custom":
        means = conditional_means(spec, 0, [spec.x_mean])[1][0], conditional_means(spec, 1, [spec.x_mean])[1][0]
        p0, p1 = spec.probs()
        return float(p1 @ means[1] - p0 @ means[0])
    return _arm_mean_under_prior(spec, 1, prior, merge_map) - _arm_mean_under_prior(spec, 0, prior, merge_map)


def true_theta_completers(spec: ScenarioSpec) -> float:
    """The contrast restricted to subjects observed within K attempts."""
    from .extrapolation import ExtrapolationPriorSpec

    return true_theta(spec, ExtrapolationPriorSpec("none"))


def potential_outcomes(spec: ScenarioSpec, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Complete-data outcomes under each arm for ``n`` subjects sharing covariates."""
    rng = np.random.default_rng(rng)
    x = spec.x_mean + math.sqrt(spec.x_var) * rng.standard_normal(n)
    out = []
    if spec.id == "s4_custom":
        coef = _s4_coefficients(spec)
        e = coef["sigma"] * draw_errors(spec.error, n, rng)
        for z in (0, 1):
            out.append(coef["beta0"] + coef["xi"] * z + coef["beta"] * x + e)
        return out[0], out[1]
    probs = spec.probs()
    for z in (0, 1):
        cum = np.cumsum(probs[z])
        r = np.minimum(np.searchsorted(cum, rng.random(n) * cum[-1], side="right"), spec.K) + 1
        zz = np.full(n, z)
        cls = _draw_class(r, rng) if spec.id == "s6" else None
        comp = _draw_component(zz, r, rng) if spec.id == "s5" else None
        loc = _location(spec, zz, r, x, cls=cls, comp=comp)
        out.append(loc + spec.sigma * draw_errors(spec.error, n, rng))
    return out[0], out[1]


def sidecar(spec: ScenarioSpec, merge_map=None, priors=None) -> dict:
    """Truth record written next to a simulated dataset.

    ``theta_true`` uses the generating hidden-pattern mean; ``theta_true_by_prior``
    holds the value each extrapolation prior targets under ``merge_map``.
    """
    from .extrapolation import STANDARD_PRIORS

    priors = STANDARD_PRIORS if priors is None else priors
    mm = None if merge_map is None else [int(v) for v in merge_map]
    return {
        "scenario": spec.to_dict(),
        "merge_map": mm,
        "theta_true": true_theta(spec),
        "theta_true_by_prior": {p.label: true_theta(spec, p, mm) for p in priors},
    }
