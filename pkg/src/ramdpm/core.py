"""Domain types, densities and mixture-weight formulas for the attempt-pattern DPM.

Attempt indices ``r`` and categorical levels ``x_cat`` are 1-based at every
public surface (records, CSV files, function arguments).  Arrays held inside
:class:`Dataset` and :class:`Components` use the same 1-based codes; the
0-based shift happens right where an array is indexed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)
STD_VARIANCE = 0.5  # standardized Y and x_cont have this variance


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """Caller broke a precondition that is not a plain domain violation."""


# --------------------------------------------------------------------------
# records and datasets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AttemptRecord:
    y: float | None
    r: int
    x_cat: int = 1
    x_cont: float | None = None
    z: int = 0


@dataclass(frozen=True)
class Dataset:
    """Column-oriented collection of attempt records.

    Missing ``y``/``x_cont`` are stored as NaN.  ``K`` is the maximum number of
    attempts (pattern ``K+1`` means the outcome was never obtained) and ``L``
    the number of categorical covariate levels.
    """

    y: np.ndarray
    r: np.ndarray
    x_cat: np.ndarray
    x_cont: np.ndarray
    z: np.ndarray
    K: int
    L: int = 1

    def __post_init__(self):
        n = len(self.y)
        for name in ("r", "x_cat", "x_cont", "z"):
            if len(getattr(self, name)) != n:
                raise ContractError(f"column {name} has wrong length")
        if n:
            if self.r.min() < 1 or self.r.max() > self.K + 1:
                raise DomainError("attempt index outside 1..K+1")
            if self.x_cat.min() < 1 or self.x_cat.max() > self.L:
                raise DomainError("categorical level outside 1..L")
            if not np.isin(self.z, (0, 1)).all():
                raise DomainError("treatment arm must be 0 or 1")

    @classmethod
    def from_arrays(cls, y, r, z, K, x_cont=None, x_cat=None, L=None) -> "Dataset":
        y = np.asarray(y, dtype=float)
        n = len(y)
        x_cont = np.full(n, np.nan) if x_cont is None else np.asarray(x_cont, dtype=float)
        x_cat = np.ones(n, dtype=int) if x_cat is None else np.asarray(x_cat, dtype=int)
        if L is None:
            L = int(x_cat.max()) if n else 1
        return cls(y=y, r=np.asarray(r, dtype=int), x_cat=x_cat, x_cont=x_cont,
                   z=np.asarray(z, dtype=int), K=int(K), L=int(L))

    @classmethod
    def from_records(cls, records: Iterable[AttemptRecord], K: int, L: int | None = None) -> "Dataset":
        recs = list(records)
        nan = float("nan")
        return cls.from_arrays(
            y=[nan if rec.y is None else rec.y for rec in recs],
            r=[rec.r for rec in recs],
            z=[rec.z for rec in recs],
            x_cont=[nan if rec.x_cont is None else rec.x_cont for rec in recs],
            x_cat=[rec.x_cat for rec in recs],
            K=K,
            L=L,
        )

    def records(self) -> list[AttemptRecord]:
        def opt(v):
            return None if np.isnan(v) else float(v)

        return [
            AttemptRecord(opt(self.y[i]), int(self.r[i]), int(self.x_cat[i]), opt(self.x_cont[i]), int(self.z[i]))
            for i in range(len(self))
        ]

    def __len__(self) -> int:
        return len(self.y)

    @property
    def y_observed(self) -> np.ndarray:
        return ~np.isnan(self.y)

    @property
    def x_observed(self) -> np.ndarray:
        return ~np.isnan(self.x_cont)

    @property
    def has_cont(self) -> bool:
        """Whether the continuous covariate enters the model at all."""
        return bool(self.x_observed.any())

    def replace(self, **changes) -> "Dataset":
        kw = dict(y=self.y, r=self.r, x_cat=self.x_cat, x_cont=self.x_cont, z=self.z, K=self.K, L=self.L)
        kw.update(changes)
        return Dataset(**kw)


CSV_HEADER = ("y", "r", "x_cat", "x_cont", "z")


def read_csv(path, K: int, L: int | None = None) -> Dataset:
    """Read a ``y,r,x_cat,x_cont,z`` file; empty cells are missing values."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ContractError(f"dataset file lacks columns {sorted(missing)}")
        recs = []
        for row in reader:
            recs.append(AttemptRecord(
                y=float(row["y"]) if row["y"].strip() else None,
                r=int(row["r"]),
                x_cat=int(row["x_cat"]) if row["x_cat"].strip() else 1,
                x_cont=float(row["x_cont"]) if row["x_cont"].strip() else None,
                z=int(row["z"]),
            ))
    return Dataset.from_records(recs, K=K, L=L)


def write_csv(data: Dataset, path) -> None:
    def fmt(v):
        return "" if np.isnan(v) else repr(float(v))

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i in range(len(data)):
            w.writerow([fmt(data.y[i]), int(data.r[i]), int(data.x_cat[i]), fmt(data.x_cont[i]), int(data.z[i])])


def normalize_attempts(data: Dataset) -> Dataset:
    """Send every record with a missing outcome to the non-response pattern K+1."""
    r = np.where(data.y_observed, data.r, data.K + 1)
    if np.array_equal(r, data.r):
        return data
    return data.replace(r=r)


# --------------------------------------------------------------------------
# standardization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StandardizationRecord:
    y_center: float
    y_scale: float
    x_center: float = 0.0
    x_scale: float = 1.0

    def y_forward(self, y):
        return (np.asarray(y, dtype=float) - self.y_center) / self.y_scale

    def y_inverse(self, y):
        return np.asarray(y, dtype=float) * self.y_scale + self.y_center

    def x_forward(self, x):
        return (np.asarray(x, dtype=float) - self.x_center) / self.x_scale

    def x_inverse(self, x):
        return np.asarray(x, dtype=float) * self.x_scale + self.x_center

    def to_dict(self) -> dict:
        return {"y_center": self.y_center, "y_scale": self.y_scale,
                "x_center": self.x_center, "x_scale": self.x_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationRecord":
        return cls(**{k: float(d[k]) for k in ("y_center", "y_scale", "x_center", "x_scale")})


IDENTITY_STANDARDIZATION = StandardizationRecord(0.0, 1.0, 0.0, 1.0)


def _center_scale(values: np.ndarray, name: str) -> tuple[float, float]:
    obs = values[~np.isnan(values)]
    if len(obs) < 2:
        raise ContractError(f"need at least 2 observed values of {name}")
    center = float(obs.mean())
    var = float(obs.var())  # population variance, see README
    if not var > 0:
        raise DomainError(f"{name} is constant; cannot standardize")
    return center, math.sqrt(var / STD_VARIANCE)


def standardize(data: Dataset) -> tuple[Dataset, StandardizationRecord]:
    """Shift/scale observed Y and x_cont to mean 0 and variance 0.5.

    Only observed values enter the statistics.  When no x_cont is observed the
    covariate is left alone and an identity transform is recorded for it.
    """
    yc, ys = _center_scale(data.y, "y")
    if data.has_cont:
        xc, xs = _center_scale(data.x_cont, "x_cont")
    else:
        xc, xs = 0.0, 1.0
    rec = StandardizationRecord(yc, ys, xc, xs)
    return data.replace(y=rec.y_forward(data.y), x_cont=rec.x_forward(data.x_cont)), rec


# --------------------------------------------------------------------------
# model configuration
# --------------------------------------------------------------------------


def identity_merge_map(K: int) -> tuple[int, ...]:
    return tuple(range(1, K + 2))


def quatro_merge_map(K: int = 9, n_kept: int = 2) -> tuple[int, ...]:
    """Keep attempts 1..n_kept, pool n_kept+1..K into one level, K+1 last."""
    if K <= n_kept:
        return identity_merge_map(K)
    pooled = n_kept + 1
    return tuple(list(range(1, n_kept + 1)) + [pooled] * (K - n_kept) + [pooled + 1])


@dataclass(frozen=True)
class ModelConfig:
    K: int = 9
    merge_map: tuple[int, ...] | None = None
    H: int = 20
    n_iter: int = 50000
    n_burn: int = 5000
    thin: int = 5
    mc_draws: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.merge_map is None:
            object.__setattr__(self, "merge_map", identity_merge_map(self.K))
        mm = tuple(int(v) for v in self.merge_map)
        object.__setattr__(self, "merge_map", mm)
        if len(mm) != self.K + 1:
            raise ContractError(f"merge_map needs K+1={self.K + 1} entries, got {len(mm)}")
        if any(b < a for a, b in zip(mm, mm[1:])):
            raise ContractError("merge_map must be non-decreasing")
        if mm[0] != 1 or sorted(set(mm)) != list(range(1, mm[-1] + 1)):
            raise ContractError("merge_map must be onto 1..K_cond+1")
        if mm.count(mm[-1]) != 1:
            raise ContractError("only pattern K+1 may map to the last merged level")
        if self.H < 1:
            raise ContractError("H must be positive")
        if self.thin < 1 or self.n_burn < 0 or self.n_burn >= self.n_iter:
            raise ContractError("need thin >= 1 and 0 <= n_burn < n_iter")
        if self.mc_draws < 1:
            raise ContractError("mc_draws must be positive")

    @property
    def K_cond(self) -> int:
        return self.merge_map[-1] - 1

    @property
    def merge_index(self) -> np.ndarray:
        """0-based merged level for each 0-based attempt index."""
        return np.asarray(self.merge_map, dtype=int) - 1

    def merge(self, r: int) -> int:
        if not 1 <= r <= self.K + 1:
            raise DomainError(f"attempt {r} outside 1..{self.K + 1}")
        return self.merge_map[r - 1]

    @property
    def n_retained(self) -> int:
        return len(range(self.n_burn + self.thin - 1, self.n_iter, self.thin))


# --------------------------------------------------------------------------
# mixture parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Layout:
    """Shape information shared by every component of a fitted model."""

    K: int
    merge_map: tuple[int, ...]
    L: int = 1
    has_cont: bool = True

    @property
    def K_cond(self) -> int:
        return self.merge_map[-1] - 1

    @property
    def n_cov(self) -> int:
        return int(self.has_cont) + self.L - 1

    @property
    def merge_index(self) -> np.ndarray:
        return np.asarray(self.merge_map, dtype=int) - 1

    @classmethod
    def for_data(cls, data: Dataset, cfg: ModelConfig) -> "Layout":
        if data.K != cfg.K:
            raise ContractError(f"dataset K={data.K} but config K={cfg.K}")
        return cls(K=cfg.K, merge_map=cfg.merge_map, L=data.L, has_cont=data.has_cont)

    def design(self, x_cat, x_cont) -> np.ndarray:
        """Covariate row(s): [x_cont] + indicators of levels 2..L."""
        x_cat = np.atleast_1d(np.asarray(x_cat, dtype=int))
        cols = []
        if self.has_cont:
            cols.append(np.atleast_1d(np.asarray(x_cont, dtype=float)))
        for level in range(2, self.L + 1):
            cols.append((x_cat == level).astype(float))
        if not cols:
            return np.zeros((len(x_cat), 0))
        return np.column_stack(cols)

    def to_dict(self) -> dict:
        return {"K": self.K, "merge_map": list(self.merge_map), "L": self.L, "has_cont": self.has_cont}

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        return cls(K=int(d["K"]), merge_map=tuple(d["merge_map"]), L=int(d["L"]), has_cont=bool(d["has_cont"]))


@dataclass(frozen=True)
class ClusterParams:
    alpha: np.ndarray    # (2, K_cond) intercepts by arm and merged attempt
    beta: np.ndarray     # (n_cov,)
    sigma2: float
    xi: np.ndarray       # (K+1,) attempt distribution
    eta_cat: np.ndarray  # (L,)
    m: float = 0.0
    tau2: float = 1.0
    p_z: float = 0.5

    def __post_init__(self):
        if not self.sigma2 > 0 or not self.tau2 > 0:
            raise DomainError("variances must be positive")
        if not 0 < self.p_z < 1:
            raise DomainError("p_z must lie in (0, 1)")
        for name in ("xi", "eta_cat"):
            s = np.asarray(getattr(self, name))
            if (s < 0).any() or abs(s.sum() - 1.0) > 1e-12:
                raise DomainError(f"{name} is not a probability simplex")


@dataclass
class Components:
    """H mixture components stored as stacked arrays (leading axis = component)."""

    alpha: np.ndarray    # (H, 2, K_cond)
    beta: np.ndarray     # (H, n_cov)
    sigma2: np.ndarray   # (H,)
    xi: np.ndarray       # (H, K+1)
    eta_cat: np.ndarray  # (H, L)
    m: np.ndarray        # (H,)
    tau2: np.ndarray     # (H,)
    p_z: np.ndarray      # (H,)

    FIELDS = ("alpha", "beta", "sigma2", "xi", "eta_cat", "m", "tau2", "p_z")

    def __len__(self) -> int:
        return len(self.sigma2)

    def __getitem__(self, h: int) -> ClusterParams:
        return ClusterParams(
            alpha=self.alpha[h].copy(), beta=self.beta[h].copy(), sigma2=float(self.sigma2[h]),
            xi=self.xi[h].copy(), eta_cat=self.eta_cat[h].copy(), m=float(self.m[h]),
            tau2=float(self.tau2[h]), p_z=float(self.p_z[h]),
        )

    @classmethod
    def stack(cls, params: Sequence[ClusterParams]) -> "Components":
        return cls(
            alpha=np.stack([np.asarray(p.alpha, dtype=float) for p in params]),
            beta=np.stack([np.asarray(p.beta, dtype=float).reshape(-1) for p in params]),
            sigma2=np.array([p.sigma2 for p in params], dtype=float),
            xi=np.stack([np.asarray(p.xi, dtype=float) for p in params]),
            eta_cat=np.stack([np.asarray(p.eta_cat, dtype=float) for p in params]),
            m=np.array([p.m for p in params], dtype=float),
            tau2=np.array([p.tau2 for p in params], dtype=float),
            p_z=np.array([p.p_z for p in params], dtype=float),
        )

    def copy(self) -> "Components":
        return Components(**{f: getattr(self, f).copy() for f in self.FIELDS})

    def permute(self, order) -> "Components":
        order = np.asarray(order)
        return Components(**{f: getattr(self, f)[order].copy() for f in self.FIELDS})

    def to_dict(self) -> dict:
        return {f: getattr(self, f).tolist() for f in self.FIELDS}

    @classmethod
    def from_dict(cls, d: dict, layout: Layout) -> "Components":
        H = len(d["sigma2"])
        out = {f: np.asarray(d[f], dtype=float) for f in cls.FIELDS}
        out["beta"] = out["beta"].reshape(H, layout.n_cov)
        out["alpha"] = out["alpha"].reshape(H, 2, layout.K_cond)
        return cls(**out)


# --------------------------------------------------------------------------
# stick breaking
# --------------------------------------------------------------------------


def stick_break(v) -> np.ndarray:
    """Mixture weights ``pi[j] = v[j] * prod_{s<j} (1 - v[s])``; last stick must be 1."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or len(v) == 0:
        raise ContractError("stick fractions must be a non-empty vector")
    if (v < 0).any() or (v > 1).any() or np.isnan(v).any():
        raise DomainError("stick fractions must lie in [0, 1]")
    if v[-1] != 1.0:
        raise ContractError("final stick fraction must equal 1")
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - v[:-1])))
    return v * remaining


@dataclass(frozen=True)
class StickWeights:
    v: np.ndarray
    pi: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "v", v)
        pi = stick_break(v) if self.pi is None else np.asarray(self.pi, dtype=float)
        object.__setattr__(self, "pi", pi)

    def __len__(self) -> int:
        return len(self.v)


# --------------------------------------------------------------------------
# posterior draws
# --------------------------------------------------------------------------


@dataclass
class PosteriorDraw:
    sticks: StickWeights
    clusters: Components
    layout: Layout
    standardization: StandardizationRecord = IDENTITY_STANDARDIZATION
    hypers: dict | None = None

    def __post_init__(self):
        if len(self.clusters) != len(self.sticks):
            raise ContractError("need exactly one component per stick")

    @property
    def H(self) -> int:
        return len(self.sticks)

    @property
    def log_pi(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.sticks.pi)

    def to_dict(self) -> dict:
        return {
            "v": self.sticks.v.tolist(),
            "clusters": self.clusters.to_dict(),
            "layout": self.layout.to_dict(),
            "standardization": self.standardization.to_dict(),
            "hypers": self.hypers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorDraw":
        layout = Layout.from_dict(d["layout"])
        return cls(
            sticks=StickWeights(np.asarray(d["v"], dtype=float)),
            clusters=Components.from_dict(d["clusters"], layout),
            layout=layout,
            standardization=StandardizationRecord.from_dict(d["standardization"]),
            hypers=d.get("hypers"),
        )

    def permute(self, order) -> "PosteriorDraw":
        """Relabel components; the stick fractions are rebuilt to give ``pi[order]``."""
        pi = self.sticks.pi[np.asarray(order)]
        remaining = 1.0 - np.concatenate(([0.0], np.cumsum(pi[:-1])))
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(remaining > 0, pi / remaining, 1.0)
        v = np.clip(v, 0.0, 1.0)
        v[-1] = 1.0
        return PosteriorDraw(StickWeights(v, pi), self.clusters.permute(order), self.layout,
                             self.standardization, self.hypers)


# --------------------------------------------------------------------------
# densities
# --------------------------------------------------------------------------


def norm_logpdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def log_covariate_arm(draw: PosteriorDraw, x_cat, x_cont, z) -> np.ndarray:
    """``log p(x, z; eta_h)`` for each (record, component); shape (n, H).

    NaN ``x_cont`` drops the continuous factor for that record.
    """
    c = draw.clusters
    x_cat = np.atleast_1d(np.asarray(x_cat, dtype=int))
    z = np.atleast_1d(np.asarray(z, dtype=int))
    log_pz = np.stack([np.log1p(-c.p_z), np.log(c.p_z)])        # (2, H)
    if z.min() == z.max():
        out = np.broadcast_to(log_pz[z[0]], (len(z), len(c.p_z))).copy()
    else:
        out = log_pz[z]
    if draw.layout.L > 1:
        out += _log(c.eta_cat).T[x_cat - 1]
    if draw.layout.has_cont:
        x_cont = np.broadcast_to(np.asarray(x_cont, dtype=float), z.shape)
        obs = ~np.isnan(x_cont)
        const = -0.5 * (LOG_2PI + np.log(c.tau2))
        prec = -0.5 / c.tau2
        if obs.all():
            out += const + prec * (x_cont[:, None] - c.m) ** 2
        elif obs.any():
            xo = x_cont[obs]
            out[obs] += const + prec * (xo[:, None] - c.m) ** 2
    return out


def cluster_kernel(rec: AttemptRecord, params: ClusterParams, cfg: ModelConfig | Layout, log: bool = False) -> float:
    """Per-component joint density of one (standardized) record.

    Product of the outcome Normal (skipped when ``y`` is missing), ``xi[r]``,
    ``eta_cat[x_cat]``, the x_cont Normal (skipped when missing) and the
    Bernoulli arm factor.  An observed ``y`` with missing ``x_cont`` uses the
    outcome density with x_cont integrated out.
    """
    K = cfg.K
    if not 1 <= rec.r <= K + 1:
        raise DomainError(f"attempt {rec.r} outside 1..{K + 1}")
    L = len(params.eta_cat)
    beta = np.asarray(params.beta, dtype=float).reshape(-1)
    has_cont = len(beta) == L  # layout is [x_cont] + (L - 1) level indicators

    lp = float(_log(params.xi[rec.r - 1])) + float(_log(params.eta_cat[rec.x_cat - 1]))
    lp += math.log(params.p_z) if rec.z == 1 else math.log1p(-params.p_z)
    if has_cont and rec.x_cont is not None:
        lp += float(norm_logpdf(rec.x_cont, params.m, params.tau2))
    if rec.y is not None:
        if rec.r > K:
            raise ContractError("observed outcome in the non-response pattern")
        mean = params.alpha[rec.z, cfg.merge_map[rec.r - 1] - 1]
        var = params.sigma2
        dummies = beta[int(has_cont):]
        if rec.x_cat >= 2:
            mean += dummies[rec.x_cat - 2]
        if has_cont:
            if rec.x_cont is None:
                mean += beta[0] * params.m
                var += beta[0] ** 2 * params.tau2
            else:
                mean += beta[0] * rec.x_cont
        lp += float(norm_logpdf(rec.y, mean, var))
    return lp if log else math.exp(lp)


def _normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    norm = logsumexp(logw, axis=-1, keepdims=True)
    if not np.isfinite(norm).all():
        raise DomainError("all component weights vanish: impossible covariate profile")
    return np.exp(logw - norm)


def _check_r(r, K):
    r = np.asarray(r)
    if (r < 1).any() or (r > K + 1).any():
        raise DomainError(f"attempt index outside 1..{K + 1}")


def covariate_mixture_weights(x_cat, x_cont, z, draw: PosteriorDraw) -> np.ndarray:
    """``v_m(x, z)``: component posterior given covariates and arm only."""
    logw = draw.log_pi + log_covariate_arm(draw, x_cat, x_cont, z)
    out = _normalize_log_weights(logw)
    return out[0] if np.ndim(z) == 0 else out


def conditional_outcome_weights(r, x_cat, x_cont, z, draw: PosteriorDraw) -> np.ndarray:
    """``w_j(r, x, z)``: the weights of the conditional outcome mixture."""
    _check_r(r, draw.layout.K)
    r_arr = np.atleast_1d(np.asarray(r, dtype=int))
    logw = draw.log_pi + log_covariate_arm(draw, x_cat, x_cont, z) + _log(draw.clusters.xi.T[r_arr - 1])
    out = _normalize_log_weights(logw)
    return out[0] if np.ndim(z) == 0 and np.ndim(r) == 0 else out


def pattern_mixture_weights(z, r, draw: PosteriorDraw) -> np.ndarray:
    """``u_h(z, r)``: component posterior given arm and attempt pattern."""
    _check_r(r, draw.layout.K)
    c = draw.clusters
    logw = draw.log_pi + (np.log(c.p_z) if z == 1 else np.log1p(-c.p_z)) + _log(c.xi[:, int(r) - 1])
    return _normalize_log_weights(logw)


def conditional_means(draw: PosteriorDraw, z: int, design: np.ndarray) -> np.ndarray:
    """Component means ``alpha[z, r*] + x beta`` for each merged level; shape (n, H, K_cond)."""
    c = draw.clusters
    xb = design @ c.beta.T  # (n, H)
    return xb[:, :, None] + c.alpha[None, :, z, :]


def log_likelihood(data: Dataset, draw: PosteriorDraw) -> float:
    """Observed-data log density summed over records (missing covariates integrated out)."""
    c = draw.clusters
    lay = draw.layout
    logk = draw.log_pi + log_covariate_arm(draw, data.x_cat, data.x_cont, data.z)
    logk = logk + _log(c.xi.T[data.r - 1])
    yobs = data.y_observed
    if yobs.any():
        # with x_cont missing and y observed, integrate x out analytically
        idx = np.flatnonzero(yobs)
        x = data.x_cont[idx]
        xmiss = np.isnan(x)
        design = lay.design(data.x_cat[idx], np.where(xmiss, 0.0, x))
        rs = lay.merge_index[data.r[idx] - 1]
        mean = design @ c.beta.T + c.alpha[:, data.z[idx], rs].T
        var = np.broadcast_to(c.sigma2, mean.shape).copy()
        if lay.has_cont and xmiss.any():
            bx = c.beta[:, 0]
            mean[xmiss] += bx * c.m
            var[xmiss] += bx ** 2 * c.tau2
        logk[idx] += norm_logpdf(data.y[idx][:, None], mean, var)
    return float(logsumexp(logk, axis=1).sum())
