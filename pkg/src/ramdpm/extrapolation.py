"""Identifying priors for the mean of the never-observed pattern K+1.

The non-response mean is placed at or below the smallest identified
conditional mean, by at most ``C = (max - min) * P / 100``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import ContractError, DomainError


class PriorKind(str, enum.Enum):
    NONE = "none"
    POINT_MASS = "pm"
    UNIF = "unif"
    TRI1 = "tri1"
    TRI2 = "tri2"

    @classmethod
    def parse(cls, value: "str | PriorKind") -> "PriorKind":
        if isinstance(value, cls):
            return value
        aliases = {"point_mass": "pm", "p.m": "pm", "point mass": "pm", "completer": "none"}
        key = aliases.get(str(value).lower(), str(value).lower())
        try:
            return cls(key)
        except ValueError:
            allowed = ", ".join(k.value for k in cls)
            raise ContractError(f"unknown extrapolation kind {value!r}; allowed: {allowed}") from None


@dataclass(frozen=True)
class ExtrapolationPriorSpec:
    kind: PriorKind = PriorKind.POINT_MASS
    P: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind.parse(self.kind))
        if not self.P >= 0:
            raise DomainError(f"sensitivity percent P must be >= 0, got {self.P}")

    @property
    def label(self) -> str:
        """Table label: ``none``, ``pm``, ``unif_20``, ``tri1_10`` style."""
        if self.kind in (PriorKind.NONE, PriorKind.POINT_MASS):
            return self.kind.value
        return f"{self.kind.value}_{self.P:g}"


# the eight rows of the sensitivity tables
STANDARD_PRIORS = (
    ExtrapolationPriorSpec(PriorKind.NONE),
    ExtrapolationPriorSpec(PriorKind.POINT_MASS),
    ExtrapolationPriorSpec(PriorKind.UNIF, 10),
    ExtrapolationPriorSpec(PriorKind.UNIF, 20),
    ExtrapolationPriorSpec(PriorKind.TRI1, 10),
    ExtrapolationPriorSpec(PriorKind.TRI1, 20),
    ExtrapolationPriorSpec(PriorKind.TRI2, 10),
    ExtrapolationPriorSpec(PriorKind.TRI2, 20),
)


@dataclass(frozen=True)
class ExtrapolationBounds:
    alpha_min: float
    alpha_max: float
    C: float


def compute_bounds(cond_means, P: float) -> ExtrapolationBounds:
    means = np.asarray(cond_means, dtype=float)
    if means.size == 0:
        raise ContractError("need at least one identified conditional mean")
    if not np.isfinite(means).all():
        raise DomainError("conditional means must be finite")
    if P < 0:
        raise DomainError("P must be >= 0")
    lo, hi = float(means.min()), float(means.max())
    return ExtrapolationBounds(lo, hi, (hi - lo) * P / 100.0)


def triangular_ppf(u, lower, upper, mode):
    """Inverse CDF of the triangular law; vectorised over all arguments."""
    u, lower, upper, mode = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, lower, upper, mode)))
    width = upper - lower
    with np.errstate(divide="ignore", invalid="ignore"):
        split = np.where(width > 0, (mode - lower) / width, 0.0)
        left = lower + np.sqrt(u * width * (mode - lower))
        right = upper - np.sqrt((1.0 - u) * width * (upper - mode))
    out = np.where(u < split, left, right)
    return np.where(width > 0, out, lower)


def draw_extrapolation_means(spec: ExtrapolationPriorSpec, alpha_min, C, rng: np.random.Generator, size=None):
    """Draw the pattern-K+1 mean given ``alpha_min`` and the offset ``C``.

    ``alpha_min``/``C`` may be arrays (one bound per Monte-Carlo covariate
    draw); the result then has their broadcast shape.
    """
    if spec.kind is PriorKind.NONE:
        raise ContractError("prior kind 'none' has no extrapolation mean; branch before sampling")
    alpha_min = np.asarray(alpha_min, dtype=float)
    C = np.asarray(C, dtype=float)
    if (C < 0).any():
        raise DomainError("C must be non-negative")
    shape = np.broadcast_shapes(alpha_min.shape, C.shape) if size is None else size
    if spec.kind is PriorKind.POINT_MASS:
        out = np.broadcast_to(alpha_min, shape).astype(float)
    else:
        u = rng.random(shape)
        lower = alpha_min - C
        if spec.kind is PriorKind.UNIF:
            out = lower + u * C
        elif spec.kind is PriorKind.TRI1:
            out = triangular_ppf(u, lower, alpha_min, lower)
        else:
            out = triangular_ppf(u, lower, alpha_min, alpha_min)
        # pin the support exactly; sqrt rounding can step outside by an ulp
        out = np.clip(out, lower, alpha_min)
    return float(out) if np.ndim(out) == 0 else out


def sample_extrapolation_mean(spec: ExtrapolationPriorSpec, bounds: ExtrapolationBounds,
                              rng: np.random.Generator) -> float:
    return draw_extrapolation_means(spec, bounds.alpha_min, bounds.C, rng)


def extrapolation_mean_expectation(spec: ExtrapolationPriorSpec, alpha_min, C):
    """Prior mean of the drawn value (used for closed-form checks)."""
    offset = {PriorKind.POINT_MASS: 0.0, PriorKind.UNIF: 0.5, PriorKind.TRI1: 2.0 / 3.0,
              PriorKind.TRI2: 1.0 / 3.0}[spec.kind]
    return np.asarray(alpha_min) - offset * np.asarray(C)
