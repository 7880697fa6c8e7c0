"""Replication harness: bias, MSE, coverage and interval length of the treatment effect."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import ContractError, DomainError, ModelConfig, normalize_attempts, standardize
from .estimands import treatment_effect
from .extrapolation import ExtrapolationPriorSpec, STANDARD_PRIORS
from .gibbs import run_chain
from .simulate import ScenarioSpec, generate, sidecar

log = logging.getLogger(__name__)

MAX_FAILED_FRACTION = 0.01
THREADS_ENV = "RAM_DPM_THREADS"

# (data, cfg, priors, S, rng seed sequence) -> {label: (theta_hat, ci_low, ci_high)}
Estimator = Callable[..., Mapping[str, tuple[float, float, float]]]


@dataclass
class MetricsReport:
    prior: str
    theta_true: float
    n_reps: int
    n_failed: int
    bias: float
    mse: float
    coverage: float
    mean_ci_length: float
    per_rep: list = field(default_factory=list)   # (rep index, theta_hat, ci_low, ci_high)
    failures: list = field(default_factory=list)  # (rep index, message)
    scenario: dict | None = None

    @property
    def ok(self) -> bool:
        total = self.n_reps + self.n_failed
        return total > 0 and self.n_reps > 0 and self.n_failed <= MAX_FAILED_FRACTION * total

    def to_dict(self) -> dict:
        return asdict(self) | {"ok": self.ok}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = {k: v for k, v in d.items() if k != "ok"}
        return cls(**d)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            threads = int(raw)
        except ValueError:
            raise ContractError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if threads < 1:
        raise ContractError("thread count must be >= 1")
    return threads


def summarize_reps(label: str, theta_true: float, per_rep: Sequence, failures: Sequence = (),
                   scenario: dict | None = None) -> MetricsReport:
    """Aggregate (index, theta_hat, ci_low, ci_high) rows into a report."""
    rows = sorted(per_rep, key=lambda t: t[0])
    if rows:
        est = np.array([r[1] for r in rows])
        lo = np.array([r[2] for r in rows])
        hi = np.array([r[3] for r in rows])
        err = est - theta_true
        bias, mse = float(err.mean()), float((err ** 2).mean())
        coverage = float(((lo <= theta_true) & (theta_true <= hi)).mean())
        length = float((hi - lo).mean())
    else:
        bias = mse = coverage = length = float("nan")
    return MetricsReport(
        prior=label, theta_true=float(theta_true), n_reps=len(rows), n_failed=len(failures),
        bias=bias, mse=mse, coverage=coverage, mean_ci_length=length,
        per_rep=[[int(r[0]), float(r[1]), float(r[2]), float(r[3])] for r in rows],
        failures=[[int(i), str(m)] for i, m in sorted(failures)], scenario=scenario,
    )


def fit_and_estimate(data, cfg: ModelConfig, priors: Sequence[ExtrapolationPriorSpec], S: int,
                     seq: np.random.SeedSequence) -> dict:
    """Default estimator: one chain, then every prior evaluated on the same draws."""
    chain_ss, mc_ss = seq.spawn(2)
    data = normalize_attempts(data)
    std, rec = standardize(data)
    draws = run_chain(std, cfg, np.random.default_rng(chain_ss), rec)
    out = {}
    for j, prior in enumerate(priors):
        # same MC substreams for every prior keeps the comparison paired
        _, summ = treatment_effect(draws, prior, S, np.random.SeedSequence(mc_ss.entropy, spawn_key=mc_ss.spawn_key))
        out[prior.label] = (summ.mean, summ.ci_low, summ.ci_high)
    return out


def _one_rep(args):
    k, scenario, cfg, priors, S, base_seed, estimator = args
    ss = np.random.SeedSequence(base_seed + k)
    data_ss, fit_ss = ss.spawn(2)
    try:
        data = generate(scenario, np.random.default_rng(data_ss))
        return k, dict(estimator(data, cfg, priors, S, fit_ss)), None
    except (DomainError, ContractError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return k, None, f"{type(exc).__name__}: {exc}"


def replicate_priors(scenario: ScenarioSpec, cfg: ModelConfig, priors: Sequence[ExtrapolationPriorSpec] = STANDARD_PRIORS,
                     n_reps: int = 100, base_seed: int = 0, S: int | None = None, threads: int | None = None,
                     estimator: Estimator | None = None) -> dict[str, MetricsReport]:
    """Run ``n_reps`` replications, fitting once per replication and scoring every prior.

    Replication ``k`` (1-based) uses seed ``base_seed + k``.  Each prior is scored
    against the population value of the estimand it targets, taken from the
    simulator's truth record.
    """
    if n_reps < 1:
        raise ContractError("need n_reps >= 1")
    priors = [p if isinstance(p, ExtrapolationPriorSpec) else ExtrapolationPriorSpec(*p) for p in priors]
    labels = [p.label for p in priors]
    if len(set(labels)) != len(labels):
        raise ContractError("duplicate priors")
    S = cfg.mc_draws if S is None else S
    threads = resolve_threads(threads)
    truth = sidecar(scenario, cfg.merge_map, priors)
    inline = estimator is not None or threads == 1
    estimator = fit_and_estimate if estimator is None else estimator
    jobs = [(k, scenario, cfg, priors, S, base_seed, estimator) for k in range(1, n_reps + 1)]
    if inline:
        results = [_one_rep(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, n_reps)) as ex:
            results = list(ex.map(_one_rep, jobs))
    results.sort(key=lambda t: t[0])
    failures = [(k, msg) for k, _, msg in results if msg is not None]
    for k, msg in failures:
        log.warning("replication %d failed: %s", k, msg)
    reports = {}
    for label in labels:
        rows = [(k, *res[label]) for k, res, msg in results if msg is None]
        reports[label] = summarize_reps(label, truth["theta_true_by_prior"][label], rows, failures, truth["scenario"])
    return reports


def replicate_study(scenario: ScenarioSpec, cfg: ModelConfig, prior: ExtrapolationPriorSpec, n_reps: int,
                    base_seed: int = 0, **kwargs) -> MetricsReport:
    return replicate_priors(scenario, cfg, [prior], n_reps, base_seed, **kwargs)[prior.label]


# --------------------------------------------------------------------------
# tables
# --------------------------------------------------------------------------

TABLE_COLUMNS = ("prior", "bias", "mse", "coverage", "ci_length")


def compare_priors(reports: Mapping[str, MetricsReport]) -> list[dict]:
    """One row per prior in the standard table order (unknown labels last)."""
    if not reports:
        raise ContractError("no reports to compare")
    items = list(reports.values())
    first = items[0]
    for r in items[1:]:
        if r.scenario != first.scenario or r.n_reps + r.n_failed != first.n_reps + first.n_failed:
            raise ContractError("reports differ in scenario or replication count")
    order = {p.label: i for i, p in enumerate(STANDARD_PRIORS)}
    keys = sorted(reports, key=lambda k: (order.get(k, len(order)), k))
    return [{"prior": k, "bias": reports[k].bias, "mse": reports[k].mse,
             "coverage": reports[k].coverage, "ci_length": reports[k].mean_ci_length} for k in keys]


def write_table_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (row[k] if k == "prior" else repr(float(row[k]))) for k in TABLE_COLUMNS})


def read_table_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (v if k == "prior" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def reports_json(reports: Mapping[str, MetricsReport]) -> str:
    """Canonical JSON text (sorted keys) so identical runs give identical bytes."""
    return json.dumps({k: reports[k].to_dict() for k in sorted(reports)}, sort_keys=True, indent=2)
