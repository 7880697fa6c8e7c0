"""``ram-dpm`` command line: simulate, fit, estimate, gof and bench.

Every command reads a JSON config.  Exit status: 0 success, 1 usage or
configuration error, 2 numeric failure.  Errors are also reported as a JSON
object on stderr (and in ``error.json`` under the output directory).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ContractError,
    DomainError,
    ModelConfig,
    identity_merge_map,
    normalize_attempts,
    quatro_merge_map,
    read_csv,
    standardize,
    write_csv,
)
from .estimands import gof_table, load_draws, save_draws, treatment_effect
from .extrapolation import ExtrapolationPriorSpec, STANDARD_PRIORS
from .gibbs import run_chain
from .metrics import compare_priors, replicate_priors, reports_json, resolve_threads, write_table_csv
from .simulate import ScenarioSpec, generate, sidecar

log = logging.getLogger("ramdpm")

COMMANDS = ("simulate", "fit", "estimate", "gof", "bench")
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

MODEL_DEFAULTS = {"H": 20, "n_iter": 50_000, "n_burn": 5_000, "thin": 5, "mc_draws": 10_000, "merge": "merged"}
EXTRAP_DEFAULTS = {"kind": "pm", "P": 10}
BENCH_DEFAULTS = {"n_reps": 100, "base_seed": 0, "priors": "standard"}
TOP_KEYS = {"data", "draws", "K", "L", "seed", "out", "model", "extrapolation", "scenario", "bench"}


class ConfigError(ContractError):
    """Malformed or inconsistent run configuration."""


@dataclass
class RunConfig:
    command: str
    model: ModelConfig
    prior: ExtrapolationPriorSpec
    scenario: ScenarioSpec | None = None
    data: Path | None = None
    draws: Path | None = None
    out: Path = Path(".")
    seed: int = 0
    L: int | None = None
    bench: dict = field(default_factory=lambda: dict(BENCH_DEFAULTS))
    priors: tuple = STANDARD_PRIORS


def _check_keys(section: dict, allowed, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")


def _merge_map(value, K: int) -> tuple[int, ...]:
    if value == "full":
        return identity_merge_map(K)
    if value == "merged":
        return quatro_merge_map(K)
    if isinstance(value, list):
        return tuple(int(v) for v in value)
    raise ConfigError(f"model.merge must be 'full', 'merged' or a list; got {value!r}")


def _prior(d: dict) -> ExtrapolationPriorSpec:
    _check_keys(d, {"kind", "P"}, "prior")
    return ExtrapolationPriorSpec(d.get("kind", EXTRAP_DEFAULTS["kind"]), float(d.get("P", EXTRAP_DEFAULTS["P"])))


def parse_config(source, command: str, seed: int | None = None, out: str | None = None,
                 base_dir: Path | None = None) -> RunConfig:
    """Validate a config (path, JSON text already loaded as dict) and apply defaults."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; allowed: {', '.join(COMMANDS)}")
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        base_dir = path.parent if base_dir is None else base_dir
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    base_dir = Path(".") if base_dir is None else base_dir
    try:
        _check_keys(raw, TOP_KEYS, "config")
        K = int(raw.get("K", 9))
        m = dict(MODEL_DEFAULTS)
        m.update(raw.get("model", {}))
        _check_keys(m, MODEL_DEFAULTS, "model")
        run_seed = int(raw.get("seed", 0) if seed is None else seed)
        model = ModelConfig(K=K, merge_map=_merge_map(m["merge"], K), H=int(m["H"]), n_iter=int(m["n_iter"]),
                            n_burn=int(m["n_burn"]), thin=int(m["thin"]), mc_draws=int(m["mc_draws"]), seed=run_seed)
        prior = _prior(raw.get("extrapolation", {}))
        scen = None
        if "scenario" in raw:
            sd = dict(raw["scenario"])
            sd.setdefault("K", K)
            scen = ScenarioSpec.from_dict(sd)
        b = dict(BENCH_DEFAULTS)
        b.update(raw.get("bench", {}))
        _check_keys(b, BENCH_DEFAULTS, "bench")
        if b["priors"] == "standard":
            priors = STANDARD_PRIORS
        elif isinstance(b["priors"], list):
            priors = tuple(_prior(p) for p in b["priors"])
        else:
            raise ConfigError("bench.priors must be 'standard' or a list of {kind, P}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    def resolve(key):
        return None if raw.get(key) is None else (base_dir / raw[key])

    cfg = RunConfig(command=command, model=model, prior=prior, scenario=scen, data=resolve("data"),
                    draws=resolve("draws"), out=Path(out if out is not None else raw.get("out", ".")),
                    seed=run_seed, L=raw.get("L"), bench=b, priors=priors)
    _check_requirements(cfg)
    return cfg


def _check_requirements(cfg: RunConfig) -> None:
    need = {"simulate": ("scenario",), "fit": ("data",), "estimate": ("draws",),
            "gof": ("draws",), "bench": ("scenario",)}[cfg.command]
    for key in need:
        if getattr(cfg, key) is None:
            raise ConfigError(f"command {cfg.command!r} needs '{key}' in the config")
    for key in ("data", "draws"):
        p = getattr(cfg, key)
        if p is not None and key in need and not p.exists():
            raise ConfigError(f"{key} file not found: {p}")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def cmd_simulate(cfg: RunConfig) -> dict:
    data = generate(cfg.scenario, np.random.default_rng(np.random.SeedSequence(cfg.seed)))
    write_csv(data, cfg.out / "data.csv")
    truth = sidecar(cfg.scenario, cfg.model.merge_map) | {"seed": cfg.seed}
    _write_json(cfg.out / "truth.json", truth)
    return {"data": str(cfg.out / "data.csv"), "truth": str(cfg.out / "truth.json"), "n": len(data)}


def _load_data(cfg: RunConfig):
    return normalize_attempts(read_csv(cfg.data, K=cfg.model.K, L=cfg.L))


def cmd_fit(cfg: RunConfig) -> dict:
    data = _load_data(cfg)
    std, rec = standardize(data)
    draws = run_chain(std, cfg.model, np.random.default_rng(np.random.SeedSequence(cfg.seed)), rec)
    save_draws(draws, cfg.out / "draws.json")
    return {"draws": str(cfg.out / "draws.json"), "n_draws": len(draws), "n": len(data)}


def _mc_seeds(seed: int):
    root = np.random.SeedSequence(seed)
    return root.spawn(2)


def cmd_estimate(cfg: RunConfig) -> dict:
    draws = load_draws(cfg.draws)
    threads = resolve_threads()
    te_ss, gof_ss = _mc_seeds(cfg.seed)
    _, summ = treatment_effect(draws, cfg.prior, cfg.model.mc_draws, te_ss, threads=threads)
    data = _load_data(cfg) if cfg.data is not None and cfg.data.exists() else None
    report = {
        "prior_kind": cfg.prior.kind.value, "P": cfg.prior.P,
        "theta_mean": summ.mean, "ci_low": summ.ci_low, "ci_high": summ.ci_high,
        "ci_length": summ.ci_length, "n_draws": summ.n_draws,
        "gof": gof_table(draws, cfg.model.mc_draws, gof_ss, data),
    }
    _write_json(cfg.out / "estimate.json", report)
    return report


def cmd_gof(cfg: RunConfig) -> dict:
    draws = load_draws(cfg.draws)
    data = _load_data(cfg) if cfg.data is not None and cfg.data.exists() else None
    rows = gof_table(draws, cfg.model.mc_draws, _mc_seeds(cfg.seed)[1], data)
    _write_json(cfg.out / "gof.json", rows)
    cols = ["z", "r_star", "mean", "ci_low", "ci_high", "observed_mean", "n_observed"]
    lines = [",".join(cols)] + [",".join("" if r.get(c) is None else repr(r[c]) for c in cols) for r in rows]
    (cfg.out / "gof.csv").write_text("\n".join(lines) + "\n")
    return {"gof": rows}


def cmd_bench(cfg: RunConfig) -> dict:
    reports = replicate_priors(cfg.scenario, cfg.model, cfg.priors, n_reps=int(cfg.bench["n_reps"]),
                               base_seed=int(cfg.bench["base_seed"]), S=cfg.model.mc_draws,
                               threads=resolve_threads())
    (cfg.out / "bench.json").write_text(reports_json(reports) + "\n")
    write_table_csv(compare_priors(reports), cfg.out / "bench.csv")
    bad = [k for k, r in reports.items() if not r.ok]
    if bad:
        raise DomainError(f"too many failed replications for priors: {', '.join(bad)}")
    return {"bench": str(cfg.out / "bench.json")}


DISPATCH = {"simulate": cmd_simulate, "fit": cmd_fit, "estimate": cmd_estimate, "gof": cmd_gof, "bench": cmd_bench}


def run(cfg: RunConfig) -> dict:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return DISPATCH[cfg.command](cfg)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _fail(code: int, exc: BaseException, out: Path | None) -> int:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None and out.is_dir():
        (out / "error.json").write_text(text + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ram-dpm", description="Mixture-model sensitivity analysis for repeated-attempt data.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out) if args.out else None
    try:
        cfg = parse_config(args.config, args.command, seed=args.seed, out=args.out)
        out = cfg.out
        result = run(cfg)
    except (ConfigError, ContractError) as exc:
        return _fail(EXIT_USAGE, exc, out)
    except (DomainError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, exc, out)
    except OSError as exc:
        return _fail(EXIT_USAGE, exc, out)
    if args.verbose:
        print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
