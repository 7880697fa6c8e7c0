"""Mean interval length as the hidden-pattern fraction grows.

Each missingness level is replicated separately with one fit per replication;
every requested prior is scored on the same posterior draws.

    python scripts/run_missingness_trend.py --levels 0.10 0.25 0.35 --reps 50 --priors none pm unif_20
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from ramdpm.core import ModelConfig, quatro_merge_map
from ramdpm.metrics import replicate_priors
from ramdpm.simulate import ScenarioSpec

from run_scenario_table import parse_prior


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="s2")
    ap.add_argument("--levels", type=float, nargs="+", default=[0.10, 0.25, 0.35])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--sigma", type=float, default=2.0)
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--base-seed", type=int, default=0)
    ap.add_argument("--n-iter", type=int, default=5000)
    ap.add_argument("--n-burn", type=int, default=1000)
    ap.add_argument("--thin", type=int, default=5)
    ap.add_argument("--H", type=int, default=20)
    ap.add_argument("--S", type=int, default=5000)
    ap.add_argument("--priors", nargs="+", default=["none", "pm", "unif_20"])
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    cfg = ModelConfig(K=9, merge_map=quatro_merge_map(9), H=args.H, n_iter=args.n_iter,
                      n_burn=args.n_burn, thin=args.thin, mc_draws=args.S)
    priors = [parse_prior(p) for p in args.priors]
    table = {}
    t0 = time.time()
    for level in args.levels:
        scen = ScenarioSpec(id=args.scenario, n=args.n, sigma=args.sigma, missing_frac_override=level)
        reports = replicate_priors(scen, cfg, priors, n_reps=args.reps, base_seed=args.base_seed,
                                   S=args.S, threads=args.threads)
        table[level] = {k: r.to_dict() for k, r in reports.items()}
        print(f"missing {level:.2f}: " + "  ".join(
            f"{k} len={r.mean_ci_length:.3f} cov={r.coverage:.2f}" for k, r in reports.items()), flush=True)

    print(f"\n{'prior':<9}" + "".join(f"{lv:>10.2f}" for lv in args.levels))
    for p in priors:
        print(f"{p.label:<9}" + "".join(f"{table[lv][p.label]['mean_ci_length']:10.3f}" for lv in args.levels))
    print(f"{time.time() - t0:.0f}s")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"settings": vars(args), "levels": {str(k): v for k, v in table.items()}}
        (out / "trend.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
