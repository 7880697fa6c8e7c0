import json
import subprocess
import sys

import numpy as np
import pytest

from ramdpm.cli import ConfigError, main, parse_config
from ramdpm.extrapolation import ExtrapolationPriorSpec, PriorKind

TINY_MODEL = {"n_iter": 500, "n_burn": 100, "thin": 5, "mc_draws": 1000, "H": 10}


def write_cfg(tmp_path, **cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> fit once for the whole module."""
    tmp = tmp_path_factory.mktemp("pipe")
    cfg = write_cfg(tmp, scenario={"id": "s2", "n": 200}, data="out/data.csv", draws="out/draws.json",
                    model=TINY_MODEL, seed=3)
    for cmd in ("simulate", "fit"):
        assert run_cli(cmd, "--config", cfg, "--out", tmp / "out") == 0
    return tmp, cfg


# --- configuration ---------------------------------------------------------


def test_defaults_applied(tmp_path):
    (tmp_path / "d.csv").write_text("y,r,x_cat,x_cont,z\n1.0,1,1,,0\n")
    cfg = parse_config(write_cfg(tmp_path, data="d.csv"), "fit")
    m = cfg.model
    assert (m.H, m.n_iter, m.n_burn, m.thin, m.mc_draws) == (20, 50_000, 5_000, 5, 10_000)
    assert cfg.prior == ExtrapolationPriorSpec("pm", 10)
    assert m.merge_map == (1, 2, 3, 3, 3, 3, 3, 3, 3, 4)
    assert cfg.data == tmp_path / "d.csv"


def test_prior_from_config():
    cfg = parse_config({"draws": __file__, "extrapolation": {"kind": "tri1", "P": 20}}, "estimate")
    assert cfg.prior.kind is PriorKind.TRI1 and cfg.prior.P == 20


@pytest.mark.parametrize("raw, match", [
    ({"draws": __file__, "extrapolation": {"kind": "unif", "P": -5}}, "P"),
    ({"draws": __file__, "extrapolation": {"kind": "beta"}}, "allowed"),
    ({"draws": __file__, "colour": 1, "mood": 2}, "colour, mood"),
    ({"draws": __file__, "model": {"iters": 5}}, "iters"),
    ({"draws": __file__, "model": {"merge": "half"}}, "merge"),
    ({}, "needs 'draws'"),
    ({"draws": "/nonexistent/draws.json"}, "not found"),
])
def test_config_errors(raw, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(raw, "estimate")


def test_seed_and_out_overrides():
    cfg = parse_config({"draws": __file__, "seed": 4, "out": "a"}, "estimate", seed=9, out="b")
    assert cfg.seed == 9 and str(cfg.out) == "b"


# --- commands --------------------------------------------------------------


def test_pipeline_outputs(pipeline):
    tmp, cfg = pipeline
    out = tmp / "out"
    truth = json.loads((out / "truth.json").read_text())
    assert truth["theta_true"] == pytest.approx(0.926625, abs=1e-6)
    draws = json.loads((out / "draws.json").read_text())
    assert isinstance(draws, list) and len(draws) == 80
    assert run_cli("estimate", "--config", cfg, "--out", out) == 0
    rep = json.loads((out / "estimate.json").read_text())
    assert np.isfinite(rep["theta_mean"]) and rep["ci_low"] <= rep["theta_mean"] <= rep["ci_high"]
    assert len(rep["gof"]) == 6


def test_none_and_pm_differ_only_by_hidden_pattern(pipeline, tmp_path):
    tmp, cfg = pipeline
    reports = {}
    for kind in ("none", "pm"):
        raw = json.loads(cfg.read_text()) | {"extrapolation": {"kind": kind}}
        raw["draws"] = str(tmp / "out" / "draws.json")
        raw["data"] = str(tmp / "out" / "data.csv")
        c = write_cfg(tmp_path, **raw)
        assert run_cli("estimate", "--config", c, "--out", tmp_path / kind) == 0
        reports[kind] = json.loads((tmp_path / kind / "estimate.json").read_text())
    assert reports["none"]["gof"] == reports["pm"]["gof"]
    assert reports["none"]["theta_mean"] != reports["pm"]["theta_mean"]


def test_gof_command(pipeline, tmp_path):
    tmp, cfg = pipeline
    assert run_cli("gof", "--config", cfg, "--out", tmp_path) == 0
    rows = json.loads((tmp_path / "gof.json").read_text())
    assert [(r["z"], r["r_star"]) for r in rows] == [(0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3)]
    assert all(r["n_observed"] > 0 for r in rows)
    assert (tmp_path / "gof.csv").read_text().startswith("z,r_star,mean,ci_low,ci_high")


def test_commands_are_deterministic(pipeline, tmp_path):
    tmp, cfg = pipeline
    texts = []
    for k in range(2):
        assert run_cli("fit", "--config", cfg, "--out", tmp_path / str(k)) == 0
        texts.append((tmp_path / str(k) / "draws.json").read_text())
    assert texts[0] == texts[1] == (tmp / "out" / "draws.json").read_text()


def test_gof_recovers_generating_cell_means(tmp_path):
    alpha = [[24.0, 22.0, 19.0], [26.0, 23.0, 21.0]]
    raw = {"scenario": {"id": "s1_custom", "n": 800, "custom_coefficients": {"alpha": alpha}},
           "data": "data.csv", "draws": "draws.json",
           "model": {"n_iter": 1500, "n_burn": 300, "thin": 3, "mc_draws": 2000, "H": 10}, "seed": 1}
    cfg = write_cfg(tmp_path, **raw)
    for cmd in ("simulate", "fit", "gof"):
        assert run_cli(cmd, "--config", cfg, "--out", tmp_path) == 0
    for row in json.loads((tmp_path / "gof.json").read_text()):
        target = alpha[row["z"]][row["r_star"] - 1] + 0.4 * 2.0
        sd = (row["ci_high"] - row["ci_low"]) / 3.92
        assert abs(row["mean"] - target) <= 3 * sd


# --- exit codes ------------------------------------------------------------


def test_usage_errors_exit_one_with_json(tmp_path, capsys):
    cfg = write_cfg(tmp_path, draws="missing.json")
    assert run_cli("estimate", "--config", cfg, "--out", tmp_path) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["exit_code"] == 1 and "not found" in err["error"]["message"]
    assert json.loads((tmp_path / "error.json").read_text()) == err
    assert run_cli("explode", "--config", cfg) == 1
    assert run_cli("fit", "--config", tmp_path / "none.json") == 1


def test_numeric_failure_exits_two(tmp_path, capsys):
    # every outcome in one arm is identical, so that arm's scale cannot be set
    rows = ["y,r,x_cat,x_cont,z"] + [f"{1.0 + (i % 7)},1,1,,0" for i in range(20)] + ["5.0,1,1,,1"] * 20
    (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
    cfg = write_cfg(tmp_path, data="d.csv", model={"n_iter": 20, "n_burn": 0, "thin": 1})
    assert run_cli("fit", "--config", cfg, "--out", tmp_path) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["type"] == "DomainError" and err["error"]["exit_code"] == 2


def test_console_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, scenario={"id": "s3", "n": 30})
    res = subprocess.run([sys.executable, "-m", "ramdpm", "simulate", "--config", str(cfg), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "data.csv").read_text().startswith("y,r,x_cat,x_cont,z")


def test_bench_is_thread_invariant(tmp_path, monkeypatch):
    raw = {"scenario": {"id": "s2", "n": 60}, "model": {"n_iter": 40, "n_burn": 10, "thin": 2, "mc_draws": 50, "H": 4},
           "bench": {"n_reps": 2, "priors": [{"kind": "none"}, {"kind": "pm"}]}}
    cfg = write_cfg(tmp_path, **raw)
    texts = []
    for threads in ("1", "2"):
        monkeypatch.setenv("RAM_DPM_THREADS", threads)
        assert run_cli("bench", "--config", cfg, "--out", tmp_path / threads) == 0
        texts.append((tmp_path / threads / "bench.json").read_bytes())
    assert texts[0] == texts[1]
    assert (tmp_path / "1" / "bench.csv").read_text().startswith("prior,bias,mse,coverage,ci_length")
