import csv
import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from markowitz_pp.cli import EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    res = CliRunner().invoke(main, ["gen-data", "--n", "5", "--days", "420", "--seed", "3",
                                    "--out", str(root / "data")])
    assert res.exit_code == 0, res.output
    return root


def _config(root, name="c.yaml", **over):
    doc = {"data": {"dir": "data"}, "windows": {"warmup": 100, "init": 150, "end": None},
           "forecast": {"seed": 1}, "tuning": {"params": ["gamma_trade"], "max_sweeps": 2,
                                               "window_years": 0.4},
           "output": "out"}
    doc.update(over)
    path = root / name
    path.write_text(yaml.safe_dump(doc))
    return path


def _run(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


def test_gen_data_prints_checksums(workspace):
    res = _run("gen-data", "--n", "5", "--days", "420", "--seed", "3",
               "--out", workspace / "again")
    assert res.exit_code == 0
    sums = dict(line.split()[::-1] for line in res.output.strip().splitlines())
    first = (workspace / "data" / "prices.csv").read_bytes()
    import hashlib
    assert sums["prices.csv"] == hashlib.sha256(first).hexdigest()


def test_backtest_writes_outputs(workspace):
    cfg = _config(workspace)
    out = workspace / "bt"
    res = _run("backtest", cfg, "--out", out)
    assert res.exit_code == 0, res.output
    for f in ("records.csv", "weights.csv", "metrics.json", "params.json",
              "value.svg", "drawdown.svg", "leverage_turnover.svg"):
        assert (out / f).exists(), f
    m = json.loads((out / "metrics.json").read_text())
    assert m == json.loads(res.output)
    rows = list(csv.DictReader(open(out / "records.csv")))
    assert int(rows[0]["t"]) == 250 and len(rows) == m.get("n_days", len(rows))
    params = json.loads((out / "params.json").read_text())
    assert params["policy"] == "markowitz_pp" and set(params["priorities"]) == {
        "risk", "turnover", "leverage"}
    # deterministic given config and seed
    res2 = _run("backtest", cfg, "--out", workspace / "bt2", "--no-plots")
    assert json.loads(res2.output) == m
    assert not (workspace / "bt2" / "value.svg").exists()


def test_equal_weight_backtest(workspace):
    cfg = _config(workspace, "ew.yaml", policy="equal_weight")
    res = _run("backtest", cfg, "--out", workspace / "ew", "--no-plots")
    assert res.exit_code == 0
    assert json.loads(res.output)["max_leverage"] == pytest.approx(1.0, abs=1e-12)


def test_tune_single_trace(workspace):
    cfg = _config(workspace)
    out = workspace / "tune"
    res = _run("tune", cfg, "--out", out)
    assert res.exit_code == 0, res.output
    summary = json.loads(res.output)
    rows = list(csv.DictReader(open(out / "trace.csv")))
    assert len(rows) == summary["trials"]
    tuned = json.loads((out / "tuned_params.json").read_text())
    assert tuned["window"] == [150, 250]


def test_tune_grid(workspace):
    cfg = _config(workspace, "g.yaml", tuning={"mode": "grid", "window_years": 0.4,
                                               "grid": {"gamma_trade": [0.5, 1.0]}})
    res = _run("tune", cfg, "--out", workspace / "grid")
    assert res.exit_code == 0, res.output
    assert json.loads(res.output)["trials"] == 2


def _holdings(path, n=5, w=None, cash=None):
    w = [0.0] * n if w is None else w
    cash = 1.0 - sum(w) if cash is None else cash
    path.write_text(json.dumps({"weights": w, "cash": cash, "value": 1.0}))
    return path


def test_solve_decision(workspace):
    cfg = _config(workspace)
    h = _holdings(workspace / "h.json")
    res = _run("solve", cfg, "--holdings", h)
    assert res.exit_code == 0, res.output
    d = json.loads(res.output)
    assert d["status"] == "Optimal"
    assert abs(d["terms_sum"] - d["objective"]) <= 1e-9
    w = np.array(d["weights"])
    assert abs(w.sum() + d["cash"] - 1) <= 1e-9


def test_solve_optimal_holdings_are_a_fixed_point(workspace):
    # soft limits with no trading friction beyond costs: re-solving from the
    # optimum should not trade
    cfg = _config(workspace, "fp.yaml", params={"T_tar": None, "z_min": None, "z_max": None})
    first = json.loads(_run("solve", cfg, "--holdings", _holdings(workspace / "h0.json")).output)
    h = _holdings(workspace / "h1.json", w=first["weights"], cash=first["cash"])
    again = json.loads(_run("solve", cfg, "--holdings", h).output)
    assert np.abs(np.array(again["trades"])).sum() <= 1e-6


def test_solve_hard_infeasible_exit_code(workspace):
    # fully invested with a near-zero risk target: only the risk limit binds
    cfg = _config(workspace, "hard.yaml", params={"sigma_tar": 1e-6, "c_min": 0.0, "c_max": 0.0,
                                                  "w_max": 0.5, "z_min": None, "z_max": None})
    h = _holdings(workspace / "h2.json")
    soft = _run("solve", cfg, "--holdings", h)
    assert soft.exit_code == 0
    hard = _run("solve", cfg, "--holdings", h, "--hard")
    assert hard.exit_code == EXIT_SOLVER
    assert json.loads(hard.stdout[:hard.stdout.rindex("}") + 1])["status"] == "Infeasible"


@pytest.mark.parametrize("edit, code", [
    ({"params": {"gama_risk": 1.0}}, EXIT_CONFIG),
    ({"windows": {"warmup": 400, "init": 100}}, EXIT_CONFIG),
    ({"data": {"dir": "nowhere"}}, EXIT_DATA),
])
def test_error_exit_codes(workspace, edit, code):
    cfg = _config(workspace, "bad.yaml", **edit)
    res = CliRunner().invoke(main, ["backtest", str(cfg), "--no-plots"])
    assert res.exit_code == code
    assert "error:" in res.output


def test_yaml_and_holdings_errors(workspace):
    bad = workspace / "broken.yaml"
    bad.write_text("data: [\n")
    res = CliRunner().invoke(main, ["backtest", str(bad)])
    assert res.exit_code == EXIT_CONFIG and "line" in res.output
    cfg = _config(workspace)
    h = workspace / "hbad.json"
    h.write_text(json.dumps({"weights": [0.1, 0.2], "cash": 0.7}))
    res = CliRunner().invoke(main, ["solve", str(cfg), "--holdings", str(h)])
    assert res.exit_code == EXIT_DATA


def test_bench(workspace):
    out = workspace / "bench"
    res = _run("bench", "--sizes", "50x5,100x5,50x10,100x10", "--out", out)
    assert res.exit_code == 0, res.output
    assert (out / "table.csv").exists()
    fit = json.loads((out / "fit.json").read_text())
    assert np.isfinite(fit["b"])
    res = CliRunner().invoke(main, ["bench", "--sizes", "50by5", "--out", str(out)])
    assert res.exit_code == EXIT_CONFIG
