"""Command-line entry points: ``mpp gen-data | backtest | tune | solve | bench``.

Exit codes: 0 success, 3 configuration error, 4 data error, 5 solver
failure (click reserves 2 for usage errors).
"""

from __future__ import annotations

import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import click
import numpy as np

from .backtest import (ForecastSeries, MarketData, compute_metrics, run_backtest,
                       write_metrics_json, write_records_csv, write_weights_csv)
from .config import ConfigError, RunConfig, load_config
from .data_model import Portfolio
from .datasets import DataError, generate_market, read_dataset, write_dataset
from .experiments import Windows, run_priority_init, taming_policies
from .problem import ParameterSet, optimize
from .scaling_bench import TABLE_SIZES, run_scaling, write_fit_json, write_table_csv
from .tuning import (TuningConfig, annual_retune, backtest_evaluator, cyclic_tune,
                     grid_search, run_schedule, write_trace_csv)

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_SOLVER = 5

log = logging.getLogger("markowitz_pp")


class SolverFailure(RuntimeError):
    pass


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map library errors to exit codes."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(EXIT_CONFIG, str(exc))
        except DataError as exc:
            _fail(EXIT_DATA, str(exc))
        except SolverFailure as exc:
            _fail(EXIT_SOLVER, str(exc))
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Markowitz++ portfolio construction, back-tests and tuning."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


# ------------------------------------------------------------------ helpers

def _load(cfg: RunConfig) -> MarketData:
    p = cfg.data_paths()
    return read_dataset(p["dir"], p["prices"], p["spreads"], p["rates"], p["volumes"])


def _series(cfg: RunConfig) -> ForecastSeries:
    return ForecastSeries(_load(cfg), cfg.forecast)


def _windows(cfg: RunConfig, series: ForecastSeries) -> Windows:
    end = series.last_day if cfg.end is None else int(cfg.end)
    if not (cfg.warmup >= 1 and cfg.init >= 0
            and cfg.warmup + cfg.init + 2 <= end <= series.last_day):
        raise ConfigError(f"windows: warm-up {cfg.warmup} plus init {cfg.init} does not fit "
                          f"in {series.last_day} usable days (end {end})")
    return Windows(cfg.warmup, cfg.warmup + cfg.init, end)


def _priority_spec(cfg: RunConfig) -> dict:
    pri = cfg.priorities
    return {"risk": ("quantile", float(pri.get("risk", 0.70))),
            "turnover": ("quantile", float(pri.get("turnover", 0.70))),
            "leverage": ("fraction_of_max", float(pri.get("leverage_fraction", 0.25)))}


def _policy(cfg: RunConfig, series: ForecastSeries, win: Windows):
    """Resolve the configured policy to ``(engine policy, params, priorities)``."""
    if cfg.policy == "markowitz_pp":
        params, pri = cfg.params, None
        if cfg.priorities.get("initialize", True) and cfg.init > 0:
            params, pri, _ = run_priority_init(series, params, win.init_start, win.oos_start,
                                               _priority_spec(cfg))
        return "markowitz_pp", params, pri
    sig_annual = cfg.params.sigma_tar * math.sqrt(cfg.forecast.periods_per_year)
    policy, params = taming_policies(sig_annual, cfg.forecast.periods_per_year)[cfg.policy]
    return policy, params, None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output: cannot create {out}: {exc}") from None
    return out


def _params_json(p: ParameterSet, path, extra: Optional[dict] = None):
    doc = {"params": p.to_dict()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, default=_jsonable))


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    return str(x)


def write_plots(records, out: Path) -> List[Path]:
    """Value, drawdown and leverage/turnover time series as SVG files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.array([r.t for r in records])
    V = np.array([r.V_end for r in records])
    dd = 1.0 - V / np.maximum.accumulate(np.concatenate([[records[0].V_start], V]))[1:]
    paths = []
    for name, series, label in (("value", V, "portfolio value"),
                                ("drawdown", dd, "drawdown")):
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(t, series, lw=0.8)
        ax.set_xlabel("day")
        ax.set_ylabel(label)
        if name == "value":
            ax.set_yscale("log")
        fig.tight_layout()
        paths.append(out / f"{name}.svg")
        fig.savefig(paths[-1], format="svg")
        plt.close(fig)
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    a1.plot(t, [r.leverage for r in records], lw=0.8)
    a1.set_ylabel("leverage")
    a2.plot(t, [r.turnover for r in records], lw=0.8)
    a2.set_ylabel("turnover")
    a2.set_xlabel("day")
    fig.tight_layout()
    paths.append(out / "leverage_turnover.svg")
    fig.savefig(paths[-1], format="svg")
    plt.close(fig)
    return paths


# ----------------------------------------------------------------- commands

@main.command("gen-data")
@click.option("--n", "n", type=int, default=74, show_default=True, help="Number of assets.")
@click.option("--days", type=int, default=6186, show_default=True)
@click.option("--seed", type=int, default=20240101, show_default=True)
@click.option("--volumes", is_flag=True, help="Also write volumes.csv.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@_guarded
def gen_data(n, days, seed, volumes, out_dir):
    """Write a synthetic prices/spreads/rates dataset."""
    if n < 1 or days < 2:
        raise ConfigError("gen-data: need n >= 1 and days >= 2")
    data = generate_market(n, days, seed, volumes=volumes)
    try:
        sums = write_dataset(data, out_dir)
    except OSError as exc:
        raise ConfigError(f"output: cannot write to {out_dir}: {exc}") from None
    for name, digest in sums.items():
        click.echo(f"{digest}  {name}")


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Overrides the config's output directory.")
@click.option("--no-plots", is_flag=True)
@_guarded
def backtest(config, out_dir, no_plots):
    """Back-test the configured policy on the out-of-sample window."""
    cfg = load_config(config)
    series = _series(cfg)
    win = _windows(cfg, series)
    policy, params, pri = _policy(cfg, series, win)
    records = run_backtest(series, params, policy, win.oos_start, win.end)
    failed = sum(not r.status.value == "Optimal" for r in records)
    metrics = compute_metrics(records)
    out = _out_dir(out_dir or cfg.output)
    write_records_csv(records, out / "records.csv")
    write_weights_csv(records, out / "weights.csv", series.data.names)
    write_metrics_json(metrics, out / "metrics.json")
    _params_json(params, out / "params.json", {"policy": cfg.policy, "priorities": pri,
                                               "non_optimal_days": failed})
    if not no_plots:
        write_plots(records, out)
    click.echo(json.dumps(metrics.to_dict()))
    if failed:
        click.echo(f"warning: {failed} of {len(records)} solves were not optimal "
                   "(previous weights held)", err=True)


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--mode", type=click.Choice(["single", "annual", "grid"]), default=None,
              help="Overrides tuning.mode.")
@click.option("--workers", type=int, default=None,
              help="Worker processes for grid trials (default: tuning.workers or 1).")
@_guarded
def tune(config, out_dir, mode, workers):
    """Cyclic parameter tuning on trailing back-test windows."""
    cfg = load_config(config)
    tun = cfg.tuning
    mode = mode or tun.get("mode", "single")
    P = cfg.forecast.periods_per_year
    tcfg = TuningConfig(
        params=tuple(tun.get("params", TuningConfig.params)),
        up=float(tun.get("up", 1.25)), down=float(tun.get("down", 0.80)),
        max_turnover=float(tun.get("max_turnover", 50.0)),
        max_leverage=float(tun.get("max_leverage", 2.0)),
        max_vol=float(tun.get("max_vol", 0.15)),
        window_days=int(round(float(tun.get("window_years", 2)) * P)),
        max_sweeps=int(tun.get("max_sweeps", 20)))
    series = _series(cfg)
    win = _windows(cfg, series)
    start = win.oos_start
    if start - tcfg.window_days < 1:
        raise ConfigError(f"tuning: need {tcfg.window_days} days of history before day {start}")
    out = _out_dir(out_dir or cfg.output)
    params0 = cfg.params
    if mode == "single":
        ev = backtest_evaluator(series, start - tcfg.window_days, start)
        res = cyclic_tune(params0, ev, tcfg)
        write_trace_csv(res.trials, out / "trace.csv")
        _params_json(res.params, out / "tuned_params.json",
                     {"window": [start - tcfg.window_days, start], "sweeps": res.sweeps,
                      "in_sample": res.metrics.to_dict() if res.metrics else None,
                      "initial": res.trials[0].metrics.to_dict() if res.trials[0].metrics else None})
        click.echo(json.dumps({"trials": len(res.trials), "sweeps": res.sweeps,
                               "sharpe": res.metrics.sharpe if res.metrics else None}))
    elif mode == "annual":
        schedule = annual_retune(series, params0, tcfg, start, win.end, history_start=1, year=P)
        trials = [t for e in schedule for t in e.result.trials]
        write_trace_csv(trials, out / "trace.csv")
        sched = [{"start": e.start, "end": e.end, "params": e.params.to_dict()} for e in schedule]
        (out / "schedule.json").write_text(json.dumps(sched, indent=2, default=_jsonable))
        records = run_schedule(series, schedule)
        m = compute_metrics(records)
        write_metrics_json(m, out / "metrics.json")
        click.echo(json.dumps(m.to_dict()))
    else:
        grid = tun.get("grid")
        if not isinstance(grid, dict) or not grid:
            raise ConfigError("tuning.grid: mode 'grid' needs {param: [values]}")
        ev = backtest_evaluator(series, start - tcfg.window_days, start)
        nw = int(workers or tun.get("workers", 1))
        if nw > 1:
            with ProcessPoolExecutor(max_workers=nw) as ex:
                ranked = grid_search(params0, grid, ev, tcfg, executor=ex)
        else:
            ranked = grid_search(params0, grid, ev, tcfg)
        write_trace_csv(ranked, out / "trace.csv")
        best = ranked[0]
        if best.accepted:
            _params_json(params0.replace(**best.values), out / "tuned_params.json")
        click.echo(json.dumps({"trials": len(ranked), "best": best.values,
                               "accepted": best.accepted}))


def read_holdings(path, n: int) -> Portfolio:
    """Parse ``{"weights": [...], "cash": x, "value": V}``."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"holdings file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"holdings: cannot parse {path} (line {exc.lineno}, column "
                        f"{exc.colno}): {exc.msg}") from None
    if not isinstance(doc, dict) or "weights" not in doc or "cash" not in doc:
        raise DataError("holdings: expected keys 'weights' and 'cash'")
    w = doc["weights"]
    if not isinstance(w, list) or len(w) != n:
        raise DataError(f"holdings.weights: expected a list of {n} numbers")
    try:
        return Portfolio(np.asarray(w, dtype=float), float(doc["cash"]),
                         float(doc.get("value", 1.0)))
    except (TypeError, ValueError) as exc:
        raise DataError(f"holdings: {exc}") from None


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--holdings", type=click.Path(dir_okay=False), required=True)
@click.option("--day", type=int, default=None, help="Forecast day (default: last available).")
@click.option("--hard", is_flag=True, help="Solve with every constraint hard.")
@click.option("--out", "out_file", type=click.Path(dir_okay=False), default=None,
              help="Write the decision JSON here instead of stdout.")
@_guarded
def solve(config, holdings, day, hard, out_file):
    """Solve one trading problem for the given holdings."""
    cfg = load_config(config)
    series = _series(cfg)
    t = series.last_day - 1 if day is None else day
    if not 1 <= t < series.last_day:
        raise ConfigError(f"--day must lie in [1, {series.last_day})")
    _, fc, _ = next(series.iterate(t, t + 1))
    w_pre = read_holdings(holdings, fc.n)
    params = cfg.params.replace(soft=frozenset()) if hard else cfg.params
    d = optimize(w_pre, fc, params)
    doc = d.to_dict()
    doc.update(day=t, date=None if series.data.dates is None else str(series.data.dates[t]),
               terms_sum=float(sum(d.terms.values())) if d.terms else None)
    text = json.dumps(doc, indent=2, default=_jsonable)
    if out_file:
        Path(out_file).write_text(text)
    else:
        click.echo(text)
    if not d.optimal:
        raise SolverFailure(f"solver returned {d.status.value}")


def _parse_sizes(spec: Optional[str]) -> Sequence:
    if not spec:
        return TABLE_SIZES
    try:
        return [tuple(int(x) for x in s.lower().split("x")) for s in spec.split(",")]
    except ValueError:
        raise ConfigError(f"--sizes: expected NxK[,NxK...], got {spec!r}") from None


@main.command()
@click.option("--sizes", default=None, help="Comma-separated NxK list (default: the full table).")
@click.option("--reps", type=int, default=1, show_default=True)
@click.option("--dense-max-n", type=int, default=0, show_default=True,
              help="Also time the dense form for n up to this size.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@_guarded
def bench(sizes, reps, dense_max_n, seed, out_dir):
    """Time factor-form solves and fit t = a n^b k^c."""
    sz = _parse_sizes(sizes)
    if any(len(s) != 2 or not 1 <= s[1] < s[0] for s in sz):
        raise ConfigError("--sizes: need 1 <= k < n for every NxK")
    if reps < 1:
        raise ConfigError("--reps must be at least 1")
    rep = run_scaling(sz, reps, dense_max_n, seed)
    out = _out_dir(out_dir)
    write_table_csv(rep, out / "table.csv")
    write_fit_json(rep, out / "fit.json")
    for n, k, tm, c in rep.table():
        click.echo(f"n={n:6d} k={k:4d}  {tm:9.4f} s  ({c} reps)")
    if rep.fit:
        click.echo("fit: a={:.3g} b={:.3f} c={:.3f}".format(*rep.fit))
    if rep.excluded:
        raise SolverFailure(f"{len(rep.excluded)} solves were not optimal")


if __name__ == "__main__":  # pragma: no cover
    main()
