import csv
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from markowitz_pp.backtest import ForecastSeries, MarketData, Metrics
from markowitz_pp.problem import markowitz_pp_parameters
from markowitz_pp.tuning import (TuningConfig, annual_retune, backtest_evaluator, cyclic_tune,
                                 grid_search, improvement_check, refine_grid, run_schedule,
                                 scalarized, write_trace_csv)


def _m(sharpe, turnover=10.0, leverage=1.5, vol=0.1):
    return Metrics(0.1, vol, sharpe, turnover, leverage, 0.05)


CFG = TuningConfig()


# ------------------------------------------------------------ acceptance rule

@pytest.mark.parametrize("cand, inc, expected", [
    (_m(1.2), _m(1.0), True),
    (_m(1.0), _m(1.0), False),
    (_m(0.9), _m(1.0), False),
    (_m(2.0, turnover=60.0), _m(1.0), False),
    (_m(2.0, leverage=2.5), _m(1.0), False),
    (_m(2.0, vol=0.2), _m(1.0), False),
    (_m(-3.0), None, True),
    (_m(-3.0, leverage=3.0), None, False),
])
def test_improvement_check_examples(cand, inc, expected):
    assert improvement_check(cand, inc, CFG) is expected


def test_scalarized():
    assert scalarized(_m(1.3), CFG) == 1.3
    assert scalarized(_m(1.3, turnover=1e3), CFG) == -math.inf
    assert scalarized(None, CFG) == -math.inf


def test_config_validation():
    with pytest.raises(ValueError):
        TuningConfig(up=0.9)
    with pytest.raises(ValueError):
        TuningConfig(max_vol=0.0)
    with pytest.raises(ValueError):
        TuningConfig(params=())


# ------------------------------------------------------- synthetic landscapes

class Landscape:
    """Sharpe peaked at a multiplicative target; counts evaluations."""

    def __init__(self, target):
        self.target = target
        self.calls = 0

    def __call__(self, p):
        self.calls += 1
        d = sum(math.log(getattr(p, k) / v) ** 2 for k, v in self.target.items())
        return _m(2.0 - d)


def test_cyclic_tune_reaches_fixed_point():
    p0 = markowitz_pp_parameters()
    target = {"gamma_trade": p0.gamma_trade * 1.25 ** 3, "gamma_risk": p0.gamma_risk * 0.8 ** 2}
    f = Landscape(target)
    cfg = TuningConfig(params=("gamma_trade", "gamma_risk"))
    res = cyclic_tune(p0, f, cfg)
    assert res.params.gamma_trade == pytest.approx(target["gamma_trade"], rel=1e-12)
    assert res.params.gamma_risk == pytest.approx(target["gamma_risk"], rel=1e-12)
    assert res.metrics.sharpe == pytest.approx(2.0, abs=1e-20)
    # one record per back-test, and the last sweep rejects every move
    assert len(res.trials) == f.calls
    last = [t for t in res.trials if t.sweep == res.sweeps]
    assert len(last) == 4 and not any(t.accepted for t in last)
    accepted = [t for t in res.trials[1:] if t.accepted]
    assert len(accepted) == 5


def test_cyclic_tune_initial_optimum_stops_after_one_sweep():
    p0 = markowitz_pp_parameters()
    f = Landscape({k: getattr(p0, k) for k in CFG.params})
    res = cyclic_tune(p0, f, CFG)
    assert res.sweeps == 1 and res.params == p0
    assert len(res.trials) == 1 + 2 * len(CFG.params)


def test_cyclic_tune_monotone_landscape_hits_sweep_cap():
    p0 = markowitz_pp_parameters()
    cfg = TuningConfig(params=("gamma_trade",), max_sweeps=7)
    res = cyclic_tune(p0, lambda p: _m(math.log(p.gamma_trade)), cfg)
    assert res.sweeps == 7
    assert res.params.gamma_trade == pytest.approx(p0.gamma_trade * 1.25 ** 7, rel=1e-12)
    assert all(t.direction == "up" for t in res.trials[1:])


def test_cyclic_tune_threshold_blocks_moves():
    # Sharpe rises with gamma_trade but turnover then breaks its limit
    p0 = markowitz_pp_parameters()
    cfg = TuningConfig(params=("gamma_trade",))
    res = cyclic_tune(p0, lambda p: _m(p.gamma_trade, turnover=10 * p.gamma_trade), cfg)
    assert res.params.gamma_trade * 10 <= cfg.max_turnover
    assert res.params.gamma_trade * 1.25 * 10 > cfg.max_turnover


def test_cyclic_tune_survives_failed_trials():
    p0 = markowitz_pp_parameters()

    def ev(p):
        if p.gamma_trade > p0.gamma_trade:
            raise RuntimeError("boom")
        return _m(-p.gamma_trade)

    res = cyclic_tune(p0, ev, TuningConfig(params=("gamma_trade",), max_sweeps=2))
    assert "RuntimeError" in res.trials[1].error and not res.trials[1].accepted
    assert res.params.gamma_trade == pytest.approx(p0.gamma_trade * 0.8 ** 2)


def test_cyclic_tune_rejects_unknown_param():
    with pytest.raises(AttributeError):
        cyclic_tune(markowitz_pp_parameters(), Landscape({}), TuningConfig(params=("nope",)))


# -------------------------------------------------------------------- grid

def test_grid_single_point():
    f = Landscape({"gamma_trade": 1.0})
    trials = grid_search(markowitz_pp_parameters(), {"gamma_trade": [2.0]}, f)
    assert len(trials) == 1 and trials[0].accepted and f.calls == 1


@pytest.mark.parametrize("threads", [False, True])
def test_grid_two_by_two(threads):
    f = Landscape({"gamma_trade": 2.0, "gamma_risk": 0.5})
    grid = {"gamma_trade": [1.0, 2.0], "gamma_risk": [0.5, 1.0]}
    if threads:
        with ThreadPoolExecutor(2) as ex:
            trials = grid_search(markowitz_pp_parameters(), grid, f, executor=ex)
    else:
        trials = grid_search(markowitz_pp_parameters(), grid, f)
    assert f.calls == 4 and len(trials) == 4
    assert trials[0].values == {"gamma_trade": 2.0, "gamma_risk": 0.5}
    assert [t.accepted for t in trials] == [True, False, False, False]
    assert sorted(t.trial_id for t in trials) == [0, 1, 2, 3]


def test_grid_rejects_empty():
    with pytest.raises(ValueError):
        grid_search(markowitz_pp_parameters(), {"gamma_trade": []}, Landscape({}))


def test_refine_grid_contains_center():
    g = refine_grid({"gamma_trade": 2.0}, (0.5, 2.0))
    assert g == {"gamma_trade": [1.0, 2.0, 4.0]}


def test_trace_csv(tmp_path):
    p0 = markowitz_pp_parameters()
    res = cyclic_tune(p0, Landscape({"gamma_trade": p0.gamma_trade * 1.25}),
                      TuningConfig(params=("gamma_trade",)))
    write_trace_csv(res.trials, tmp_path / "t.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert len(rows) == len(res.trials)
    assert rows[0]["direction"] == "initial"
    assert float(rows[-1]["gamma_trade"]) == res.trials[-1].values["gamma_trade"]


# -------------------------------------------------------- annual schedule

def _series(T, n=3, seed=0):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((T, n)) * 0.01 + 3e-4
    return ForecastSeries(MarketData(R, np.full(T, 1e-4), np.full((T, n), 4e-4)))


def test_annual_retune_window_arithmetic():
    # 3 years of data with a 2-year window leaves one retune point
    fs = _series(3 * 250 + 10)
    cfg = TuningConfig(params=("gamma_trade",), max_sweeps=1, window_days=500)
    sched = annual_retune(fs, markowitz_pp_parameters(), cfg, start=501, end=751)
    assert [(e.start, e.end) for e in sched] == [(501, 751)]
    assert sched[0].result.trials[0].metrics.n_days == 500
    recs = run_schedule(fs, sched)
    assert recs[0].t == 501 and recs[-1].t == 750
    with pytest.raises(ValueError):
        annual_retune(fs, markowitz_pp_parameters(), cfg, start=400, end=751)


def test_backtest_evaluator_is_deterministic():
    fs = _series(200)
    ev = backtest_evaluator(fs, 100, 150)
    a, b = ev(markowitz_pp_parameters()), ev(markowitz_pp_parameters())
    assert a == b
