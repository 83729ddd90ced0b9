"""Back-test driven parameter tuning.

``cyclic_tune`` walks the tunable parameters one at a time, trying a 25%
increase and then a 20% decrease, and keeps a change only when the
in-sample Sharpe ratio strictly improves while turnover, leverage and
volatility stay within their thresholds. ``grid_search`` evaluates a
Cartesian grid and ranks it by the same scalarization.

Evaluators are plain callables ``ParameterSet -> Metrics`` so the search
logic can be exercised on synthetic landscapes.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .backtest import ForecastSeries, Metrics, compute_metrics, run_backtest
from .data_model import PERIODS_PER_YEAR, Portfolio
from .problem import ParameterSet

log = logging.getLogger(__name__)


def _fmt(x) -> str:
    """Round-trippable text for a float, independent of numpy scalar reprs."""
    return repr(float(x))


Evaluator = Callable[[ParameterSet], Metrics]
DEFAULT_TUNABLES = ("gamma_hold", "gamma_trade", "gamma_risk", "gamma_lev", "gamma_turn")


@dataclass(frozen=True)
class TuningConfig:
    params: Tuple[str, ...] = DEFAULT_TUNABLES
    up: float = 1.25
    down: float = 0.80
    max_turnover: float = 50.0
    max_leverage: float = 2.0
    max_vol: float = 0.15
    window_days: int = 2 * PERIODS_PER_YEAR
    max_sweeps: int = 20

    def __post_init__(self):
        if not self.up > 1 > self.down > 0:
            raise ValueError("need up > 1 > down > 0")
        if min(self.max_turnover, self.max_leverage, self.max_vol) <= 0:
            raise ValueError("thresholds must be positive")
        if self.max_sweeps < 1 or self.window_days < 2:
            raise ValueError("max_sweeps and window_days must be positive")
        if not self.params:
            raise ValueError("nothing to tune")


@dataclass
class Trial:
    trial_id: int
    sweep: int
    param: str
    direction: str
    values: Dict[str, float]
    metrics: Optional[Metrics]
    accepted: bool
    error: str = ""


@dataclass
class TuneResult:
    params: ParameterSet
    metrics: Optional[Metrics]
    trials: List[Trial] = field(default_factory=list)
    sweeps: int = 0


def within_thresholds(m: Metrics, cfg: TuningConfig) -> bool:
    return (m.ann_turnover <= cfg.max_turnover and m.max_leverage <= cfg.max_leverage
            and m.ann_vol <= cfg.max_vol)


def scalarized(m: Optional[Metrics], cfg: TuningConfig) -> float:
    """Sharpe ratio when every threshold holds, otherwise minus infinity."""
    if m is None or not within_thresholds(m, cfg) or not math.isfinite(m.sharpe):
        return -math.inf
    return m.sharpe


def improvement_check(candidate: Metrics, incumbent: Optional[Metrics], cfg: TuningConfig) -> bool:
    """Strictly higher Sharpe with turnover, leverage and volatility within thresholds."""
    if candidate is None or not within_thresholds(candidate, cfg):
        return False
    if incumbent is None:
        return math.isfinite(candidate.sharpe)
    return candidate.sharpe > incumbent.sharpe


def _values(p: ParameterSet, names: Sequence[str]) -> Dict[str, float]:
    return {k: float(getattr(p, k)) for k in names}


def _safe_eval(evaluate: Evaluator, p: ParameterSet):
    try:
        return evaluate(p), ""
    except Exception as exc:  # a failed trial is rejected, not fatal
        log.warning("trial failed: %s", exc)
        return None, f"{type(exc).__name__}: {exc}"


def cyclic_tune(params0: ParameterSet, evaluate: Evaluator,
                cfg: TuningConfig = TuningConfig()) -> TuneResult:
    """Coordinate search with multiplicative steps.

    Parameters are visited in ``cfg.params`` order; the up-step is tried
    first. The search stops after a full sweep without an accepted change
    or after ``cfg.max_sweeps`` sweeps. Every back-test run, including the
    initial one, appears in the returned trace.
    """
    names = list(cfg.params)
    for k in names:
        if not hasattr(params0, k):
            raise AttributeError(f"ParameterSet has no field {k!r}")
    trials: List[Trial] = []
    incumbent = params0
    inc_metrics, err = _safe_eval(evaluate, incumbent)
    trials.append(Trial(0, 0, "", "initial", _values(incumbent, names), inc_metrics, True, err))
    sweeps = 0
    for sweep in range(1, cfg.max_sweeps + 1):
        sweeps = sweep
        changed = False
        for name in names:
            base = float(getattr(incumbent, name))
            for direction, factor in (("up", cfg.up), ("down", cfg.down)):
                cand = incumbent.replace(**{name: base * factor})
                m, err = _safe_eval(evaluate, cand)
                ok = m is not None and improvement_check(m, inc_metrics, cfg)
                trials.append(Trial(len(trials), sweep, name, direction,
                                    _values(cand, names), m, ok, err))
                if ok:
                    # deterministic back-tests: the candidate's metrics are the new incumbent's
                    incumbent, inc_metrics = cand, m
                    changed = True
                    log.info("sweep %d: %s %s -> %.4g (Sharpe %.3f)", sweep, name,
                             direction, base * factor, m.sharpe)
                    break
        if not changed:
            break
    return TuneResult(incumbent, inc_metrics, trials, sweeps)


@dataclass
class BacktestEvaluator:
    """Evaluator running the policy over ``[start, end)`` from ``initial`` (all cash).

    A plain picklable object so trials can run in worker processes.
    """

    series: ForecastSeries
    start: int
    end: int
    policy: str = "markowitz_pp"
    initial: Optional[Portfolio] = None

    def __call__(self, p: ParameterSet) -> Metrics:
        return compute_metrics(run_backtest(self.series, p, self.policy, self.start,
                                            self.end, self.initial))


def backtest_evaluator(series: ForecastSeries, start: int, end: int,
                       policy: str = "markowitz_pp",
                       initial: Optional[Portfolio] = None) -> Evaluator:
    return BacktestEvaluator(series, start, end, policy, initial)


@dataclass
class ScheduleEntry:
    start: int
    end: int
    params: ParameterSet
    result: Optional[TuneResult] = None


def annual_retune(series: ForecastSeries, params0: ParameterSet, cfg: TuningConfig,
                  start: int, end: int, history_start: int = 1,
                  year: int = PERIODS_PER_YEAR) -> List[ScheduleEntry]:
    """Retune at every year boundary in ``[start, end)`` on the trailing window.

    Each year is traded with parameters tuned on the ``cfg.window_days``
    before it, starting from the previous year's tuned values. ``start``
    must leave a full window of history after ``history_start``.
    """
    if start - history_start < cfg.window_days:
        raise ValueError(f"need {cfg.window_days} days of history before day {start}, "
                         f"have {start - history_start}")
    schedule: List[ScheduleEntry] = []
    current = params0
    for b in range(start, end, year):
        ev = backtest_evaluator(series, b - cfg.window_days, b)
        res = cyclic_tune(current, ev, cfg)
        current = res.params
        schedule.append(ScheduleEntry(b, min(b + year, end), current, res))
    return schedule


def run_schedule(series: ForecastSeries, schedule: Sequence[ScheduleEntry],
                 policy: str = "markowitz_pp") -> list:
    """Back-test a parameter schedule, carrying the portfolio across years."""
    records: list = []
    state = None
    for entry in schedule:
        recs = run_backtest(series, entry.params, policy, entry.start, entry.end, state)
        if recs:
            state = recs[-1].end_state()
        records.extend(recs)
    return records


def grid_search(params0: ParameterSet, grid: Mapping[str, Sequence[float]], evaluate: Evaluator,
                cfg: TuningConfig = TuningConfig(), executor=None) -> List[Trial]:
    """Evaluate every grid point and return trials ranked best first.

    ``executor`` (any ``concurrent.futures`` executor) runs trials
    concurrently; results are ranked identically either way.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must be nonempty in every dimension")
    names = list(grid)
    points = [dict(zip(names, combo)) for combo in itertools.product(*(grid[k] for k in names))]
    cands = [params0.replace(**pt) for pt in points]
    if executor is None:
        outcomes = [_safe_eval(evaluate, c) for c in cands]
    else:
        outcomes = list(executor.map(_safe_eval, itertools.repeat(evaluate), cands))
    trials = [Trial(i, 0, "grid", "grid", {k: float(v) for k, v in pt.items()}, m, False, err)
              for i, (pt, (m, err)) in enumerate(zip(points, outcomes))]
    ranked = sorted(trials, key=lambda t: (-scalarized(t.metrics, cfg), t.trial_id))
    if ranked and scalarized(ranked[0].metrics, cfg) > -math.inf:
        ranked[0].accepted = True
    return ranked


def refine_grid(center: Mapping[str, float], ratios: Sequence[float] = (0.8, 1.0, 1.25)
                ) -> Dict[str, List[float]]:
    """Multiplicative grid around a previous winner; always contains the winner."""
    if 1.0 not in ratios:
        ratios = tuple(ratios) + (1.0,)
    return {k: sorted(v * r for r in ratios) for k, v in center.items()}


TRACE_METRICS = Metrics.KEYS


def write_trace_csv(trials: Sequence[Trial], path) -> None:
    """One row per back-test: id, sweep, parameter, direction, values, metrics, accepted, error."""
    names = sorted({k for t in trials for k in t.values})
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["trial_id", "sweep", "param", "direction", *names, *TRACE_METRICS,
                     "accepted", "error"])
        for t in trials:
            mvals = ([_fmt(getattr(t.metrics, k)) for k in TRACE_METRICS] if t.metrics
                     else [""] * len(TRACE_METRICS))
            wr.writerow([t.trial_id, t.sweep, t.param, t.direction,
                         *[_fmt(t.values.get(k, float("nan"))) for k in names],
                         *mvals, int(t.accepted), t.error])
