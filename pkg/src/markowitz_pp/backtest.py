"""Daily back-test simulation, performance metrics and priority initialization.

The optimizer only sees forecasts; accounting uses realized returns, spreads
and rates. Time index ``t`` refers to a decision made at the close of day
``t`` that earns the return ``returns[t]`` over the following period.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .data_model import PERIODS_PER_YEAR, MarketSnapshot, Portfolio
from .forecasts import (DenseRiskModel, ForecastBundle, iter_ewma_second_moment, pca_factor_model,
                        synthetic_mean_forecast, trailing_mean)
from .problem import ParameterSet, TradeDecision, basic_parameters, no_trade, optimize
from .solver import Status

log = logging.getLogger(__name__)


def _fmt(x) -> str:
    """Round-trippable text for a float, independent of numpy scalar reprs."""
    return repr(float(x))


POLICIES = ("equal_weight", "basic", "markowitz_pp")
SHORT_SPREAD_ANNUAL = 0.05
KAPPA_SHORT_ANNUAL = 0.075
PRIORITY_NAMES = ("risk", "leverage", "turnover")


@dataclass(frozen=True)
class MarketData:
    """Aligned daily market series.

    Attributes
    ----------
    returns : (T, n) simple returns; row ``t`` is earned from the close of day ``t``.
    r_rf : (T,) per-period risk-free rate for the same periods.
    spreads : (T, n) full relative bid-ask spreads observed at the close of day ``t``.
    volumes : optional (T, n) traded volume in units of portfolio value.
    dates : optional labels for day ``t``.
    names : optional asset names.
    """

    returns: np.ndarray
    r_rf: np.ndarray
    spreads: np.ndarray
    volumes: Optional[np.ndarray] = None
    dates: Optional[Sequence[str]] = None
    names: Optional[Sequence[str]] = None

    def __post_init__(self):
        R = np.asarray(self.returns, dtype=float)
        rf = np.asarray(self.r_rf, dtype=float).ravel()
        S = np.asarray(self.spreads, dtype=float)
        if R.ndim != 2 or S.shape != R.shape or rf.shape != (R.shape[0],):
            raise ValueError("returns, spreads and rates must be aligned")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(S)) and np.all(np.isfinite(rf))):
            raise ValueError("market data contains non-finite values")
        if np.any(S < 0):
            raise ValueError("spreads must be nonnegative")
        if np.any(R <= -1):
            raise ValueError("returns must exceed -100%")
        object.__setattr__(self, "returns", R)
        object.__setattr__(self, "r_rf", rf)
        object.__setattr__(self, "spreads", S)
        if self.volumes is not None:
            V = np.asarray(self.volumes, dtype=float)
            if V.shape != R.shape or not np.all(V > 0):
                raise ValueError("volumes must be positive and aligned with returns")
            object.__setattr__(self, "volumes", V)

    @property
    def T(self) -> int:
        return self.returns.shape[0]

    @property
    def n(self) -> int:
        return self.returns.shape[1]

    @classmethod
    def from_prices(cls, prices, spreads, rates, volumes=None, dates=None, names=None) -> "MarketData":
        """Build from ``T+1`` closing prices and day-aligned spreads and rates.

        The last row of spreads, rates and volumes (the final close) is dropped.
        """
        P = np.asarray(prices, dtype=float)
        if np.any(P <= 0) or not np.all(np.isfinite(P)):
            raise ValueError("prices must be positive and finite")
        R = P[1:] / P[:-1] - 1.0
        T = R.shape[0]
        vol = None if volumes is None else np.asarray(volumes, dtype=float)[:T]
        d = None if dates is None else list(dates)[:T]
        return cls(R, np.asarray(rates, dtype=float).ravel()[:T],
                   np.asarray(spreads, dtype=float)[:T], vol, d, names)


@dataclass(frozen=True)
class ForecastSettings:
    half_life: float = 125.0
    ic: float = 0.15
    horizon: int = 5
    seed: int = 0
    spread_window: int = 5
    volume_window: int = 5
    kappa_short_annual: float = KAPPA_SHORT_ANNUAL
    short_spread_annual: float = SHORT_SPREAD_ANNUAL
    impact_a: float = 0.0
    factor_k: Optional[int] = None
    periods_per_year: int = PERIODS_PER_YEAR

    def __post_init__(self):
        if self.factor_k is not None and int(self.factor_k) < 1:
            raise ValueError("forecast.factor_k: must be a positive integer")


class ForecastSeries:
    """Per-day forecasts and realized snapshots for a ``MarketData`` series.

    Mean forecasts are drawn once; covariances are rebuilt lazily by running
    the EWMA recurrence, so iterating is cheap in memory and reproducible.
    The covariance used on day ``t`` is estimated from returns before ``t``.
    """

    def __init__(self, data: MarketData, settings: ForecastSettings = ForecastSettings(),
                 mu: Optional[np.ndarray] = None):
        self.data = data
        self.settings = settings
        s = settings
        self.mu = (synthetic_mean_forecast(data.returns, s.ic, s.horizon, s.seed)
                   if mu is None else np.asarray(mu, dtype=float))
        self.half_spread = data.spreads / 2
        self.spread_forecast = trailing_mean(self.half_spread, s.spread_window)
        self.volume_forecast = (None if data.volumes is None
                                else trailing_mean(data.volumes, s.volume_window))

    @property
    def last_day(self) -> int:
        """One past the last day with a complete mean forecast."""
        return min(self.mu.shape[0], self.data.T)

    def iterate(self, start: int, end: int) -> Iterator[Tuple[int, ForecastBundle, MarketSnapshot]]:
        """Yield ``(t, forecast, realized)`` for ``start <= t < end``."""
        if not 1 <= start <= end <= self.last_day:
            raise ValueError(f"day range [{start}, {end}) outside [1, {self.last_day}]")
        if start == end:
            return
        prev = None
        # moment k uses returns through day k: it forecasts day k + 1 and
        # serves as the realized volatility estimate for day k
        for k, sigma in enumerate(iter_ewma_second_moment(self.data.returns[:end],
                                                          self.settings.half_life)):
            if prev is not None and k >= start:
                yield k, self.forecast(k, prev), self.realized(k, sigma)
            prev = sigma

    def forecast(self, t: int, sigma: np.ndarray) -> ForecastBundle:
        s = self.settings
        d = self.data
        if s.factor_k is None:
            risk = DenseRiskModel.from_covariance(sigma)
        else:
            risk = pca_factor_model(sigma, int(s.factor_k))
        impact = 0.0
        v_fc = None
        if self.volume_forecast is not None:
            v_fc = self.volume_forecast[t]
            if s.impact_a > 0:
                impact = s.impact_a * np.sqrt(np.diag(sigma)) / np.sqrt(v_fc)
        return ForecastBundle(
            mu=self.mu[t], risk=risk,
            kappa_short=s.kappa_short_annual / s.periods_per_year,
            kappa_borrow=max(d.r_rf[t], 0.0),
            kappa_spread=self.spread_forecast[t], kappa_impact=impact,
            r_rf=d.r_rf[t], v_forecast=v_fc)

    def realized(self, t: int, sigma: Optional[np.ndarray] = None) -> MarketSnapshot:
        d = self.data
        v = None if d.volumes is None else d.volumes[t]
        vol = None if sigma is None else np.sqrt(np.diag(sigma))
        return MarketSnapshot(d.returns[t], d.r_rf[t], self.half_spread[t], v, vol)


# --------------------------------------------------------------- simulation

@dataclass
class BacktestRecord:
    t: int
    w_pre: np.ndarray
    c_pre: float
    w_post: np.ndarray
    c_post: float
    z: np.ndarray
    R: float
    hold_cost: float
    trade_cost: float
    R_net: float
    r_rf: float
    V_start: float
    V_end: float
    status: Status = Status.OPTIMAL
    duals: Dict[str, float] = field(default_factory=dict)
    violations: Dict[str, float] = field(default_factory=dict)
    date: Optional[str] = None
    w_next: Optional[np.ndarray] = None
    c_next: Optional[float] = None

    def end_state(self) -> Portfolio:
        """Drifted portfolio at the end of the period (next day's pre-trade holdings)."""
        return Portfolio(self.w_next, self.c_next, self.V_end)

    @property
    def turnover(self) -> float:
        return float(np.abs(self.z).sum() / 2)

    @property
    def leverage(self) -> float:
        return float(np.abs(self.w_post).sum())


def realized_costs(w, c: float, z, realized: MarketSnapshot, impact_a: float = 0.0,
                   short_spread: float = SHORT_SPREAD_ANNUAL / PERIODS_PER_YEAR) -> Tuple[float, float]:
    """Realized ``(holding, trading)`` costs for one period.

    Shorts pay the risk-free rate plus ``short_spread``; borrowed cash pays
    interest through the ``r_rf * c`` term of the gross return, so it adds
    nothing here. Trades pay the realized half spread plus, when volumes and
    volatilities are known and ``impact_a > 0``, the 3/2-power impact.
    """
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    short_rate = max(realized.r_rf + short_spread, 0.0)
    hold = short_rate * float(np.maximum(-w, 0.0).sum())
    a = np.abs(z)
    trade = float(realized.spread_half @ a)
    if impact_a > 0 and realized.v is not None and realized.s is not None:
        kappa = impact_a * realized.s / np.sqrt(realized.v)
        trade += float(kappa @ a ** 1.5)
    return hold, trade


def simulate_step(state: Portfolio, decision: TradeDecision, realized: MarketSnapshot,
                  t: int = 0, impact_a: float = 0.0,
                  short_spread: float = SHORT_SPREAD_ANNUAL / PERIODS_PER_YEAR,
                  ) -> Tuple[Portfolio, BacktestRecord]:
    """Apply a decision, realize one period and drift the weights.

    Trades execute at the close (cash pays ``sum(z)``), the period earns
    ``R = r^T w + r_rf c``, costs come out of cash, and the next pre-trade
    weights are ``w (1 + r) / (1 + R_net)``.
    """
    if decision.z.shape != state.w.shape or realized.r.shape != state.w.shape:
        raise ValueError("decision, state and market snapshot dimensions differ")
    z = np.asarray(decision.z, dtype=float)
    w = state.w + z
    c = state.c - float(z.sum())
    R = float(realized.r @ w + realized.r_rf * c)
    hold, trade = realized_costs(w, c, z, realized, impact_a, short_spread)
    R_net = R - hold - trade
    if not R_net > -1:
        raise ValueError(f"portfolio wiped out on day {t} (net return {R_net:.3f})")
    growth = 1.0 + R_net
    V_end = state.value * growth
    w_next = w * (1.0 + realized.r) / growth
    c_next = (c * (1.0 + realized.r_rf) - hold - trade) / growth
    # absorb rounding so that the budget identity holds exactly
    c_next += 1.0 - (w_next.sum() + c_next)
    nxt = Portfolio(w_next, c_next, V_end, state.names)
    duals = {k: float(np.ravel(v)[0]) for k, v in decision.duals.items() if np.size(v) == 1}
    rec = BacktestRecord(t, state.w, state.c, w, c, z, R, hold, trade, R_net, realized.r_rf,
                         state.value, V_end, decision.status, duals, dict(decision.violations),
                         w_next=nxt.w, c_next=nxt.c)
    return nxt, rec


def _decide(policy: str, state: Portfolio, fc: ForecastBundle, params: ParameterSet) -> TradeDecision:
    if policy == "equal_weight":
        n = state.n
        w = np.full(n, 1.0 / n)
        return TradeDecision(w, 0.0, w - state.w, Status.OPTIMAL)
    if policy == "basic":
        return optimize(state, fc, basic_parameters(params.sigma_tar))
    if policy == "markowitz_pp":
        return optimize(state, fc, params)
    raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")


def run_backtest(forecasts: ForecastSeries, params: ParameterSet, policy: str,
                 start: int, end: int, initial: Optional[Portfolio] = None,
                 on_day: Optional[Callable[[BacktestRecord], None]] = None) -> List[BacktestRecord]:
    """Trade every day in ``[start, end)`` and return the daily records.

    Parameters
    ----------
    forecasts : forecast series over the market data.
    params : trading-problem parameters; ``basic`` uses only ``sigma_tar``.
    policy : one of ``equal_weight``, ``basic`` or ``markowitz_pp``.
    initial : starting portfolio, all cash with value 1 by default.

    A non-optimal solve leaves the portfolio untouched for that day.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    data = forecasts.data
    state = Portfolio.all_cash(data.n) if initial is None else initial
    s = forecasts.settings
    short_spread = s.short_spread_annual / s.periods_per_year
    records: List[BacktestRecord] = []
    for t, fc, realized in forecasts.iterate(start, end):
        decision = _decide(policy, state, fc, params)
        if not decision.optimal:
            log.info("day %d: %s, holding previous weights", t, decision.status.value)
            decision = no_trade(state, decision.status)
        state, rec = simulate_step(state, decision, realized, t, s.impact_a, short_spread)
        if data.dates is not None:
            rec.date = str(data.dates[t])
        records.append(rec)
        if on_day is not None:
            on_day(rec)
    return records


# ------------------------------------------------------------------ metrics

@dataclass(frozen=True)
class Metrics:
    ann_return: float
    ann_vol: float
    sharpe: float
    ann_turnover: float
    max_leverage: float
    max_drawdown: float
    n_days: int = 0
    start: Optional[int] = None
    end: Optional[int] = None

    KEYS = ("ann_return", "ann_vol", "sharpe", "ann_turnover", "max_leverage", "max_drawdown")

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.KEYS}


def max_drawdown(values) -> float:
    V = np.asarray(values, dtype=float)
    peak = np.maximum.accumulate(V)
    return float(np.max(1.0 - V / peak))


def compute_metrics(records: Sequence[BacktestRecord], periods_per_year: int = PERIODS_PER_YEAR,
                    excess: bool = True) -> Metrics:
    """Annualized performance summary of a back-test.

    The Sharpe ratio uses returns in excess of the risk-free rate unless
    ``excess`` is false. Drawdown is measured on the value path including
    the starting value.
    """
    if len(records) < 2:
        raise ValueError("need at least two records to estimate volatility")
    P = periods_per_year
    rn = np.array([r.R_net for r in records])
    rf = np.array([r.r_rf for r in records])
    vol = float(rn.std(ddof=1))
    if not vol > 0:
        raise ValueError("zero realized volatility: Sharpe ratio undefined")
    ex = rn - rf if excess else rn
    V = np.concatenate([[records[0].V_start], [r.V_end for r in records]])
    return Metrics(
        ann_return=float(rn.mean() * P),
        ann_vol=vol * math.sqrt(P),
        sharpe=float(ex.mean() * P / (vol * math.sqrt(P))),
        ann_turnover=float(np.mean([r.turnover for r in records]) * P),
        max_leverage=float(max(r.leverage for r in records)),
        max_drawdown=max_drawdown(V),
        n_days=len(records), start=records[0].t, end=records[-1].t + 1,
    )


# ---------------------------------------------------- priority initialization

def collect_duals(records: Sequence[BacktestRecord], names: Sequence[str] = PRIORITY_NAMES
                  ) -> Dict[str, np.ndarray]:
    """Per-constraint duals over the days the solve was optimal."""
    out = {}
    for name in names:
        out[name] = np.array([r.duals[name] for r in records
                              if r.status is Status.OPTIMAL and name in r.duals])
    return out


DEFAULT_PRIORITY_SPEC = {
    "risk": ("quantile", 0.70),
    "turnover": ("quantile", 0.70),
    "leverage": ("fraction_of_max", 0.25),
}


def initialize_priorities(dual_records: Mapping[str, Sequence[float]],
                          spec: Mapping[str, Tuple[str, float]] = DEFAULT_PRIORITY_SPEC
                          ) -> Dict[str, float]:
    """Priorities from the duals of the hard-constrained problem.

    ``spec[name]`` is ``("quantile", q)`` or ``("fraction_of_max", phi)``.
    Negative duals (solver noise) are clipped to zero first.
    """
    out = {}
    for name, (kind, val) in spec.items():
        d = np.asarray(dual_records.get(name, []), dtype=float)
        if d.size == 0:
            raise ValueError(f"no duals recorded for {name!r}")
        d = np.maximum(d, 0.0)
        if kind == "quantile":
            out[name] = float(np.quantile(d, val))
        elif kind == "fraction_of_max":
            out[name] = float(val * d.max())
        else:
            raise ValueError(f"unknown priority rule {kind!r}")
    return out


def priorities_to_params(params: ParameterSet, priorities: Mapping[str, float],
                         floor: float = 1e-12) -> ParameterSet:
    """Copy priorities into a parameter set; zero values are floored to stay positive."""
    from .problem import PRIORITY_FIELD
    return params.replace(**{PRIORITY_FIELD[k]: max(v, floor) for k, v in priorities.items()})


def violation_fraction(records: Sequence[BacktestRecord], name: str, tol: float = 1e-9) -> float:
    vals = [r.violations.get(name, 0.0) for r in records]
    return float(np.mean(np.asarray(vals) > tol))


# --------------------------------------------------------------------- output

RECORD_COLUMNS = ("t", "date", "status", "V_start", "V_end", "R", "hold_cost", "trade_cost",
                  "R_net", "r_rf", "c_pre", "c_post", "turnover", "leverage",
                  "dual_risk", "dual_leverage", "dual_turnover",
                  "viol_risk", "viol_leverage", "viol_turnover")


def write_records_csv(records: Sequence[BacktestRecord], path) -> None:
    """One row per day in ``RECORD_COLUMNS`` order; weights are not included."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(RECORD_COLUMNS)
        for r in records:
            wr.writerow([r.t, r.date or "", r.status.value, _fmt(r.V_start), _fmt(r.V_end),
                         _fmt(r.R), _fmt(r.hold_cost), _fmt(r.trade_cost), _fmt(r.R_net),
                         _fmt(r.r_rf), _fmt(r.c_pre), _fmt(r.c_post), _fmt(r.turnover),
                         _fmt(r.leverage)]
                        + [_fmt(r.duals.get(k, float("nan"))) for k in PRIORITY_NAMES]
                        + [_fmt(r.violations.get(k, 0.0)) for k in PRIORITY_NAMES])


def write_weights_csv(records: Sequence[BacktestRecord], path, names=None) -> None:
    n = records[0].w_post.size if records else 0
    names = names or [f"asset_{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", *names, "cash"])
        for r in records:
            wr.writerow([r.t, *map(_fmt, r.w_post.tolist()), _fmt(r.c_post)])


def write_metrics_json(metrics: Metrics, path, extra: Optional[dict] = None) -> None:
    out = metrics.to_dict()
    if extra:
        out.update(extra)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2)
