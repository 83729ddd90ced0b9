"""Run configuration documents.

A YAML document with the sections below. Parameters are given in
annualized user units and converted to per-period values here (250
periods per year, square root of 250 for volatilities)::

    data:      {dir: path} or {prices: ..., spreads: ..., rates: ..., volumes: ...}
    forecast:  {half_life: 125, ic: 0.15, horizon: 5, seed: 0, kappa_short: 0.075,
                short_spread: 0.05, impact_a: 0.0, factor_k: null}
    windows:   {warmup: 500, init: 1250, end: null}
    policy:    markowitz_pp | basic | equal_weight | weight_limited | leverage_limited
               | turnover_limited | robust
    params:    {sigma_tar: 0.10, T_tar: 25, soft: [risk, leverage, turnover], ...}
    priorities: {initialize: true, risk: 0.7, turnover: 0.7, leverage_fraction: 0.25}
    tuning:    {mode: single | annual | grid, window_years: 2, max_sweeps: 20,
                params: [...], grid: {name: [values]}, workers: 1}
    output:    directory
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .backtest import ForecastSettings
from .data_model import PERIODS_PER_YEAR
from .problem import ParameterSet, markowitz_pp_parameters

POLICY_CHOICES = ("equal_weight", "basic", "markowitz_pp", "weight_limited",
                  "leverage_limited", "turnover_limited", "robust")

# sigma_tar is an annual volatility (divided by sqrt 250); T_tar and rho are
# annual rates (divided by 250); everything else passes through unchanged
PARAM_KEYS = (
    "sigma_tar", "T_tar", "rho", "gamma_hold", "gamma_trade",
    "w_min", "w_max", "c_min", "c_max", "z_min", "z_max", "L_tar",
    "rho_quantile", "varrho", "soft", "gamma_risk", "gamma_lev", "gamma_turn",
    "gamma_weights", "gamma_cash", "gamma_trades", "gamma_liq", "gamma_conc",
    "participation", "neutral_factors", "concentration", "ell_max", "benchmark",
)
SECTIONS = {"data", "forecast", "windows", "policy", "params", "priorities", "tuning", "output"}
FORECAST_KEYS = {"half_life", "ic", "horizon", "seed", "kappa_short", "short_spread",
                 "impact_a", "spread_window", "volume_window", "factor_k"}
WINDOW_KEYS = {"warmup", "init", "end"}
PRIORITY_KEYS = {"initialize", "risk", "turnover", "leverage_fraction"}
TUNING_KEYS = {"mode", "window_years", "max_sweeps", "params", "up", "down",
               "max_turnover", "max_leverage", "max_vol", "grid", "workers"}
DATA_KEYS = {"dir", "prices", "spreads", "rates", "volumes"}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    data: Dict[str, Any]
    forecast: ForecastSettings
    params: ParameterSet
    policy: str = "markowitz_pp"
    warmup: int = 500
    init: int = 1250
    end: Optional[int] = None
    priorities: Dict[str, Any] = field(default_factory=dict)
    tuning: Dict[str, Any] = field(default_factory=dict)
    output: Path = Path("out")
    base_dir: Path = Path(".")

    def data_paths(self) -> Dict[str, Optional[Path]]:
        def resolve(p):
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() else self.base_dir / p
        return {k: resolve(self.data.get(k)) for k in DATA_KEYS}


def _check_keys(section: str, got: dict, allowed: set):
    if not isinstance(got, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(got).__name__}")
    extra = set(got) - allowed
    if extra:
        raise ConfigError(f"{section}: unknown field(s) {sorted(extra)}")


def _num(path: str, v, positive=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{path}: must be positive, got {v!r}")
    return v


def _bound(path, v, default):
    if v is None:
        return default
    if isinstance(v, list):
        return [_num(f"{path}[{i}]", x) for i, x in enumerate(v)]
    return _num(path, v)


def convert_params(user: dict, base: Optional[ParameterSet] = None,
                   periods_per_year: int = PERIODS_PER_YEAR) -> ParameterSet:
    """Build a per-period ``ParameterSet`` from annualized user values."""
    _check_keys("params", user, set(PARAM_KEYS))
    p = base or markowitz_pp_parameters(periods_per_year)
    out: Dict[str, Any] = {}
    for key, v in user.items():
        path = f"params.{key}"
        if key == "soft":
            if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
                raise ConfigError(f"{path}: expected a list of constraint names")
            out[key] = frozenset(v)
        elif key in ("w_min", "z_min", "c_min"):
            out[key] = _bound(path, v, -math.inf)
        elif key in ("w_max", "z_max", "c_max", "L_tar", "ell_max"):
            out[key] = _bound(path, v, math.inf)
        elif key == "sigma_tar":
            out[key] = math.inf if v is None else _num(path, v) / math.sqrt(periods_per_year)
        elif key == "T_tar":
            out[key] = math.inf if v is None else _num(path, v) / periods_per_year
        elif key == "rho":
            if isinstance(v, list):
                out[key] = [_num(path, x) / periods_per_year for x in v]
            else:
                out[key] = _num(path, v) / periods_per_year
            out["rho_quantile"] = user.get("rho_quantile")
        elif key == "neutral_factors":
            if not isinstance(v, list) or not all(isinstance(x, int) for x in v):
                raise ConfigError(f"{path}: expected a list of factor indices")
            out[key] = tuple(v)
        elif key == "concentration":
            if v is None:
                out[key] = None
            elif not isinstance(v, dict) or set(v) != {"k", "cap"}:
                raise ConfigError(f"{path}: expected {{k: int, cap: number}}")
            else:
                out[key] = (int(v["k"]), _num(f"{path}.cap", v["cap"]))
        elif key == "benchmark":
            out[key] = None if v is None else [_num(f"{path}[{i}]", x) for i, x in enumerate(v)]
        elif key == "rho_quantile":
            out[key] = _num(path, v, allow_none=True)
        else:
            out[key] = _num(path, v, allow_none=(key == "participation"))
    try:
        import numpy as np
        for k in ("w_min", "w_max", "z_min", "z_max", "rho", "benchmark"):
            if isinstance(out.get(k), list):
                out[k] = np.asarray(out[k], dtype=float)
        return p.replace(**out)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"params: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"cannot parse {path}{where}: {getattr(exc, 'problem', exc)}") from None
    return parse_config(doc or {}, base_dir=path.parent)


def parse_config(doc: dict, base_dir=Path(".")) -> RunConfig:
    _check_keys("config", doc, SECTIONS)
    data = doc.get("data", {})
    _check_keys("data", data, DATA_KEYS)
    if "dir" not in data and not {"prices", "spreads", "rates"} <= set(data):
        raise ConfigError("data: give either 'dir' or all of 'prices', 'spreads', 'rates'")

    fc = doc.get("forecast", {}) or {}
    _check_keys("forecast", fc, FORECAST_KEYS)
    try:
        settings = ForecastSettings(
            half_life=_num("forecast.half_life", fc.get("half_life", 125.0), positive=True),
            ic=_num("forecast.ic", fc.get("ic", 0.15), positive=True),
            horizon=int(_num("forecast.horizon", fc.get("horizon", 5), positive=True)),
            seed=int(_num("forecast.seed", fc.get("seed", 0))),
            spread_window=int(_num("forecast.spread_window", fc.get("spread_window", 5), positive=True)),
            volume_window=int(_num("forecast.volume_window", fc.get("volume_window", 5), positive=True)),
            kappa_short_annual=_num("forecast.kappa_short", fc.get("kappa_short", 0.075)),
            short_spread_annual=_num("forecast.short_spread", fc.get("short_spread", 0.05)),
            impact_a=_num("forecast.impact_a", fc.get("impact_a", 0.0)),
            factor_k=_num("forecast.factor_k", fc.get("factor_k"), allow_none=True),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if settings.ic > 1:
        raise ConfigError("forecast.ic: must lie in (0, 1]")

    win = doc.get("windows", {}) or {}
    _check_keys("windows", win, WINDOW_KEYS)
    policy = doc.get("policy", "markowitz_pp")
    if policy not in POLICY_CHOICES:
        raise ConfigError(f"policy: expected one of {list(POLICY_CHOICES)}, got {policy!r}")
    params = convert_params(doc.get("params", {}) or {})
    pri = doc.get("priorities", {}) or {}
    _check_keys("priorities", pri, PRIORITY_KEYS)
    tun = doc.get("tuning", {}) or {}
    _check_keys("tuning", tun, TUNING_KEYS)
    if tun.get("mode", "single") not in ("single", "annual", "grid"):
        raise ConfigError("tuning.mode: expected 'single', 'annual' or 'grid'")
    bad = [k for k in tun.get("params", []) if k not in PARAM_KEYS]
    if bad:
        raise ConfigError(f"tuning.params: unknown parameter(s) {bad}")
    for k, vals in (tun.get("grid") or {}).items():
        if k not in PARAM_KEYS or not isinstance(vals, list) or not vals:
            raise ConfigError(f"tuning.grid.{k}: expected a known parameter and a list of values")
        for i, v in enumerate(vals):
            _num(f"tuning.grid.{k}[{i}]", v)
    return RunConfig(
        data=data, forecast=settings, params=params, policy=policy,
        warmup=int(_num("windows.warmup", win.get("warmup", 500), positive=True)),
        init=int(_num("windows.init", win.get("init", 1250))),
        end=_num("windows.end", win.get("end"), allow_none=True),
        priorities=pri, tuning=tun,
        output=Path(doc.get("output", "out")), base_dir=Path(base_dir),
    )
