"""Reference experiments: the taming study, Markowitz++ and priority initialization.

Day windows follow the usual split: a warm-up used only for estimation, an
initialization window for the priority parameters, then the out-of-sample
period.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .backtest import (DEFAULT_PRIORITY_SPEC, BacktestRecord, ForecastSeries, Metrics,
                       collect_duals, compute_metrics, initialize_priorities,
                       priorities_to_params, run_backtest)
from .data_model import PERIODS_PER_YEAR
from .problem import ParameterSet, basic_parameters, markowitz_pp_parameters

log = logging.getLogger(__name__)

WARMUP_DAYS = 500
INIT_DAYS = 1250
TAMING_ORDER = ("equal_weight", "basic", "weight_limited", "leverage_limited",
                "turnover_limited", "robust", "markowitz_pp")


@dataclass(frozen=True)
class Windows:
    init_start: int
    oos_start: int
    end: int


def split_windows(series: ForecastSeries, warmup: int = WARMUP_DAYS,
                  init: int = INIT_DAYS) -> Windows:
    end = series.last_day
    if warmup < 1 or warmup + init + 2 > end:
        raise ValueError(f"series of {end} usable days too short for warm-up {warmup} "
                         f"and initialization window {init}")
    return Windows(warmup, warmup + init, end)


def taming_policies(sigma_tar_annual: float = 0.10,
                    periods_per_year: int = PERIODS_PER_YEAR) -> Dict[str, Tuple[str, ParameterSet]]:
    """Basic Markowitz and its single-regularizer variants (all hard, no cost terms)."""
    sig = sigma_tar_annual / math.sqrt(periods_per_year)
    base = basic_parameters(sig)
    return {
        "equal_weight": ("equal_weight", base),
        "basic": ("basic", base),
        "weight_limited": ("markowitz_pp", base.replace(w_min=-0.05, w_max=0.10,
                                                        c_min=-0.05, c_max=1.0)),
        "leverage_limited": ("markowitz_pp", base.replace(L_tar=1.6)),
        "turnover_limited": ("markowitz_pp", base.replace(T_tar=25.0 / periods_per_year)),
        "robust": ("markowitz_pp", base.replace(rho_quantile=0.20, varrho=0.02)),
    }


def hard_version(params: ParameterSet) -> ParameterSet:
    return params.replace(soft=frozenset())


def run_priority_init(series: ForecastSeries, params: ParameterSet, start: int, end: int,
                      spec=DEFAULT_PRIORITY_SPEC) -> Tuple[ParameterSet, Dict[str, float], List[BacktestRecord]]:
    """Back-test the hard problem over ``[start, end)`` and set priorities from its duals."""
    recs = run_backtest(series, hard_version(params), "markowitz_pp", start, end)
    pri = initialize_priorities(collect_duals(recs, list(spec)), spec)
    log.info("initialized priorities %s", pri)
    return priorities_to_params(params, pri), pri, recs


def run_taming(series: ForecastSeries, windows: Optional[Windows] = None,
               mpp_params: Optional[ParameterSet] = None, init_priorities: bool = True,
               names=TAMING_ORDER) -> Dict[str, Tuple[List[BacktestRecord], Metrics]]:
    """Run every policy of the taming study on the out-of-sample window."""
    w = windows or split_windows(series)
    presets = taming_policies()
    params = mpp_params or markowitz_pp_parameters()
    if "markowitz_pp" in names:
        if init_priorities:
            params, _, _ = run_priority_init(series, params, w.init_start, w.oos_start)
        presets["markowitz_pp"] = ("markowitz_pp", params)
    out = {}
    for name in names:
        policy, p = presets[name]
        recs = run_backtest(series, p, policy, w.oos_start, w.end)
        out[name] = (recs, compute_metrics(recs))
        log.info("%s: %s", name, out[name][1].to_dict())
    return out
