"""Markowitz++ portfolio construction, backtesting and parameter tuning."""

from .data_model import Portfolio, TradeList, Benchmark, MarketSnapshot, PERIODS_PER_YEAR
from .forecasts import DenseRiskModel, FactorRiskModel, ForecastBundle
from .problem import ParameterSet, TradeDecision, assemble, optimize
from .solver import Status, solve

__version__ = "0.1.0"
