"""Synthetic market data and CSV input/output.

The generator produces a one-factor geometric random walk with a
stochastic market volatility, log-normal bid-ask spreads that widen in
turbulent periods, and a slowly varying risk-free rate. File layouts:

``prices.csv``   ``date,<asset>...`` adjusted closes
``spreads.csv``  ``date,<asset>...`` full relative bid-ask spreads
``rates.csv``    ``date,rate`` per-period risk-free rate
``volumes.csv``  ``date,<asset>...`` traded volume in units of portfolio value (optional)
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .backtest import MarketData
from .data_model import PERIODS_PER_YEAR

DEFAULT_N = 74
DEFAULT_DAYS = 6186
DEFAULT_SEED = 20240101


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class GeneratorConfig:
    market_vol: float = 0.17
    market_drift: float = 0.07
    vol_persistence: float = 0.995
    vol_of_vol: float = 0.03
    beta_mean: float = 1.0
    beta_std: float = 0.25
    idio_vol_range: tuple = (0.10, 0.25)
    spread_bps_range: tuple = (3.0, 20.0)
    spread_noise: float = 0.25
    rate_mean: float = 0.02
    rate_vol: float = 0.004
    volume_range: tuple = (20.0, 200.0)
    start_date: str = "2000-01-04"


@dataclass(frozen=True)
class GeneratedData:
    prices: pd.DataFrame
    spreads: pd.DataFrame
    rates: pd.DataFrame
    volumes: Optional[pd.DataFrame] = None

    def market_data(self) -> MarketData:
        return frames_to_market(self.prices, self.spreads, self.rates, self.volumes)


def generate_market(n: int = DEFAULT_N, days: int = DEFAULT_DAYS, seed: int = DEFAULT_SEED,
                    cfg: GeneratorConfig = GeneratorConfig(), volumes: bool = False) -> GeneratedData:
    """Simulate ``days`` closes for ``n`` assets; deterministic given ``seed``."""
    if n < 1 or days < 2:
        raise ValueError("need n >= 1 and days >= 2")
    rng = np.random.default_rng(seed)
    P = PERIODS_PER_YEAR
    T = days - 1

    # market volatility: log AR(1) around its long-run level
    x = np.empty(T)
    x[0] = 0.0
    eps = rng.standard_normal(T)
    for t in range(1, T):
        x[t] = cfg.vol_persistence * x[t - 1] + cfg.vol_of_vol * eps[t]
    regime = np.exp(x - x.var() / 2)
    m_sig = cfg.market_vol / np.sqrt(P) * regime
    m_ret = cfg.market_drift / P + m_sig * rng.standard_normal(T)

    beta = np.clip(rng.normal(cfg.beta_mean, cfg.beta_std, n), 0.3, 1.8)
    lo, hi = np.log(cfg.idio_vol_range[0]), np.log(cfg.idio_vol_range[1])
    idio = np.exp(rng.uniform(lo, hi, n)) / np.sqrt(P)
    alpha = rng.normal(0.0, 0.03, n) / P
    idio_t = idio[None, :] * np.sqrt(regime)[:, None]
    log_ret = (alpha + m_ret[:, None] * beta[None, :]
               + idio_t * rng.standard_normal((T, n)) - 0.5 * idio_t ** 2)
    log_p = np.vstack([np.zeros(n), np.cumsum(log_ret, axis=0)]) + np.log(rng.uniform(20, 200, n))
    prices = np.exp(log_p)

    lo, hi = np.log(cfg.spread_bps_range[0]), np.log(cfg.spread_bps_range[1])
    base = np.exp(rng.uniform(lo, hi, n)) * 1e-4
    noise = np.empty((days, n))
    noise[0] = rng.standard_normal(n) * cfg.spread_noise
    shocks = rng.standard_normal((days, n)) * cfg.spread_noise * np.sqrt(1 - 0.8 ** 2)
    for t in range(1, days):
        noise[t] = 0.8 * noise[t - 1] + shocks[t]
    reg = np.concatenate([[regime[0]], regime])
    spreads = base[None, :] * reg[:, None] * np.exp(noise - cfg.spread_noise ** 2 / 2)

    lvl = np.empty(days)
    lvl[0] = cfg.rate_mean
    dr = rng.standard_normal(days) * cfg.rate_vol / np.sqrt(P) * 4
    for t in range(1, days):
        lvl[t] = abs(lvl[t - 1] + 0.002 * (cfg.rate_mean - lvl[t - 1]) + dr[t])
    rates = lvl / P

    dates = pd.bdate_range(cfg.start_date, periods=days).strftime("%Y-%m-%d")
    names = [f"A{i:03d}" for i in range(n)]
    vol_df = None
    if volumes:
        lo, hi = np.log(cfg.volume_range[0]), np.log(cfg.volume_range[1])
        vbase = np.exp(rng.uniform(lo, hi, n))
        v = vbase[None, :] * np.exp(rng.normal(-0.125, 0.5, (days, n)))
        vol_df = pd.DataFrame(v, index=pd.Index(dates, name="date"), columns=names)
    idx = pd.Index(dates, name="date")
    return GeneratedData(
        prices=pd.DataFrame(prices, index=idx, columns=names),
        spreads=pd.DataFrame(spreads, index=idx, columns=names),
        rates=pd.DataFrame({"rate": rates}, index=idx),
        volumes=vol_df,
    )


def write_dataset(data: GeneratedData, out_dir) -> dict:
    """Write the CSV files and return ``{file name: sha256}``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = {"prices.csv": data.prices, "spreads.csv": data.spreads, "rates.csv": data.rates}
    if data.volumes is not None:
        frames["volumes.csv"] = data.volumes
    sums = {}
    for name, df in frames.items():
        path = out / name
        df.to_csv(path, float_format="%.10g")
        sums[name] = hashlib.sha256(path.read_bytes()).hexdigest()
    return sums


def _read_frame(path, what: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, index_col=0)
    except FileNotFoundError:
        raise DataError(f"{what}: file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"{what}: cannot parse {path}: {exc}") from None
    if df.index.name != "date":
        raise DataError(f"{what}: first column must be 'date' in {path}")
    bad = df.apply(pd.to_numeric, errors="coerce").isna() & df.notna()
    if df.isna().any().any() or bad.any().any():
        where = np.argwhere((df.isna() | bad).to_numpy())[0]
        raise DataError(f"{what}: missing or non-numeric value at line {where[0] + 2} "
                        f"(date {df.index[where[0]]}), column {df.columns[where[1]]!r} in {path}")
    return df.astype(float)


def read_dataset(data_dir=None, prices=None, spreads=None, rates=None, volumes=None) -> MarketData:
    """Load market data from a directory or explicit file paths."""
    d = Path(data_dir) if data_dir is not None else None
    def pick(explicit, name):
        if explicit is not None:
            return explicit
        if d is None:
            raise DataError(f"no path given for {name}")
        return d / name
    pr = _read_frame(pick(prices, "prices.csv"), "prices")
    sp = _read_frame(pick(spreads, "spreads.csv"), "spreads")
    rt = _read_frame(pick(rates, "rates.csv"), "rates")
    vpath = volumes if volumes is not None else (d / "volumes.csv" if d and (d / "volumes.csv").exists() else None)
    vo = _read_frame(vpath, "volumes") if vpath is not None else None
    return frames_to_market(pr, sp, rt, vo)


def frames_to_market(prices: pd.DataFrame, spreads: pd.DataFrame, rates: pd.DataFrame,
                     volumes: Optional[pd.DataFrame] = None) -> MarketData:
    if list(spreads.columns) != list(prices.columns):
        raise DataError("spreads columns must match prices columns")
    if volumes is not None and list(volumes.columns) != list(prices.columns):
        raise DataError("volumes columns must match prices columns")
    if rates.shape[1] != 1:
        raise DataError("rates must have exactly one data column")
    for name, df in (("spreads", spreads), ("rates", rates), ("volumes", volumes)):
        if df is not None and not df.index.equals(prices.index):
            raise DataError(f"{name} dates do not match prices dates")
    if len(prices) < 3:
        raise DataError("need at least three price rows")
    try:
        return MarketData.from_prices(
            prices.to_numpy(), spreads.to_numpy(), rates.to_numpy().ravel(),
            None if volumes is None else volumes.to_numpy(),
            dates=list(prices.index), names=list(prices.columns))
    except ValueError as exc:
        raise DataError(str(exc)) from None


def shipped_dataset(cache_dir=None) -> MarketData:
    """The reference synthetic dataset (default size and seed), cached on disk when possible."""
    cache = Path(cache_dir or os.environ.get("MPP_DATA_CACHE", Path.home() / ".cache" / "markowitz_pp"))
    tag = cache / f"synthetic_{DEFAULT_N}_{DEFAULT_DAYS}_{DEFAULT_SEED}"
    if (tag / "prices.csv").exists():
        try:
            return read_dataset(tag)
        except DataError:
            pass
    gen = generate_market()
    try:
        write_dataset(gen, tag)
        return read_dataset(tag)
    except OSError:
        # always go through the CSV text so results do not depend on the cache
        with tempfile.TemporaryDirectory() as tmp:
            write_dataset(gen, tmp)
            return read_dataset(tmp)
