"""Core value types and portfolio arithmetic.

Weights are fractions of total portfolio value; negative asset weights are
short positions and a negative cash weight is a loan.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-9
PERIODS_PER_YEAR = 250


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Portfolio:
    """Asset weights, cash weight and total value.

    The constructor enforces ``sum(w) + c == 1`` to within ``WEIGHT_SUM_TOL``
    and ``value > 0``.
    """

    w: np.ndarray
    c: float
    value: float = 1.0
    names: Optional[Sequence[str]] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "w", _as_vector(self.w, "w"))
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "value", float(self.value))
        if not np.all(np.isfinite(self.w)) or not np.isfinite(self.c):
            raise ValueError("portfolio weights must be finite")
        gap = abs(self.w.sum() + self.c - 1.0)
        if gap > WEIGHT_SUM_TOL:
            raise ValueError(f"weights plus cash must sum to one (off by {gap:.3e})")
        if not self.value > 0:
            raise ValueError("portfolio value must be positive")
        if self.names is not None and len(self.names) != self.w.size:
            raise ValueError("names must match the number of assets")

    @property
    def n(self) -> int:
        return self.w.size

    @classmethod
    def all_cash(cls, n: int, value: float = 1.0) -> "Portfolio":
        return cls(np.zeros(n), 1.0, value)

    @classmethod
    def from_weights(cls, w, value: float = 1.0) -> "Portfolio":
        """Build a portfolio whose cash weight is ``1 - sum(w)``."""
        w = np.asarray(w, dtype=float)
        return cls(w, 1.0 - w.sum(), value)


@dataclass(frozen=True)
class TradeList:
    """Trade weights ``z = w_post - w_pre``."""

    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", _as_vector(self.z, "z"))

    @classmethod
    def between(cls, pre: Portfolio | np.ndarray, post: Portfolio | np.ndarray) -> "TradeList":
        w_pre = pre.w if isinstance(pre, Portfolio) else np.asarray(pre, dtype=float)
        w_post = post.w if isinstance(post, Portfolio) else np.asarray(post, dtype=float)
        if w_pre.shape != w_post.shape:
            raise ValueError("pre- and post-trade weights differ in dimension")
        return cls(w_post - w_pre)


@dataclass(frozen=True)
class Benchmark:
    """Benchmark weights; a benchmark holds no cash."""

    w_b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_b", _as_vector(self.w_b, "w_b"))
        gap = abs(self.w_b.sum() - 1.0)
        if gap > WEIGHT_SUM_TOL:
            raise ValueError(f"benchmark weights must sum to one (off by {gap:.3e})")


@dataclass(frozen=True)
class MarketSnapshot:
    """Realized market data for one period.

    Attributes
    ----------
    r : realized asset returns.
    r_rf : risk-free rate over the period.
    spread_half : half bid-ask spreads, as a fraction of price.
    v : traded volume, in multiples of portfolio value.
    s : asset volatilities over the period.
    """

    r: np.ndarray
    r_rf: float
    spread_half: np.ndarray
    v: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "r", _as_vector(self.r, "r"))
        object.__setattr__(self, "spread_half", _as_vector(self.spread_half, "spread_half"))
        object.__setattr__(self, "r_rf", float(self.r_rf))
        n = self.r.size
        if self.spread_half.size != n:
            raise ValueError("spread_half must match the number of assets")
        if not (np.all(np.isfinite(self.r)) and np.isfinite(self.r_rf)
                and np.all(np.isfinite(self.spread_half))):
            raise ValueError("market snapshot contains non-finite values")
        if np.any(self.spread_half < 0):
            raise ValueError("spreads must be nonnegative")
        if self.v is not None:
            object.__setattr__(self, "v", _as_vector(self.v, "v"))
            if self.v.size != n or not np.all(self.v > 0):
                raise ValueError("volumes must be positive, one per asset")
        if self.s is not None:
            object.__setattr__(self, "s", _as_vector(self.s, "s"))
            if self.s.size != n or not np.all(self.s >= 0) or not np.all(np.isfinite(self.s)):
                raise ValueError("volatilities must be finite and nonnegative, one per asset")


def _weights(p) -> np.ndarray:
    return p.w if isinstance(p, Portfolio) else np.asarray(p, dtype=float)


def _trades(t) -> np.ndarray:
    return t.z if isinstance(t, TradeList) else np.asarray(t, dtype=float)


def leverage(p: Portfolio | np.ndarray) -> float:
    """Gross leverage ``||w||_1``; cash is excluded."""
    return float(np.abs(_weights(p)).sum())


def turnover(t: TradeList | np.ndarray) -> float:
    """Half the L1 norm of the trade vector."""
    return float(np.abs(_trades(t)).sum() / 2)


def active_weights(p: Portfolio | np.ndarray, b: Benchmark | np.ndarray) -> np.ndarray:
    w = _weights(p)
    w_b = b.w_b if isinstance(b, Benchmark) else np.asarray(b, dtype=float)
    if w.shape != w_b.shape:
        raise ValueError(f"dimension mismatch: {w.shape} vs {w_b.shape}")
    return w - w_b


def post_trade_cash(c_pre: float, z: TradeList | np.ndarray) -> float:
    """Cash weight after trading, before any costs are deducted."""
    return float(c_pre - _trades(z).sum())
