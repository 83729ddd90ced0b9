"""Convex heuristics for nonconvex trading constraints.

``min_holding_relax_round_solve`` enforces a minimum nonzero position size
with two convex solves: solve the ordinary problem, fix each asset to zero,
long or short based on a threshold, then re-solve with those sign
constraints. ``round_shares`` turns trade weights into whole lots.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data_model import Portfolio
from .forecasts import ForecastBundle
from .problem import ParameterSet, TradeDecision, _bounds, _finish, optimize
from .solver import Status

COMPLIANCE_TOL = 1e-9


@dataclass(frozen=True)
class RoundingPolicy:
    """Lot size for share rounding and the relax-round-solve threshold.

    ``threshold`` defaults to half the minimum holding when left as ``None``.
    """

    lot: int = 1
    threshold: Optional[float] = None

    def __post_init__(self):
        if int(self.lot) != self.lot or self.lot < 1:
            raise ValueError("lot size must be a positive integer")
        if self.threshold is not None and not self.threshold > 0:
            raise ValueError("threshold must be positive")

    def resolve_threshold(self, w_min_abs: float) -> float:
        th = w_min_abs / 2 if self.threshold is None else self.threshold
        if not 0 < th < w_min_abs:
            raise ValueError("threshold must lie strictly between 0 and the minimum holding")
        return th


def round_shares(z, prices, V: float, policy: RoundingPolicy = RoundingPolicy()
                 ) -> Tuple[np.ndarray, np.ndarray]:
    """Whole-lot share trades nearest to the trade weights ``z``.

    Returns ``(shares, realized_z)`` where ``realized_z`` are the trade
    weights the rounded share counts actually represent.
    """
    z = np.asarray(getattr(z, "z", z), dtype=float)
    prices = np.asarray(prices, dtype=float)
    if np.any(prices <= 0) or not V > 0:
        raise ValueError("prices and portfolio value must be positive")
    lots = np.rint(z * V / (prices * policy.lot))
    shares = (lots * policy.lot).astype(np.int64)
    return shares, shares * prices / V


class RelaxRoundSolveError(RuntimeError):
    """Pass two of relax-round-solve was infeasible; carries the asset partition."""

    def __init__(self, message: str, partition: Dict[str, np.ndarray], status: Status):
        super().__init__(message)
        self.partition = partition
        self.status = status


@dataclass
class RelaxRoundResult:
    decision: TradeDecision
    relaxed: TradeDecision
    partition: Optional[Dict[str, np.ndarray]] = None
    solves: int = 1


def is_compliant(w, w_min_abs: float, tol: float = COMPLIANCE_TOL) -> bool:
    a = np.abs(np.asarray(w, dtype=float))
    return bool(np.all((a <= tol) | (a >= w_min_abs - tol)))


def partition_assets(w, threshold: float) -> Dict[str, np.ndarray]:
    w = np.asarray(w, dtype=float)
    return {
        "zero": np.flatnonzero(np.abs(w) < threshold),
        "long": np.flatnonzero(w >= threshold),
        "short": np.flatnonzero(w <= -threshold),
    }


def pattern_params(params: ParameterSet, forecast: ForecastBundle, w_min_abs: float,
                   signs: np.ndarray) -> Optional[ParameterSet]:
    """Tighten the weight box to a sign pattern (0, +1 or -1 per asset).

    Returns ``None`` when the pattern contradicts the original weight box.
    The weight box becomes hard.
    """
    n = forecast.n
    lo, hi, _, _ = _bounds(params, forecast, n)
    lo = lo.copy()
    hi = hi.copy()
    signs = np.asarray(signs)
    zero, pos, neg = signs == 0, signs > 0, signs < 0
    lo[zero] = np.maximum(lo[zero], 0.0)
    hi[zero] = np.minimum(hi[zero], 0.0)
    lo[pos] = np.maximum(lo[pos], w_min_abs)
    hi[neg] = np.minimum(hi[neg], -w_min_abs)
    if np.any(lo > hi):
        return None
    return params.replace(w_min=lo, w_max=hi, soft=params.soft - {"weights"})


def _snap(w: np.ndarray, signs: np.ndarray, w_min_abs: float) -> np.ndarray:
    """Remove solver round-off so the pattern holds exactly."""
    w = w.copy()
    w[signs == 0] = 0.0
    pos, neg = signs > 0, signs < 0
    w[pos] = np.maximum(w[pos], w_min_abs)
    w[neg] = np.minimum(w[neg], -w_min_abs)
    return w


def _solve_pattern(w_pre, forecast, params, w_min_abs, signs, tol):
    p2 = pattern_params(params, forecast, w_min_abs, signs)
    if p2 is None:
        return None
    d = optimize(w_pre, forecast, p2, tol=tol)
    if not d.optimal:
        return d
    w = _snap(d.w_post, signs, w_min_abs)
    # score with the caller's parameters so decisions are comparable
    return _finish(w_pre, forecast, params, w, d.status, d.duals, d.solve_time)


def relax_round_solve(w_pre: Portfolio, forecast: ForecastBundle, params: ParameterSet,
                      w_min_abs: float, policy: RoundingPolicy = RoundingPolicy(),
                      tol: float = 1e-8) -> RelaxRoundResult:
    """Relax-round-solve for ``|w_i| in {0} U [w_min_abs, inf)``.

    Raises
    ------
    RelaxRoundSolveError
        If the second solve is not optimal; the partition is attached.
    """
    if not w_min_abs > 0:
        raise ValueError("minimum holding must be positive")
    theta = policy.resolve_threshold(w_min_abs)
    relaxed = optimize(w_pre, forecast, params, tol=tol)
    if not relaxed.optimal:
        return RelaxRoundResult(relaxed, relaxed, None, 1)
    if is_compliant(relaxed.w_post, w_min_abs):
        # clear round-off so the pattern holds exactly, then rescore
        w = relaxed.w_post
        signs = np.where(np.abs(w) <= COMPLIANCE_TOL, 0, np.sign(w)).astype(int)
        d = _finish(w_pre, forecast, params, _snap(w, signs, w_min_abs), relaxed.status,
                    relaxed.duals, relaxed.solve_time)
        return RelaxRoundResult(d, relaxed, None, 1)
    part = partition_assets(relaxed.w_post, theta)
    signs = np.zeros(forecast.n, dtype=int)
    signs[part["long"]] = 1
    signs[part["short"]] = -1
    d = _solve_pattern(w_pre, forecast, params, w_min_abs, signs, tol)
    if d is None:
        raise RelaxRoundSolveError("sign pattern contradicts the weight limits", part,
                                   Status.INFEASIBLE)
    if not d.optimal:
        raise RelaxRoundSolveError(f"second solve returned {d.status.value}", part, d.status)
    return RelaxRoundResult(d, relaxed, part, 2)


def min_holding_relax_round_solve(w_pre: Portfolio, forecast: ForecastBundle,
                                  params: ParameterSet, w_min_abs: float,
                                  policy: RoundingPolicy = RoundingPolicy(),
                                  tol: float = 1e-8) -> TradeDecision:
    """Decision satisfying the minimum nonzero holding constraint (see ``relax_round_solve``)."""
    return relax_round_solve(w_pre, forecast, params, w_min_abs, policy, tol).decision


def exhaustive_min_holding(w_pre: Portfolio, forecast: ForecastBundle, params: ParameterSet,
                           w_min_abs: float, tol: float = 1e-8
                           ) -> Tuple[Optional[TradeDecision], np.ndarray]:
    """Best compliant decision over every zero/long/short pattern.

    Signs not allowed by the weight box are skipped, so long-only problems
    need ``2^n`` solves. Intended as a test oracle for small ``n``.
    """
    n = forecast.n
    lo, hi, _, _ = _bounds(params, forecast, n)
    choices = []
    for i in range(n):
        opts = [0] if lo[i] <= 0 <= hi[i] else []
        if hi[i] >= w_min_abs:
            opts.append(1)
        if lo[i] <= -w_min_abs:
            opts.append(-1)
        choices.append(opts)
    best, best_signs = None, None
    for combo in itertools.product(*choices):
        signs = np.array(combo, dtype=int)
        d = _solve_pattern(w_pre, forecast, params, w_min_abs, signs, tol)
        if d is None or not d.optimal:
            continue
        if best is None or d.objective > best.objective:
            best, best_signs = d, signs
    return best, best_signs
