"""The Markowitz++ trading problem.

Term evaluators are plain numpy functions of a candidate portfolio;
``assemble`` turns a pre-trade portfolio, a forecast and a parameter set into
a ``ConeProgram`` and ``optimize`` solves it and returns a ``TradeDecision``.

Everything is per period: returns, rates, risk targets and turnover.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional, Sequence, Tuple

import numpy as np

from .cone import NONNEG, SOC, ZERO, ConeProgram, ProgramBuilder
from .data_model import PERIODS_PER_YEAR, Portfolio
from .forecasts import DenseRiskModel, FactorRiskModel, ForecastBundle, RiskModel
from . import solver as _solver
from .solver import Status

SOFTENABLE = frozenset({"risk", "leverage", "turnover", "weights", "cash", "trades",
                        "liquidation", "concentration"})
PRIORITY_FIELD = {
    "risk": "gamma_risk", "leverage": "gamma_lev", "turnover": "gamma_turn",
    "weights": "gamma_weights", "cash": "gamma_cash", "trades": "gamma_trades",
    "liquidation": "gamma_liq", "concentration": "gamma_conc",
}
INF = math.inf


@dataclass(frozen=True)
class ParameterSet:
    """Tunable knobs of the trading problem, in per-period units.

    Infinite limits mean "no constraint". ``soft`` names the constraints
    replaced by penalties ``gamma * (f - f_tar)_+``; the matching priority is
    ``PRIORITY_FIELD[name]``. ``rho_quantile`` (if set) overrides ``rho``
    with that quantile of ``|mu|`` at every solve.
    """

    sigma_tar: float = INF
    gamma_hold: float = 1.0
    gamma_trade: float = 1.0
    w_min: object = -INF
    w_max: object = INF
    c_min: float = -INF
    c_max: float = INF
    L_tar: float = INF
    z_min: object = -INF
    z_max: object = INF
    T_tar: float = INF
    rho: object = 0.0
    rho_quantile: Optional[float] = None
    varrho: float = 0.0
    soft: FrozenSet[str] = frozenset()
    gamma_risk: float = 5e-2
    gamma_lev: float = 5e-4
    gamma_turn: float = 2.5e-3
    gamma_weights: float = 1.0
    gamma_cash: float = 1.0
    gamma_trades: float = 1.0
    gamma_liq: float = 1.0
    gamma_conc: float = 1.0
    participation: Optional[float] = None
    neutral_factors: Tuple[int, ...] = ()
    concentration: Optional[Tuple[int, float]] = None
    ell_max: float = INF
    benchmark: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "soft", frozenset(self.soft))
        unknown = self.soft - SOFTENABLE
        if unknown:
            raise ValueError(f"cannot soften {sorted(unknown)}")
        if np.any(np.asarray(self.w_min) > np.asarray(self.w_max)):
            raise ValueError("w_min exceeds w_max")
        if self.c_min > self.c_max:
            raise ValueError("c_min exceeds c_max")
        if np.any(np.asarray(self.z_min) > np.asarray(self.z_max)):
            raise ValueError("z_min exceeds z_max")
        for name in ("sigma_tar", "L_tar", "T_tar", "ell_max"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in PRIORITY_FIELD.values():
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gamma_hold < 0 or self.gamma_trade < 0:
            raise ValueError("cost scale factors must be nonnegative")
        if not 0 <= self.varrho < 1:
            raise ValueError("varrho must lie in [0, 1)")
        if np.any(np.asarray(self.rho) < 0):
            raise ValueError("rho must be nonnegative")
        if self.rho_quantile is not None and not 0 <= self.rho_quantile <= 1:
            raise ValueError("rho_quantile must lie in [0, 1]")
        if self.concentration is not None:
            K, cap = self.concentration
            if int(K) < 1 or cap < 0:
                raise ValueError("concentration limit needs K >= 1 and cap >= 0")
        if self.benchmark is not None:
            b = np.asarray(self.benchmark, dtype=float)
            if abs(b.sum() - 1) > 1e-9:
                raise ValueError("benchmark weights must sum to one")
            object.__setattr__(self, "benchmark", b)

    def replace(self, **changes) -> "ParameterSet":
        return dataclasses.replace(self, **changes)

    def is_soft(self, name: str) -> bool:
        return name in self.soft

    def priority(self, name: str) -> float:
        return getattr(self, PRIORITY_FIELD[name])

    def resolve_rho(self, mu: np.ndarray) -> np.ndarray:
        if self.rho_quantile is not None:
            return np.full(mu.size, float(np.quantile(np.abs(mu), self.rho_quantile)))
        return np.broadcast_to(np.asarray(self.rho, dtype=float), mu.shape).copy()

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, frozenset):
                v = sorted(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


def markowitz_pp_parameters(periods_per_year: int = PERIODS_PER_YEAR, **overrides) -> ParameterSet:
    """Default Markowitz++ settings, converted from annualized values.

    Risk target 10% annualized, weights in [-5%, 10%], cash in [-5%, 100%],
    leverage 1.6, trades within +-10%, annualized turnover 25, ``rho`` at the
    20th percentile of ``|mu|``, ``varrho = 0.02``, with risk, leverage and
    turnover softened.
    """
    base = dict(
        sigma_tar=0.10 / math.sqrt(periods_per_year),
        gamma_hold=1.0, gamma_trade=1.0,
        w_min=-0.05, w_max=0.10, c_min=-0.05, c_max=1.0, L_tar=1.6,
        z_min=-0.10, z_max=0.10, T_tar=25.0 / periods_per_year,
        rho_quantile=0.20, varrho=0.02,
        soft=frozenset({"risk", "leverage", "turnover"}),
        gamma_risk=5e-2, gamma_lev=5e-4, gamma_turn=2.5e-3,
    )
    base.update(overrides)
    return ParameterSet(**base)


def basic_parameters(sigma_tar: float, **overrides) -> ParameterSet:
    """Basic mean-variance policy: nominal return under a hard risk limit, nothing else."""
    return ParameterSet(sigma_tar=sigma_tar, gamma_hold=0.0, gamma_trade=0.0, **overrides)


# ---------------------------------------------------------------- term values

def holding_cost(w, c: float, kappa_short, kappa_borrow: float) -> float:
    w = np.asarray(w, dtype=float)
    return float(np.asarray(kappa_short, dtype=float) @ np.maximum(-w, 0.0)
                 + kappa_borrow * max(-c, 0.0))


def trading_cost(z, kappa_spread, kappa_impact) -> float:
    a = np.abs(np.asarray(z, dtype=float))
    return float(np.asarray(kappa_spread, dtype=float) @ a
                 + np.asarray(kappa_impact, dtype=float) @ a ** 1.5)


def liquidation_cost(w, kappa_spread) -> float:
    return float(np.asarray(kappa_spread, dtype=float) @ np.abs(np.asarray(w, dtype=float)))


def worst_case_return(w, c: float, mu, rho, r_rf: float = 0.0) -> float:
    w = np.asarray(w, dtype=float)
    return float(np.asarray(mu, dtype=float) @ w + r_rf * c
                 - np.asarray(rho, dtype=float) @ np.abs(w))


def worst_case_risk(w, risk: RiskModel, varrho: float) -> float:
    """Worst-case portfolio volatility under relative covariance uncertainty ``varrho``."""
    w = np.asarray(w, dtype=float)
    sigma = risk.risk(w)
    spread = math.sqrt(varrho) * float(risk.volatilities() @ np.abs(w))
    return float(np.hypot(sigma, spread))


def portfolio_betas(w, risk: RiskModel) -> np.ndarray:
    if not isinstance(risk, FactorRiskModel):
        raise TypeError("betas need a factor risk model")
    S = risk.factor_cov
    return (S @ (risk.loadings.T @ np.asarray(w, dtype=float))) / np.diag(S)


def factor_neutrality_rows(risk: RiskModel, indices: Sequence[int]) -> np.ndarray:
    """Rows ``a_i`` (columns of ``F Sigma_f``) with ``a_i^T w = cov(R, f_i)``."""
    if not isinstance(risk, FactorRiskModel):
        raise TypeError("factor neutrality needs a factor risk model")
    idx = np.asarray(list(indices), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= risk.k):
        raise IndexError(f"factor index out of range for k={risk.k}")
    return (risk.loadings @ risk.factor_cov)[:, idx].T


def soft_penalty(f_value: float, f_tar: float, gamma: float) -> float:
    if not gamma > 0:
        raise ValueError("priority must be positive")
    return gamma * max(f_value - f_tar, 0.0)


# ------------------------------------------------------------------ assembly

def _vec(x, n) -> np.ndarray:
    return np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()


def _bounds(p: ParameterSet, forecast: ForecastBundle, n: int):
    w_lo, w_hi = _vec(p.w_min, n), _vec(p.w_max, n)
    z_lo, z_hi = _vec(p.z_min, n), _vec(p.z_max, n)
    if p.participation is not None:
        if forecast.v_forecast is None:
            raise ValueError("participation limit needs a volume forecast")
        cap = p.participation * forecast.v_forecast
        z_lo = np.maximum(z_lo, -cap)
        z_hi = np.minimum(z_hi, cap)
    return w_lo, w_hi, z_lo, z_hi


def _box(B: ProgramBuilder, name: str, x: slice, lo, hi, soft: bool, gamma: float, scalar=False):
    """Bounds ``lo <= x <= hi``; infinite entries are skipped."""
    lo = np.atleast_1d(lo)
    hi = np.atleast_1d(hi)
    size = x.stop - x.start
    for side, lim, sign in (("lower", lo, 1.0), ("upper", hi, -1.0)):
        idx = np.flatnonzero(np.isfinite(lim))
        if idx.size == 0:
            continue
        m = idx.size
        terms = [(x, (np.arange(m), idx, np.full(m, sign)))]
        if soft:
            e = B.var(f"viol_{name}_{side}", m)
            B.add(f"aux:{name}_{side}_viol", NONNEG, m, [(e, 1.0)])
            B.objective(e, -gamma)
            terms.append((e, 1.0))
        # sign * (x - lim) >= 0
        B.add(f"{name}_{side}", NONNEG, m, terms, const=-sign * lim[idx])


def _abs_var(B: ProgramBuilder, name: str, x: slice, offset=None) -> slice:
    """Auxiliary ``a >= |x - offset|``."""
    size = x.stop - x.start
    a = B.var(f"abs_{name}", size)
    off = np.zeros(size) if offset is None else np.asarray(offset, dtype=float)
    B.add(f"aux:abs_{name}_pos", NONNEG, size, [(a, 1.0), (x, -1.0)], const=off)
    B.add(f"aux:abs_{name}_neg", NONNEG, size, [(a, 1.0), (x, 1.0)], const=-off)
    return a


def _limit(B: ProgramBuilder, name: str, terms, const_expr: float, target: float,
           soft: bool, gamma: float):
    """``f(x) <= target`` with ``f = sum(terms) + const_expr``, hard or soft."""
    if not math.isfinite(target):
        return
    neg = [(v, (M[0], M[1], -np.asarray(M[2])) if isinstance(M, tuple) else -np.asarray(M))
           for v, M in terms]
    if soft:
        p = B.var(f"viol_{name}", 1)
        B.add(f"aux:{name}_viol", NONNEG, 1, [(p, 1.0)])
        B.objective(p, -gamma)
        neg.append((p, np.ones((1, 1))))
    B.add(name, NONNEG, 1, neg, const=target - const_expr)


def assemble(w_pre: Portfolio, forecast: ForecastBundle, params: ParameterSet,
             normalize: bool = True) -> ConeProgram:
    """Build the cone program for one trading decision.

    Maximizes worst-case return minus scaled holding and trading costs and
    soft-constraint penalties, subject to the budget, the trade definition
    and every configured limit.
    """
    n = forecast.n
    if w_pre.n != n:
        raise ValueError(f"portfolio has {w_pre.n} assets, forecast has {n}")
    p = params
    bench = None if p.benchmark is None else np.asarray(p.benchmark, dtype=float)
    if bench is not None and bench.size != n:
        raise ValueError("benchmark dimension mismatch")
    mu = forecast.mu
    rho = p.resolve_rho(mu)
    w_lo, w_hi, z_lo, z_hi = _bounds(p, forecast, n)
    if np.any(w_lo > w_hi) or np.any(z_lo > z_hi):
        raise ValueError("infeasible box: lower bound exceeds upper bound")

    B = ProgramBuilder()
    w = B.var("w", n)
    c = B.var("c", 1)
    z = B.var("z", n)
    eye_n = 1.0

    B.add("budget", ZERO, 1, [(w, np.ones((1, n))), (c, np.ones((1, 1)))], const=-1.0)
    B.add("trade_definition", ZERO, n, [(z, eye_n), (w, -eye_n)], const=w_pre.w)

    k_short = p.gamma_hold * forecast.kappa_short
    k_borrow = p.gamma_hold * forecast.kappa_borrow
    k_spread = p.gamma_trade * forecast.kappa_spread
    k_impact = p.gamma_trade * forecast.kappa_impact
    risk_on = math.isfinite(p.sigma_tar)
    conc = p.concentration
    ell_on = math.isfinite(p.ell_max)
    lev_on = math.isfinite(p.L_tar)

    need_abs_w = (lev_on or np.any(k_short > 0) or ell_on or conc is not None
                  or (bench is None and (np.any(rho > 0) or (risk_on and p.varrho > 0))))
    a_w = _abs_var(B, "w", w) if need_abs_w else None
    if bench is None:
        a_d = a_w
    elif np.any(rho > 0) or (risk_on and p.varrho > 0):
        a_d = _abs_var(B, "active", w, offset=bench)
    else:
        a_d = None

    need_abs_z = math.isfinite(p.T_tar) or np.any(k_spread > 0) or np.any(k_impact > 0)
    a_z = _abs_var(B, "z", z) if need_abs_z else None

    # worst-case return: mu^T d + r_rf c - rho^T |d|
    B.objective(w, mu)
    B.objective(c, forecast.r_rf)
    const = 0.0 if bench is None else -float(mu @ bench)
    if np.any(rho > 0):
        B.objective(a_d, -rho)

    # holding cost via (-x)_+ = (|x| - x) / 2
    if np.any(k_short > 0):
        B.objective(a_w, -k_short / 2)
        B.objective(w, k_short / 2)
    if k_borrow > 0:
        a_c = _abs_var(B, "c", c)
        B.objective(a_c, -k_borrow / 2)
        B.objective(c, k_borrow / 2)

    # trading cost
    if np.any(k_spread > 0):
        B.objective(a_z, -k_spread)
    imp = np.flatnonzero(k_impact > 0)
    if imp.size:
        tau = B.var("impact_epi", imp.size)
        root = B.var("impact_root", imp.size)
        B.objective(tau, -k_impact[imp])
        for j, i in enumerate(imp):
            ti, si, ui = (slice(tau.start + j, tau.start + j + 1),
                          slice(root.start + j, root.start + j + 1),
                          slice(a_z.start + i, a_z.start + i + 1))
            # u^2 <= tau * s  and  s^2 <= u
            B.add(f"aux:impact_{i}_a", SOC, 3,
                  [(ti, np.array([[1.0], [1.0], [0.0]])),
                   (si, np.array([[1.0], [-1.0], [0.0]])),
                   (ui, np.array([[0.0], [0.0], [2.0]]))])
            B.add(f"aux:impact_{i}_b", SOC, 3,
                  [(ui, np.array([[1.0], [1.0], [0.0]])),
                   (si, np.array([[0.0], [0.0], [2.0]]))],
                  const=np.array([1.0, -1.0, 0.0]))

    # box constraints
    _box(B, "w", w, w_lo, w_hi, p.is_soft("weights"), p.gamma_weights)
    _box(B, "c", c, np.array([p.c_min]), np.array([p.c_max]), p.is_soft("cash"), p.gamma_cash)
    _box(B, "z", z, z_lo, z_hi, p.is_soft("trades"), p.gamma_trades)

    if lev_on:
        _limit(B, "leverage", [(a_w, np.ones((1, n)))], 0.0, p.L_tar,
               p.is_soft("leverage"), p.gamma_lev)
    if math.isfinite(p.T_tar):
        _limit(B, "turnover", [(a_z, np.full((1, n), 0.5))], 0.0, p.T_tar,
               p.is_soft("turnover"), p.gamma_turn)
    if ell_on:
        _limit(B, "liquidation", [(a_w, forecast.kappa_spread.reshape(1, n))], 0.0,
               p.ell_max, p.is_soft("liquidation"), p.gamma_liq)
    if conc is not None:
        K, cap = int(conc[0]), float(conc[1])
        theta = B.var("conc_level", 1)
        u = B.var("conc_excess", n)
        B.add("aux:conc_excess_pos", NONNEG, n, [(u, 1.0)])
        B.add("aux:conc_excess", NONNEG, n,
              [(u, 1.0), (a_w, -1.0), (theta, np.ones((n, 1)))])
        _limit(B, "concentration", [(theta, np.array([[float(K)]])), (u, np.ones((1, n)))],
               0.0, cap, p.is_soft("concentration"), p.gamma_conc)

    if p.neutral_factors:
        rows = factor_neutrality_rows(forecast.risk, p.neutral_factors)
        off = np.zeros(rows.shape[0]) if bench is None else -rows @ bench
        B.add("factor_neutrality", ZERO, rows.shape[0], [(w, rows)], const=off)

    if risk_on:
        t = B.var("risk_epi", 1)
        _risk_cone(B, forecast.risk, w, bench, a_d, p.varrho, t)
        _limit(B, "risk", [(t, np.ones((1, 1)))], 0.0, p.sigma_tar,
               p.is_soft("risk"), p.gamma_risk)

    return B.build(objective_constant=const, normalize=normalize)


def _risk_rows(risk: RiskModel):
    """Triplets ``(rows, cols, vals, m)`` of ``G`` with ``||G w|| = sqrt(w^T Sigma w)``.

    For a factor model ``G`` stacks ``Ft^T`` on ``diag(sqrt(D))`` and is kept
    sparse, so the dense covariance never appears.
    """
    n = risk.n
    if isinstance(risk, DenseRiskModel):
        G = risk.chol.T
        r, c = np.nonzero(G)
        return r, c, G[r, c], n
    Ft = risk.loadings_tilde
    k = Ft.shape[1]
    r = np.repeat(np.arange(k), n)
    c = np.tile(np.arange(n), k)
    v = Ft.T.ravel()
    r = np.concatenate([r, k + np.arange(n)])
    c = np.concatenate([c, np.arange(n)])
    v = np.concatenate([v, np.sqrt(risk.idio_var)])
    return r, c, v, k + n


def _risk_apply(risk: RiskModel, x) -> np.ndarray:
    """``G x`` for the matrix described by ``_risk_rows``."""
    if isinstance(risk, DenseRiskModel):
        return risk.chol.T @ x
    return np.concatenate([risk.loadings_tilde.T @ x, np.sqrt(risk.idio_var) * x])


def _risk_cone(B: ProgramBuilder, risk: RiskModel, w: slice, bench, a_d, varrho, t: slice):
    """``t >= ||(G d, sqrt(varrho) s^T |d|)||`` with ``d`` the (active) weights.

    For a factor model the exposures ``y = Ft^T d`` get their own variables,
    so the dense loadings only appear in ``k`` equality rows and the cone
    itself is diagonal.
    """
    n = w.stop - w.start
    extra = 1 if varrho > 0 else 0
    t_term = (t, (np.array([0]), np.array([0]), np.array([1.0])))
    if isinstance(risk, FactorRiskModel):
        k = risk.k
        y = B.var("factor_exposure", k)
        Ft = risk.loadings_tilde
        off = np.zeros(k) if bench is None else Ft.T @ bench
        B.add("aux:factor_exposure", ZERO, k, [(y, 1.0), (w, -Ft.T)], const=off)
        dim = 1 + k + n + extra
        const = np.zeros(dim)
        sqrt_d = np.sqrt(risk.idio_var)
        if bench is not None:
            const[1 + k:1 + k + n] = -sqrt_d * bench
        terms = [t_term, (y, (1 + np.arange(k), np.arange(k), np.ones(k))),
                 (w, (1 + k + np.arange(n), np.arange(n), sqrt_d))]
    else:
        r, c, v, m = _risk_rows(risk)
        dim = 1 + m + extra
        const = np.zeros(dim)
        if bench is not None:
            const[1:1 + m] = -_risk_apply(risk, bench)
        terms = [t_term, (w, (r + 1, c, v))]
    if extra:
        terms.append((a_d, (np.full(n, dim - 1), np.arange(n),
                            math.sqrt(varrho) * risk.volatilities())))
    B.add("aux:risk_cone", SOC, dim, terms, const=const)


def assemble_risk_adjusted(mu, risk: RiskModel, gamma: float, normalize: bool = True) -> ConeProgram:
    """Program for ``maximize mu^T w - gamma w^T Sigma w  s.t. 1^T w = 1``.

    The variance is passed to the solver as a quadratic objective, so the
    solution accuracy in ``w`` tracks the solver tolerance directly.
    """
    mu = np.asarray(mu, dtype=float)
    n = mu.size
    if risk.n != n:
        raise ValueError("mu and risk model differ in dimension")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    B = ProgramBuilder()
    w = B.var("w", n)
    B.add("budget", ZERO, 1, [(w, np.ones((1, n)))], const=-1.0)
    B.objective(w, mu)
    B.quadratic(w, gamma * risk.covariance())
    return B.build(normalize=normalize)


# ------------------------------------------------------------------ decisions

@dataclass
class TradeDecision:
    w_post: np.ndarray
    c_post: float
    z: np.ndarray
    status: Status
    objective: float = float("nan")
    terms: Dict[str, float] = field(default_factory=dict)
    duals: Dict[str, np.ndarray] = field(default_factory=dict)
    violations: Dict[str, float] = field(default_factory=dict)
    solve_time: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def dual(self, name: str) -> float:
        d = self.duals.get(name)
        if d is None or np.size(d) != 1:
            return float("nan")
        return float(np.ravel(d)[0])

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "weights": self.w_post.tolist(),
            "cash": self.c_post,
            "trades": self.z.tolist(),
            "objective": self.objective,
            "terms": self.terms,
            "soft_violations": self.violations,
            "duals": {k: np.ravel(v).tolist() for k, v in self.duals.items()},
        }


def no_trade(w_pre: Portfolio, status: Status) -> TradeDecision:
    return TradeDecision(w_pre.w.copy(), w_pre.c, np.zeros(w_pre.n), status)


def evaluate_terms(w, c, z, forecast: ForecastBundle, params: ParameterSet) -> Tuple[Dict[str, float], Dict[str, float]]:
    """Objective breakdown and soft violations at a candidate portfolio.

    Returns ``(terms, violations)``; the objective is ``sum(terms.values())``.
    """
    p = params
    mu = forecast.mu
    bench = p.benchmark
    d = w if bench is None else w - bench
    rho = p.resolve_rho(mu)
    terms = {
        "return_wc": worst_case_return(d, c, mu, rho, forecast.r_rf),
        "holding": -p.gamma_hold * holding_cost(w, c, forecast.kappa_short, forecast.kappa_borrow),
        "trading": -p.gamma_trade * trading_cost(z, forecast.kappa_spread, forecast.kappa_impact),
    }
    values = {}
    if math.isfinite(p.sigma_tar):
        values["risk"] = (worst_case_risk(d, forecast.risk, p.varrho), p.sigma_tar)
    if math.isfinite(p.L_tar):
        values["leverage"] = (float(np.abs(w).sum()), p.L_tar)
    if math.isfinite(p.T_tar):
        values["turnover"] = (float(np.abs(z).sum() / 2), p.T_tar)
    if math.isfinite(p.ell_max):
        values["liquidation"] = (liquidation_cost(w, forecast.kappa_spread), p.ell_max)
    if p.concentration is not None:
        K, cap = p.concentration
        values["concentration"] = (float(np.sort(np.abs(w))[::-1][:int(K)].sum()), cap)
    w_lo, w_hi, z_lo, z_hi = _bounds(p, forecast, w.size)
    box = {
        "weights": (w, w_lo, w_hi),
        "cash": (np.array([c]), np.array([p.c_min]), np.array([p.c_max])),
        "trades": (z, z_lo, z_hi),
    }
    violations = {}
    for name, (f, tar) in values.items():
        violations[name] = max(f - tar, 0.0)
    for name, (x, lo, hi) in box.items():
        with np.errstate(invalid="ignore"):
            v = np.where(np.isfinite(lo), np.maximum(lo - x, 0), 0).sum() + \
                np.where(np.isfinite(hi), np.maximum(x - hi, 0), 0).sum()
        violations[name] = float(v)
    for name in sorted(p.soft):
        if name in violations:
            terms[f"penalty_{name}"] = -p.priority(name) * violations[name]
    return terms, violations


def decision_from_solution(w_pre: Portfolio, forecast: ForecastBundle, params: ParameterSet,
                           prog: ConeProgram, sol) -> TradeDecision:
    if not sol.optimal:
        d = no_trade(w_pre, sol.status)
        d.solve_time = sol.solve_time
        return d
    w = sol.x[prog.variables["w"]].copy()
    return _finish(w_pre, forecast, params, w, sol.status,
                   {k: v for k, v in sol.duals.items() if not k.startswith("aux:")},
                   sol.solve_time)


def _finish(w_pre, forecast, params, w, status, duals, solve_time=0.0) -> TradeDecision:
    z = w - w_pre.w
    c = w_pre.c - z.sum()
    terms, violations = evaluate_terms(w, c, z, forecast, params)
    reported = {k: v for k, v in violations.items() if k in params.soft}
    return TradeDecision(w, c, z, status, float(sum(terms.values())), terms,
                         duals, reported, solve_time)


def optimize(w_pre: Portfolio, forecast: ForecastBundle, params: ParameterSet,
             tol: float = 1e-8) -> TradeDecision:
    """Assemble, solve and unpack one trading decision.

    On any non-optimal status the decision is "no trade" carrying that status.
    """
    prog = assemble(w_pre, forecast, params)
    sol = _solver.solve(prog, tol=tol)
    return decision_from_solution(w_pre, forecast, params, prog, sol)
