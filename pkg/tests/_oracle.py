"""Independent cvxpy model of the single-period trading problem.

Written directly from the problem statement (objective terms and limits),
without the package's cone assembly, so it can cross-check ``assemble``.
"""

import math

import cvxpy as cp
import numpy as np

from markowitz_pp.forecasts import FactorRiskModel


def _vec(x, n):
    return np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()


def solve_reference(w_pre, fc, p):
    """Optimal objective value and weights, or ``(None, None)`` if not solved."""
    n = fc.n
    w = cp.Variable(n)
    c = cp.Variable()
    z = w - w_pre.w
    bench = np.zeros(n) if p.benchmark is None else np.asarray(p.benchmark)
    d = w - bench
    rho = p.resolve_rho(fc.mu)
    obj = fc.mu @ d + fc.r_rf * c - rho @ cp.abs(d)
    obj -= p.gamma_hold * (fc.kappa_short @ cp.pos(-w) + fc.kappa_borrow * cp.pos(-c))
    obj -= p.gamma_trade * (fc.kappa_spread @ cp.abs(z))
    if np.any(fc.kappa_impact > 0):
        obj -= p.gamma_trade * (fc.kappa_impact @ cp.power(cp.abs(z), 1.5))
    cons = [cp.sum(w) + c == 1]

    def limit(name, f, target):
        nonlocal obj
        if not math.isfinite(target):
            return
        if p.is_soft(name):
            obj -= p.priority(name) * cp.pos(f - target)
        else:
            cons.append(f <= target)

    def box(name, x, lo, hi, size):
        nonlocal obj
        lo, hi = _vec(lo, size), _vec(hi, size)
        for i in range(size):
            xi = x if size == 1 and x.ndim == 0 else x[i]
            for gap in ((lo[i] - xi) if np.isfinite(lo[i]) else None,
                        (xi - hi[i]) if np.isfinite(hi[i]) else None):
                if gap is None:
                    continue
                if p.is_soft(name):
                    obj -= p.priority(name) * cp.pos(gap)
                else:
                    cons.append(gap <= 0)

    z_lo, z_hi = _vec(p.z_min, n), _vec(p.z_max, n)
    if p.participation is not None:
        cap = p.participation * fc.v_forecast
        z_lo, z_hi = np.maximum(z_lo, -cap), np.minimum(z_hi, cap)
    box("weights", w, p.w_min, p.w_max, n)
    box("cash", c, p.c_min, p.c_max, 1)
    box("trades", z, z_lo, z_hi, n)
    limit("leverage", cp.norm1(w), p.L_tar)
    limit("turnover", cp.norm1(z) / 2, p.T_tar)
    limit("liquidation", fc.kappa_spread @ cp.abs(w), p.ell_max)
    if p.concentration is not None:
        K, cap = p.concentration
        limit("concentration", cp.sum_largest(cp.abs(w), int(K)), cap)
    if p.neutral_factors:
        A = (fc.risk.loadings @ fc.risk.factor_cov)[:, list(p.neutral_factors)].T
        cons.append(A @ d == 0)
    if math.isfinite(p.sigma_tar):
        S = fc.risk.covariance()
        L = np.linalg.cholesky(S)
        u = cp.Variable()
        s = fc.risk.volatilities()
        cons.append(u >= s @ cp.abs(d))
        sig = cp.norm(cp.hstack([L.T @ d, math.sqrt(p.varrho) * u]))
        limit("risk", sig, p.sigma_tar)
    prob = cp.Problem(cp.Maximize(obj), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        return None, None
    return float(prob.value), np.asarray(w.value)
