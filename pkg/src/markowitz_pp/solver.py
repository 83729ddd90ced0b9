"""Conic solves and closed-form oracles.

The interior-point work is delegated to Clarabel. This module owns the
contract around it: status mapping, an independent feasibility and gap
check before anything is declared optimal, and mapping dual values back to
named constraints in user objective units.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Dict

import clarabel
import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .cone import NONNEG, SOC, ZERO, ConeProgram

log = logging.getLogger(__name__)

CHECK_TOL = 1e-7
# tolerance multiplier for the single re-solve after a rejected certificate
RETRY_FACTOR = 1e-2


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class ConeSolution:
    status: Status
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    duals: Dict[str, np.ndarray] = field(default_factory=dict)
    objective: float = float("nan")
    iterations: int = 0
    solve_time: float = 0.0
    primal_residual: float = float("nan")
    gap: float = float("nan")
    # converged by the solver's own criteria but failed the certificate check
    rejected: bool = False

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, prog: ConeProgram, name: str) -> np.ndarray:
        return self.x[prog.variables[name]]

    def dual(self, name: str) -> float:
        """Scalar multiplier of a one-row constraint."""
        d = self.duals[name]
        if d.size != 1:
            raise ValueError(f"constraint {name!r} has {d.size} rows")
        return float(d[0])


_STATUS_MAP = {
    "Solved": Status.OPTIMAL,
    "AlmostSolved": Status.OPTIMAL,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
}


def _clarabel_cones(cones):
    out = []
    for kind, d in cones:
        if kind == ZERO:
            out.append(clarabel.ZeroConeT(d))
        elif kind == NONNEG:
            out.append(clarabel.NonnegativeConeT(d))
        elif kind == SOC:
            out.append(clarabel.SecondOrderConeT(d))
        else:
            raise ValueError(f"unknown cone {kind!r}")
    return out


def cone_violation(prog: ConeProgram, v: np.ndarray) -> float:
    """Largest violation of ``v in K`` over all cone blocks."""
    worst = 0.0
    i = 0
    for kind, d in prog.cones:
        blk = v[i:i + d]
        if kind == ZERO:
            worst = max(worst, np.abs(blk).max())
        elif kind == NONNEG:
            worst = max(worst, max(0.0, -blk.min()))
        else:
            worst = max(worst, max(0.0, np.linalg.norm(blk[1:]) - blk[0]))
        i += d
    return float(worst)


def _dual_cone_violation(prog: ConeProgram, z: np.ndarray) -> float:
    worst = 0.0
    i = 0
    for kind, d in prog.cones:
        blk = z[i:i + d]
        if kind == NONNEG:
            worst = max(worst, max(0.0, -blk.min()))
        elif kind == SOC:
            worst = max(worst, max(0.0, np.linalg.norm(blk[1:]) - blk[0]))
        i += d
    return float(worst)


def check_optimality(prog: ConeProgram, x, z) -> tuple:
    """Return ``(primal_residual, relative_gap, dual_residual)`` for a candidate."""
    slack = prog.b - prog.A @ x
    pscale = max(1.0, np.abs(prog.b).max(initial=0.0), np.abs(x).max(initial=0.0))
    primal = cone_violation(prog, slack) / pscale
    Px = np.zeros_like(x) if prog.P is None else prog.P @ x
    quad = 0.5 * float(x @ Px)
    pobj = quad + prog.q @ x
    dobj = -quad - prog.b @ z
    gap = abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj))
    stat = Px + prog.q + prog.A.T @ z
    dscale = max(1.0, np.abs(prog.q).max(initial=0.0), np.abs(z).max(initial=0.0))
    dual = max(np.abs(stat).max(initial=0.0), _dual_cone_violation(prog, z)) / dscale
    return float(primal), float(gap), float(dual)


def solve(prog: ConeProgram, tol: float = 1e-8, max_iter: int = 200) -> ConeSolution:
    """Solve a cone program and map duals to named constraints.

    Duals are reported for the user-level (maximized) objective, i.e. the
    Clarabel multipliers divided by the program's objective scale.

    The solver measures its tolerances on an equilibrated copy of the problem,
    so a converged point can miss the unscaled certificate check by a small
    factor. Such a point is re-solved once at ``RETRY_FACTOR * tol`` before it
    is reported as a numerical failure.
    """
    sol = _solve_once(prog, tol, max_iter)
    if sol.status is Status.NUMERICAL_FAILURE and sol.rejected:
        retry = _solve_once(prog, tol * RETRY_FACTOR, max_iter)
        retry.solve_time += sol.solve_time
        return retry
    return sol


def _solve_once(prog: ConeProgram, tol: float, max_iter: int) -> ConeSolution:
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = max_iter
    settings.max_threads = 1
    # the supernodal default is slower on these arrow-shaped KKT systems
    settings.direct_solve_method = "qdldl"
    n = prog.n_vars
    P = sp.csc_matrix((n, n)) if prog.P is None else sp.triu(prog.P, format="csc")
    t0 = time.perf_counter()
    try:
        solver = clarabel.DefaultSolver(P, prog.q, prog.A, prog.b,
                                        _clarabel_cones(prog.cones), settings)
        sol = solver.solve()
    except Exception as exc:  # solver-internal errors are reported, not raised
        log.warning("conic solver raised %s", exc)
        return ConeSolution(Status.NUMERICAL_FAILURE, np.full(n, np.nan),
                            np.full(prog.n_rows, np.nan), np.full(prog.n_rows, np.nan),
                            solve_time=time.perf_counter() - t0)
    elapsed = time.perf_counter() - t0
    x = np.asarray(sol.x, dtype=float)
    s = np.asarray(sol.s, dtype=float)
    z = np.asarray(sol.z, dtype=float)
    status = _STATUS_MAP.get(str(sol.status).split(".")[-1], Status.NUMERICAL_FAILURE)
    primal = gap = float("nan")
    rejected = False
    if status is Status.OPTIMAL:
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            status = Status.NUMERICAL_FAILURE
        else:
            primal, gap, dual = check_optimality(prog, x, z)
            if primal > CHECK_TOL or gap > CHECK_TOL or dual > CHECK_TOL:
                log.info("solution rejected: primal %.2e gap %.2e dual %.2e", primal, gap, dual)
                status = Status.NUMERICAL_FAILURE
                rejected = True
    duals = {name: z[rows] / prog.objective_scale for name, rows in prog.rows.items()}
    objective = prog.user_objective(x) if status is Status.OPTIMAL else float("nan")
    return ConeSolution(status, x, s, z, duals, objective, int(sol.iterations),
                        elapsed, primal, gap, rejected)


def _cho(Sigma):
    try:
        return scipy.linalg.cho_factor(np.asarray(Sigma, dtype=float), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance matrix is singular or not positive definite") from exc


def closed_form_unconstrained(mu, Sigma, gamma: float) -> np.ndarray:
    """Maximizer of ``mu^T w - gamma w^T Sigma w`` subject to ``1^T w = 1``.

    Uses two linear solves, for ``Sigma^{-1} mu`` and ``Sigma^{-1} 1``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    mu = np.asarray(mu, dtype=float)
    cf = _cho(Sigma)
    s_mu = scipy.linalg.cho_solve(cf, mu)
    s_one = scipy.linalg.cho_solve(cf, np.ones_like(mu))
    nu = (2 * gamma - s_mu.sum()) / s_one.sum()
    return (s_mu + nu * s_one) / (2 * gamma)


def implied_returns(w, Sigma, gamma: float) -> np.ndarray:
    """Mean returns for which ``w`` solves the risk-adjusted problem.

    Any vector ``2 gamma Sigma w - nu 1`` works; this returns ``nu = 0``.
    """
    w = np.asarray(w, dtype=float)
    if abs(w.sum() - 1) > 1e-6:
        raise ValueError("weights must sum to one")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    _cho(Sigma)
    return 2 * gamma * np.asarray(Sigma, dtype=float) @ w
