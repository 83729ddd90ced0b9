"""Canonical conic form.

A ``ConeProgram`` is ``minimize x^T P x / 2 + q^T x`` subject to ``b - A x in K``
(``P`` is optional and usually absent) where
``K`` is a product of zero, nonnegative and second-order cones, listed in
row order. Every block of rows carries a name so that dual values can be
mapped back to the constraint that produced them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

ZERO, NONNEG, SOC = "zero", "nonneg", "soc"


@dataclass
class ConeProgram:
    q: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: List[Tuple[str, int]]
    variables: Dict[str, slice]
    rows: Dict[str, slice]
    row_cones: Dict[str, str] = field(default_factory=dict)
    # user objective = -(x^T P x / 2 + q^T x) / objective_scale + objective_constant
    objective_scale: float = 1.0
    objective_constant: float = 0.0
    P: Optional[sp.csc_matrix] = None

    @property
    def n_vars(self) -> int:
        return self.q.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def primal_objective(self, x: np.ndarray) -> float:
        """Canonical (minimized) objective."""
        quad = 0.0 if self.P is None else 0.5 * float(x @ (self.P @ x))
        return float(quad + self.q @ x)

    def user_objective(self, x: np.ndarray) -> float:
        return -self.primal_objective(x) / self.objective_scale + self.objective_constant

    def constraint_names(self) -> List[str]:
        return [k for k in self.rows if not k.startswith("aux:")]

    def validate(self) -> None:
        m, n = self.A.shape
        if n != self.q.size or m != self.b.size:
            raise ValueError("cone program dimensions are inconsistent")
        if self.P is not None and self.P.shape != (n, n):
            raise ValueError("quadratic term has the wrong shape")
        if sum(d for _, d in self.cones) != m:
            raise ValueError("cone dimensions do not cover all rows")
        for kind, d in self.cones:
            if kind == SOC and d < 2:
                raise ValueError("second-order cones need dimension >= 2")


class ProgramBuilder:
    """Incrementally collect variables and affine-in-cone row blocks."""

    def __init__(self):
        self.n_vars = 0
        self.variables: Dict[str, slice] = {}
        self._rows: List[np.ndarray] = []
        self._cols: List[np.ndarray] = []
        self._vals: List[np.ndarray] = []
        self._b: List[np.ndarray] = []
        self._cones: List[Tuple[str, int]] = []
        self.rows: Dict[str, slice] = {}
        self.row_cones: Dict[str, str] = {}
        self.n_rows = 0
        self._q: Dict[int, float] = {}
        self._q_blocks: List[Tuple[slice, np.ndarray]] = []
        self._quad: List[Tuple[slice, np.ndarray]] = []

    def var(self, name: str, size: int) -> slice:
        if name in self.variables:
            raise KeyError(f"variable {name!r} defined twice")
        s = slice(self.n_vars, self.n_vars + size)
        self.variables[name] = s
        self.n_vars += size
        return s

    def objective(self, var: slice, coef) -> None:
        """Add ``coef^T x[var]`` to the (maximized) user objective."""
        coef = np.broadcast_to(np.asarray(coef, dtype=float), (var.stop - var.start,))
        self._q_blocks.append((var, coef.copy()))

    def quadratic(self, var: slice, M) -> None:
        """Subtract ``x[var]^T M x[var]`` from the user objective (``M`` symmetric PSD)."""
        M = np.asarray(M, dtype=float)
        nv = var.stop - var.start
        if M.shape != (nv, nv):
            raise ValueError(f"quadratic term shape {M.shape} != {(nv, nv)}")
        self._quad.append((var, M))

    def add(self, name: str, kind: str, dim: int,
            terms: Sequence[Tuple[slice, object]], const=0.0) -> slice:
        """Require ``sum_j M_j x[var_j] + const`` to lie in a cone.

        Each term is ``(var, M)`` where ``M`` is a dense ``dim x len(var)``
        matrix, a 1-D array (diagonal, requires ``dim == len(var)``), a
        scalar (times identity), or a tuple ``(rows, cols, vals)`` of local
        triplets.
        """
        if name in self.rows:
            raise KeyError(f"constraint {name!r} defined twice")
        r0 = self.n_rows
        for var, M in terms:
            nv = var.stop - var.start
            if isinstance(M, tuple):
                rr, cc, vv = (np.asarray(a) for a in M)
            elif np.isscalar(M):
                if nv != dim:
                    raise ValueError(f"{name}: scalar term needs matching sizes")
                rr = cc = np.arange(dim)
                vv = np.full(dim, float(M))
            else:
                M = np.asarray(M, dtype=float)
                if M.ndim == 1:
                    if M.size != dim or nv != dim:
                        raise ValueError(f"{name}: diagonal term has wrong size")
                    rr = cc = np.arange(dim)
                    vv = M
                else:
                    if M.shape != (dim, nv):
                        raise ValueError(f"{name}: term shape {M.shape} != {(dim, nv)}")
                    rr, cc = np.nonzero(M)
                    vv = M[rr, cc]
            self._rows.append(rr + r0)
            self._cols.append(cc + var.start)
            # b - A x = M x + const  =>  A = -M
            self._vals.append(-np.asarray(vv, dtype=float))
        self._b.append(np.broadcast_to(np.asarray(const, dtype=float), (dim,)).copy())
        if kind == SOC or not self._cones or self._cones[-1][0] != kind:
            self._cones.append((kind, dim))
        else:
            self._cones[-1] = (kind, self._cones[-1][1] + dim)
        s = slice(r0, r0 + dim)
        self.rows[name] = s
        self.row_cones[name] = kind
        self.n_rows += dim
        return s

    def build(self, objective_constant: float = 0.0, normalize: bool = True) -> ConeProgram:
        c = np.zeros(self.n_vars)
        for var, coef in self._q_blocks:
            c[var] += coef
        P = None
        if self._quad:
            rr, cc, vv = [], [], []
            for var, M in self._quad:
                r, k = np.nonzero(M)
                rr.append(r + var.start)
                cc.append(k + var.start)
                vv.append(2.0 * M[r, k])
            P = sp.csc_matrix((np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))),
                              shape=(self.n_vars, self.n_vars))
            P.sum_duplicates()
        scale = 1.0
        if normalize:
            top = np.abs(c).max() if c.size else 0.0
            if P is not None and P.nnz:
                top = max(top, np.abs(P.data).max())
            if top > 0:
                scale = 1.0 / top
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = np.zeros(0, dtype=int)
            vals = np.zeros(0)
        A = sp.csc_matrix((vals, (rows, cols)), shape=(self.n_rows, self.n_vars))
        A.sum_duplicates()
        b = np.concatenate(self._b) if self._b else np.zeros(0)
        prog = ConeProgram(q=-scale * c, A=A, b=b, cones=list(self._cones),
                           variables=dict(self.variables), rows=dict(self.rows),
                           row_cones=dict(self.row_cones), objective_scale=scale,
                           objective_constant=objective_constant,
                           P=None if P is None else (scale * P).tocsc())
        prog.validate()
        return prog


def dump_program(prog: ConeProgram, path) -> None:
    """Write a cone program as plain text.

    Layout: a header line ``n_vars n_rows scale constant``, then sections
    ``q`` (index value), ``A`` (row col value), ``b`` (index value),
    ``cones`` (kind dim), ``rows`` / ``vars`` (name start stop) and ``P``
    (row col value).
    """
    A = prog.A.tocoo()
    Pc = sp.coo_matrix((prog.n_vars, prog.n_vars)) if prog.P is None else prog.P.tocoo()
    with open(path, "w") as fh:
        fh.write(f"{prog.n_vars} {prog.n_rows} {float(prog.objective_scale)!r} "
                 f"{float(prog.objective_constant)!r}\n")
        fh.write(f"q {np.count_nonzero(prog.q)}\n")
        for i in np.flatnonzero(prog.q):
            fh.write(f"{i} {float(prog.q[i])!r}\n")
        fh.write(f"A {A.nnz}\n")
        for r, c, v in zip(A.row, A.col, A.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
        fh.write(f"b {np.count_nonzero(prog.b)}\n")
        for i in np.flatnonzero(prog.b):
            fh.write(f"{i} {float(prog.b[i])!r}\n")
        fh.write(f"cones {len(prog.cones)}\n")
        for kind, d in prog.cones:
            fh.write(f"{kind} {d}\n")
        fh.write(f"rows {len(prog.rows)}\n")
        for name, s in prog.rows.items():
            fh.write(f"{name} {s.start} {s.stop} {prog.row_cones.get(name, '')}\n")
        fh.write(f"vars {len(prog.variables)}\n")
        for name, s in prog.variables.items():
            fh.write(f"{name} {s.start} {s.stop}\n")
        fh.write(f"P {Pc.nnz}\n")
        for r, c, v in zip(Pc.row, Pc.col, Pc.data):
            fh.write(f"{r} {c} {float(v)!r}\n")


def load_program(path) -> ConeProgram:
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
    n, m, scale, const = next(lines).split()
    n, m = int(n), int(m)

    def section(tag):
        head, count = next(lines).split()
        assert head == tag, f"expected section {tag}, got {head}"
        return [next(lines).split() for _ in range(int(count))]

    q = np.zeros(n)
    for i, v in section("q"):
        q[int(i)] = float(v)
    trip = section("A")
    rows = np.array([int(t[0]) for t in trip], dtype=int)
    cols = np.array([int(t[1]) for t in trip], dtype=int)
    vals = np.array([float(t[2]) for t in trip])
    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
    b = np.zeros(m)
    for i, v in section("b"):
        b[int(i)] = float(v)
    cones = [(k, int(d)) for k, d in section("cones")]
    row_map, row_cones = {}, {}
    for parts in section("rows"):
        row_map[parts[0]] = slice(int(parts[1]), int(parts[2]))
        if len(parts) > 3:
            row_cones[parts[0]] = parts[3]
    var_map = {name: slice(int(a), int(b_)) for name, a, b_ in section("vars")}
    ptrip = section("P")
    P = None
    if ptrip:
        P = sp.csc_matrix(([float(t[2]) for t in ptrip],
                           ([int(t[0]) for t in ptrip], [int(t[1]) for t in ptrip])),
                          shape=(n, n))
    prog = ConeProgram(q, A, b, cones, var_map, row_map, row_cones,
                       float(scale), float(const), P)
    prog.validate()
    return prog
