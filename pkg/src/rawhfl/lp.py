"""Linear-program container, solver wrapper and a vertex-enumeration oracle."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog


@dataclass
class LinearProgram:
    """min c.x + constant  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lo <= x <= hi.

    ``ub_family`` names the constraint family of each inequality row so that an
    infeasible program can report which family is to blame.
    """

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    constant: float = 0.0
    ub_family: list[str] = field(default_factory=list)

    @property
    def num_vars(self) -> int:
        return self.c.size

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.constant

    def is_feasible(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        scale = 1.0 + np.abs(self.b_ub) if self.b_ub.size else 1.0
        ok = np.all(x >= self.lo - tol * (1 + np.abs(self.lo)))
        ok &= np.all(x <= self.hi + tol * (1 + np.abs(self.hi)))
        if self.A_ub.size:
            ok &= np.all(self.A_ub @ x <= self.b_ub + tol * scale)
        if self.A_eq.size:
            ok &= np.allclose(self.A_eq @ x, self.b_eq, atol=tol * (1 + np.abs(self.b_eq).max()))
        return bool(ok)


@dataclass
class LPResult:
    x: Optional[np.ndarray]
    objective: float
    status: str  # "optimal" or "infeasible"
    violated_family: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class LPInfeasibleError(RuntimeError):
    pass


def _linprog(lp: LinearProgram, rows: np.ndarray | None = None):
    A_ub = lp.A_ub if rows is None else lp.A_ub[rows]
    b_ub = lp.b_ub if rows is None else lp.b_ub[rows]
    return linprog(
        lp.c,
        A_ub=A_ub if A_ub.size else None,
        b_ub=b_ub if A_ub.size else None,
        A_eq=lp.A_eq if lp.A_eq.size else None,
        b_eq=lp.b_eq if lp.A_eq.size else None,
        bounds=np.column_stack([lp.lo, lp.hi]),
        method="highs-ds",
    )


def _blame(lp: LinearProgram) -> str:
    families = list(dict.fromkeys(lp.ub_family))
    fam = np.array(lp.ub_family, dtype=object)
    for name in families:
        keep = np.flatnonzero(fam != name)
        if _linprog(lp, keep).status == 0:
            return name
    return "equality/bounds"


def solve_lp(lp: LinearProgram) -> LPResult:
    """Optimal basic solution of ``lp`` (dual simplex), or an infeasibility report."""
    res = _linprog(lp)
    if res.status == 2:
        return LPResult(None, np.inf, "infeasible", _blame(lp))
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x = np.clip(res.x, lp.lo, lp.hi)
    return LPResult(x, lp.objective(x), "optimal")


def enumerate_vertices(A: np.ndarray, b: np.ndarray, A_eq: np.ndarray | None = None,
                       b_eq: np.ndarray | None = None, tol: float = 1e-9) -> np.ndarray:
    """All vertices of {x : A x <= b, A_eq x = b_eq} by brute force.

    Every choice of ``n - rank(A_eq)`` inequality rows is made tight, the linear
    system solved, and the point kept if it satisfies every constraint. Only
    suitable for a handful of variables.
    """
    n = A.shape[1]
    if A_eq is None:
        A_eq = np.zeros((0, n))
        b_eq = np.zeros(0)
    k = n - A_eq.shape[0]
    verts = []
    scale = 1.0 + np.abs(b)
    for rows in itertools.combinations(range(A.shape[0]), k):
        M = np.vstack([A_eq, A[list(rows)]])
        rhs = np.concatenate([b_eq, b[list(rows)]])
        if np.linalg.cond(M) > 1e12:
            continue
        x = np.linalg.solve(M, rhs)
        if np.all(A @ x <= b + tol * scale) and np.allclose(A_eq @ x, b_eq, atol=1e-9):
            verts.append(x)
    if not verts:
        return np.zeros((0, n))
    return np.unique(np.round(np.array(verts), 12), axis=0)


def box_rows(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = lo.size
    eye = np.eye(n)
    return np.vstack([eye, -eye]), np.concatenate([hi, -lo])


def vertex_minimum(lp: LinearProgram) -> tuple[float, Optional[np.ndarray]]:
    """Optimal value of a small LP by enumerating every vertex."""
    Ab, bb = box_rows(lp.lo, lp.hi)
    A = np.vstack([lp.A_ub, Ab]) if lp.A_ub.size else Ab
    b = np.concatenate([lp.b_ub, bb]) if lp.b_ub.size else bb
    A_eq = lp.A_eq if lp.A_eq.size else None
    verts = enumerate_vertices(A, b, A_eq, lp.b_eq if A_eq is not None else None)
    if verts.shape[0] == 0:
        return np.inf, None
    vals = verts @ lp.c + lp.constant
    i = int(np.argmin(vals))
    return float(vals[i]), verts[i]
