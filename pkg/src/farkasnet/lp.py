"""Linear-programming checks for the never-dead guarantee.

The min-max margin of an affine layer ``z = W x + b`` is

    p* = min_x max_i (w_i . x + b_i) = min_{x, s} s  s.t.  W x + b <= s 1,

and ``p* > 0`` exactly when no input makes every pre-activation non-positive.
It is solved with a dense two-phase tableau simplex using Bland's rule. Any
simplex vector ``lam`` with ``W.T lam == 0`` gives the dual value
``lam . b <= p*``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import InputError, UsageError

FEAS_TOL = 1e-8
PIVOT_TOL = 1e-9
MAX_PIVOTS = 50_000


@dataclass(frozen=True)
class LpProblem:
    """Affine map ``x -> W x + b`` with ``W`` of shape ``(m, n)``."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if W.shape[0] != b.shape[0]:
            raise InputError(f"W has {W.shape[0]} rows but b has {b.shape[0]} entries")
        if W.shape[0] < 1 or W.shape[1] < 1:
            raise InputError(f"empty problem of shape {W.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InputError("problem entries must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def m(self):
        return self.W.shape[0]

    @property
    def n(self):
        return self.W.shape[1]


@dataclass(frozen=True)
class LpOutcome:
    status: str  # "finite" | "unbounded_below"
    p_star: float = -np.inf
    x: Optional[np.ndarray] = None
    certificate: Optional[np.ndarray] = None

    @property
    def finite(self):
        return self.status == "finite"


class _Tableau:
    """Dense simplex tableau for ``min c.z  s.t.  A z = r, z >= 0`` (``r >= 0``)."""

    def __init__(self, A, r, basis):
        self.T = np.hstack([A, r[:, None]]).astype(np.float64)
        self.basis = list(basis)

    def pivot(self, row, col):
        T = self.T
        T[row] /= T[row, col]
        col_vals = T[:, col].copy()
        col_vals[row] = 0.0
        T -= np.outer(col_vals, T[row])
        self.basis[row] = col

    def reduced_costs(self, c):
        cb = c[self.basis]
        return c - cb @ self.T[:, :-1]

    def run(self, c, allowed):
        """Bland's-rule iterations; returns ``"optimal"`` or ``"unbounded"``."""
        for _ in range(MAX_PIVOTS):
            rc = self.reduced_costs(c)
            entering = next((j for j in allowed if rc[j] < -PIVOT_TOL), None)
            if entering is None:
                return "optimal", None
            column = self.T[:, entering]
            rows = np.flatnonzero(column > PIVOT_TOL)
            if rows.size == 0:
                return "unbounded", entering
            ratios = self.T[rows, -1] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
            leaving = min(ties, key=lambda i: self.basis[i])
            self.pivot(leaving, entering)
        raise RuntimeError("simplex did not terminate")  # Bland's rule forbids cycling

    def solution(self, ncols):
        z = np.zeros(ncols)
        for i, j in enumerate(self.basis):
            if j < ncols:
                z[j] = self.T[i, -1]
        return z


def _phase_one(A, r):
    """Find a basic feasible solution of ``A z = r, z >= 0``.

    Returns ``(tableau, kept_rows)`` or ``None`` when infeasible.
    """
    A = np.array(A, dtype=np.float64)
    r = np.array(r, dtype=np.float64)
    rows, ncols = A.shape
    flip = r < 0
    A[flip] *= -1.0
    r[flip] *= -1.0
    art = np.eye(rows)
    tab = _Tableau(np.hstack([A, art]), r, range(ncols, ncols + rows))
    c1 = np.concatenate([np.zeros(ncols), np.ones(rows)])
    tab.run(c1, range(ncols + rows))
    infeas = float(c1[tab.basis] @ tab.T[:, -1])
    if infeas > FEAS_TOL * max(1.0, float(np.abs(r).max(initial=0.0))):
        return None
    # drive artificials out of the basis; drop rows that are redundant
    keep = []
    for i in range(rows):
        if tab.basis[i] >= ncols:
            cand = np.flatnonzero(np.abs(tab.T[i, :ncols]) > PIVOT_TOL)
            if cand.size == 0:
                continue
            tab.pivot(i, int(cand[0]))
        keep.append(i)
    tab.T = np.hstack([tab.T[keep, :ncols], tab.T[keep, -1:]])
    tab.basis = [tab.basis[i] for i in keep]
    return tab, keep


def solve_standard_form(A, r, c):
    """Minimise ``c . z`` subject to ``A z = r``, ``z >= 0``.

    Returns ``(status, z, duals)`` with status in ``{"optimal", "unbounded",
    "infeasible"}``. ``duals`` solves ``B.T y = c_B`` for the final basis ``B``
    (rows of the original system; ``None`` if redundant rows were dropped).
    """
    A = np.asarray(A, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    ncols = A.shape[1]
    start = _phase_one(A, r)
    if start is None:
        return "infeasible", None, None
    tab, keep = start
    status, _ = tab.run(c, range(ncols))
    z = tab.solution(ncols)
    if status == "unbounded":
        return "unbounded", z, None
    duals = None
    if len(keep) == A.shape[0]:
        B = A[:, tab.basis]
        duals = np.linalg.solve(B.T, c[tab.basis])
    return "optimal", z, duals


def min_max_margin(p):
    """Solve ``min_{x,s} s`` subject to ``W x + b <= s 1``.

    Free variables are split as ``x = x+ - x-`` and ``s = s+ - s-``, and a
    slack per row turns the inequalities into equalities. When the optimum is
    finite the returned certificate ``lam`` is the optimal dual: ``lam >= 0``,
    ``sum(lam) == 1``, ``W.T lam == 0`` and ``lam . b == p*``.
    """
    if not isinstance(p, LpProblem):
        p = LpProblem(*p)
    W, b = p.W, p.b
    m, n = W.shape
    ones = np.ones((m, 1))
    A = np.hstack([W, -W, -ones, ones, np.eye(m)])
    c = np.zeros(A.shape[1])
    c[2 * n] = 1.0
    c[2 * n + 1] = -1.0
    status, z, duals = solve_standard_form(A, -b, c)
    if status == "unbounded":
        return LpOutcome("unbounded_below")
    if status != "optimal":  # pragma: no cover - (x, s) = (0, max b) is always feasible
        raise RuntimeError(f"unexpected LP status {status}")
    x = z[:n] - z[n : 2 * n]
    s = z[2 * n] - z[2 * n + 1]
    lam = -duals
    lam[np.abs(lam) < 1e-13] = 0.0
    return LpOutcome("finite", float(s), x, lam)


def dual_value(lam, p):
    """``lam . b`` if ``lam`` is dual feasible, else ``-inf``."""
    if not isinstance(p, LpProblem):
        p = LpProblem(*p)
    lam = np.asarray(lam, dtype=np.float64).reshape(-1)
    if lam.shape[0] != p.m:
        return -np.inf
    if np.any(lam < -FEAS_TOL) or abs(lam.sum() - 1.0) > FEAS_TOL:
        return -np.inf
    if np.max(np.abs(p.W.T @ lam)) > FEAS_TOL:
        return -np.inf
    return float(lam @ p.b)


def check_certificate(lam, p):
    """True iff ``lam`` proves ``{x : W x + b <= 0}`` is empty."""
    if not isinstance(p, LpProblem):
        p = LpProblem(*p)
    lam = np.asarray(lam, dtype=np.float64).reshape(-1)
    if lam.shape[0] != p.m:
        return False
    if np.any(lam < -1e-12):
        return False
    if np.max(np.abs(p.W.T @ lam)) > FEAS_TOL:
        return False
    return bool(lam @ p.b > 0)


def brute_force_margin(p, box_halfwidth, grid_points_per_axis):
    """Grid minimum of ``max_i (w_i . x + b_i)`` over ``[-h, h]^n`` (``n <= 3``).

    An upper bound on p* that converges to it when the minimiser lies in the box.
    """
    if not isinstance(p, LpProblem):
        p = LpProblem(*p)
    if p.n > 3:
        raise UsageError(f"grid oracle supports n <= 3, got n = {p.n}")
    axis = np.linspace(-box_halfwidth, box_halfwidth, int(grid_points_per_axis))
    mesh = np.meshgrid(*([axis] * p.n), indexing="ij")
    pts = np.stack([g.reshape(-1) for g in mesh], axis=1)
    best = np.inf
    for start in range(0, pts.shape[0], 200_000):
        chunk = pts[start : start + 200_000]
        vals = (chunk @ p.W.T + p.b).max(axis=1)
        best = min(best, float(vals.min()))
    return best


def inf_norm(A):
    """Max over rows of the row's l1 norm."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.size == 0:
        return 0.0
    return float(np.abs(A).sum(axis=1).max())


@dataclass(frozen=True)
class ReducedSystem:
    """``{z >= 0 : W_bar z + b = 0}`` with ``W_bar = [W | -W | I]``."""

    W_bar: np.ndarray
    b: np.ndarray

    def feasible_point(self):
        """A nonnegative solution, or ``None`` if the system is infeasible."""
        status, z, _ = solve_standard_form(self.W_bar, -self.b, np.zeros(self.W_bar.shape[1]))
        return None if status == "infeasible" else z

    def is_feasible(self):
        return self.feasible_point() is not None

    def recover_x(self, z):
        n = (self.W_bar.shape[1] - self.W_bar.shape[0]) // 2
        return z[:n] - z[n : 2 * n]


def farkas_feasibility_reduce(p):
    """Rewrite ``W x + b <= 0`` as a nonnegative equality system.

    With ``x = x+ - x-`` and a slack ``t >= 0``: ``W x+ - W x- + t + b = 0``.
    """
    if not isinstance(p, LpProblem):
        p = LpProblem(*p)
    W_bar = np.hstack([p.W, -p.W, np.eye(p.m)])
    return ReducedSystem(W_bar, p.b.copy())
