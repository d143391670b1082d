"""Linear programs: a small builder, a dense bounded-variable simplex, and a
HiGHS route for the large sparse master problems.

The dense solver is a two-phase tableau simplex over variables with finite or
infinite bounds.  Entering and leaving choices follow Bland's rule, which
keeps the result deterministic and rules out cycling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .._tol import FEAS_TOL, RESIDUAL_FAIL

LE, EQ, GE = "<=", "=", ">="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

# problems with more tableau cells than this go to HiGHS under method="auto"
DENSE_CELL_LIMIT = 400_000
IPM_VAR_LIMIT = 20_000


class NumericalError(RuntimeError):
    """Raised when a returned point misses its rows by more than the residual cap."""


@dataclass
class LinearProgram:
    """min c.x  s.t.  A x (<=,=,>=) b,  lo <= x <= hi."""

    c: np.ndarray
    A: object
    senses: list
    b: np.ndarray
    lo: np.ndarray = None
    hi: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        if not sp.issparse(self.A):
            self.A = np.atleast_2d(np.asarray(self.A, dtype=float)).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.senses = list(self.senses)
        if self.lo is None:
            self.lo = np.zeros(n)
        if self.hi is None:
            self.hi = np.full(n, np.inf)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        m = self.A.shape[0]
        if self.A.shape[1] != n:
            raise ValueError("row length does not match variable count")
        if len(self.senses) != m or self.b.shape[0] != m:
            raise ValueError("senses/rhs do not match row count")
        bad = [s for s in self.senses if s not in (LE, EQ, GE)]
        if bad:
            raise ValueError(f"unknown relation {bad[0]!r}")
        if np.any(self.lo > self.hi):
            raise ValueError("variable with lo > hi")

    @property
    def n_vars(self):
        return self.c.shape[0]

    @property
    def n_rows(self):
        return self.A.shape[0]

    def dense_A(self):
        return self.A.toarray() if sp.issparse(self.A) else self.A

    def residual(self, x):
        """Largest violation of any row or bound at ``x``."""
        Ax = self.A @ x
        worst = 0.0
        senses = np.array(self.senses)
        if len(senses):
            d = Ax - self.b
            worst = max(
                worst,
                np.max(np.where(senses == LE, d, 0.0), initial=0.0),
                np.max(np.where(senses == GE, -d, 0.0), initial=0.0),
                np.max(np.where(senses == EQ, np.abs(d), 0.0), initial=0.0),
            )
        worst = max(worst, np.max(self.lo - x, initial=0.0), np.max(x - self.hi, initial=0.0))
        return float(worst)

    def n_at_bounds(self, x, tol=FEAS_TOL):
        at_lo = np.abs(x - self.lo) <= tol
        at_hi = np.abs(x - self.hi) <= tol
        return int(np.sum(at_lo | at_hi))


class LpBuilder:
    """Accumulates variables and sparse rows, then emits a LinearProgram."""

    def __init__(self):
        self.c = []
        self.lo = []
        self.hi = []
        self._ri, self._ci, self._v = [], [], []
        self.senses = []
        self.b = []

    def add_var(self, cost=0.0, lo=0.0, hi=np.inf):
        self.c.append(float(cost))
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        return len(self.c) - 1

    def add_vars(self, count, cost=0.0, lo=0.0, hi=np.inf):
        start = len(self.c)
        cost = np.broadcast_to(np.asarray(cost, dtype=float), (count,))
        self.c.extend(cost.tolist())
        self.lo.extend([float(lo)] * count)
        self.hi.extend([float(hi)] * count)
        return np.arange(start, start + count)

    def add_row(self, idx, coef, sense, rhs):
        r = len(self.b)
        idx = np.asarray(idx, dtype=int).reshape(-1)
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
        self._ri.extend([r] * idx.size)
        self._ci.extend(idx.tolist())
        self._v.extend(coef.tolist())
        self.senses.append(sense)
        self.b.append(float(rhs))
        return r

    @property
    def n_vars(self):
        return len(self.c)

    def build(self):
        n = len(self.c)
        A = sp.csr_matrix(
            (self._v, (self._ri, self._ci)), shape=(len(self.b), n), dtype=float
        )
        A.sum_duplicates()
        return LinearProgram(np.array(self.c), A, self.senses, np.array(self.b),
                             np.array(self.lo), np.array(self.hi))


@dataclass
class LpResult:
    status: str
    x: np.ndarray = None
    objective: float = np.nan
    basic: bool = False
    basis: list = field(default_factory=list)
    solver: str = ""

    @property
    def ok(self):
        return self.status == OPTIMAL


def lp_solve(lp, method="auto"):
    """Solve ``lp`` and return a basic optimal solution when one exists."""
    if method == "auto":
        m, n = lp.n_rows, lp.n_vars
        method = "simplex" if m * (n + 2 * m) <= DENSE_CELL_LIMIT else "highs"
    if method == "simplex":
        res = _solve_dense(lp)
    elif method == "highs":
        res = _solve_highs(lp)
    else:
        raise ValueError(f"unknown method {method!r}")
    if res.ok:
        r = lp.residual(res.x)
        if r > RESIDUAL_FAIL:
            raise NumericalError(f"LP residual {r:.3g} exceeds {RESIDUAL_FAIL:g}")
    return res


# ---------------------------------------------------------------- HiGHS route

def _solve_highs(lp):
    A = sp.csr_matrix(lp.A)
    senses = np.array(lp.senses)
    le = np.flatnonzero(senses == LE)
    ge = np.flatnonzero(senses == GE)
    eq = np.flatnonzero(senses == EQ)
    A_ub = sp.vstack([A[le], -A[ge]]).tocsr() if len(le) + len(ge) else None
    b_ub = np.concatenate([lp.b[le], -lp.b[ge]]) if A_ub is not None else None
    A_eq = A[eq] if len(eq) else None
    b_eq = lp.b[eq] if len(eq) else None
    bounds = np.column_stack([
        np.where(np.isfinite(lp.lo), lp.lo, -np.inf),
        np.where(np.isfinite(lp.hi), lp.hi, np.inf),
    ])
    # interior point plus crossover (still a vertex) is faster on the big masters
    meth = "highs-ipm" if lp.n_vars > IPM_VAR_LIMIT else "highs-ds"
    out = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method=meth,
                  options={"primal_feasibility_tolerance": 1e-9,
                           "dual_feasibility_tolerance": 1e-9})
    if out.status == 2:
        return LpResult(INFEASIBLE, solver="highs")
    if out.status == 3:
        return LpResult(UNBOUNDED, solver="highs")
    if out.status != 0:
        raise NumericalError(f"HiGHS failed: {out.message}")
    x = np.clip(out.x, lp.lo, lp.hi)
    return LpResult(OPTIMAL, x, float(lp.c @ x), basic=True, solver="highs")


# ------------------------------------------------------------- dense simplex

_PIV = 1e-9
_DJ = 1e-9


class _Tableau:
    """Bounded-variable tableau; every column lives in [0, ub]."""

    def __init__(self, T, rhs, ub, basis):
        self.T = T            # m x N, already B^-1 A
        self.xb = rhs         # values of basic variables
        self.ub = ub
        self.basis = basis
        self.at_upper = np.zeros(T.shape[1], dtype=bool)
        self.is_basic = np.zeros(T.shape[1], dtype=bool)
        self.is_basic[basis] = True
        self.iters = 0

    def basis_arr(self):
        return np.asarray(self.basis)

    def pivot(self, r, j):
        T = self.T
        piv = T[r, j]
        T[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        nz = np.flatnonzero(col)
        if nz.size:
            T[nz] -= np.outer(col[nz], T[r])
        self.is_basic[self.basis[r]] = False
        self.basis[r] = j
        self.is_basic[j] = True

    def run(self, cost, max_iter=100_000):
        """Minimise ``cost`` from the current basic feasible point."""
        T = self.T
        d = cost - cost[self.basis] @ T
        while True:
            self.iters += 1
            if self.iters > max_iter:
                raise NumericalError("simplex iteration limit reached")
            movable = (~self.is_basic) & (self.ub > 0)
            cand = movable & np.where(self.at_upper, d > _DJ, d < -_DJ)
            hits = np.flatnonzero(cand)
            if hits.size == 0:
                return True
            j = hits[0]
            sigma = -1.0 if self.at_upper[j] else 1.0
            alpha = sigma * T[:, j]
            # step limits: basics leaving at 0 or at their upper bound
            ubb = self.ub[self.basis]
            t_rows = np.full(alpha.shape, np.inf)
            pos = alpha > _PIV
            neg = (alpha < -_PIV) & np.isfinite(ubb)
            t_rows[pos] = self.xb[pos] / alpha[pos]
            t_rows[neg] = (ubb[neg] - self.xb[neg]) / (-alpha[neg])
            np.maximum(t_rows, 0.0, out=t_rows)
            t_min = t_rows.min(initial=np.inf)
            if not np.isfinite(t_min) and not np.isfinite(self.ub[j]):
                return False
            if t_min <= self.ub[j] + 1e-12:
                ties = np.flatnonzero(t_rows <= t_min + 1e-12)
                r_best = ties[np.argmin(self.basis_arr()[ties])]
                t_best = t_rows[r_best]
                to_upper = bool(neg[r_best])
            else:
                r_best, t_best, to_upper = -1, self.ub[j], False
            self.xb = self.xb - t_best * alpha
            if r_best < 0:
                self.at_upper[j] = not self.at_upper[j]
                continue
            leaving = self.basis[r_best]
            enter_val = (self.ub[j] if self.at_upper[j] else 0.0) + sigma * t_best
            self.pivot(r_best, j)
            self.xb[r_best] = enter_val
            self.at_upper[leaving] = to_upper
            self.at_upper[j] = False
            d = d - d[j] * T[r_best]

    def values(self):
        N = self.T.shape[1]
        x = np.where(self.at_upper, self.ub, 0.0)
        x[self.basis] = self.xb
        x[~np.isfinite(x)] = 0.0
        return x[:N]


def _solve_dense(lp):
    A = np.array(lp.dense_A(), dtype=float)
    m, n = A.shape
    lo, hi = lp.lo, lp.hi

    # substitute every variable by nonnegative columns with upper bounds
    shift, col_ub, owner, sign = np.zeros(n), [], [], []
    for j in range(n):
        if np.isfinite(lo[j]):
            shift[j] = lo[j]
            owner.append(j); sign.append(1.0); col_ub.append(hi[j] - lo[j])
        elif np.isfinite(hi[j]):
            shift[j] = hi[j]
            owner.append(j); sign.append(-1.0); col_ub.append(np.inf)
        else:
            owner.append(j); sign.append(1.0); col_ub.append(np.inf)
            owner.append(j); sign.append(-1.0); col_ub.append(np.inf)
    owner = np.array(owner, dtype=int)
    sign = np.array(sign)
    As = A[:, owner] * sign
    cs = lp.c[owner] * sign
    bs = lp.b - A @ shift

    senses = lp.senses
    n_slack = sum(1 for s in senses if s != EQ)
    S = np.zeros((m, n_slack))
    k = 0
    slack_of = [-1] * m
    for i, s in enumerate(senses):
        if s == LE:
            S[i, k] = 1.0
        elif s == GE:
            S[i, k] = -1.0
        if s != EQ:
            slack_of[i] = k
            k += 1
    Afull = np.hstack([As, S])
    flip = bs < 0
    Afull[flip] *= -1
    bs = np.where(flip, -bs, bs)
    n_struct = Afull.shape[1]

    # initial basis: a +1 slack where available, else an artificial
    basis = []
    art_rows = []
    for i in range(m):
        kk = slack_of[i]
        if kk >= 0 and Afull[i, As.shape[1] + kk] > 0:
            basis.append(As.shape[1] + kk)
        else:
            basis.append(-1)
            art_rows.append(i)
    n_art = len(art_rows)
    Art = np.zeros((m, n_art))
    for a, i in enumerate(art_rows):
        Art[i, a] = 1.0
        basis[i] = n_struct + a
    T = np.hstack([Afull, Art])
    N = T.shape[1]
    ub = np.concatenate([np.array(col_ub), np.full(n_slack, np.inf), np.full(n_art, np.inf)])
    tab = _Tableau(T, bs.copy(), ub, basis)

    if n_art:
        c1 = np.zeros(N)
        c1[n_struct:] = 1.0
        tab.run(c1)
        infeas = float(np.sum(tab.values()[n_struct:]))
        if infeas > FEAS_TOL * max(1.0, float(np.abs(bs).max(initial=0.0))):
            return LpResult(INFEASIBLE, solver="simplex")
        # freeze artificials at zero and drive basic ones out where possible
        tab.ub[n_struct:] = 0.0
        tab.at_upper[n_struct:] = False
        for r in range(m):
            if tab.basis[r] >= n_struct:
                row = tab.T[r, :n_struct]
                cand = np.flatnonzero((np.abs(row) > 1e-7) & ~tab.is_basic[:n_struct])
                if cand.size:
                    j = cand[0]
                    val = tab.ub[j] if tab.at_upper[j] else 0.0
                    tab.pivot(r, j)
                    tab.xb[r] = val
                    tab.at_upper[j] = False
        # recompute basic values after the degenerate pivots
        tab.xb = _basic_values(tab, bs)

    c2 = np.concatenate([cs, np.zeros(N - len(cs))])
    if not tab.run(c2):
        return LpResult(UNBOUNDED, solver="simplex")

    # refinement: solve B xB = b - N xN on the original standard-form columns
    xs = tab.values()
    refined = _basic_values(tab, bs, Tfull=np.hstack([Afull, Art]))
    if refined is not None:
        xs[tab.basis] = refined
    xs_struct = xs[:As.shape[1]]
    x = shift.copy()
    np.add.at(x, owner, sign * xs_struct)
    x = np.clip(x, lo, hi)
    return LpResult(OPTIMAL, x, float(lp.c @ x), basic=True,
                    basis=sorted(int(b) for b in tab.basis), solver="simplex")


def _basic_values(tab, b, Tfull=None):
    if Tfull is None:
        return tab.xb
    N = Tfull.shape[1]
    xn = np.where(tab.at_upper, tab.ub, 0.0)
    xn[tab.basis] = 0.0
    xn[~np.isfinite(xn)] = 0.0
    rhs = b - Tfull @ xn[:N]
    B = Tfull[:, tab.basis]
    try:
        xb = np.linalg.solve(B, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(xb)):
        return None
    return xb
