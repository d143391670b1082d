"""Basic LP, configuration constraints for a facility set, and the zeta
distribution read off a feasible configuration vector."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._tol import ATOM_TOL, FEAS_TOL
from .optcore import EQ, GE, LE, LpBuilder, lp_solve

DEFAULT_BUDGET = 200_000       # configurations per block
MAX_BLOCK_VARS = 400_000       # z variables per block; keeps the master LP in memory
_SNAP = 1e-9


class BudgetExceeded(RuntimeError):
    """The configuration family for a facility set is larger than the budget."""


class InfeasibleMaster(RuntimeError):
    """The master LP has no feasible point (k too small or contradictory blocks)."""


@dataclass
class FractionalSolution:
    x: np.ndarray  # nf x nc
    y: np.ndarray  # nf

    def check(self, inst, tol=FEAS_TOL):
        x, y = self.x, self.y
        bad = []
        if y.sum() > inst.k + tol:
            bad.append("cardinality")
        if np.any(np.abs(x.sum(axis=0) - 1.0) > tol):
            bad.append("connection")
        if np.any(x > y[:, None] + tol):
            bad.append("connect-to-open")
        if np.any(x.sum(axis=1) > inst.capacities * y + tol):
            bad.append("capacity")
        if np.any(x < -tol) or np.any(x > 1 + tol) or np.any(y < -tol) or np.any(y > 1 + tol):
            bad.append("box")
        return bad


@dataclass
class Derived:
    d_av: np.ndarray
    D: np.ndarray
    lp_value: float
    x: np.ndarray = field(repr=False, default=None)
    y: np.ndarray = field(repr=False, default=None)

    def x_sum(self, facilities=None, clients=None):
        """x_{F',C'}; ``None`` means all."""
        sub = self.x
        if facilities is not None:
            sub = sub[list(facilities)]
        if clients is not None:
            sub = sub[:, list(clients)]
        return float(sub.sum())

    def y_sum(self, facilities=None):
        return float(self.y.sum() if facilities is None else self.y[list(facilities)].sum())

    def D_sum(self, facilities):
        return float(self.D[list(facilities)].sum())


def compute_derived(inst, fs):
    d = inst.d_fc
    d_av = np.sum(fs.x * d, axis=0)
    D = np.sum(fs.x * (d + d_av[None, :]), axis=1)
    lp_value = float(np.sum(fs.x * d))
    if abs(D.sum() - 2.0 * lp_value) > 1e-6 * max(1.0, lp_value):
        raise AssertionError("D_F != 2 LP")
    return Derived(d_av, D, lp_value, fs.x, fs.y)


# --------------------------------------------------------------- basic LP

def _basic_builder(inst):
    nf, nc = inst.nf, inst.nc
    b = LpBuilder()
    xv = b.add_vars(nf * nc, inst.d_fc.ravel(), 0.0, 1.0).reshape(nf, nc)
    yv = b.add_vars(nf, 0.0, 0.0, 1.0)
    b.add_row(yv, 1.0, LE, inst.k)
    for j in range(nc):
        b.add_row(xv[:, j], 1.0, EQ, 1.0)
    for i in range(nf):
        for j in range(nc):
            b.add_row([xv[i, j], yv[i]], [1.0, -1.0], LE, 0.0)
    for i in range(nf):
        b.add_row(np.append(xv[i], yv[i]), np.append(np.ones(nc), -inst.capacities[i]), LE, 0.0)
    return b, xv, yv


def build_basic_lp(inst):
    """Variables x (facility-major) then y; five constraint families."""
    return _basic_builder(inst)[0].build()


# ------------------------------------------------------- configuration sets

def n_configs(n_free, max_size):
    """Number of subsets of an n_free-set of size at most max_size."""
    if max_size < 0:
        return 0
    return sum(math.comb(n_free, s) for s in range(min(n_free, max_size) + 1))


def block_vars(n_free, n_forced, ell1, nc, n_block=None):
    """LP variables of one configuration block: z_S plus z_{S,i,j} per set.

    ``n_block`` (|B|) adds the bottom set when the support exceeds ell1.
    """
    room = ell1 - n_forced
    if room < 0:
        total = 0
    else:
        total = sum(math.comb(n_free, s) * (1 + (n_forced + s) * nc)
                    for s in range(min(n_free, room) + 1))
    if n_block is not None and n_free + n_forced > ell1:
        total += 1 + n_block * (1 + nc)
    return total


def enumerate_sets(free, forced, ell1):
    """All S with forced <= S <= forced | free and |S| <= ell1, by size then lex."""
    room = ell1 - len(forced)
    out = []
    for size in range(0, min(len(free), room) + 1):
        for extra in itertools.combinations(free, size):
            out.append(tuple(sorted(forced + extra)))
    return out


@dataclass
class ConfigBlock:
    """A feasible z vector for facility set B.

    ``sets[t]`` is a tuple of facility indices, or ``None`` for the
    more-than-ell1 configuration.  ``zy[t]`` and ``zx[t]`` hold z_{S,i} and
    z_{S,i,j} over the rows of ``B`` (zero for i not in S).
    """

    B: tuple
    ell1: int
    sets: list
    z: np.ndarray
    zy: np.ndarray   # n_sets x |B|
    zx: np.ndarray   # n_sets x |B| x nc
    source: str = "check"

    def verify(self, inst, fs, tol=1e-6):
        B = list(self.B)
        u = inst.capacities[B]
        ok = abs(self.z.sum() - 1.0) <= tol
        ok &= bool(np.all(np.abs(self.zy.sum(axis=0) - fs.y[B]) <= tol))
        ok &= bool(np.all(np.abs(self.zx.sum(axis=0) - fs.x[B]) <= tol))
        ok &= bool(np.all(self.zx.sum(axis=1) <= self.z[:, None] + tol))
        ok &= bool(np.all(self.zx.sum(axis=2) <= u[None, :] * self.zy + tol))
        ok &= bool(np.all(self.zx <= self.zy[:, :, None] + tol))
        ok &= bool(np.all(self.zy <= self.z[:, None] + tol))
        for t, S in enumerate(self.sets):
            if S is None:
                ok &= self.zy[t].sum() >= self.ell1 * self.z[t] - tol
            else:
                mask = np.isin(B, S)
                ok &= bool(np.all(np.abs(self.zy[t][mask] - self.z[t]) <= tol))
                ok &= bool(np.all(self.zy[t][~mask] <= tol))
        return bool(ok)


@dataclass(frozen=True)
class Violation:
    """Certificate that no z exists for facility set B."""

    B: tuple


class _BlockVars:
    """Variable layout of one configuration block inside an LpBuilder."""

    def __init__(self, B, sets, pairs):
        self.B = B
        self.sets = sets
        self.pairs = pairs      # pairs[t] = list of (row-in-B, client, var)
        self.zS = None
        self.zbot_i = None      # var per row of B for the bottom set


def _add_block(b, inst, B, sets, ell1, x_of, y_of, allowed=None):
    """Append the eight constraint families for B to builder ``b``.

    ``x_of(i, j)`` / ``y_of(i)`` return (var-or-None, constant) describing the
    coupled x / y value: a master variable or a fixed number.
    ``allowed[r, j]`` restricts which z_{S,i,j} variables exist.
    """
    nB, nc = len(B), inst.nc
    pos = {i: r for r, i in enumerate(B)}
    if allowed is None:
        allowed = np.ones((nB, nc), dtype=bool)
    bv = _BlockVars(B, sets, [])
    bv.zS = b.add_vars(len(sets), 0.0, 0.0, 1.0)
    by_i = [[] for _ in range(nB)]           # (set index, var) for z_{S,i}
    by_ij = {}                               # (r, j) -> list of vars
    for t, S in enumerate(sets):
        members = range(nB) if S is None else [pos[i] for i in S]
        if S is None:
            zi = b.add_vars(nB, 0.0, 0.0, 1.0)
            bv.zbot_i = zi
            for r in range(nB):
                b.add_row([zi[r], bv.zS[t]], [1.0, -1.0], LE, 0.0)
                by_i[r].append(zi[r])
            b.add_row(np.append(zi, bv.zS[t]), np.append(np.ones(nB), -ell1), GE, 0.0)
        else:
            for r in members:
                by_i[r].append(bv.zS[t])
        plist = []
        per_j = [[] for _ in range(nc)]
        per_r = {r: [] for r in members}
        for r in members:
            for j in range(nc):
                if allowed[r, j]:
                    v = b.add_var(0.0, 0.0, 1.0)
                    plist.append((r, j, v))
                    per_j[j].append(v)
                    per_r[r].append(v)
                    by_ij.setdefault((r, j), []).append(v)
                    if S is None:
                        b.add_row([v, bv.zbot_i[r]], [1.0, -1.0], LE, 0.0)
        bv.pairs.append(plist)
        for j in range(nc):
            if per_j[j]:
                b.add_row(per_j[j] + [bv.zS[t]], [1.0] * len(per_j[j]) + [-1.0], LE, 0.0)
        for r in members:
            if per_r[r]:
                cap_var = bv.zbot_i[r] if S is None else bv.zS[t]
                b.add_row(per_r[r] + [cap_var],
                          [1.0] * len(per_r[r]) + [-float(inst.capacities[B[r]])], LE, 0.0)
    b.add_row(bv.zS, 1.0, EQ, 1.0)
    for r, i in enumerate(B):
        var, const = y_of(i)
        if var is None and not by_i[r]:
            if abs(const) > _SNAP:
                b.add_row([bv.zS[0]], [0.0], EQ, const)
            continue
        idx = by_i[r] + ([var] if var is not None else [])
        coef = [1.0] * len(by_i[r]) + ([-1.0] if var is not None else [])
        b.add_row(idx, coef, EQ, const)
    for r, i in enumerate(B):
        for j in range(nc):
            var, const = x_of(i, j)
            vs = by_ij.get((r, j), [])
            if var is None and not vs:
                if abs(const) > _SNAP:
                    b.add_row([bv.zS[0]], [0.0], EQ, const)  # forces infeasibility
                continue
            idx = vs + ([var] if var is not None else [])
            coef = [1.0] * len(vs) + ([-1.0] if var is not None else [])
            b.add_row(idx, coef, EQ, const)
    return bv


def _extract_block(bv, sol, inst, ell1, source):
    nB, nc = len(bv.B), inst.nc
    nS = len(bv.sets)
    z = np.clip(sol[bv.zS], 0.0, None)
    zy = np.zeros((nS, nB))
    zx = np.zeros((nS, nB, nc))
    pos = {i: r for r, i in enumerate(bv.B)}
    for t, S in enumerate(bv.sets):
        if S is None:
            zy[t] = np.clip(sol[bv.zbot_i], 0.0, None)
        else:
            zy[t, [pos[i] for i in S]] = z[t]
        for r, j, v in bv.pairs[t]:
            zx[t, r, j] = max(sol[v], 0.0)
    return ConfigBlock(tuple(bv.B), ell1, list(bv.sets), z, zy, zx, source)


def check_budget(n_free, n_forced, ell1, nc, n_block, budget=DEFAULT_BUDGET,
                 max_vars=MAX_BLOCK_VARS):
    count = n_configs(n_free, ell1 - n_forced)
    if count > budget:
        raise BudgetExceeded(f"|B|={n_block}, ell1={ell1}: {count} configurations > {budget}")
    nv = block_vars(n_free, n_forced, ell1, nc, n_block)
    if nv > max_vars:
        raise BudgetExceeded(f"|B|={n_block}, ell1={ell1}: {nv} block variables > {max_vars}")


def fits_budget(B, ell1, nc, budget=DEFAULT_BUDGET):
    """Whether the master can hold the unreduced block for B."""
    try:
        check_budget(len(B), 0, ell1, nc, len(B), budget)
    except BudgetExceeded:
        return False
    return True


def full_sets(B, ell1, budget=DEFAULT_BUDGET, nc=1):
    """Every S <= B with |S| <= ell1, plus the bottom set when |B| > ell1."""
    check_budget(len(B), 0, ell1, nc, len(B), budget)
    sets = enumerate_sets(tuple(B), (), ell1)
    if len(B) > ell1:
        sets.append(None)
    return sets


# ------------------------------------------------------------ master solve

@dataclass
class RelaxationResult:
    fs: FractionalSolution
    derived: Derived
    objective: float
    blocks: dict          # B -> ConfigBlock read from the master optimum
    n_vars: int = 0
    n_rows: int = 0

    def __iter__(self):
        yield self.fs
        yield self.derived


def _snap(v):
    v = np.clip(v, 0.0, 1.0)
    v[v <= _SNAP] = 0.0
    v[v >= 1.0 - _SNAP] = 1.0
    return v


def solve_relaxation(inst, blocks=(), ell1=None, budget=DEFAULT_BUDGET, method="auto"):
    """Basic LP plus, for each facility set in ``blocks``, its configuration rows.

    ``blocks`` holds facility-index tuples; ``ell1`` is required when it is
    nonempty.
    """
    b, xv, yv = _basic_builder(inst)
    layouts = {}
    for B in blocks:
        B = tuple(sorted(B))
        if B in layouts:
            continue
        if ell1 is None:
            raise ValueError("ell1 is required with configuration blocks")
        sets = full_sets(B, ell1, budget, inst.nc)
        layouts[B] = _add_block(b, inst, B, sets, ell1,
                                x_of=lambda i, j: (xv[i, j], 0.0),
                                y_of=lambda i: (yv[i], 0.0))
    lp = b.build()
    res = lp_solve(lp, method=method)
    if not res.ok:
        raise InfeasibleMaster(f"master LP {res.status}")
    x = _snap(res.x[xv.ravel()].reshape(inst.nf, inst.nc))
    y = _snap(res.x[yv].copy())
    fs = FractionalSolution(x, y)
    bad = fs.check(inst)
    if bad:
        raise AssertionError(f"master optimum violates {bad}")
    derived = compute_derived(inst, fs)
    got = {B: _extract_block(bv, res.x, inst, ell1, "master") for B, bv in layouts.items()}
    return RelaxationResult(fs, derived, float(res.objective), got, lp.n_vars, lp.n_rows)


# -------------------------------------------------------------- separation

def config_check(inst, fs, B, ell1, budget=DEFAULT_BUDGET, method="auto"):
    """Feasibility of the configuration rows for B at the fixed (x, y).

    Exact reductions: facilities with y=1 are in every set with positive
    mass, facilities with y=0 in none, and z_{S,i,j} exists only where
    x_{i,j} > 0.  The budget is counted on the reduced family.
    """
    B = tuple(sorted(B))
    if not B:
        return ConfigBlock((), ell1, [()], np.ones(1), np.zeros((1, 0)),
                           np.zeros((1, 0, inst.nc)))
    y = _snap(np.array(fs.y, dtype=float))
    x = np.array(fs.x, dtype=float)
    x[x <= _SNAP] = 0.0
    forced = tuple(i for i in B if y[i] >= 1.0)
    free = tuple(i for i in B if 0.0 < y[i] < 1.0)
    supp = len(forced) + len(free)
    check_budget(len(free), len(forced), ell1, inst.nc, len(B), budget)
    sets = enumerate_sets(free, forced, ell1)
    if supp > ell1:
        sets.append(None)
    if not sets:
        return Violation(B)
    allowed = x[list(B)] > 0.0
    b = LpBuilder()
    bv = _add_block(b, inst, B, sets, ell1,
                    x_of=lambda i, j: (None, float(x[i, j])),
                    y_of=lambda i: (None, float(y[i])), allowed=allowed)
    res = lp_solve(b.build(), method=method)
    if not res.ok:
        return Violation(B)
    block = _extract_block(bv, res.x, inst, ell1, "check")
    if not block.verify(inst, FractionalSolution(x, y)):
        raise AssertionError("configuration block fails its own rows")
    return block


# ------------------------------------------------------------------- zeta

@dataclass
class ZetaDistribution:
    B: tuple
    probs: np.ndarray
    chi: list      # |B| x nc matrices
    mu: list       # |B| vectors

    def __len__(self):
        return len(self.probs)


def build_zeta(block, inst=None):
    """One atom (chi, mu) per configuration with z_S > 0."""
    probs, chi, mu = [], [], []
    for t in range(len(block.sets)):
        zs = block.z[t]
        if zs <= ATOM_TOL:
            continue
        probs.append(zs)
        c = np.clip(block.zx[t] / zs, 0.0, 1.0)
        m = np.clip(block.zy[t] / zs, 0.0, 1.0)
        if block.sets[t] is not None:
            m = np.round(m)
        chi.append(c)
        mu.append(m)
    if not probs:
        raise ValueError("configuration block carries no mass")
    p = np.array(probs)
    p /= p.sum()
    zeta = ZetaDistribution(tuple(block.B), p, chi, mu)
    if inst is not None:
        u = inst.capacities[list(block.B)]
        for c, m in zip(chi, mu):
            assert np.all(c <= m[:, None] + 1e-6)
            assert np.all(c.sum(axis=1) <= u * m + 1e-6)
            assert np.all((m == np.round(m))) or m.sum() >= block.ell1 - 1e-6
    return zeta
