"""Joint rounding of the local solutions.

The polytope over atom weights psi and removal indicators q is integral; a
vertex is drawn with the exact marginals by a randomized Caratheodory
decomposition.  The selected local solutions give an initial (S*, beta*,
alpha*) and the removal schedule then closes facilities until |S*| <= k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._tol import CMP_TOL, FEAS_TOL, approx_interval
from . import clustering
from .localsol import emd
from .optcore import EQ, GE, LE, LpBuilder, TransportProblem, lp_solve, mcf_assign, transport_solve

BAL_TOL = 1e-7
_SNAP = 1e-9


class RoundingAssertion(AssertionError):
    pass


class RemovePreconditionError(RoundingAssertion):
    pass


# -------------------------------------------------------------- polytope

@dataclass
class Polytope:
    """Rows lo <= A w <= hi over w = (psi blocks, q), all w in [0, 1]."""

    comps: list          # concentrated component ids, in variable order
    offsets: list        # start of each component's psi block
    sizes: list          # atom sizes per component
    A: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    names: list

    @property
    def n(self):
        return self.A.shape[1]

    def q_index(self, t):
        return self.offsets[-1] + t

    def psi(self, w, t):
        return w[self.offsets[t]:self.offsets[t + 1]]

    def violations(self, w, tol=FEAS_TOL):
        bad = []
        if np.any(w < -tol) or np.any(w > 1 + tol):
            bad.append("box")
        r = self.A @ w
        for name, v, a, b in zip(self.names, r, self.lo, self.hi):
            if v < a - tol or v > b + tol:
                bad.append(name)
        return bad

    def contains(self, w, tol=FEAS_TOL):
        return not self.violations(w, tol)


def build_polytope(comps, sizes, y, parts):
    """``sizes[t]`` lists |S| per atom of comps[t]; ``y[t]`` is y_{U(J)};
    ``parts`` lists the concentrated partition as lists of comp ids."""
    offsets = [0]
    for s in sizes:
        offsets.append(offsets[-1] + len(s))
    n = offsets[-1] + len(comps)
    pos = {c: t for t, c in enumerate(comps)}
    rows, lo, hi, names = [], [], [], []

    def size_row(ts):
        r = np.zeros(n)
        for t in ts:
            r[offsets[t]:offsets[t + 1]] = sizes[t]
            r[offsets[-1] + t] = -1.0
        return r

    for t, c in enumerate(comps):
        r = np.zeros(n)
        r[offsets[t]:offsets[t + 1]] = 1.0
        rows.append(r); lo.append(1.0); hi.append(1.0); names.append(f"one[{c}]")
    for p, part in enumerate(parts):
        r = np.zeros(n)
        for c in part:
            r[offsets[-1] + pos[c]] = 1.0
        rows.append(r); lo.append(-np.inf); hi.append(1.0); names.append(f"q[{p}]")
    for t, c in enumerate(comps):
        a, b = approx_interval(y[t])
        rows.append(size_row([t])); lo.append(a); hi.append(b); names.append(f"size[{c}]")
    for p, part in enumerate(parts):
        a, b = approx_interval(sum(y[pos[c]] for c in part))
        rows.append(size_row([pos[c] for c in part])); lo.append(a); hi.append(b)
        names.append(f"size-part[{p}]")
    if comps:
        a, b = approx_interval(float(sum(y)))
        rows.append(size_row(range(len(comps)))); lo.append(a); hi.append(b)
        names.append("size-all")
    A = np.array(rows) if rows else np.zeros((0, n))
    return Polytope(list(comps), offsets, [np.asarray(s, dtype=float) for s in sizes],
                    A, np.array(lo, dtype=float), np.array(hi, dtype=float), names)


def build_marginal_point(poly, probs, s_values, y):
    """psi* = phi, q* = s_J - y_{U(J)}; membership asserted."""
    w = np.zeros(poly.n)
    for t in range(len(poly.comps)):
        w[poly.offsets[t]:poly.offsets[t + 1]] = probs[t]
        w[poly.q_index(t)] = max(0.0, s_values[t] - y[t])
    bad = poly.violations(w)
    if bad:
        raise RoundingAssertion(f"marginal point violates {bad}")
    return w


def _snap(w):
    w = np.clip(w, 0.0, 1.0)
    w[w < _SNAP] = 0.0
    w[w > 1.0 - _SNAP] = 1.0
    return w


def _is_integral(w, tol=1e-7):
    return bool(np.all(np.abs(w - np.round(w)) <= tol))


def _face_vertex(poly, p, rng, retries=20):
    """A vertex of the minimal face of the polytope containing p."""
    r = poly.A @ p
    for _ in range(retries):
        c = rng.standard_normal(poly.n)
        b = LpBuilder()
        lo = np.where(p == 1.0, 1.0, 0.0)
        hi = np.where(p == 0.0, 0.0, 1.0)
        w = np.array([b.add_var(c[j], lo[j], hi[j]) for j in range(poly.n)])
        for row, v, a, h in zip(poly.A, r, poly.lo, poly.hi):
            nz = np.flatnonzero(row)
            if nz.size == 0:
                continue
            if abs(v - a) <= _SNAP:
                b.add_row(w[nz], row[nz], EQ, a)
            elif abs(v - h) <= _SNAP:
                b.add_row(w[nz], row[nz], EQ, h)
            else:
                if np.isfinite(a):
                    b.add_row(w[nz], row[nz], GE, a)
                if np.isfinite(h):
                    b.add_row(w[nz], row[nz], LE, h)
        res = lp_solve(b.build(), method="simplex")
        if res.ok and _is_integral(res.x):
            return np.round(res.x)
    raise RoundingAssertion("face LP did not return an integral vertex")


def decompose(poly, p, rng, max_steps=None):
    """Random convex decomposition p = sum_k lam_k w_k into integral vertices."""
    p = _snap(np.array(p, dtype=float))
    if poly.violations(p):
        raise RoundingAssertion(f"start point violates {poly.violations(p)}")
    out = []
    mass = 1.0
    steps = max_steps or (poly.n + len(poly.lo) + 2)
    for _ in range(steps):
        if _is_integral(p, _SNAP):
            out.append((mass, np.round(p)))
            return out
        w = _face_vertex(poly, p, rng)
        d = p - w
        if np.max(np.abs(d)) <= 1e-12:
            raise RoundingAssertion("fractional point is a vertex")
        t = math.inf
        pos, neg = d > 1e-15, d < -1e-15
        if pos.any():
            t = min(t, float(np.min((1.0 - p[pos]) / d[pos])))
        if neg.any():
            t = min(t, float(np.min(p[neg] / -d[neg])))
        ad, ap = poly.A @ d, poly.A @ p
        for v, x, a, h in zip(ad, ap, poly.lo, poly.hi):
            if v > 1e-12 and np.isfinite(h):
                t = min(t, (h - x) / v)
            elif v < -1e-12 and np.isfinite(a):
                t = min(t, (x - a) / -v)
        if not (0 < t < math.inf):
            raise RoundingAssertion(f"degenerate step length {t}")
        lam = t / (1.0 + t)
        out.append((mass * lam, w))
        mass *= 1.0 - lam
        p = _snap(p + t * d)
        # keep exact membership after round-off on rows that just became tight
        if poly.violations(p):
            raise RoundingAssertion(f"step left the polytope: {poly.violations(p)}")
    raise RoundingAssertion("decomposition did not terminate")


def sample_vertex(poly, p, rng, decomposition=None):
    """An integral vertex w with E[w] = p."""
    parts = decomposition if decomposition is not None else decompose(poly, p, rng)
    lam = np.array([a for a, _ in parts])
    lam = lam / lam.sum()
    w = parts[int(rng.choice(len(parts), p=lam))][1]
    if poly.violations(w):
        raise RoundingAssertion("sampled vertex outside the polytope")
    return w


# -------------------------------------------------------------- regions

@dataclass
class Region:
    kind: str            # "C" (concentrated component) or "N" (union of JN entry)
    key: int             # comp id for C, JN index for N
    reps: tuple
    U: tuple


def make_regions(structure):
    regions = []
    for c in structure.JC_set:
        J = structure.comp_reps(c)
        regions.append(Region("C", c, tuple(J), tuple(structure.U(J))))
    for t, reps in enumerate(structure.parts.VN):
        regions.append(Region("N", t, tuple(reps), tuple(structure.U(reps))))
    return regions


@dataclass
class RoundState:
    S: set
    beta: np.ndarray         # over F
    alpha: np.ndarray        # over clients (zero off representatives)
    scale: np.ndarray        # cumulative remove scaling per facility
    regions: list
    n_clients: int
    ledger: list = field(default_factory=list)
    transfer_cost: float = 0.0
    repaired: set = field(default_factory=set)   # facilities whose supply came from a repair

    def region(self, kind, key):
        for r in self.regions:
            if r.kind == kind and r.key == key:
                return r
        raise KeyError((kind, key))

    def open_in(self, U):
        return sorted(i for i in U if i in self.S)

    def balance_errors(self, tol=BAL_TOL):
        bad = []
        for r in self.regions:
            a = float(self.alpha[list(r.reps)].sum())
            b = float(self.beta[list(r.U)].sum()) if r.U else 0.0
            if abs(a - b) > tol * max(1.0, a):
                bad.append(f"{r.kind}{r.key}: demand {a:.9g} supply {b:.9g}")
        tot = float(self.alpha.sum())
        if abs(tot - self.n_clients) > tol * max(1.0, self.n_clients):
            bad.append(f"total demand {tot:.9g} != {self.n_clients}")
        off = [i for i in np.flatnonzero(self.beta > CMP_TOL) if i not in self.S]
        if off:
            bad.append(f"supply on closed facilities {off}")
        return bad

    def check(self):
        bad = self.balance_errors()
        if bad:
            raise RoundingAssertion("; ".join(bad))


def assemble_initial(structure, poly, w, dists, nlocals, n_facilities, n_clients):
    """Selected atoms plus the non-concentrated solutions give (S*, beta*, alpha*)."""
    S, beta = set(), np.zeros(n_facilities)
    owner = np.full(n_facilities, -1)
    chosen = {}

    def put(sol, tag):
        for t, i in enumerate(sol.B):
            if owner[i] >= 0:
                raise RoundingAssertion(f"facility {i} claimed twice")
            owner[i] = tag
            beta[i] = sol.beta[t]
        S.update(sol.S)

    for t, c in enumerate(poly.comps):
        psi = poly.psi(w, t)
        sel = np.flatnonzero(psi > 0.5)
        if sel.size != 1:
            raise RoundingAssertion(f"component {c} selects {sel.size} atoms")
        chosen[c] = int(sel[0])
        put(dists[c].sols[chosen[c]], c)
    for t, sol in enumerate(nlocals):
        put(sol, 10**6 + t)
    alpha = np.zeros(n_clients)
    for v, a in structure.alpha.items():
        alpha[v] = a
    state = RoundState(S, beta, alpha, np.ones(n_facilities), make_regions(structure),
                       n_clients)
    state.check()
    return state, chosen


# ---------------------------------------------------------------- remove

def resolve_target(structure, region):
    """(root_case, V' reps) for a region."""
    if region.kind == "C":
        c = region.key
        if structure.is_root_comp(c):
            return True, region.reps
        g = structure.groups.parent[structure.groups.group_of[c]]
        return False, tuple(structure.group_reps(g))
    t = region.key
    if structure.parts.JN_root[t]:
        comps = structure.parts.JN[t]
        if len(comps) != 1 or not structure.is_root_comp(comps[0]):
            raise RoundingAssertion("root non-concentrated entry is not a single root")
        return True, region.reps
    return False, tuple(structure.group_reps(structure.parts.JN_owner[t]))


def _pieces(state, structure, reps):
    """Intersections of the target rep set with each region."""
    rs = set(reps)
    out = []
    for r in state.regions:
        P = tuple(v for v in r.reps if v in rs)
        if P:
            out.append(P)
    return out


def _bundle_supply(state, structure, v):
    return float(state.beta[structure.bundles[v]].sum())


def _set_piece_demand(state, structure, P, target, base=None):
    """Rescale the demand of piece P to ``target`` keeping its shape."""
    P = list(P)
    w = state.alpha[P] if base is None else np.asarray(base, dtype=float)
    if w.sum() <= 0:
        w = np.array([_bundle_supply(state, structure, v) for v in P])
    if w.sum() <= 0:
        w = np.ones(len(P))
    state.alpha[P] = np.maximum(target, 0.0) * w / w.sum()


def _transfer_cost(inst, before, after, reps):
    reps = list(reps)
    diff = after[reps] - before[reps]
    src = np.maximum(-diff, 0.0)
    dst = np.maximum(diff, 0.0)
    if src.sum() <= 1e-15:
        return 0.0, 0.0
    dst *= src.sum() / dst.sum() if dst.sum() > 0 else 0.0
    cost, _ = transport_solve(TransportProblem(src, dst, inst.d_cc[np.ix_(reps, reps)]))
    return float(cost), float(src.sum())


def _close_and_rescale(state, structure, inst, T, pieces):
    """Close the smallest-supply open facility in U(T); redistribute on T."""
    UT = structure.U(T)
    opened = state.open_in(UT)
    i2 = min(opened, key=lambda i: (state.beta[i], i))
    tot = float(state.beta[UT].sum())
    a2 = state.beta[i2] / tot if tot > 0 else 0.0
    if a2 >= 1.0 - 1e-12 and state.beta[i2] > 0:
        raise RemovePreconditionError(f"closing {i2} leaves no supply in the target")
    plans = []
    for P in pieces:
        UP = structure.U(P)
        old_b = float(state.beta[UP].sum())
        new_b = (old_b - (state.beta[i2] if i2 in UP else 0.0)) / (1.0 - a2)
        old_a = float(state.alpha[list(P)].sum())
        target = old_a + (new_b - old_b)
        base = None
        if i2 in UP and state.beta[i2] > 0 and old_a > 0:
            rho = old_a / old_b
            _, plan = emd(inst, P, state.alpha[list(P)], UP, state.beta[UP] * rho)
            col = UP.index(i2)
            base = state.alpha[list(P)] - plan[:, col]
        plans.append((P, target, base))
    for P, target, base in plans:
        _set_piece_demand(state, structure, P, target, base)
    state.beta[i2] = 0.0
    state.S.discard(i2)
    others = [i for i in UT if i != i2]
    state.beta[others] /= 1.0 - a2
    state.scale[[i for i in others if i in state.S]] /= 1.0 - a2
    return i2, a2


def remove(state, structure, inst, region, ell):
    """Close one open facility of U(V u V'); keep every region balanced."""
    root, Vp = resolve_target(structure, region)
    V = region.reps
    UV, UVp = list(region.U), structure.U(Vp)
    if not state.open_in(UV):
        raise RemovePreconditionError(f"no open facility in region {region.kind}{region.key}")
    if len(state.open_in(UVp)) < ell - 6:
        raise RemovePreconditionError(
            f"only {len(state.open_in(UVp))} open facilities in V' of {region.kind}{region.key}")
    before = state.alpha.copy()
    touched = sorted(set(V) | set(Vp))
    event = {"region": f"{region.kind}{region.key}", "root": root, "V": list(V), "Vp": list(Vp)}
    if root:
        i2, a2 = _close_and_rescale(state, structure, inst, V, _pieces(state, structure, V))
        event.update(case="root", closed=int(i2), a=float(a2))
    else:
        i = min(state.open_in(UV), key=lambda i: (state.beta[i], i))
        supp = float(state.beta[UVp].sum())
        a = state.beta[i] / supp if supp > 0 else math.inf
        if a <= 1.0 / ell:
            bi = float(state.beta[i])
            if bi > 0:
                aV = state.alpha[list(V)]
                bV = state.beta[UV] * (aV.sum() / state.beta[UV].sum())
                _, plan = emd(inst, V, aV, UV, bV)
                state.alpha[list(V)] = np.maximum(aV - plan[:, UV.index(i)], 0.0)
                for P in _pieces(state, structure, Vp):
                    add = a * float(state.beta[structure.U(P)].sum())
                    _set_piece_demand(state, structure, P, float(state.alpha[list(P)].sum()) + add)
            state.beta[i] = 0.0
            state.S.discard(i)
            state.beta[UVp] *= 1.0 + a
            state.scale[[j for j in UVp if j in state.S]] *= 1.0 + a
            event.update(case=1, closed=int(i), a=float(a))
        else:
            i2, a2 = _close_and_rescale(state, structure, inst, Vp, _pieces(state, structure, Vp))
            event.update(case=2, closed=int(i2), a=float(a2))
    cost, amount = _transfer_cost(inst, before, state.alpha, touched)
    outside = np.setdiff1d(np.arange(state.alpha.size), touched)
    if np.any(np.abs(state.alpha[outside] - before[outside]) > 0):
        raise RoundingAssertion("remove touched demand outside V and V'")
    event.update(transfer_cost=cost, moved=amount)
    state.transfer_cost += cost
    state.ledger.append(event)
    state.check()
    return event


def group_order(groups):
    """Top-to-bottom (breadth-first) group order, siblings by ascending id."""
    order, queue = [], sorted(groups.roots)
    while queue:
        g = queue.pop(0)
        order.append(g)
        queue.extend(sorted(groups.children[g]))
    return order


def _bmatch_cost(inst, T, eps):
    caps = np.array([cap_limit(inst.capacities[i], eps) for i in T], dtype=int)
    if caps.sum() < inst.nc:
        return math.inf, None
    sub, cost = mcf_assign(inst.d_fc[list(T)].T, caps)
    return cost, np.bincount(np.asarray(T)[sub], minlength=inst.nf)


def repair_small_root(state, structure, inst, k, eps):
    """Bring |S*| down to k when the whole instance is one light group.

    Greedily closes the facility whose removal leaves the cheapest feasible
    b-matching under caps ceil((1+eps)u); if no single closure is feasible the
    k largest capacities are opened instead.  Supplies become the resulting
    integral loads and all regions merge into one.
    """
    S = sorted(state.S)
    closed = []
    while len(S) > k:
        trials = [(_bmatch_cost(inst, [j for j in S if j != i], eps)[0], i) for i in S]
        cost, i = min(trials)
        if not math.isfinite(cost):
            order = sorted(range(inst.nf), key=lambda i: (-cap_limit(inst.capacities[i], eps), i))
            closed.extend(i for i in S if i not in order[:k])
            S = sorted(order[:k])
            break
        S.remove(i)
        closed.append(i)
    cost, loads = _bmatch_cost(inst, S, eps)
    if loads is None:
        raise RoundingAssertion("repair found no feasible open set")
    state.S = set(S)
    state.beta = loads.astype(float)
    reps = tuple(sorted(v for r in state.regions for v in r.reps))
    state.regions = [Region("R", 0, reps, tuple(range(inst.nf)))]
    state.repaired = set(S)
    state.ledger.append({"region": "R0", "root": True, "case": "repair",
                         "closed": [int(i) for i in closed], "cost": float(cost)})
    state.check()
    return state


def removal_schedule(state, structure, inst, q, ell, k, eps=1.0):
    """Walk the groups top to bottom and call remove where the rules say."""
    parts = structure.parts
    for g in group_order(structure.groups):
        if structure.groups.parent[g] < 0:
            c = structure.groups.members[g][0]
            if structure.groups.weight[g] < ell - clustering.WEIGHT_TOL:
                # a root lighter than l is a lone leaf group with too few open
                # facilities for remove; repair only if the budget is exceeded
                if len(state.S) > k:
                    repair_small_root(state, structure, inst, k, eps)
                continue
            if structure.concentrated[c]:
                if q.get(c, 0) == 1:
                    remove(state, structure, inst, state.region("C", c), ell)
            else:
                t = next(t for t in range(len(parts.JN))
                         if parts.JN_root[t] and parts.JN_owner[t] == g)
                for _ in range(2):
                    reg = state.region("N", t)
                    if state.open_in(reg.U):
                        remove(state, structure, inst, reg, ell)
        if not structure.groups.is_leaf(g):
            for t in range(len(parts.JN)):
                if parts.JN_owner[t] == g and not parts.JN_root[t]:
                    for _ in range(2):
                        reg = state.region("N", t)
                        if state.open_in(reg.U):
                            remove(state, structure, inst, reg, ell)
            for h in sorted(structure.groups.children[g]):
                for c in structure.groups.members[h]:
                    if structure.concentrated[c] and q.get(c, 0) == 1:
                        remove(state, structure, inst, state.region("C", c), ell)
    if len(state.S) > k:
        raise RoundingAssertion(f"{len(state.S)} facilities open after the schedule, k={k}")
    return state


# ------------------------------------------------------------ assignment

@dataclass
class IntegralSolution:
    S: tuple
    sigma: np.ndarray        # client -> facility index
    loads: np.ndarray        # over F
    cost: float
    violation: float         # max load_i / u_i over open facilities
    diag: dict = field(default_factory=dict)


def cap_limit(u, eps):
    return math.ceil((1.0 + eps) * u - 1e-9)


def final_assignment(inst, state, eps):
    """Integral b-matching with caps ceil(beta*_i) on S*."""
    S = sorted(state.S)
    beta = state.beta
    if abs(beta.sum() - inst.nc) > BAL_TOL * max(1, inst.nc):
        raise RoundingAssertion(f"total supply {beta.sum():.9g} != |C|")
    caps = np.array([math.ceil(beta[i] - 1e-9) for i in S], dtype=int)
    u = inst.capacities.astype(float)
    ratio = max((beta[i] / u[i] for i in S if u[i] > 0), default=0.0)
    over = [i for i in S if beta[i] > (1.0 + eps) * u[i] + 1e-9
            and not (i in state.repaired and beta[i] <= cap_limit(u[i], eps))]
    if over:
        raise RoundingAssertion(
            f"supply above (1+eps)u on {[inst.facility_ids[i] for i in over]}")
    sub, _ = mcf_assign(inst.d_fc[S].T, caps)
    sigma = np.array([S[t] for t in sub], dtype=int)
    loads = np.bincount(sigma, minlength=inst.nf)
    for i in S:
        if loads[i] > cap_limit(u[i], eps):
            raise RoundingAssertion(f"load {loads[i]} above cap on {inst.facility_ids[i]}")
    cost = float(inst.d_fc[sigma, np.arange(inst.nc)].sum())
    viol = max((loads[i] / u[i] for i in S if loads[i] > 0), default=0.0)
    return IntegralSolution(tuple(S), sigma, loads, cost, float(viol),
                            {"beta_over_u": float(ratio)})
