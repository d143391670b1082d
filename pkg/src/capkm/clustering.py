"""Three-phase clustering: representatives and bundles, black components
with their binary forest, groups, and the concentrated / non-concentrated
partitions used by the rounding stage.

Representatives are client indices.  Components and groups are integer ids
in construction order; every tie is broken by the smaller id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._tol import ATOM_TOL, CMP_TOL

# big means weight >= ell - WEIGHT_TOL; guards against LP round-off on exact integers
WEIGHT_TOL = 1e-9
ASSERT_TOL = 1e-7


class ClusterAssertion(AssertionError):
    """A structural lemma property failed on a concrete build."""


@dataclass
class SurrogateConstants:
    """Explicit stand-ins for the O(l) / O(l^2) constants of the structural lemmas."""

    parent_dist: float = 8.0      # d(J, parent) <= parent_dist * l * L(J)
    group_dist: float = 32.0      # d(v, v') <= group_dist * l^2 * L(J)
    group_children: float = 8.0   # children per group <= group_children * l
    pi_bound: float = 10.0        # L(J) pi_J <= pi_bound * D_{U(J)}
    move_bound: float = 4.0       # sum x_{i,C} d(i,v) <= move_bound * D_{U_v}


# ---------------------------------------------------------------- phase 1

def select_representatives(inst, derived, check=True):
    """Greedy representatives, Voronoi bundles and the demand moved to each."""
    d_av = derived.d_av
    dcc = inst.d_cc
    remaining = set(range(inst.nc))
    R = []
    while remaining:
        v = min(remaining, key=lambda j: (d_av[j], j))
        R.append(v)
        remaining = {j for j in remaining if not dcc[j, v] <= 4.0 * d_av[j] + CMP_TOL}
    R.sort()
    dfr = inst.d_fc[:, R]                      # facility x rep
    owner = np.argmin(dfr, axis=1)             # first minimum = smallest rep id
    bundles = {v: [] for v in R}
    for i, r in enumerate(owner):
        bundles[R[r]].append(i)
    alpha = {v: float(derived.x[bundles[v]].sum()) for v in R}
    if check:
        check_representatives(inst, derived, R, bundles)
    return R, bundles, alpha


def check_representatives(inst, derived, R, bundles, consts=SurrogateConstants()):
    d_av, dcc, dfc = derived.d_av, inst.d_cc, inst.d_fc
    tol = ASSERT_TOL
    for a in R:
        for b in R:
            if a < b and not dcc[a, b] > 4.0 * max(d_av[a], d_av[b]) - tol:
                raise ClusterAssertion(f"representatives {a},{b} too close")
    Ra = np.array(R)
    for j in range(inst.nc):
        ok = (d_av[Ra] <= d_av[j] + tol) & (dcc[Ra, j] <= 4.0 * d_av[j] + tol)
        if not ok.any():
            raise ClusterAssertion(f"client {j} has no nearby representative")
    for v in R:
        U = bundles[v]
        if derived.y[U].sum() < 0.5 - tol:
            raise ClusterAssertion(f"bundle of {v} has y {derived.y[U].sum():.6g} < 1/2")
        for i in U:
            if np.any(dfc[i, v] > dfc[i, :] + 4.0 * d_av + tol):
                raise ClusterAssertion(f"facility {i} far from its representative {v}")
        moved = float(np.sum(derived.x[U].sum(axis=1) * dfc[U, v]))
        if moved > consts.move_bound * derived.D[U].sum() + tol:
            raise ClusterAssertion(f"moving bundle {v} costs {moved:.6g} > 4 D")
    total = sum(float(np.sum(derived.x[bundles[v]].sum(axis=1) * dfc[bundles[v], v])) for v in R)
    if total > 2.0 * consts.move_bound * derived.lp_value + tol:
        raise ClusterAssertion("initial move exceeds 8 LP")


# ---------------------------------------------------------------- phase 2

class _DSU:
    def __init__(self, items, weight):
        self.p = {v: v for v in items}
        self.w = dict(weight)

    def find(self, v):
        while self.p[v] != v:
            self.p[v] = self.p[self.p[v]]
            v = self.p[v]
        return v

    def union(self, a, b):
        a, b = self.find(a), self.find(b)
        if a == b:
            return a
        if b < a:
            a, b = b, a
        self.p[b] = a
        self.w[a] += self.w[b]
        return a


@dataclass
class Forest:
    """Black components over representatives with the binary forest."""

    comps: list                 # comp id -> sorted tuple of reps
    comp_of: dict               # rep -> comp id
    weight: list                # comp id -> y_{U(J)}
    L: list                     # comp id -> d(J, R \\ J), inf if J = R
    parent0: list               # parent in the contracted forest (-1 root)
    parent: list                # parent in the binary forest (-1 root)
    children: list              # binary-forest children lists
    edges: list = field(default_factory=list)   # (d, v, v', colour)

    @property
    def roots(self):
        return [c for c, p in enumerate(self.parent) if p < 0]


def build_black_components(R, weights, dist, ell, check=True, consts=SurrogateConstants()):
    """Kruskal with black / grey / white colouring and LCRS binarisation.

    ``weights`` maps rep -> y_{U_v}; ``dist`` is indexable as dist[v, v'].
    """
    R = sorted(R)
    pairs = sorted((float(dist[a, b]), a, b) for x, a in enumerate(R) for b in R[x + 1:])
    dsu = _DSU(R, weights)
    big = lambda w: w >= ell - WEIGHT_TOL
    mst = []
    for dd, a, b in pairs:
        ra, rb = dsu.find(a), dsu.find(b)
        if ra == rb:
            continue
        wa, wb = dsu.w[ra], dsu.w[rb]
        if not big(wa) and not big(wb):
            colour = "black"
        elif big(wa) and big(wb):
            colour = "white"
        elif big(wb):
            colour = "grey"            # directed a -> b
        else:
            colour = "grey"
            a, b = b, a                # keep the small side first
        mst.append((dd, a, b, colour))
        dsu.union(ra, rb)

    black = _DSU(R, {v: 0.0 for v in R})
    for dd, a, b, colour in mst:
        if colour == "black":
            black.union(a, b)
    groups = {}
    for v in R:
        groups.setdefault(black.find(v), []).append(v)
    comps = sorted(tuple(sorted(g)) for g in groups.values())
    comp_of = {v: c for c, J in enumerate(comps) for v in J}
    weight = [float(sum(weights[v] for v in J)) for J in comps]
    L = []
    for J in comps:
        rest = [v for v in R if comp_of[v] != comp_of[J[0]]]
        L.append(float(np.min(dist[np.ix_(J, rest)])) if rest else math.inf)

    parent0 = [-1] * len(comps)
    for dd, a, b, colour in mst:
        if colour == "grey":
            parent0[comp_of[a]] = comp_of[b]

    # left-child-right-sibling: children sorted by (L, id)
    parent = list(parent0)
    kids0 = [[] for _ in comps]
    for c, p in enumerate(parent0):
        if p >= 0:
            kids0[p].append(c)
    for p, ks in enumerate(kids0):
        ks.sort(key=lambda c: (L[c], c))
        for x, c in enumerate(ks):
            parent[c] = p if x == 0 else ks[x - 1]
    children = [[] for _ in comps]
    for c, p in enumerate(parent):
        if p >= 0:
            children[p].append(c)
    forest = Forest(comps, comp_of, weight, L, parent0, parent, children, mst)
    if check:
        check_black_components(forest, dist, ell, consts)
    return forest


def _cdist(dist, A, B):
    return float(np.min(dist[np.ix_(list(A), list(B))]))


def check_black_components(forest, dist, ell, consts=SurrogateConstants()):
    tol = ASSERT_TOL
    comps, L, w = forest.comps, forest.L, forest.weight
    covered = sorted(v for J in comps for v in J)
    if len(covered) != len(set(covered)):
        raise ClusterAssertion("components overlap")
    single = len(comps) == 1
    for dd, a, b, colour in forest.edges:
        if colour == "black":
            c = forest.comp_of[a]
            if forest.comp_of[b] != c:
                raise ClusterAssertion("black edge across components")
            if dd > L[c] + tol:
                raise ClusterAssertion(f"black edge {dd:.6g} longer than L={L[c]:.6g}")
    for c, J in enumerate(comps):
        p = forest.parent[c]
        if p < 0:
            # a small root only arises when every edge is black and J = R
            if w[c] < ell - WEIGHT_TOL and not single:
                raise ClusterAssertion(f"root component {c} has weight {w[c]:.6g} < l")
            if not (w[c] < 2 * ell or len(J) == 1):
                raise ClusterAssertion(f"root component {c} is large and not a singleton")
        else:
            if w[c] >= ell - WEIGHT_TOL:
                raise ClusterAssertion(f"non-root component {c} has weight >= l")
            if L[c] < L[p] - tol:
                raise ClusterAssertion(f"component {c} has L below its parent")
            if _cdist(dist, J, comps[p]) > consts.parent_dist * ell * L[c] + tol:
                raise ClusterAssertion(f"component {c} is far from its parent")
        if len(forest.children[c]) > 2:
            raise ClusterAssertion(f"component {c} has more than two children")


# ---------------------------------------------------------------- phase 3

@dataclass
class Groups:
    members: list        # group id -> list of comp ids
    group_of: list       # comp id -> group id
    parent: list         # group id -> parent group id or -1
    children: list       # group id -> sorted child group ids
    weight: list

    @property
    def roots(self):
        return [g for g, p in enumerate(self.parent) if p < 0]

    def is_leaf(self, g):
        return not self.children[g]


def build_groups(forest, ell, dist=None, check=True, consts=SurrogateConstants()):
    """Greedy growth from each subtree root by smallest L."""
    n = len(forest.comps)
    kids, L, w = forest.children, forest.L, forest.weight
    group_of = [-1] * n
    members = []
    todo = [r for r in forest.roots]
    todo.sort()
    while todo:
        root = todo.pop(0)
        G = [root]
        total = w[root]
        while total < ell - WEIGHT_TOL:
            front = [c for g in G for c in kids[g] if c not in G]
            if not front:
                break
            nxt = min(front, key=lambda c: (L[c], c))
            G.append(nxt)
            total += w[nxt]
        gid = len(members)
        members.append(sorted(G))
        for c in G:
            group_of[c] = gid
        rest = sorted(c for g in G for c in kids[g] if c not in G)
        todo = rest + todo
    parent = [-1] * len(members)
    for gid, G in enumerate(members):
        tops = [c for c in G if forest.parent[c] < 0 or group_of[forest.parent[c]] != gid]
        if len(tops) != 1:
            raise ClusterAssertion(f"group {gid} is not connected")
        p = forest.parent[tops[0]]
        parent[gid] = group_of[p] if p >= 0 else -1
    children = [[] for _ in members]
    for gid, p in enumerate(parent):
        if p >= 0:
            children[p].append(gid)
    weight = [float(sum(w[c] for c in G)) for G in members]
    groups = Groups(members, group_of, parent, children, weight)
    if check:
        check_groups(groups, forest, ell, dist, consts)
    return groups


def check_groups(groups, forest, ell, dist=None, consts=SurrogateConstants()):
    tol = ASSERT_TOL
    seen = sorted(c for G in groups.members for c in G)
    if seen != list(range(len(forest.comps))):
        raise ClusterAssertion("groups do not partition the components")
    for g, G in enumerate(groups.members):
        if groups.parent[g] < 0:
            if len(G) != 1 or forest.parent[G[0]] >= 0:
                raise ClusterAssertion(f"root group {g} is not a single root component")
        elif groups.weight[g] >= 2 * ell:
            raise ClusterAssertion(f"non-root group {g} has weight >= 2l")
        if not groups.is_leaf(g) and groups.weight[g] < ell - WEIGHT_TOL:
            raise ClusterAssertion(f"non-leaf group {g} has weight < l")
        if len(groups.children[g]) > consts.group_children * ell:
            raise ClusterAssertion(f"group {g} has too many children")
        p = groups.parent[g]
        if p >= 0 and dist is not None:
            reps_p = [v for c in groups.members[p] for v in forest.comps[c]]
            for c in G:
                far = float(np.max(dist[np.ix_(list(forest.comps[c]), reps_p)]))
                if far > consts.group_dist * ell * ell * forest.L[c] + tol:
                    raise ClusterAssertion(f"component {c} far from parent group {p}")


# ------------------------------------------------ concentration, partitions

def classify_components(forest, bundles, x, ell2):
    """pi_J and the concentrated flag for every component."""
    pi, xBC, flags = [], [], []
    for J in forest.comps:
        U = [i for v in J for i in bundles[v]]
        xBj = x[U].sum(axis=0) if U else np.zeros(x.shape[1])
        p = float(np.sum(xBj * (1.0 - xBj)))
        tot = float(xBj.sum())
        # round-off on x_{U(J),j} in {0,1} leaves ~1e-16 residue; keep inf * 0 = 0 exact
        pi.append(p if p > ATOM_TOL else 0.0)
        xBC.append(tot)
        flags.append(tot <= 0.0 or p <= tot / ell2 + CMP_TOL)
    return pi, xBC, flags


@dataclass
class Partitions:
    JC: list         # list of lists of comp ids
    JN: list
    VN: list         # list of sorted rep tuples (same order as JN)
    JC_owner: list   # group whose rule produced each JC entry
    JN_owner: list   # group whose rule produced each JN / VN entry
    JN_root: list    # True when the JN entry comes from a root group


def build_partitions(groups, flags):
    JC, JN, oc, on, nroot = [], [], [], [], []
    for g, G in enumerate(groups.members):
        if groups.parent[g] < 0:
            c_part = [c for c in G if flags[c]]
            n_part = [c for c in G if not flags[c]]
            if c_part:
                JC.append(c_part); oc.append(g)
            if n_part:
                JN.append(n_part); on.append(g); nroot.append(True)
        if not groups.is_leaf(g):
            kids = [c for h in groups.children[g] for c in groups.members[h]]
            c_part = sorted(c for c in kids if flags[c])
            n_part = sorted(c for c in kids if not flags[c])
            if c_part:
                JC.append(c_part); oc.append(g)
            if n_part:
                JN.append(n_part); on.append(g); nroot.append(False)
    return JC, JN, oc, on, nroot


# ---------------------------------------------------------------- bundle

@dataclass
class ClusterStructure:
    R: list
    bundles: dict
    alpha: dict
    forest: Forest
    groups: Groups
    pi: list
    xBC: list
    concentrated: list
    parts: Partitions
    ell: int
    ell2: float
    notes: list = field(default_factory=list)

    def U(self, reps):
        return sorted(i for v in reps for i in self.bundles[v])

    def comp_reps(self, c):
        return self.forest.comps[c]

    def comp_facilities(self, c):
        return self.U(self.forest.comps[c])

    def group_reps(self, g):
        return sorted(v for c in self.groups.members[g] for v in self.forest.comps[c])

    @property
    def JC_set(self):
        return [c for c, f in enumerate(self.concentrated) if f]

    @property
    def JN_set(self):
        return [c for c, f in enumerate(self.concentrated) if not f]

    def is_root_comp(self, c):
        return self.forest.parent[c] < 0

    def vn_reps(self, t):
        return self.parts.VN[t]

    def dump(self):
        lines = []
        for v in self.R:
            lines.append(f"bundle rep={v} facilities={self.bundles[v]} alpha={self.alpha[v]:.6g}")
        f = self.forest
        for c, J in enumerate(f.comps):
            kind = "C" if self.concentrated[c] else "N"
            lines.append(
                f"component {c} reps={list(J)} weight={f.weight[c]:.6g} L={f.L[c]:.6g} "
                f"parent={f.parent[c]} contracted_parent={f.parent0[c]} pi={self.pi[c]:.6g} "
                f"class={kind} group={self.groups.group_of[c]}")
        g = self.groups
        for gid, G in enumerate(g.members):
            lines.append(f"group {gid} comps={G} weight={g.weight[gid]:.6g} "
                         f"parent={g.parent[gid]} children={g.children[gid]}")
        for t, part in enumerate(self.parts.JC):
            lines.append(f"JC[{t}] comps={part} owner={self.parts.JC_owner[t]}")
        for t, part in enumerate(self.parts.JN):
            lines.append(f"JN[{t}] comps={part} owner={self.parts.JN_owner[t]} reps={list(self.parts.VN[t])}")
        return "\n".join(lines)


def assemble_partitions(groups, forest, flags):
    JC, JN, oc, on, nroot = build_partitions(groups, flags)
    VN = [tuple(sorted(v for c in part for v in forest.comps[c])) for part in JN]
    return Partitions(JC, JN, VN, oc, on, nroot)


def check_partitions(parts, flags):
    cs = sorted(c for part in parts.JC for c in part)
    ns = sorted(c for part in parts.JN for c in part)
    if cs != [c for c, f in enumerate(flags) if f]:
        raise ClusterAssertion("JC partition does not cover the concentrated components")
    if ns != [c for c, f in enumerate(flags) if not f]:
        raise ClusterAssertion("JN partition does not cover the non-concentrated components")


def build_structure(inst, derived, ell, ell2, check=True, consts=SurrogateConstants(),
                    force_nonconcentrated=()):
    """Run all three phases, classify, and build the partitions."""
    R, bundles, alpha = select_representatives(inst, derived, check)
    weights = {v: float(derived.y[bundles[v]].sum()) for v in R}
    dist = inst.d_cc
    forest = build_black_components(R, weights, dist, ell, check, consts)
    groups = build_groups(forest, ell, dist, check, consts)
    pi, xBC, flags = classify_components(forest, bundles, derived.x, ell2)
    if check:
        for c, J in enumerate(forest.comps):
            U = [i for v in J for i in bundles[v]]
            lhs = 0.0 if pi[c] == 0.0 else forest.L[c] * pi[c]
            if lhs > consts.pi_bound * derived.D[U].sum() + ASSERT_TOL:
                raise ClusterAssertion(f"L(J) pi_J exceeds 10 D on component {c}")
    notes = []
    for c in force_nonconcentrated:
        if flags[c]:
            flags[c] = False
            notes.append(f"component {c} treated as non-concentrated (fallback)")
    parts = assemble_partitions(groups, forest, flags)
    if check:
        check_partitions(parts, flags)
    return ClusterStructure(R, bundles, alpha, forest, groups, pi, xBC, flags, parts,
                            ell, ell2, notes)
