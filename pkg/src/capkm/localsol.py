"""Local solutions inside one region.

A local solution is a pair (S, beta): an open set S inside the region's
facilities and a supply vector beta (in units of client demand) that is zero
off S.  Concentrated components get a distribution over such pairs; unions
of non-concentrated components get a single pair from a two-row LP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._tol import ATOM_TOL, CMP_TOL, approx_interval
from .optcore import EQ, LpBuilder, TransportProblem, lp_solve, transport_solve

PROB_TOL = 1e-9
PROP_TOL = 1e-7


class ConcentrationError(AssertionError):
    """Retained good-pair mass is below 1/(2l): the inputs are inconsistent."""


class LocalAssertion(AssertionError):
    pass


@dataclass(frozen=True)
class LocalSolution:
    B: tuple            # region facilities (global ids, sorted)
    S: tuple            # open facilities, subset of B
    beta: np.ndarray    # supply aligned with B

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.shape != (len(self.B),):
            raise ValueError("beta must align with B")
        if np.any(beta < -CMP_TOL):
            raise ValueError("negative supply")
        inS = np.isin(self.B, self.S)
        if np.any(beta[~inS] > CMP_TOL):
            raise ValueError("supply off the open set")
        object.__setattr__(self, "beta", np.clip(beta, 0.0, None))

    @property
    def size(self):
        return len(self.S)

    def supply(self):
        return float(self.beta.sum())


@dataclass
class LocalDistribution:
    B: tuple
    probs: np.ndarray
    sols: list
    diag: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.sols)

    @property
    def s(self):
        return float(np.dot(self.probs, [sol.size for sol in self.sols]))

    def sample(self, rng):
        return self.sols[int(rng.choice(len(self.sols), p=self.probs))]


# ------------------------------------------------------------------ EMD

def emd(inst, V, alpha, B, beta):
    """Earth mover distance from demand alpha on reps V to supply beta on B.

    Returns ``(cost, plan)`` with ``plan[v_index, i_index]``.
    """
    V, B = list(V), list(B)
    costs = inst.d_fc[np.ix_(B, V)].T if V and B else np.zeros((len(V), len(B)))
    return transport_solve(TransportProblem(alpha, beta, costs))


# ------------------------------------------------------------- helpers

def _normalize(atoms):
    atoms = [a for a in atoms if a[0] > ATOM_TOL]
    tot = sum(a[0] for a in atoms)
    if tot <= 0:
        raise LocalAssertion("distribution lost all mass")
    return [[p / tot, S, b] for p, S, b in atoms]


def _expected_size(atoms):
    return float(sum(p * len(S) for p, S, _ in atoms))


def _to_dist(B, atoms, diag):
    probs = np.array([a[0] for a in atoms])
    probs /= probs.sum()
    sols = [LocalSolution(B, tuple(sorted(S)), b) for _, S, b in atoms]
    return LocalDistribution(B, probs, sols, diag)


def _pad_rebalance(B, atoms, s):
    """Every atom ends with |S| in {floor s, ceil s} and the mean size is s.

    Padding adds the lowest-id facilities of B outside S (with zero supply);
    the shortfall is then covered by moving mass from floor-size atoms to
    one-larger copies, largest atom first.
    """
    lo, hi = approx_interval(s, CMP_TOL)
    if hi > len(B):
        raise LocalAssertion(f"target size {s:.6g} exceeds |B|={len(B)}")
    out = []
    for p, S, b in atoms:
        S = set(S)
        for i in B:
            if len(S) >= lo:
                break
            if i not in S:
                S.add(i)
        out.append([p, frozenset(S), b])
    deficit = s - _expected_size(out)
    while deficit > CMP_TOL and lo < hi:
        cand = [t for t, (p, S, _) in enumerate(out) if len(S) == lo and p > ATOM_TOL]
        if not cand:
            raise LocalAssertion("no floor-size atom left to rebalance")
        t = max(cand, key=lambda t: (out[t][0], -t))
        p, S, b = out[t]
        delta = min(p, deficit)
        extra = next(i for i in B if i not in S)
        out[t][0] = p - delta
        out.append([delta, S | {extra}, b])
        deficit -= delta
    return [a for a in out if a[0] > ATOM_TOL]


def check_distribution(dist, inst, alpha_sum, y_B, pi=0.0, ell=8, large=False):
    """Per-atom properties: sizes, supply caps, supply totals, mean size."""
    B = list(dist.B)
    u = inst.capacities[B].astype(float)
    s = dist.s
    if abs(dist.probs.sum() - 1.0) > PROB_TOL:
        raise LocalAssertion("probabilities do not sum to one")
    if large:
        if abs(s - y_B) > PROP_TOL:
            raise LocalAssertion(f"s={s:.9g} differs from y_B={y_B:.9g}")
    else:
        upper = y_B * (1.0 + 2.0 * ell * pi / alpha_sum) if alpha_sum > 0 else y_B
        if s < y_B - PROP_TOL or s > upper + PROP_TOL:
            raise LocalAssertion(f"s={s:.9g} outside [{y_B:.9g}, {upper:.9g}]")
    lo, hi = approx_interval(s, CMP_TOL)
    cap = u / (1.0 - 1.0 / ell)
    for sol in dist.sols:
        if sol.size not in (lo, hi):
            raise LocalAssertion(f"|S|={sol.size} not in {{{lo},{hi}}}")
        if np.any(sol.beta > cap + CMP_TOL):
            raise LocalAssertion("supply exceeds u/(1-1/l)")
        if abs(sol.supply() - alpha_sum) > PROP_TOL * max(1.0, alpha_sum):
            raise LocalAssertion(f"supply {sol.supply():.9g} != demand {alpha_sum:.9g}")


# ------------------------------------------------------------- massage

def massage_distribution(dist, ell, ell1, K=None):
    """Condition on small sets so that E max{|S|, floor s} <= s.

    Returns a new distribution; ``diag`` carries the case taken and the
    largest probability ratio new/old (bounded by 2 l1 (l1+1)).
    """
    s = dist.s
    if s > ell1 + CMP_TOL:
        raise LocalAssertion(f"s={s:.6g} exceeds l1={ell1}")
    lo, hi = approx_interval(s, CMP_TOL)
    sizes = np.array([sol.size for sol in dist.sols])
    w = dist.probs.copy()
    if s - lo <= 1.0 - 1.0 / ell + CMP_TOL:
        case = 1
        w[sizes > lo] = 0.0
    else:
        case = 2
        w[sizes > hi] = 0.0
        w[sizes == hi] /= 2.0 * ell1
    if w.sum() <= 0:
        raise LocalAssertion("massage conditioned on an empty support")
    w /= w.sum()
    keep = w > ATOM_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = float(np.max(w[keep] / dist.probs[keep]))
    bound = 2.0 * ell1 * (ell1 + 1.0) if K is None else K * ell * ell
    if ratio > bound * (1 + 1e-9):
        raise LocalAssertion(f"massage ratio {ratio:.6g} above {bound:.6g}")
    out = LocalDistribution(dist.B, w[keep] / w[keep].sum(),
                            [sol for sol, k in zip(dist.sols, keep) if k],
                            dict(dist.diag, massage_case=case, massage_ratio=ratio,
                                 massage_K=bound / (ell * ell)))
    if np.any(np.array([sol.size for sol in out.sols]) > hi):
        raise LocalAssertion("massaged atom larger than ceil s")
    emax = float(np.dot(out.probs, np.maximum([sol.size for sol in out.sols], lo)))
    if emax > s + CMP_TOL:
        raise LocalAssertion(f"E max(|S|, floor s) = {emax:.9g} > s = {s:.9g}")
    return out


# --------------------------------------------------- concentrated components

def concentrated_distribution(inst, derived, J, B, zeta, alpha_J, ell, ell1, pi=0.0, check=True):
    """Distribution over local solutions for a concentrated component.

    ``J`` is the rep tuple, ``B`` = U(J), ``zeta`` the distribution read off
    the configuration block of B, ``alpha_J`` the demand on J.
    """
    B = tuple(B)
    alpha_J = np.asarray(alpha_J, dtype=float)
    if len(zeta) == 0:
        raise ValueError("empty zeta distribution")
    xBC = float(alpha_J.sum())
    y_B = derived.y_sum(B)
    if y_B > 2 * ell + CMP_TOL:
        raise ValueError("y_B > 2l: use large_y_local")
    a = 1.0 / (1.0 - 1.0 / ell)

    # 1. good pairs
    keep = []
    for p, chi, mu in zip(zeta.probs, zeta.chi, zeta.mu):
        if mu.sum() <= y_B * a + CMP_TOL and chi.sum() >= (1.0 - 1.0 / ell) * xBC - CMP_TOL:
            keep.append((p, chi, mu))
    Q = float(sum(k[0] for k in keep))
    if Q < 1.0 / (2 * ell) - 1e-9:
        raise ConcentrationError(f"retained mass Q={Q:.6g} < 1/(2l)")

    # 2. atoms (S = support of mu, beta = chi_{i,C} / (1 - 1/l))
    atoms = []
    for p, chi, mu in keep:
        if np.any(np.abs(mu - np.round(mu)) > 1e-6):
            raise LocalAssertion("good pair with fractional mu")
        S = frozenset(B[t] for t in np.flatnonzero(np.round(mu) == 1))
        beta = chi.sum(axis=1) * a
        atoms.append([p / Q, S, beta])

    # 3. raise the mean size to y_B by moving mass onto (B, beta)
    full = frozenset(B)
    shifts = 0
    while _expected_size(atoms) < y_B - CMP_TOL:
        cand = [t for t, (p, S, _) in enumerate(atoms) if S != full and p > ATOM_TOL]
        if not cand:
            raise LocalAssertion("cannot raise mean size to y_B")
        t = max(cand, key=lambda t: (atoms[t][0], -t))
        p, S, b = atoms[t]
        delta = min(p, (y_B - _expected_size(atoms)) / (len(B) - len(S)))
        atoms[t][0] = p - delta
        atoms.append([delta, full, b])
        shifts += 1
    atoms = _normalize(atoms)

    # 4. trim supplies down to x_{B,C} along the EMD plan
    for at in atoms:
        b = at[2]
        tot = b.sum()
        if tot < xBC - PROP_TOL * max(1.0, xBC):
            raise LocalAssertion(f"atom supply {tot:.9g} below demand {xBC:.9g}")
        if 0 < tot <= xBC:
            at[2] = b * (xBC / tot)
        elif tot > xBC:
            if xBC <= 0:
                at[2] = np.zeros_like(b)
                continue
            if tot < xBC * (1 + 1e-12):
                at[2] = b * (xBC / tot)
                continue
            _, plan = emd(inst, J, alpha_J, B, b)
            nb = np.minimum(plan.sum(axis=0), b)
            at[2] = nb * (xBC / nb.sum())

    s_psi = _expected_size(atoms)
    psi = _to_dist(B, atoms, {"Q": Q, "shifts": shifts, "n_good": len(keep)})

    # 5. massage, 6. pad and rebalance back to s_psi
    psi2 = massage_distribution(psi, ell, ell1)
    atoms = [[p, frozenset(sol.S), sol.beta] for p, sol in zip(psi2.probs, psi2.sols)]
    atoms = _pad_rebalance(B, atoms, s_psi)
    diag = dict(psi2.diag, s_psi=s_psi, y_B=y_B, xBC=xBC, pi=pi)
    dist = _to_dist(B, atoms, diag)
    costs = [emd(inst, J, alpha_J, B, sol.beta)[0] for sol in dist.sols]
    D_B = derived.D_sum(B)
    dist.diag["emd_mean"] = float(np.dot(dist.probs, costs))
    dist.diag["emd_over_D"] = dist.diag["emd_mean"] / D_B if D_B > 0 else 0.0
    dist.diag["support"] = len(dist)
    if check:
        check_distribution(dist, inst, xBC, y_B, pi, ell)
    return dist


def zero_demand_distribution(B, y_B):
    """Components with no demand in U(J): sizes around y_B, zero supply."""
    B = tuple(B)
    atoms = _pad_rebalance(B, [[1.0, frozenset(), np.zeros(len(B))]], y_B)
    return _to_dist(B, atoms, {"zero_demand": True, "y_B": y_B, "emd_mean": 0.0})


# ------------------------------------------------------ large-y two-row LP

def _effective(derived, B):
    """Facilities with y > 0 and their u' = x_{i,C} / y_i.

    u' = 0 is kept: such a facility still counts towards sum lam = y_B, and
    it is the first one the removals close, at no scaling cost.
    """
    idx, up = [], []
    for t, i in enumerate(B):
        y = derived.y[i]
        if y > 0:
            idx.append(t)
            up.append(float(derived.x[i].sum()) / y)
    return idx, np.array(up)


def _two_row_lp(cost, up, xBC, ysum):
    """min cost.lam  s.t.  up.lam = xBC, sum lam = ysum, 0 <= lam <= 1."""
    b = LpBuilder()
    lam = b.add_vars(len(up), cost, 0.0, 1.0)
    b.add_row(lam, up, EQ, xBC)
    b.add_row(lam, 1.0, EQ, ysum)
    res = lp_solve(b.build())
    if not res.ok:
        raise LocalAssertion(f"two-row LP {res.status}")
    v = np.clip(res.x, 0.0, 1.0)
    v[v < 1e-10] = 0.0
    v[v > 1 - 1e-10] = 1.0
    nfrac = int(np.sum((v > 0) & (v < 1)))
    if nfrac > 2:
        raise LocalAssertion(f"vertex has {nfrac} fractional coordinates")
    return v, nfrac


def large_y_local(inst, derived, v, B, alpha_v, ell, drop=2, check=True):
    """Single representative whose bundle carries y_B > 2l."""
    B = tuple(B)
    y_B = derived.y_sum(B)
    idx, up = _effective(derived, B)
    xBC = float(derived.x[list(B)].sum())
    if abs(xBC - alpha_v) > PROP_TOL * max(1.0, xBC):
        raise LocalAssertion("alpha_v differs from x_{B,C}")
    Bp = [B[t] for t in idx]
    dist_v = inst.d_fc[Bp, v]
    lam, nfrac = _two_row_lp(up * dist_v, up, xBC, derived.y_sum(Bp))
    support_before = int(np.sum(lam > 0))
    factors = []
    for _ in range(drop):
        supp = np.flatnonzero(lam > 0)
        if supp.size <= 1:
            break
        served = lam[supp] * up[supp]
        t = supp[int(np.argmin(served))]       # first minimum = smallest id
        frac = lam[t] * up[t] / float(np.dot(lam, up))
        lam[t] = 0.0
        up = up / (1.0 - frac)
        factors.append(1.0 / (1.0 - frac))
    beta = np.zeros(len(B))
    beta[idx] = lam * up
    S = frozenset(B[idx[t]] for t in np.flatnonzero(lam > 0))
    atoms = _pad_rebalance(B, [[1.0, S, beta]], y_B)
    diag = {"large_y": True, "y_B": y_B, "xBC": xBC, "support_before": support_before,
            "fractional": nfrac, "scale": float(np.prod(factors)) if factors else 1.0}
    dist = _to_dist(B, atoms, diag)
    dist.diag["emd_mean"] = float(np.dot(dist.probs, [
        emd(inst, [v], [alpha_v], B, sol.beta)[0] for sol in dist.sols]))
    if check:
        check_distribution(dist, inst, xBC, y_B, 0.0, ell, large=True)
    return dist


# ---------------------------------------------- non-concentrated two-row LP

def nonconcentrated_local(inst, derived, comps, L, bundles, ell, alpha=None, check=True):
    """One local solution for a union V of non-concentrated components.

    ``comps`` are rep tuples, ``L`` their L values (inf allowed only for a
    lone component covering every representative).
    """
    owner, Lof = {}, {}
    for J, LJ in zip(comps, L):
        for v in J:
            Lof[v] = LJ
            for i in bundles[v]:
                owner[i] = v
    B = tuple(sorted(owner))
    V = [v for J in comps for v in J]
    xBC = float(derived.x[list(B)].sum()) if B else 0.0
    y_B = derived.y_sum(B) if B else 0.0
    idx, up = _effective(derived, B)
    beta = np.zeros(len(B))
    nfrac = 0
    if idx:
        Bp = [B[t] for t in idx]
        terms = np.array([inst.d_fc[i, owner[i]] + (0.0 if math.isinf(Lof[owner[i]])
                                                     else ell * ell * Lof[owner[i]])
                          for i in Bp])
        lam, nfrac = _two_row_lp(up * terms, up, xBC, derived.y_sum(Bp))
        beta[idx] = lam * up
        S = tuple(B[idx[t]] for t in np.flatnonzero(lam > 0))
    else:
        S = ()
    sol = LocalSolution(B, S, beta)
    if check:
        u = inst.capacities[list(B)].astype(float)
        if len(S) > math.ceil(y_B - CMP_TOL) + 1:
            raise LocalAssertion(f"|S|={len(S)} > ceil(y_B)+1")
        if np.any(beta > u + CMP_TOL):
            raise LocalAssertion("supply exceeds capacity")
        if abs(beta.sum() - xBC) > PROP_TOL * max(1.0, xBC):
            raise LocalAssertion("supply differs from x_{B,C}")
    diag = {"fractional": nfrac, "y_B": y_B, "xBC": xBC}
    if alpha is not None and B:
        diag["emd"] = emd(inst, V, [alpha[v] for v in V], B, beta)[0]
    return sol, diag
