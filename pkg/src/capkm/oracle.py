"""Brute-force references for tests: exact CKM by enumeration, and EMD via
an explicit transportation LP (independent of the flow kernel)."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .optcore import EQ, LE, LpBuilder, lp_solve

SUBSET_GUARD = 10**6


class GuardExceeded(ValueError):
    pass


@dataclass
class ExactResult:
    feasible: bool
    cost: float
    S: tuple = ()
    sigma: np.ndarray | None = None   # client -> facility index


def _assign(d_fc, S, slots):
    """Optimal integral assignment onto ``slots[t]`` copies of facility S[t]."""
    cols = np.repeat(np.arange(len(S)), slots)
    if cols.size < d_fc.shape[1]:
        return math.inf, None
    cost = d_fc[np.asarray(S)[cols]].T          # clients x slots
    r, c = linear_sum_assignment(cost)
    sigma = np.empty(d_fc.shape[1], dtype=int)
    sigma[r] = np.asarray(S)[cols[c]]
    return float(cost[r, c].sum()), sigma


def exact_solve(inst, cap_scale=1.0, guard=SUBSET_GUARD):
    """Minimum cost over every open set of size min(k, |F|), loads <= floor(cap_scale u).

    Opening more facilities never hurts, so only maximum-size sets are
    enumerated (lexicographically); ties keep the first set.
    """
    if cap_scale < 1:
        raise ValueError("cap_scale must be >= 1")
    size = min(inst.k, inst.nf)
    count = math.comb(inst.nf, size)
    if count > guard:
        raise GuardExceeded(f"{count} subsets exceed the guard {guard}")
    slots_all = np.floor(cap_scale * inst.capacities + 1e-9).astype(int)
    slots_all = np.minimum(slots_all, inst.nc)
    d = inst.d_fc
    best = ExactResult(False, math.inf)
    for S in itertools.combinations(range(inst.nf), size):
        slots = slots_all[list(S)]
        if slots.sum() < inst.nc:
            continue
        cost, sigma = _assign(d, S, slots)
        if cost < best.cost - 1e-12:
            best = ExactResult(True, cost, S, sigma)
    return best


def reference_emd(inst, V, alpha, B, beta):
    """EMD from alpha on reps V to beta on facilities B via lp_solve."""
    V, B = list(V), list(B)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if alpha.sum() > beta.sum() + 1e-9 * max(1.0, alpha.sum()):
        raise ValueError("demand exceeds supply")
    if not V or not B or alpha.sum() <= 0:
        return 0.0
    b = LpBuilder()
    f = b.add_vars(len(V) * len(B), inst.d_fc[np.ix_(B, V)].T.ravel()).reshape(len(V), len(B))
    for a in range(len(V)):
        b.add_row(f[a], 1.0, EQ, alpha[a])
    for t in range(len(B)):
        b.add_row(f[:, t], 1.0, LE, beta[t])
    res = lp_solve(b.build())
    if not res.ok:
        raise ValueError(f"transport LP {res.status}")
    return float(res.objective)
