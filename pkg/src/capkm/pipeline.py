"""End-to-end driver: cutting-plane loop over configuration blocks, local
solutions, joint rounding, removals and the final assignment."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import clustering, localsol, rounding
from .instance import topk_capacity
from .relaxation import (DEFAULT_BUDGET, BudgetExceeded, InfeasibleMaster, RelaxationResult,
                         Violation, build_zeta, compute_derived, config_check,
                         fits_budget, solve_relaxation)

log = logging.getLogger("capkm")


class InfeasibleInstance(ValueError):
    """No solution opens at most k facilities within the relaxed capacities."""


class StageError(AssertionError):
    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage
        self.cause = exc


def params_from_eps(eps, ell=None, ell1=None, ell2=None):
    """l = max(8, ceil(8/eps)), l1 = 3l, l2 = l^3 unless overridden."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    L = int(ell) if ell is not None else max(8, math.ceil(8.0 / eps - 1e-12))
    L1 = int(ell1) if ell1 is not None else 3 * L
    L2 = float(ell2) if ell2 is not None else float(L) ** 3
    return L, L1, L2


@dataclass
class SolveConfig:
    eps: float = 1.0
    ell: int | None = None
    ell1: int | None = None
    ell2: float | None = None
    seed: int = 0
    max_iters: int = 20
    budget: int = DEFAULT_BUDGET
    fallback: bool = True

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @property
    def params(self):
        return params_from_eps(self.eps, self.ell, self.ell1, self.ell2)


@dataclass
class SolveReport:
    instance: str
    eps: float
    ell: int
    ell1: int
    ell2: float
    seed: int
    lp_value: float
    basic_lp_value: float
    cost: float
    ratio: float
    violation: float
    beta_over_u: float
    max_remove_scale: float
    n_open: int
    k: int
    iterations: int
    violated_history: list
    fallback_count: int
    n_components: int
    n_concentrated: int
    n_groups: int
    n_removes: int
    initial_move_cost: float
    emd_cost: float
    transfer_cost: float
    open_facilities: list
    assignment: list
    notes: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.as_dict(), sort_keys=True)

    def to_text(self):
        lines = []
        for k, v in self.as_dict().items():
            if k == "assignment":
                continue
            if isinstance(v, float):
                v = repr(v)
            elif isinstance(v, list):
                v = json.dumps(v)
            lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"


@dataclass
class SolveTrace:
    """Everything the stages produced; tests use it to re-check invariants."""

    relax: object = None
    structure: object = None
    dists: dict = field(default_factory=dict)
    nlocals: list = field(default_factory=list)
    poly: object = None
    point: object = None
    vertex: object = None
    state: object = None
    solution: object = None
    balance_log: list = field(default_factory=list)


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (InfeasibleInstance, StageError):
        raise
    except AssertionError as exc:
        raise StageError(name, exc) from exc


def check_capacity(inst, eps):
    tot = topk_capacity(inst, scale=1.0 + eps)
    if tot < inst.nc:
        raise InfeasibleInstance(
            f"the {inst.k} largest relaxed capacities sum to {tot} < {inst.nc} clients")


def _separate(inst, relax, structure, ell, ell1, budget):
    """config_check on U(J) for every concentrated J that needs a block."""
    fs = relax.fs
    violated, over_budget, blocks = [], [], {}
    for c in structure.JC_set:
        B = tuple(structure.comp_facilities(c))
        y_B = relax.derived.y_sum(B)
        if structure.xBC[c] <= 0 or y_B > 2 * ell + 1e-9:
            continue
        if B in relax.blocks:
            blocks[c] = relax.blocks[B]
            continue
        try:
            res = config_check(inst, fs, B, ell1, budget)
        except BudgetExceeded:
            over_budget.append(c)
            continue
        if isinstance(res, Violation):
            violated.append((c, B))
        else:
            blocks[c] = res
    return violated, over_budget, blocks


def solve(inst, cfg=None, trace=None, master_cache=None):
    """Run the whole algorithm; returns a SolveReport.

    ``master_cache`` (optional dict) memoises master LP solves keyed by the
    block list, which lets batteries share work across eps values.
    """
    cfg = cfg or SolveConfig()
    ell, ell1, ell2 = cfg.params
    check_capacity(inst, cfg.eps)
    trace = trace if trace is not None else SolveTrace()
    notes = []
    blocks, history = [], []
    forced_n = []
    basic_lp = None

    def master(bl):
        # a block with |B| <= l1 enumerates every subset, so l1 beyond |B| is irrelevant
        key = tuple((B, min(ell1, len(B))) for B in bl)
        if master_cache is not None and key in master_cache:
            return master_cache[key]
        r = solve_relaxation(inst, bl, ell1 if bl else None, cfg.budget)
        if master_cache is not None:
            master_cache[key] = r
        return r

    it = 0
    while True:
        it += 1
        try:
            relax = master(blocks)
        except InfeasibleMaster as exc:
            raise InfeasibleInstance(str(exc)) from exc
        if basic_lp is None:
            basic_lp = relax.objective
        structure = _stage("clustering", clustering.build_structure,
                           inst, relax.derived, ell, ell2)
        violated, over_budget, zblocks = _separate(inst, relax, structure, ell, ell1, cfg.budget)
        # the master enumerates the unreduced family of B; skip blocks it cannot hold
        fits = [(c, B) for c, B in violated if fits_budget(B, ell1, inst.nc, cfg.budget)]
        over_budget += [c for c, B in violated if (c, B) not in fits]
        violated = fits
        log.info("iteration %d: lp=%.6g violated=%d over_budget=%d",
                 it, relax.objective, len(violated), len(over_budget))
        if violated and it < cfg.max_iters:
            new = [B for _, B in violated if B not in blocks]
            history.append([list(B) for B in new])
            if new:
                blocks = blocks + new
                continue
        forced_n = [c for c, _ in violated] + over_budget
        if forced_n and not cfg.fallback:
            raise StageError("separation", AssertionError(
                f"{len(forced_n)} components without a configuration block"))
        break

    notes.append("cutting-plane loop over configuration blocks replaces the ellipsoid method")
    return _complete(inst, cfg, relax, structure, zblocks, forced_n, history, it, basic_lp,
                     notes, trace)


def round_fractional(inst, fs, cfg=None, trace=None):
    """Round a supplied feasible basic-LP point instead of the master optimum.

    Separation runs once at that point; violated components take the
    fallback path.  Used to drive the rounding stages on crafted fractional
    solutions.
    """
    cfg = cfg or SolveConfig()
    ell, ell1, ell2 = cfg.params
    check_capacity(inst, cfg.eps)
    bad = fs.check(inst)
    if bad:
        raise ValueError(f"fractional point violates {bad}")
    trace = trace if trace is not None else SolveTrace()
    derived = compute_derived(inst, fs)
    relax = RelaxationResult(fs, derived, derived.lp_value, {})
    structure = _stage("clustering", clustering.build_structure, inst, derived, ell, ell2)
    violated, over_budget, zblocks = _separate(inst, relax, structure, ell, ell1, cfg.budget)
    forced_n = [c for c, _ in violated] + over_budget
    if forced_n and not cfg.fallback:
        raise StageError("separation", AssertionError(
            f"{len(forced_n)} components without a configuration block"))
    return _complete(inst, cfg, relax, structure, zblocks, forced_n, [], 1,
                     derived.lp_value, ["rounded from a supplied fractional point"], trace)


def _complete(inst, cfg, relax, structure, zblocks, forced_n, history, it, basic_lp, notes,
              trace):
    ell, ell1, ell2 = cfg.params
    if forced_n:
        notes.append(f"fallback: {len(forced_n)} component(s) treated as non-concentrated")
        structure = _stage("clustering", clustering.build_structure, inst, relax.derived,
                           ell, ell2, force_nonconcentrated=forced_n)
    notes.extend(structure.notes)
    derived = relax.derived
    trace.relax, trace.structure = relax, structure

    # local solutions
    dists = {}
    for c in structure.JC_set:
        J = structure.comp_reps(c)
        B = tuple(structure.comp_facilities(c))
        y_B = derived.y_sum(B)
        alpha_J = [structure.alpha[v] for v in J]
        if structure.xBC[c] <= 0:
            dists[c] = localsol.zero_demand_distribution(B, y_B)
        elif y_B > 2 * ell + 1e-9:
            if len(J) != 1:
                raise StageError("local", AssertionError("large component with several reps"))
            dists[c] = _stage("local", localsol.large_y_local, inst, derived, J[0], B,
                              alpha_J[0], ell)
        else:
            zeta = build_zeta(zblocks[c], inst)
            dists[c] = _stage("local", localsol.concentrated_distribution, inst, derived, J, B,
                              zeta, alpha_J, ell, ell1, structure.pi[c])
    nlocals = []
    for t, part in enumerate(structure.parts.JN):
        comps = [structure.comp_reps(c) for c in part]
        L = [structure.forest.L[c] for c in part]
        sol, _ = _stage("local", localsol.nonconcentrated_local, inst, derived, comps, L,
                        structure.bundles, ell)
        nlocals.append(sol)
    trace.dists, trace.nlocals = dists, nlocals

    # joint rounding
    comps = structure.JC_set
    ys = [derived.y_sum(dists[c].B) for c in comps]
    poly = rounding.build_polytope(comps, [[s.size for s in dists[c].sols] for c in comps],
                                   ys, structure.parts.JC)
    point = _stage("rounding", rounding.build_marginal_point, poly,
                   [dists[c].probs for c in comps], [dists[c].s for c in comps], ys)
    rng = np.random.default_rng(cfg.seed)
    w = _stage("rounding", rounding.sample_vertex, poly, point, rng)
    state, _ = _stage("rounding", rounding.assemble_initial, structure, poly, w, dists,
                      nlocals, inst.nf, inst.nc)
    q = {c: int(round(w[poly.q_index(t)])) for t, c in enumerate(comps)}
    trace.poly, trace.point, trace.vertex = poly, point, w
    _stage("removal", rounding.removal_schedule, state, structure, inst, q, ell, inst.k,
           cfg.eps)
    if state.repaired:
        notes.append("light root group: budget restored by a capacity-aware repair")
    trace.state = state
    sol = _stage("assignment", rounding.final_assignment, inst, state, cfg.eps)
    trace.solution = sol

    # cost breakdown
    move = sum(float(np.sum(derived.x[structure.bundles[v]].sum(axis=1)
                            * inst.d_fc[structure.bundles[v], v])) for v in structure.R)
    emd_cost = 0.0
    for r in state.regions:
        if r.U and state.alpha[list(r.reps)].sum() > 0:
            emd_cost += localsol.emd(inst, r.reps, state.alpha[list(r.reps)], r.U,
                                     state.beta[list(r.U)])[0]
    open_scale = [state.scale[i] for i in state.S]
    lp_value = relax.objective
    return SolveReport(
        instance=inst.name, eps=cfg.eps, ell=ell, ell1=ell1, ell2=ell2, seed=cfg.seed,
        lp_value=float(lp_value), basic_lp_value=float(basic_lp), cost=sol.cost,
        ratio=float(sol.cost / max(lp_value, 1e-9)), violation=sol.violation,
        beta_over_u=sol.diag["beta_over_u"],
        max_remove_scale=float(max(open_scale, default=1.0)),
        n_open=len(sol.S), k=inst.k, iterations=it, violated_history=history,
        fallback_count=len(forced_n), n_components=len(structure.forest.comps),
        n_concentrated=len(comps), n_groups=len(structure.groups.members),
        n_removes=sum(e["case"] != "repair" for e in state.ledger),
        initial_move_cost=float(move), emd_cost=float(emd_cost),
        transfer_cost=float(state.transfer_cost),
        open_facilities=[inst.facility_ids[i] for i in sol.S],
        assignment=[[inst.client_ids[j], inst.facility_ids[int(sol.sigma[j])]]
                    for j in range(inst.nc)],
        notes=notes,
    )
