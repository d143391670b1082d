import numpy as np
import pytest
from scipy.optimize import linprog

from capkm.instance import Instance, gen_battery_instance, gen_gap_instance
from capkm.optcore import lp_solve
from capkm.relaxation import (BudgetExceeded, ConfigBlock, FractionalSolution, InfeasibleMaster,
                              Violation, block_vars, build_basic_lp, build_zeta,
                              config_check, enumerate_sets, n_configs, solve_relaxation)


def linprog_basic(inst):
    """Independent formulation of the basic LP for scipy."""
    nf, nc = inst.nf, inst.nc
    n = nf * nc + nf
    c = np.concatenate([inst.d_fc.ravel(), np.zeros(nf)])
    A_ub, b_ub = [], []
    row = np.zeros(n); row[nf * nc:] = 1; A_ub.append(row); b_ub.append(inst.k)
    for i in range(nf):
        for j in range(nc):
            row = np.zeros(n); row[i * nc + j] = 1; row[nf * nc + i] = -1
            A_ub.append(row); b_ub.append(0)
        row = np.zeros(n); row[i * nc:(i + 1) * nc] = 1; row[nf * nc + i] = -inst.capacities[i]
        A_ub.append(row); b_ub.append(0)
    A_eq = np.zeros((nc, n))
    for j in range(nc):
        A_eq[j, j:nf * nc:nc] = 1
    res = linprog(c, A_ub=np.array(A_ub), b_ub=b_ub, A_eq=A_eq, b_eq=np.ones(nc),
                  bounds=(0, 1), method="highs")
    return res.fun


def test_basic_lp_counts():
    inst = gen_gap_instance(2)
    lp = build_basic_lp(inst)
    nf, nc = inst.nf, inst.nc
    assert lp.n_vars == nf * nc + nf
    assert lp.n_rows == 1 + nc + nf * nc + nf


def test_single_pair_forced():
    inst = Instance(("f",), [1], ("c",), 1, np.array([[0.0, 2.0], [2.0, 0.0]]))
    lp = build_basic_lp(inst)
    assert lp.n_vars == 2
    res = lp_solve(lp)
    assert res.x.tolist() == pytest.approx([1.0, 1.0])
    assert res.objective == pytest.approx(2.0)


@pytest.mark.parametrize("u", [2, 3, 4])
def test_gap_basic_lp_is_zero(u):
    r = solve_relaxation(gen_gap_instance(u))
    assert r.objective == pytest.approx(0.0, abs=1e-9)
    assert r.fs.y.sum() <= 2 * u - 1 + 1e-9


@pytest.mark.parametrize("seed", range(8))
def test_basic_lp_matches_linprog(seed):
    inst = gen_battery_instance(seed)
    r = solve_relaxation(inst)
    assert r.objective == pytest.approx(linprog_basic(inst), abs=1e-6)
    assert r.fs.check(inst) == []


def test_derived_identities():
    inst = gen_battery_instance(4)
    r = solve_relaxation(inst)
    d = r.derived
    x = r.fs.x
    assert np.allclose(d.d_av, (x * inst.d_fc).sum(axis=0))
    assert np.allclose(d.D, (x * (inst.d_fc + d.d_av)).sum(axis=1))
    assert d.D.sum() == pytest.approx(2 * d.lp_value)
    assert d.lp_value == pytest.approx(r.objective)
    assert d.x_sum() == pytest.approx(inst.nc)
    assert d.x_sum([0], [0, 1]) == pytest.approx(x[0, :2].sum())
    assert d.y_sum([0, 1]) == pytest.approx(r.fs.y[:2].sum())


def test_fractional_solution_check():
    inst = gen_gap_instance(2)
    fs = FractionalSolution(np.zeros((inst.nf, inst.nc)), np.zeros(inst.nf))
    assert "connection" in fs.check(inst)
    x = np.zeros((inst.nf, inst.nc)); x[0] = 1
    fs = FractionalSolution(x, np.ones(inst.nf))
    assert {"cardinality", "capacity"} <= set(fs.check(inst))


def test_empty_blocks_equal_basic():
    inst = gen_battery_instance(8)
    a, b = solve_relaxation(inst), solve_relaxation(inst, [])
    assert a.objective == b.objective
    assert lp_solve(build_basic_lp(inst)).objective == pytest.approx(a.objective)


def test_gap_block_keeps_identity():
    inst = gen_gap_instance(2)
    r = solve_relaxation(inst, [(0, 1)], ell1=6)
    assert r.objective >= -1e-9
    assert r.derived.D.sum() == pytest.approx(2 * r.derived.lp_value, abs=1e-6)
    blk = r.blocks[(0, 1)]
    assert blk.verify(inst, r.fs)


def test_violated_block_raises_master():
    # seed 8 at l1 = 24: separation rejects U(J) = {0..4} at the basic optimum
    inst = gen_battery_instance(8)
    base = solve_relaxation(inst)
    B = (0, 1, 2, 3, 4)
    assert isinstance(config_check(inst, base.fs, B, 24), Violation)
    try:
        aug = solve_relaxation(inst, [B], ell1=24)
    except InfeasibleMaster:
        return
    assert aug.objective > base.objective + 1e-9
    assert isinstance(config_check(inst, aug.fs, B, 24), ConfigBlock)


def test_config_single_open():
    inst = Instance(("f", "g"), [2, 2], ("a", "b"), 2, np.zeros((4, 4)))
    x = np.array([[1.0, 1.0], [0.0, 0.0]])
    fs = FractionalSolution(x, np.array([1.0, 0.0]))
    blk = config_check(inst, fs, (0,), 3)
    assert isinstance(blk, ConfigBlock)
    assert blk.sets == [(0,)]
    assert blk.z.tolist() == pytest.approx([1.0])
    zeta = build_zeta(blk, inst)
    assert len(zeta) == 1 and zeta.probs.tolist() == [1.0]


def test_config_empty_set():
    inst = gen_gap_instance(2)
    fs = solve_relaxation(inst).fs
    blk = config_check(inst, fs, (), 3)
    assert blk.sets == [()] and blk.z.tolist() == [1.0]


def split_pair():
    # two facilities (u = 2, y = 0.75) and three clients split half/half
    inst = Instance(("f0", "f1"), [2, 2], ("a", "b", "c"), 2, np.zeros((5, 5)))
    x = np.full((2, 3), 0.5)
    return inst, FractionalSolution(x, np.array([0.75, 0.75]))


def test_config_violation_hand_built():
    # [DERIVED] by hand: every client is fully inside B, so z_empty = 0 and
    # z_{0} = z_{1} = 1/4, z_{01} = 1/2; the sets can serve at most
    # 2/4 + 2/4 + 3/2 = 2.5 < 3 clients.
    inst, fs = split_pair()
    assert fs.check(inst) == []
    assert isinstance(config_check(inst, fs, (0, 1), 5), Violation)


def test_config_feasible_with_two_clients():
    # same point with two clients: 2.5 >= 2 units of service are available
    inst = Instance(("f0", "f1"), [2, 2], ("a", "b"), 2, np.zeros((4, 4)))
    x = np.full((2, 2), 0.5)
    fs = FractionalSolution(x, np.array([0.75, 0.75]))
    blk = config_check(inst, fs, (0, 1), 5)
    assert isinstance(blk, ConfigBlock) and blk.verify(inst, fs)
    zeta = build_zeta(blk, inst)
    assert sum(p * m for p, m in zip(zeta.probs, zeta.mu)) == pytest.approx(fs.y, abs=1e-6)
    assert sum(p * c for p, c in zip(zeta.probs, zeta.chi)) == pytest.approx(x, abs=1e-6)
    assert len(zeta) <= len(blk.sets)


def test_zeta_on_master_blocks():
    inst = gen_battery_instance(8)
    r = solve_relaxation(inst, [(0, 1, 2, 3, 4)], ell1=24)
    blk = r.blocks[(0, 1, 2, 3, 4)]
    assert blk.verify(inst, r.fs)
    zeta = build_zeta(blk, inst)
    assert zeta.probs.sum() == pytest.approx(1.0, abs=1e-9)
    Ey = sum(p * m for p, m in zip(zeta.probs, zeta.mu))
    assert Ey == pytest.approx(r.fs.y[list(blk.B)], abs=1e-6)
    for c, m in zip(zeta.chi, zeta.mu):
        assert np.all(c <= m[:, None] + 1e-6)
        assert np.all(c.sum(axis=1) <= inst.capacities[list(blk.B)] * m + 1e-6)


def test_bottom_set_added_when_support_exceeds_l1():
    inst = gen_battery_instance(29)
    r = solve_relaxation(inst, [(0, 1, 2, 3, 4, 5, 6)], ell1=3)
    blk = r.blocks[(0, 1, 2, 3, 4, 5, 6)]
    assert blk.sets[-1] is None
    assert len(blk.sets) == n_configs(7, 3) + 1
    assert blk.verify(inst, r.fs)


def test_enumeration_and_budget():
    assert n_configs(4, 2) == 11
    assert n_configs(3, 5) == 8
    assert enumerate_sets((1, 2), (0,), 2) == [(0,), (0, 1), (0, 2)]
    assert block_vars(2, 0, 2, 3) == 1 + 2 * (1 + 3) + 1 * (1 + 6)
    inst = gen_battery_instance(8)
    fs = solve_relaxation(inst).fs
    with pytest.raises(BudgetExceeded):
        config_check(inst, fs, tuple(range(inst.nf)), 24, budget=1)
    with pytest.raises(BudgetExceeded):
        solve_relaxation(inst, [tuple(range(inst.nf))], ell1=24, budget=1)


def test_blocks_need_ell1():
    with pytest.raises(ValueError):
        solve_relaxation(gen_gap_instance(2), [(0, 1)])
