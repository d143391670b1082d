import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capkm.instance import (Instance, ParseError, gen_battery_instance, gen_euclidean,
                            gen_gap_instance, load_instance, parse_instance, save_instance,
                            serialize_instance, topk_capacity, validate)


def test_parse_degenerate_coordinates():
    inst = parse_instance("CKM 1 2 1\nF a 3 0 0\nC x 0 0\nC y 0 0\n")
    assert inst.nf == 1 and inst.nc == 2 and inst.k == 1
    assert inst.capacities.tolist() == [3]
    assert np.all(inst.dist == 0.0)


def test_parse_explicit_metric_and_comments():
    text = """# two points
CKM 1 1 1
F f 2   # capacity two
C c
D
0 4
4 0
"""
    inst = parse_instance(text)
    assert inst.d_fc.tolist() == [[4.0]]
    assert inst.coords is None


@pytest.mark.parametrize("text, needle", [
    ("CKM 1 1 0\nF a 1 0 0\nC c 0 0\n", "k out of range"),
    ("CKM 1 1 1\nF a 0 0 0\nC c 0 0\n", "capacity"),
    ("CKM 1 1 1\nF a x 0 0\nC c 0 0\n", "capacity"),
    ("CKM 1 1\n", "header"),
    ("CKM 2 1 1\nF a 1 0 0\nC c 0 0\n", "expected 'F'"),
    ("CKM 1 1 1\nF a 1 0 0\nC c\n", "every point or none"),
    ("CKM 1 1 1\nF a 1\nC c\nD\n0 1 1\n", "needs 4 entries"),
    ("CKM 1 1 1\nF a 1 0 0\nC c 0 0\nD\n0 1 1 0\n", "mutually exclusive"),
    ("CKM 2 1 1\nF a 1 0 0\nF a 1 1 1\nC c 0 0\n", "duplicate facility"),
    ("", "empty"),
])
def test_parse_errors(text, needle):
    with pytest.raises(ParseError, match=needle):
        parse_instance(text)


def test_parse_error_names_line():
    with pytest.raises(ParseError) as exc:
        parse_instance("CKM 1 1 1\nF a -2 0 0\nC c 0 0\n")
    assert exc.value.line == 2
    assert str(exc.value).startswith("line 2:")


def test_round_trip_small_file():
    text = "CKM 3 4 2\n" + "".join(f"F f{i} {i + 1} {i}.5 0.25\n" for i in range(3)) \
        + "".join(f"C c{j} 0.{j} {j}\n" for j in range(4))
    inst = parse_instance(text)
    again = parse_instance(serialize_instance(inst))
    assert again == inst
    assert again.structurally_equal(inst)


def test_round_trip_explicit_metric():
    inst = gen_gap_instance(2, 3.0)
    assert parse_instance(serialize_instance(inst)) == inst


def test_load_save(tmp_path):
    inst = gen_euclidean(3, 5, 2, 1, 3, 9)
    p = tmp_path / "inst.ckm"
    save_instance(inst, p)
    back = load_instance(p)
    assert back == inst and back.name == "inst"


@settings(max_examples=25, deadline=None)
@given(nf=st.integers(1, 6), nc=st.integers(1, 8), seed=st.integers(0, 10**6))
def test_round_trip_generated(nf, nc, seed):
    inst = gen_euclidean(nf, nc, max(1, nf // 2), 1, 4, seed)
    assert parse_instance(serialize_instance(inst)) == inst


def test_euclidean_single_point_range():
    inst = gen_euclidean(1, 1, 1, 5, 5, 7)
    assert inst.capacities.tolist() == [5]
    assert 0.0 <= inst.d_fc[0, 0] <= math.sqrt(2)


def test_euclidean_deterministic():
    a, b = gen_euclidean(4, 6, 2, 1, 3, 1), gen_euclidean(4, 6, 2, 1, 3, 1)
    assert a == b and np.array_equal(a.coords, b.coords)
    assert gen_euclidean(4, 6, 2, 1, 3, 2) != a


def test_euclidean_validates():
    assert validate(gen_euclidean(8, 12, 3, 2, 4, 42)) == []


@pytest.mark.parametrize("args", [(0, 1, 1, 1, 1), (2, 2, 3, 1, 1), (2, 2, 1, 0, 1),
                                  (2, 2, 1, 3, 2)])
def test_euclidean_bad_ranges(args):
    with pytest.raises(ValueError):
        gen_euclidean(*args, seed=0)


def test_gap_instance_shape():
    inst = gen_gap_instance(3, 1.0)
    assert inst.nf == 6 and inst.nc == 15 and inst.k == 5
    assert set(inst.capacities.tolist()) == {3}


@pytest.mark.parametrize("u, D", [(2, 1.0), (3, 2.5), (4, 1.0)])
def test_gap_instance_metric(u, D):
    inst = gen_gap_instance(u, D)
    assert inst.nc == u * (2 * u - 1)
    group = [g for g in range(u) for _ in range(2)] + [g for g in range(u) for _ in range(2 * u - 1)]
    g = np.array(group)
    same = g[:, None] == g[None, :]
    assert np.all(inst.dist[same] == 0.0)
    assert np.all(inst.dist[~same] == D)
    assert validate(inst) == []


def test_gap_instance_bad_args():
    with pytest.raises(ValueError):
        gen_gap_instance(1)
    with pytest.raises(ValueError):
        gen_gap_instance(2, 0.0)


def test_validate_triangle():
    d = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    inst = Instance(("a",), [3], ("b", "c"), 1, d)
    kinds = {v.kind for v in validate(inst)}
    assert "triangle" in kinds


def test_validate_symmetry():
    d = np.array([[0, 1], [2, 0]], dtype=float)
    inst = Instance(("a",), [1], ("b",), 1, d)
    assert "symmetry" in {v.kind for v in validate(inst)}


def test_validate_capacity_warning():
    inst = gen_euclidean(3, 10, 2, 2, 2, 0)
    issues = validate(inst)
    assert [(v.kind, v.severity) for v in issues] == [("capacity", "warning")]


def test_topk_capacity():
    inst = Instance(("a", "b", "c"), [1, 4, 2], ("x",), 2, np.zeros((4, 4)))
    assert topk_capacity(inst) == 6
    assert topk_capacity(inst, scale=1.5) == 9   # ceil(6) + ceil(3)


@pytest.mark.parametrize("kwargs", [dict(capacities=[0]), dict(capacities=[1.5]), dict(k=0),
                                    dict(k=2), dict(dist=np.zeros((3, 3)))])
def test_instance_rejects(kwargs):
    base = dict(facility_ids=("a",), capacities=[1], client_ids=("b",), k=1,
                dist=np.zeros((2, 2)))
    base.update(kwargs)
    with pytest.raises(ValueError):
        Instance(**base)


def test_instance_immutable():
    inst = gen_gap_instance(2)
    with pytest.raises(ValueError):
        inst.dist[0, 0] = 1.0


def test_battery_generator_is_feasible_and_seeded():
    for s in range(20):
        inst = gen_battery_instance(s)
        assert inst.nf <= 10 and inst.nc <= 20
        assert topk_capacity(inst) >= inst.nc
    assert gen_battery_instance(3) == gen_battery_instance(3)
