import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochmatch.instance import (
    Instance,
    InstanceError,
    RandomDraw,
    SubsetView,
    build_instance,
    budgets_from_thresholds,
    gen_random,
    gen_random_equal,
    gen_upper_triangular,
    instance_from_dict,
    instance_to_dict,
    p_bar,
    p_sum,
    p_tilde,
    read_instance,
    sample_draw,
    write_instance,
)


def test_build_single_edge():
    inst = build_instance(1, 1, [(0, 0, 1.0)])
    assert inst.equal_p == 1.0
    assert inst.edges == [(0, 0, 1.0)]


def test_build_two_by_two():
    inst = build_instance(2, 2, [(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5)])
    assert inst.equal_p == 0.5
    assert inst.neighbors(0) == [0, 1]
    assert inst.offline_neighbors(1) == [0]


@pytest.mark.parametrize(
    "edges",
    [[(0, 0, 1.5)], [(0, 0, -0.1)], [(1, 0, 0.5)], [(0, 3, 0.5)]],
)
def test_build_rejects_bad_edges(edges):
    with pytest.raises(InstanceError):
        build_instance(1, 1, edges)


def test_mixed_probabilities_have_no_equal_p():
    assert build_instance(1, 2, [(0, 0, 0.3), (0, 1, 0.4)]).equal_p is None


def test_instance_rejects_inconsistent_equal_p():
    with pytest.raises(InstanceError):
        Instance(1, 2, np.array([[0.3, 0.4]]), equal_p=0.3)


def test_upper_triangular_shape():
    inst = gen_upper_triangular(2, 1.0)
    assert sorted((u, v) for u, v, _ in inst.edges) == [(0, 0), (1, 0), (1, 1)]
    assert gen_upper_triangular(1, 0.5).edges == [(0, 0, 0.5)]
    three = gen_upper_triangular(3, 0.1)
    assert three.num_edges == 6 and three.equal_p == 0.1
    with pytest.raises(InstanceError):
        gen_upper_triangular(0, 0.5)


def test_random_generators_are_seeded():
    a = gen_random(4, 5, 0.5, 0.1, 0.9, 7)
    b = gen_random(4, 5, 0.5, 0.1, 0.9, 7)
    assert a == b
    eq = gen_random_equal(4, 5, 0.7, 0.25, 3)
    assert eq.equal_p in (0.25, None)
    assert set(np.unique(eq.prob)) <= {0.0, 0.25}


def test_subset_probabilities():
    inst = build_instance(1, 3, [(0, 0, 0.5), (0, 1, 0.5), (0, 2, 0.5)])
    assert p_tilde(inst, 0, [0, 1]) == pytest.approx(0.75)
    assert p_bar(inst, 0, [0, 1, 2]) == 1.0
    assert p_sum(inst, 0, [0, 1, 2]) == 1.5
    assert p_tilde(inst, 0, []) == 0.0


def test_subset_view_orders_members():
    inst = build_instance(1, 3, [(0, 0, 0.5), (0, 1, 0.2), (0, 2, 0.5)])
    view = SubsetView(0, (2, 0, 1))
    assert view.S == (0, 1, 2)
    assert view.before(2) == (0, 1)
    w = view.reduced_weights(inst)
    assert w[0] == 1.0
    assert w[1] == pytest.approx(0.5)
    assert w[2] == pytest.approx(0.4)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=0, max_size=6))
def test_p_tilde_bounds(ps):
    inst = build_instance(1, max(len(ps), 1), [(0, v, p) for v, p in enumerate(ps)])
    S = list(range(len(ps)))
    pt = p_tilde(inst, 0, S)
    assert 0.0 <= pt <= p_bar(inst, 0, S) + 1e-12
    assert pt <= 1.0


def test_sample_draw_consistent_across_modes():
    inst = gen_random_equal(3, 4, 0.6, 0.3, 1)
    full = sample_draw(inst, 11, "all")
    thr = sample_draw(inst, 11, "thresholds")
    bud = sample_draw(inst, 11, "budgets")
    assert np.array_equal(full.ranks, thr.ranks)
    assert np.array_equal(full.thresholds, thr.thresholds)
    assert np.array_equal(full.budgets, bud.budgets)
    assert thr.coins is None and bud.thresholds is None
    assert np.allclose(full.budgets, -np.log(1 - full.thresholds))
    # coins only on edges
    assert not full.coins[inst.prob == 0].any()


def test_sample_draw_rejects_unknown_mode():
    with pytest.raises(ValueError):
        sample_draw(build_instance(1, 1, [(0, 0, 1.0)]), 0, "dice")


def test_duplicate_ranks_rejected():
    with pytest.raises(InstanceError):
        RandomDraw(ranks=[0.5, 0.5])


def test_budgets_are_exponential():
    tau = np.random.default_rng(0).random(200_000)
    theta = budgets_from_thresholds(tau)
    assert theta.mean() == pytest.approx(1.0, abs=0.01)
    # P(theta >= x) = e^{-x}
    assert (theta >= 1.0).mean() == pytest.approx(np.exp(-1.0), abs=0.005)


def test_coin_threshold_success_rates_agree():
    # second attempt succeeds w.p. p under thresholds, given the first failed
    p = 0.3
    tau = np.random.default_rng(5).random(400_000)
    first_fail = tau > p
    second = 1 - (1 - p) ** 2 >= tau[first_fail]
    assert second.mean() == pytest.approx(p, abs=0.004)


def test_json_round_trip(tmp_path):
    inst = gen_random(3, 4, 0.7, 0.1, 0.9, 2)
    path = tmp_path / "inst.json"
    write_instance(inst, path)
    assert read_instance(path) == inst
    doc = json.loads(path.read_text())
    assert set(doc) == {"version", "m", "n", "equal_p", "edges"}
    assert doc["edges"] == sorted(doc["edges"])


@pytest.mark.parametrize(
    "doc, msg",
    [
        ({"version": 2, "m": 1, "n": 1, "equal_p": None, "edges": []}, "version"),
        ({"version": 1, "m": 1, "n": 1, "edges": []}, "missing"),
        ({"version": 1, "m": 1, "n": 1, "equal_p": None, "edges": [], "x": 1}, "unexpected"),
        ({"version": 1, "m": 1, "n": 1, "equal_p": 0.5, "edges": [[0, 0, 0.4]]}, "equal_p"),
        ({"version": 1, "m": 1, "n": 1, "equal_p": None, "edges": [[0, 0]]}, "malformed"),
    ],
)
def test_bad_documents(doc, msg):
    with pytest.raises(InstanceError, match=msg):
        instance_from_dict(doc)


def test_unreadable_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(InstanceError):
        read_instance(path)


def test_dict_round_trip_empty():
    inst = build_instance(2, 3, [])
    assert instance_from_dict(instance_to_dict(inst)) == inst
