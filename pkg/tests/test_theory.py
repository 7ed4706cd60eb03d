import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpn.afe import AfeBank, atomic_embeddings
from hpn.graphstore import TaskSpec, gen_synthetic, make_task_subgraphs
from hpn.model import HpnModel, ModelConfig, TrainConfig, count_parameters, train_task
from hpn.numerics import make_rng
from hpn.theory import (
    NO_CLOSED_FORM, build_w, check_theorem_two, circle_bound, creation_rule_bound, fixed_param_count,
    large_graph_accounting, memory_bound, task_distance,
)


def test_circle_bound_examples():
    assert circle_bound(0.3) == pytest.approx(7.8996, abs=3e-4)
    assert math.floor(circle_bound(0.3)) == 7
    assert circle_bound(1.0) == pytest.approx(4.0, abs=1e-12)
    assert 44 * circle_bound(0.3) == pytest.approx(347.6, abs=0.05)
    for bad in (0.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            circle_bound(bad)


def test_creation_rule_bound_is_a_real_packing_cap():
    # 4 points at 90 degrees have cosine 0 < 0.3; at t=0 that cosine is rejected
    assert creation_rule_bound(0.3) == 4
    assert creation_rule_bound(0.0) == 3
    assert creation_rule_bound(0.5) == 5
    assert creation_rule_bound(0.55) == 6


def test_memory_bound_dim_two():
    cfg = ModelConfig(d_v=8, num_classes=2, d_a=2, d_n=2, d_c=2, l_a=22, l_r=22, t_a=0.3, t_n=0.3, t_c=0.3)
    rep = memory_bound(cfg)
    assert [math.floor(lv.formula_bound) for lv in rep.levels] == [347, 7, 7]
    assert [lv.rule_bound for lv in rep.levels] == [4, 4, 4]
    assert rep.fixed_params == fixed_param_count(cfg) == count_parameters(HpnModel(cfg))["total"]
    assert rep.rule_param_bound == rep.fixed_params + 2 * 12


def test_memory_bound_higher_dims_has_no_closed_form():
    rep = memory_bound(ModelConfig(d_v=8, num_classes=2))
    assert all(lv.note == NO_CLOSED_FORM and lv.rule_bound is None for lv in rep.levels)
    assert rep.formula_param_bound is None


def test_violations_are_reported_not_clamped():
    cfg = ModelConfig(d_v=4, num_classes=2, d_a=2, d_n=2, d_c=2, t_a=0.3, t_n=0.3, t_c=0.3)
    rep = memory_bound(cfg, observed={"A": 9, "N": 1, "C": 1}, trajectory=[{"epoch": 3, "n_proto_a": 9}])
    assert not rep.verdict
    assert rep.levels[0].observed == 9 and len(rep.violations) == 2


@pytest.mark.parametrize("seed", [0, 1])
def test_observed_counts_within_bound_without_refinement(seed):
    g, splits = gen_synthetic(4, 25, 6, 0.2, 0.02, 3.0, make_rng(seed))
    views = make_task_subgraphs(g, TaskSpec([[0, 1], [2, 3]]), splits)
    cfg = ModelConfig(d_v=6, num_classes=2, d_a=2, d_n=2, d_c=2, l_a=3, l_r=3, t_a=0.5, t_n=0.3, t_c=0.7, seed=seed)
    model = HpnModel(cfg)
    tcfg = TrainConfig(epochs=5, warmup_epochs=1, batch_size=10, refine_prototypes=False)
    log = []
    for i, view in enumerate(views):
        log += train_task(model, view, tcfg, make_rng(seed + i), stage=i)
    observed = {lvl: len(s) for lvl, s in model.stores.items()}
    rep = memory_bound(cfg, observed=observed, trajectory=log)
    assert rep.verdict, rep.violations


def test_task_distance_examples():
    assert task_distance([[0.0, 0.0]], [[3.0, 4.0]]) == 5.0
    assert task_distance([[1.0, 1.0], [2, 2]], [[2.0, 2.0]]) == 0.0
    with pytest.raises(ValueError):
        task_distance(np.empty((0, 2)), [[1.0, 1.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10**6))
def test_task_distance_symmetric(n, m, seed):
    rng = make_rng(seed)
    X, Y = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert task_distance(X, Y) == pytest.approx(task_distance(Y, X), abs=1e-12)
    assert task_distance(X, X) == 0.0
    brute = min(np.linalg.norm(x - y) for x in X for y in Y)
    assert task_distance(X, Y) == pytest.approx(brute, abs=1e-12)


def test_task_distance_on_views():
    g, splits = gen_synthetic(2, 10, 4, 0.3, 0.0, 4.0, make_rng(0))
    a, b = make_task_subgraphs(g, TaskSpec([[0], [1]]), splits)
    assert task_distance(a, b) > 0


def unit_bank(l_a=1, l_r=1, d_v=1, d=1):
    eye = np.eye(d_v, d)
    return AfeBank(np.stack([eye] * l_a), np.stack([eye] * l_r))


def test_build_w_examples():
    assert np.array_equal(build_w(unit_bank()), np.eye(2))
    zero = AfeBank(np.zeros((2, 3, 2)), np.zeros((1, 3, 2)))
    W = build_w(zero)
    assert W.shape == (6, 6) and not W.any()
    assert check_theorem_two(zero, [[0.0] * 3], [[1.0] * 3], 0.3).rank == 0
    W = build_w(unit_bank(1, 1, 2, 2))
    G = W.T @ W
    assert np.array_equal(G[:2, 2:], np.zeros((2, 2))) and np.array_equal(G, np.eye(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10**6))
def test_build_w_round_trip(l_a, l_r, d_v, d, seed):
    rng = make_rng(seed)
    bank = AfeBank.random(l_a, l_r, d_v, d, rng)
    x, nb = rng.normal(size=d_v), rng.normal(size=(l_r, d_v))
    z = build_w(bank) @ np.concatenate([x, nb.ravel()])
    expect = [x @ bank.node[i] for i in range(l_a)] + [nb[k] @ bank.struct[k] for k in range(l_r)]
    assert np.allclose(z, np.concatenate(expect), atol=1e-12)
    # the engine feeds the neighbour mean to every structure extractor
    xbar = rng.normal(size=d_v)
    embs = atomic_embeddings(bank, x, xbar[None, :])
    z = build_w(bank) @ np.concatenate([x] + [xbar] * l_r)
    assert np.allclose(z, np.concatenate([embs.node_embs.ravel(), embs.struct_embs.ravel()]), atol=1e-12)


def test_preservation_identity_example():
    rep = check_theorem_two(unit_bank(), [[0.0]], [[0.5]], 0.3)
    assert rep.lambda_min == pytest.approx(1.0, abs=1e-12)
    assert rep.bound == pytest.approx(math.sqrt(2) * 0.5, abs=1e-12)
    assert rep.dims_ok and rep.rank_ok and rep.verdict


def test_preservation_fails_on_overlap():
    rep = check_theorem_two(unit_bank(), [[0.0], [1.0]], [[1.0]], 0.01)
    assert rep.distance == 0 and rep.bound == 0 and not rep.verdict


def test_preservation_fails_when_rank_deficient():
    bank = AfeBank(np.array([[[1.0], [1.0]]]), np.array([[[1.0], [1.0]]]))
    rep = check_theorem_two(bank, [[0.0, 0.0]], [[100.0, 100.0]], 0.1)
    assert rep.dims_ok is False or not rep.rank_ok
    assert not rep.verdict


def test_large_graph_accounting_is_itemized():
    acc = large_graph_accounting()
    t = acc["terms"]
    assert acc["fixed"] == t["afe"] + t["fc_a2n"] + t["fc_n2c"] + t["classifier"]
    assert acc["bound_unfloored"] == pytest.approx(acc["fixed"] + 2 * (t["proto_A"] + t["proto_N"] + t["proto_C"]))
    assert acc["published"] == 6163
