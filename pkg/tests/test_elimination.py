"""Tests for ground variable elimination and the CPT conversion."""

import itertools
import math
import random

import numpy as np
import pytest

from liftedcausal.elimination import choose_order, to_bayes_net, ve_query
from liftedcausal.ground import ground, joint, oracle_query
from liftedcausal.model import Constraint, GroundRV, PCFG, PRV, Parfactor

from conftest import BOOLEAN, build_bn_friendly_model, build_employees_model


def _rv(model, name, *args):
    return GroundRV(name, tuple(args), model.prv(name).range)


def test_single_factor_model_all_targets():
    x = PRV("X", (), BOOLEAN)
    g = Parfactor("g", (x,), 0, Constraint(()), np.array([1.0, 3.0]))
    model = PCFG((), (x,), (g,))
    fg = ground(model)
    rv = _rv(model, "X")
    dist = ve_query(fg, [rv])
    assert np.allclose(dist.probs, [0.25, 0.75])


def test_chain_marginal_equals_oracle(chain_model):
    fg = ground(chain_model)
    for name in ("A", "B", "C"):
        rv = _rv(chain_model, name)
        assert ve_query(fg, [rv]).allclose(oracle_query(fg, [rv]), tol=1e-12)


def test_employees_revenue_equals_oracle(employees_model):
    fg = ground(employees_model)
    rev = _rv(employees_model, "Rev")
    assert ve_query(fg, [rev]).allclose(oracle_query(fg, [rev]), tol=1e-12)


def test_ve_with_evidence_and_do_equals_oracle(employees_model):
    fg = ground(employees_model)
    rev = _rv(employees_model, "Rev")
    comp = _rv(employees_model, "Comp", "alice")
    train = _rv(employees_model, "Train", "bob", "t1")
    qual = _rv(employees_model, "Qual", "t2")
    got = ve_query(fg, [rev, comp], evidence={qual: "low"}, do_values={train: "true"})
    want = oracle_query(
        fg, [rev, comp], evidence={qual: "low"}, do_values={train: "true"}
    )
    assert got.allclose(want, tol=1e-10)


def test_order_independence_on_random_orders(employees_model):
    fg = ground(employees_model)
    rev = _rv(employees_model, "Rev")
    want = oracle_query(fg, [rev])
    rest = [rv for rv in fg.rvs if rv != rev]
    rng = random.Random(13)
    for _ in range(10):
        order = rest[:]
        rng.shuffle(order)
        assert ve_query(fg, [rev], order=order).allclose(want, tol=1e-9)


def test_choose_order_chain_eliminates_inward(chain_model):
    fg = ground(chain_model)
    c = _rv(chain_model, "C")
    order = choose_order(fg, [c])
    # On a path with target C, min-degree takes the far endpoint first.
    assert [rv.name for rv in order] == ["A", "B"]


def test_choose_order_star_leaves_first():
    hub = PRV("Hub", (), BOOLEAN)
    leaves = [PRV(f"L{i}", (), BOOLEAN) for i in range(3)]
    factors = [
        Parfactor("p", (hub,), 0, Constraint(()), np.array([1.0, 1.0])),
    ]
    for i, leaf in enumerate(leaves):
        factors.append(
            Parfactor(
                f"f{i}", (hub, leaf), 1, Constraint(()), np.ones((2, 2))
            )
        )
    model = PCFG((), (hub, *leaves), tuple(factors))
    fg = ground(model)
    order = choose_order(fg, [_rv(model, "Hub")])
    assert sorted(rv.name for rv in order) == ["L0", "L1", "L2"]


def test_min_fill_heuristic_runs(employees_model):
    fg = ground(employees_model)
    rev = _rv(employees_model, "Rev")
    order = choose_order(fg, [rev], heuristic="min_fill")
    assert ve_query(fg, [rev], order=order).allclose(
        oracle_query(fg, [rev]), tol=1e-9
    )


def test_to_bayes_net_single_factor():
    x = PRV("X", (), BOOLEAN)
    g = Parfactor("g", (x,), 0, Constraint(()), np.array([1.0, 3.0]))
    fg = ground(PCFG((), (x,), (g,)))
    bn = to_bayes_net(fg)
    assert np.allclose(bn.factors[0].table, [0.25, 0.75])


def test_to_bayes_net_idempotent():
    bn = to_bayes_net(ground(build_bn_friendly_model()))
    again = to_bayes_net(bn)
    for f1, f2 in zip(bn.factors, again.factors):
        assert np.allclose(f1.table, f2.table)


def test_to_bayes_net_rejects_multi_child(employees_model):
    # Revenue is the child of one ground factor per employee.
    fg = ground(employees_model)
    with pytest.raises(ValueError, match="not convertible"):
        to_bayes_net(fg)


def test_to_bayes_net_preserves_joint_of_normalized_model():
    # Every variable has exactly one parent factor and the tables are
    # row-normalized, so conversion must not move the joint.
    model = build_bn_friendly_model()
    fg = ground(model)
    bn = to_bayes_net(fg)
    before = joint(fg)
    after = joint(bn)
    assert np.allclose(before.probs, after.probs, atol=1e-12, rtol=0.0)


def test_to_bayes_net_query_results_unchanged():
    model = build_bn_friendly_model()
    fg = ground(model)
    bn = to_bayes_net(fg)
    rev = _rv(model, "Rev")
    train = _rv(model, "Train", "bob", "t1")
    for dos in ({}, {train: "true"}):
        got = ve_query(bn, [rev], do_values=dos)
        want = oracle_query(fg, [rev], do_values=dos)
        assert got.allclose(want, tol=1e-10)
