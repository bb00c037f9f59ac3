"""Tests for the core lifted data model."""

import random

import numpy as np
import pytest

from liftedcausal import constraints as cs
from liftedcausal.model import (
    Constraint,
    Domain,
    PCFG,
    PRV,
    Parfactor,
    RangeSpec,
    child_prv,
    groundings,
    make_constraint,
    parent_factors,
    split_constraint,
    top_constraint,
    validate,
)

from conftest import BOOLEAN, QUALITY, build_employees_model


def test_groundings_full_product(employees_model):
    train = employees_model.prv("Train")
    rvs = groundings(train, top_constraint(("E", "T")), employees_model.domain_map)
    assert len(rvs) == 8
    # Deterministic order: employees in declaration order, then trainings.
    assert rvs[0].args == ("alice", "t1")
    assert rvs[-1].args == ("eve", "t2")


def test_groundings_parameterless(employees_model):
    rev = employees_model.prv("Rev")
    rvs = groundings(rev, Constraint(()), employees_model.domain_map)
    assert len(rvs) == 1
    assert rvs[0].args == ()


def test_groundings_single_tuple(employees_model):
    train = employees_model.prv("Train")
    c = make_constraint(
        ("E", "T"), cs.from_tuples(2, {("bob", "t1")}), employees_model.domain_map
    )
    rvs = groundings(train, c, employees_model.domain_map)
    assert [rv.args for rv in rvs] == [("bob", "t1")]


def test_grounding_count_is_domain_product(employees_model):
    for prv in employees_model.prvs:
        rvs = groundings(prv, top_constraint(prv.params), employees_model.domain_map)
        expected = 1
        for lv in prv.params:
            expected *= employees_model.domain_map[lv].size
        assert len(rvs) == expected


def test_partition_of_constraint_partitions_groundings(employees_model):
    # Splitting a constraint splits the grounding set disjointly.
    rng = random.Random(7)
    train = employees_model.prv("Train")
    domains = employees_model.domain_map
    full = top_constraint(("E", "T"))
    all_rvs = set(groundings(train, full, domains))
    for _ in range(50):
        k = rng.randint(1, 7)
        chosen = set()
        while len(chosen) < k:
            chosen.add(
                (rng.choice(domains["E"].constants), rng.choice(domains["T"].constants))
            )
        inside, outside = split_constraint(
            full, train.params, cs.from_tuples(2, chosen), domains
        )
        got_in = set(groundings(train, inside, domains)) if inside else set()
        got_out = set(groundings(train, outside, domains)) if outside else set()
        assert got_in | got_out == all_rvs
        assert not (got_in & got_out)
        assert {rv.args for rv in got_in} == chosen


def test_parents_and_child(employees_model):
    comp = employees_model.prv("Comp")
    assert [g.id for g in parent_factors(employees_model, comp)] == ["g3"]
    assert child_prv(employees_model.parfactor("g4")).name == "Rev"
    qual = employees_model.prv("Qual")
    assert [g.id for g in parent_factors(employees_model, qual)] == ["g1"]


def test_validate_ok(employees_model):
    assert validate(employees_model) == []


def test_validate_detects_cycle(employees_model):
    # A factor making Rev an ancestor of Qual(T) closes a directed cycle.
    qual = employees_model.prv("Qual")
    rev = employees_model.prv("Rev")
    bad = Parfactor(
        "g5",
        (rev, qual),
        1,
        top_constraint(("T",)),
        np.ones((3, 3)),
    )
    model = PCFG(
        employees_model.domains,
        employees_model.prvs,
        employees_model.parfactors + (bad,),
    )
    assert any("cycle" in v.message for v in validate(model))


def test_validate_child_must_be_argument():
    a = PRV("A", (), BOOLEAN)
    b = PRV("B", (), BOOLEAN)
    g = Parfactor("g", (a,), 0, Constraint(()), np.array([1.0, 2.0]))
    model = PCFG((), (a, b), (g,))
    # B is declared but never used; also exercise out-of-range child index.
    bad = Parfactor("h", (b,), 1, Constraint(()), np.array([1.0, 2.0]))
    model = PCFG((), (a, b), (g, bad))
    messages = [v.message for v in validate(model)]
    assert any("child index out of range" in m for m in messages)


def test_validate_requires_positive_tables():
    a = PRV("A", (), BOOLEAN)
    g = Parfactor("g", (a,), 0, Constraint(()), np.array([0.0, 2.0]))
    model = PCFG((), (a,), (g,))
    assert any("strictly positive" in v.message for v in validate(model))
    # The same zeros are fine once the table is flagged as mutilated.
    g2 = Parfactor("g", (a,), 0, Constraint(()), np.array([0.0, 2.0]), mutilated=True)
    model2 = PCFG((), (a,), (g2,))
    assert validate(model2) == []


def test_validate_row_normalization_warning(employees_model):
    assert validate(employees_model, row_norm_tol=1e-9) == []
    a = PRV("A", (), BOOLEAN)
    g = Parfactor("g", (a,), 0, Constraint(()), np.array([1.0, 2.0]))
    model = PCFG((), (a,), (g,))
    warnings = [v for v in validate(model, row_norm_tol=1e-9)]
    assert warnings and warnings[0].severity == "warning"


def test_constraint_normalizes_to_product_and_top():
    domains = {d.name: d for d in build_employees_model().domains}
    # Explicit set that is the full product collapses to TOP.
    full = {(e, t) for e in domains["E"].constants for t in domains["T"].constants}
    c = make_constraint(("E", "T"), cs.from_tuples(2, full), domains)
    assert c.is_top
    # Explicit set that is a proper product becomes product form.
    sub = {(e, "t1") for e in domains["E"].constants}
    c2 = make_constraint(("E", "T"), cs.from_tuples(2, sub), domains)
    assert c2.allowed is not None and c2.allowed.is_product
    # A genuinely irregular set stays explicit.
    c3 = make_constraint(
        ("E", "T"), cs.from_tuples(2, {("alice", "t1"), ("bob", "t2")}), domains
    )
    assert c3.allowed is not None and not c3.allowed.is_product


def test_tuple_set_subtract_forms():
    product = cs.from_product([{"a", "b", "c"}, {"x", "y"}])
    one = cs.from_tuples(2, {("b", "x")})
    rest = cs.subtract(product, one)
    assert rest.count() == 5 and not rest.is_product
    # Removing a full slice keeps product form.
    slice_x = cs.from_product([{"a", "b", "c"}, {"x"}])
    rest2 = cs.subtract(product, slice_x)
    assert rest2.is_product and rest2.count() == 3
    assert cs.subtract(product, product) is None
