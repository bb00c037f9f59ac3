"""Shared model builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from liftedcausal.model import (
    Constraint,
    Domain,
    PCFG,
    PRV,
    Parfactor,
    RangeSpec,
    top_constraint,
)

QUALITY = RangeSpec(("low", "medium", "high"), name="quality")
BOOLEAN = RangeSpec(("false", "true"), name="boolean")


def build_employees_model(
    employees=("alice", "bob", "dave", "eve"),
    trainings=("t1", "t2"),
) -> PCFG:
    """Company toy model: training quality -> training -> competence -> revenue."""
    dom_e = Domain("E", tuple(employees))
    dom_t = Domain("T", tuple(trainings))
    qual = PRV("Qual", ("T",), QUALITY)
    train = PRV("Train", ("E", "T"), BOOLEAN)
    comp = PRV("Comp", ("E",), QUALITY)
    rev = PRV("Rev", (), QUALITY)
    g1 = Parfactor(
        "g1", (qual,), 0, top_constraint(("T",)), np.array([0.3, 0.5, 0.2])
    )
    g2 = Parfactor(
        "g2",
        (qual, train),
        1,
        top_constraint(("E", "T")),
        np.array([[0.8, 0.2], [0.6, 0.4], [0.3, 0.7]]),
    )
    g3 = Parfactor(
        "g3",
        (train, comp),
        1,
        top_constraint(("E", "T")),
        np.array([[0.5, 0.35, 0.15], [0.15, 0.4, 0.45]]),
    )
    g4 = Parfactor(
        "g4",
        (comp, rev),
        1,
        top_constraint(("E",)),
        np.array([[0.6, 0.3, 0.1], [0.3, 0.4, 0.3], [0.1, 0.3, 0.6]]),
    )
    return PCFG((dom_e, dom_t), (qual, train, comp, rev), (g1, g2, g3, g4))


def build_bn_friendly_model(employees=("alice", "bob", "dave", "eve")) -> PCFG:
    """Variant with a single training program and revenue as a root.

    Every ground variable is the child of exactly one ground factor, so the
    model converts directly to conditional-probability-table form.
    """
    dom_e = Domain("E", tuple(employees))
    dom_t = Domain("T", ("t1",))
    qual = PRV("Qual", ("T",), QUALITY)
    train = PRV("Train", ("E", "T"), BOOLEAN)
    comp = PRV("Comp", ("E",), QUALITY)
    rev = PRV("Rev", (), QUALITY)
    g1 = Parfactor(
        "g1", (qual,), 0, top_constraint(("T",)), np.array([0.3, 0.5, 0.2])
    )
    g2 = Parfactor(
        "g2",
        (qual, train),
        1,
        top_constraint(("E", "T")),
        np.array([[0.8, 0.2], [0.6, 0.4], [0.3, 0.7]]),
    )
    g3 = Parfactor(
        "g3",
        (train, rev, comp),
        2,
        top_constraint(("E", "T")),
        np.array(
            [
                [[0.55, 0.3, 0.15], [0.5, 0.35, 0.15], [0.4, 0.4, 0.2]],
                [[0.2, 0.45, 0.35], [0.15, 0.4, 0.45], [0.1, 0.35, 0.55]],
            ]
        ),
    )
    g4 = Parfactor("g4", (rev,), 0, Constraint(()), np.array([0.25, 0.45, 0.3]))
    return PCFG((dom_e, dom_t), (qual, train, comp, rev), (g1, g2, g3, g4))


def build_chain_model() -> PCFG:
    """Propositional 3-variable chain A -> B -> C with non-normalized tables."""
    a = PRV("A", (), BOOLEAN)
    b = PRV("B", (), BOOLEAN)
    c = PRV("C", (), BOOLEAN)
    fa = Parfactor("fa", (a,), 0, Constraint(()), np.array([6.0, 2.0]))
    fab = Parfactor(
        "fab", (a, b), 1, Constraint(()), np.array([[2.0, 2.0], [1.0, 3.0]])
    )
    fbc = Parfactor(
        "fbc", (b, c), 1, Constraint(()), np.array([[5.0, 5.0], [4.0, 1.0]])
    )
    return PCFG((), (a, b, c), (fa, fab, fbc))


@pytest.fixture
def employees_model() -> PCFG:
    return build_employees_model()


@pytest.fixture
def chain_model() -> PCFG:
    return build_chain_model()
