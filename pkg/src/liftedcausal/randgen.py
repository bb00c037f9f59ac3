"""Random model and query generation for randomized testing.

Models are built child-by-child along a topological order, so they are
acyclic by construction.  Sizes are kept small enough for the
enumeration oracle to stay fast; the caps are configurable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from math import prod

import numpy as np

from . import constraints as cs
from .intervention import DoAssignment, Query
from .model import (
    Constraint,
    Domain,
    GroundRV,
    PCFG,
    PRV,
    Parfactor,
    RangeSpec,
    make_constraint,
    prv_groundings,
    top_constraint,
)


@dataclass
class GeneratorConfig:
    max_logvars: int = 3
    max_domain_size: int = 3
    min_prvs: int = 2
    max_prvs: int = 5
    max_range_size: int = 3
    max_parents: int = 2
    max_ground_rvs: int = 12
    max_joint_entries: int = 6000
    explicit_constraint_prob: float = 0.2
    extra_parent_factor_prob: float = 0.15
    row_normalized: bool = False
    """Child-normalized tables with every ground variable the child of
    exactly one ground factor (the class that is exactly equivalent to a
    Bayesian network, where separation implies independence)."""


def random_model(rng: random.Random, config: GeneratorConfig | None = None) -> PCFG:
    config = config or GeneratorConfig()
    for _ in range(200):
        model = _try_model(rng, config)
        if model is not None:
            return model
    raise RuntimeError("could not generate a model within the size caps")


def _try_model(rng: random.Random, config: GeneratorConfig) -> PCFG | None:
    n_domains = rng.randint(1, config.max_logvars)
    domains = tuple(
        Domain(
            name,
            tuple(f"{name.lower()}{i}" for i in range(rng.randint(1, config.max_domain_size))),
        )
        for name in ("E", "F", "G")[:n_domains]
    )
    domain_map = {d.name: d for d in domains}
    n_prvs = rng.randint(config.min_prvs, config.max_prvs)
    prvs: list[PRV] = []
    for i in range(n_prvs):
        n_params = rng.choice((0, 0, 1, 1, 2))
        params = tuple(rng.sample([d.name for d in domains], min(n_params, n_domains)))
        size = rng.randint(2, config.max_range_size)
        values = ("no", "yes") if size == 2 else ("lo", "mid", "hi")
        prvs.append(PRV(f"V{i}", params, RangeSpec(values, name=f"rng{size}")))
    total_ground = sum(
        prod(domain_map[lv].size for lv in p.params) for p in prvs
    )
    if total_ground > config.max_ground_rvs:
        return None
    joint_entries = 1
    for p in prvs:
        joint_entries *= p.range.size ** prod(domain_map[lv].size for lv in p.params)
        if joint_entries > config.max_joint_entries:
            return None
    parfactors: list[Parfactor] = []
    counter = 0
    for i, child in enumerate(prvs):
        counter += 1
        parfactors.append(
            _random_parfactor(rng, config, domain_map, prvs[:i], child, f"f{counter}")
        )
        if (
            not config.row_normalized
            and i > 0
            and rng.random() < config.extra_parent_factor_prob
        ):
            counter += 1
            parfactors.append(
                _random_parfactor(
                    rng, config, domain_map, prvs[:i], child, f"f{counter}"
                )
            )
    return PCFG(domains, tuple(prvs), tuple(parfactors))


def _random_parfactor(
    rng: random.Random,
    config: GeneratorConfig,
    domain_map: dict[str, Domain],
    earlier: list[PRV],
    child: PRV,
    pf_id: str,
) -> Parfactor:
    if config.row_normalized:
        # Parents must not add logvars, so each ground child keeps exactly
        # one parent factor.
        pool = [p for p in earlier if set(p.params) <= set(child.params)]
    else:
        pool = list(earlier)
    n_parents = rng.randint(0, min(config.max_parents, len(pool)))
    parents = rng.sample(pool, n_parents)
    args = tuple(parents) + (child,)
    child_index = len(parents)
    logvars = tuple(sorted({lv for a in args for lv in a.params}))
    constraint = top_constraint(logvars)
    if (
        not config.row_normalized
        and logvars
        and rng.random() < config.explicit_constraint_prob
    ):
        full = [
            t
            for t in _product_tuples(logvars, domain_map)
        ]
        k = rng.randint(1, len(full))
        constraint = make_constraint(
            logvars, cs.from_tuples(len(logvars), rng.sample(full, k)), domain_map
        )
    shape = tuple(a.range.size for a in args)
    table = np.array(
        [rng.uniform(0.2, 1.0) for _ in range(prod(shape))]
    ).reshape(shape)
    if config.row_normalized:
        table = table / table.sum(axis=child_index, keepdims=True)
    return Parfactor(pf_id, args, child_index, constraint, table)


def _product_tuples(logvars, domain_map):
    import itertools

    return list(
        itertools.product(*(domain_map[lv].constants for lv in logvars))
    )


def covered_child_instances(model: PCFG, prv: PRV) -> set[tuple[str, ...]]:
    """Argument tuples of ``prv`` that are the child of some ground factor."""
    from .model import project_tuple_set

    out: set[tuple[str, ...]] = set()
    for g in model.parfactors:
        if g.child_index is None or g.args[g.child_index].name != prv.name:
            continue
        child = g.args[g.child_index]
        if not child.params:
            out.add(())
            continue
        ts = project_tuple_set(g.constraint, child.params, model.domain_map)
        out.update(ts.materialize())
    return out


def random_query(
    rng: random.Random,
    model: PCFG,
    max_dos: int = 3,
    max_evidence: int = 2,
) -> Query:
    """A valid random query with disjoint target/evidence/intervention sets."""
    all_rvs: list[GroundRV] = []
    for p in model.prvs:
        all_rvs.extend(prv_groundings(p, model.domain_map))
    n_targets = rng.randint(1, min(2, len(all_rvs)))
    targets = tuple(rng.sample(all_rvs, n_targets))
    used = set(targets)
    candidates = [rv for rv in all_rvs if rv not in used]
    evidence = []
    for rv in rng.sample(candidates, min(rng.randint(0, max_evidence), len(candidates))):
        evidence.append((rv, rng.choice(rv.range.values)))
        used.add(rv)
    dos: list[DoAssignment] = []
    n_dos = rng.randint(0, max_dos)
    prv_by_name = {p.name: p for p in model.prvs}
    for _ in range(n_dos):
        prv = rng.choice(model.prvs)
        covered = covered_child_instances(model, prv)
        instances = [
            rv
            for rv in prv_groundings(prv, model.domain_map)
            if rv.args in covered and rv not in used
        ]
        if not instances:
            continue
        value = rng.choice(prv.range.values)
        style = rng.random()
        if style < 0.7 or not prv.params:
            rv = rng.choice(instances)
            dos.append(DoAssignment.on_instance(rv, prv, value))
            used.add(rv)
        else:
            k = rng.randint(1, len(instances))
            chosen = rng.sample(instances, k)
            lvs = tuple(sorted(set(prv.params)))
            if len(lvs) != len(prv.params):
                continue
            order = sorted(range(len(prv.params)), key=lambda i: prv.params[i])
            tuples = {tuple(rv.args[i] for i in order) for rv in chosen}
            constraint = make_constraint(
                lvs, cs.from_tuples(len(lvs), tuples), model.domain_map
            )
            dos.append(DoAssignment(prv, value, constraint))
            used.update(chosen)
    return Query(targets, tuple(evidence), tuple(dos))
