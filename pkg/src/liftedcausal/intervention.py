"""Intervention semantics and the lifted causal inference query.

An intervention fixes variables to values and severs their parent
influences: every factor whose child is intervened is rewritten into an
indicator on the child value.  The lifted query applies this on the
group level: parfactors are split just enough to isolate the intervened
instance groups (one split per group and affected parfactor, however
large the group), the isolated parents are rewritten once per group, and
the lifted engine answers the remaining probabilistic query.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import constraints as cs
from .constraints import TupleSet
from .errors import QueryError, ShatterRequiredError
from .ground import Distribution, ground_do
from .lifted import (
    LiftedState,
    lve_query,
    make_state,
    occurrence_set,
    shatter,
)
from .model import (
    Constraint,
    Domain,
    GroundRV,
    PCFG,
    PRV,
    Parfactor,
    groundings,
    prv_groundings,
    top_constraint,
)

__all__ = [
    "DoAssignment",
    "Query",
    "ground_do",
    "lci_query",
    "mutilate",
]


@dataclass(frozen=True)
class DoAssignment:
    """One intervention target: a PRV, restricted PRV, or single instance.

    ``constraint`` restricts the instances of ``prv`` the intervention
    covers; None means all of them.  ``value`` must be in the PRV's range.
    """

    prv: PRV
    value: str
    constraint: Constraint | None = None

    def __post_init__(self):
        if self.value not in self.prv.range.values:
            raise QueryError(f"value {self.value} not in range of {self.prv}")

    @classmethod
    def on_instance(cls, rv: GroundRV, prv: PRV, value: str) -> "DoAssignment":
        if rv.name != prv.name or len(rv.args) != len(prv.params):
            raise QueryError(f"{rv} is not an instance of {prv}")
        if not rv.args:
            return cls(prv, value)
        allowed = cs.from_tuples(len(rv.args), {rv.args})
        lvs = tuple(sorted(set(prv.params)))
        if len(lvs) != len(prv.params):
            raise QueryError("instance interventions need distinct logvars")
        order = sorted(range(len(prv.params)), key=lambda i: prv.params[i])
        reordered = cs.from_tuples(len(lvs), {tuple(rv.args[i] for i in order)})
        return cls(prv, value, Constraint(lvs, reordered))

    def instance_set(self, domains: Mapping[str, Domain]) -> TupleSet:
        """Argument tuples this assignment covers."""
        if not self.prv.params:
            return cs.from_product(())
        constraint = self.constraint or top_constraint(self.prv.params)
        from .model import project_tuple_set

        return project_tuple_set(constraint, self.prv.params, domains)

    def instances(self, domains: Mapping[str, Domain]) -> tuple[GroundRV, ...]:
        constraint = self.constraint or top_constraint(self.prv.params)
        return groundings(self.prv, constraint, domains)


@dataclass(frozen=True)
class Query:
    """A probabilistic query: targets, optional evidence and interventions."""

    targets: tuple[GroundRV | PRV, ...]
    evidence: tuple[tuple[GroundRV, str], ...] = ()
    dos: tuple[DoAssignment, ...] = ()

    def __post_init__(self):
        if not self.targets:
            raise QueryError("query needs at least one target")

    def evidence_map(self) -> dict[GroundRV, str]:
        out: dict[GroundRV, str] = {}
        for rv, value in self.evidence:
            if rv in out and out[rv] != value:
                raise QueryError(f"conflicting evidence on {rv}")
            out[rv] = value
        return out


def _merge_do_groups(
    dos: Sequence[DoAssignment], domains: Mapping[str, Domain]
) -> list[tuple[PRV, TupleSet, str]]:
    """Group same-PRV same-value interventions so they split as one.

    Returns (PRV, instance set, value) triples and rejects overlapping
    instance sets.
    """
    grouped: dict[tuple[str, str], tuple[PRV, set]] = {}
    for d in dos:
        key = (d.prv.name, d.value)
        inst = d.instance_set(domains)
        prv, acc = grouped.get(key, (d.prv, set()))
        acc = set(acc) | set(inst.materialize())
        grouped[key] = (prv, acc)
    merged: list[tuple[PRV, TupleSet, str]] = []
    for (name, value), (prv, tuples) in sorted(grouped.items()):
        ts = (
            cs.from_tuples(len(prv.params), tuples)
            if prv.params
            else cs.from_product(())
        )
        merged.append((prv, ts, value))
    # Overlap check across different values of the same PRV.
    for i, (prv_a, ts_a, val_a) in enumerate(merged):
        for prv_b, ts_b, val_b in merged[i + 1 :]:
            if prv_a.name == prv_b.name and not cs.is_disjoint(ts_a, ts_b):
                raise QueryError(
                    f"overlapping interventions on {prv_a.name} "
                    f"with values {val_a} and {val_b}"
                )
    return merged


def mutilate(
    source: PCFG | LiftedState, dos: Sequence[DoAssignment]
) -> PCFG | LiftedState:
    """Rewrite the parents of every intervened group into indicators.

    Requires the model to be shattered on the intervention targets: each
    parfactor's child occurrence must lie entirely inside or outside every
    intervened group.  Inside a covered parfactor, entries assigning the
    child the intervention value become 1 and all others become 0.
    """
    state = make_state(source) if isinstance(source, PCFG) else source
    domains = state.domains
    merged = _merge_do_groups(dos, domains)
    new_parfactors: list[Parfactor] = []
    # Every intervened instance must be the child of at least one factor;
    # track what remains uncovered per group.
    remaining: dict[tuple[str, str], TupleSet | None] = {
        (p.name, v): ts for p, ts, v in merged
    }
    for g in state.parfactors:
        replacement = g
        if g.child_index is not None:
            child = g.args[g.child_index]
            occ = occurrence_set(g, g.child_index, domains)
            for prv, ts, value in merged:
                if prv.name != child.name:
                    continue
                if cs.is_disjoint(occ, ts):
                    continue
                if not cs.is_subset(occ, ts):
                    raise ShatterRequiredError(
                        f"intervened group of {prv.name} is not isolated in {g.id}"
                    )
                table = np.zeros_like(g.table)
                sel: list[object] = [slice(None)] * table.ndim
                sel[g.child_index] = child.range.index(value)
                table[tuple(sel)] = 1.0
                replacement = Parfactor(
                    g.id, g.args, g.child_index, g.constraint, table, mutilated=True
                )
                key = (prv.name, value)
                if remaining[key] is not None:
                    remaining[key] = cs.subtract(remaining[key], occ)
                break
        new_parfactors.append(replacement)
    missing = [key for key, left in remaining.items() if left is not None]
    if missing:
        names = ", ".join(f"{n}={v}" for n, v in missing)
        raise QueryError(
            f"cannot intervene on {names}: no parfactor has it as child"
        )
    if isinstance(source, PCFG):
        return PCFG(source.domains, source.prvs, tuple(new_parfactors))
    out = state.copy()
    out.parfactors = new_parfactors
    return out


def expand_do_map(
    dos: Sequence[DoAssignment], domains: Mapping[str, Domain]
) -> dict[GroundRV, str]:
    """Ground-level view of the interventions, for the ground engines."""
    out: dict[GroundRV, str] = {}
    for d in dos:
        for rv in d.instances(domains):
            if rv in out and out[rv] != d.value:
                raise QueryError(f"overlapping interventions on {rv}")
            out[rv] = d.value
    return out


def lci_query(
    model: PCFG,
    query: Query,
    verify_shatter: bool = False,
) -> Distribution:
    """Interventional query answering on the lifted level.

    Splits parfactors once per intervened group, rewrites the isolated
    parents, and runs the lifted engine for the remaining conditional
    query.  With an empty intervention set this reduces to a plain lifted
    query.
    """
    state = make_state(model)
    domains = state.domains
    evidence = query.evidence_map()
    merged = _merge_do_groups(query.dos, domains)
    do_rvs = expand_do_map(query.dos, domains)
    for rv, value in evidence.items():
        if rv in do_rvs:
            raise QueryError(
                f"{rv} cannot carry both evidence and an intervention"
            )
    target_rvs: set[GroundRV] = set()
    for t in query.targets:
        if isinstance(t, PRV):
            target_rvs.update(prv_groundings(t, domains))
        else:
            target_rvs.add(t)
    overlap = target_rvs & set(do_rvs)
    if overlap:
        raise QueryError(
            f"targets overlap interventions: {sorted(map(str, overlap))}"
        )
    if merged:
        terms = [(prv.name, ts) for prv, ts, _ in merged]
        state = shatter(state, terms, verify=verify_shatter)
        state = mutilate(state, query.dos)
    return lve_query(
        state, list(query.targets), evidence, verify_shatter=verify_shatter
    )
