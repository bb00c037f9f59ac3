"""Lifted variable elimination over parametric factor graphs.

The engine works on groups of interchangeable instances instead of
individual ground variables.  An *occurrence group* is a PRV name plus
the set of argument tuples a parfactor argument ranges over; after
shattering, any two occurrence groups of the same PRV are identical or
disjoint, so each group behaves like a single variable.

Operator subset: splitting (shattering), one-to-one lifted multiply,
lifted sum-out with an instance-count exponent, and grounding a logical
variable as the correctness-preserving fallback.  Counting conversion is
not implemented; structures that would need it fall back to grounding,
which keeps results exact at the cost of speed.

Correctness is defined by grounding: every operator preserves the
multiset of ground factors (splits) or the value of their product
(multiply, sum-out), which the property tests check directly.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from math import prod
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import constraints as cs
from ._tableops import keyed_product
from .constraints import TupleSet
from .errors import (
    InconsistentEvidenceError,
    QueryError,
    ShatterRequiredError,
)
from .ground import Distribution
from .model import (
    Constraint,
    Domain,
    GroundRV,
    PCFG,
    PRV,
    Parfactor,
    base_logvar,
    constraint_count,
    constraint_tuple_set,
    ensure_valid,
    iter_constraint_tuples,
    make_constraint,
    project_tuple_set,
    prv_groundings,
    split_constraint,
    top_constraint,
)

_MAX_STEPS = 10_000


@lru_cache(maxsize=4096)
def _ts_key(ts: TupleSet):
    """Deterministic ordering key for a tuple set."""
    if ts.coord_sets is not None:
        return ("P", tuple(tuple(sorted(s)) for s in ts.coord_sets))
    return ("E", tuple(sorted(ts.tuples)))


@dataclass(frozen=True)
class SplitEvent:
    """One parfactor partitioned into two pieces by one split term."""

    parfactor_id: str
    prv_name: str


@dataclass
class LiftedState:
    """Working set of parfactors plus bookkeeping for derived names."""

    domains: dict[str, Domain]
    parfactors: list[Parfactor]
    prvs: tuple[PRV, ...]
    split_events: list[SplitEvent] = field(default_factory=list)
    log_weight: float = 0.0
    _fresh: int = 0

    def fresh_id(self, prefix: str) -> str:
        self._fresh += 1
        return f"{prefix}.{self._fresh}"

    def fresh_logvar(self, base: str) -> str:
        self._fresh += 1
        return f"{base_logvar(base)}${self._fresh}"

    def copy(self) -> "LiftedState":
        return LiftedState(
            self.domains,
            list(self.parfactors),
            self.prvs,
            list(self.split_events),
            self.log_weight,
            self._fresh,
        )

    def to_model(self) -> PCFG:
        """Reconstruct a model; only valid before any multiply renamed logvars."""
        for g in self.parfactors:
            for a in g.args:
                if any("$" in lv for lv in a.params):
                    raise ValueError("state contains renamed logvars")
        return PCFG(tuple(self.domains.values()), self.prvs, tuple(self.parfactors))


def make_state(model: PCFG) -> LiftedState:
    ensure_valid(model)
    return LiftedState(dict(model.domain_map), list(model.parfactors), model.prvs)


def occurrence_set(
    g: Parfactor, index: int, domains: Mapping[str, Domain]
) -> TupleSet:
    """Set of argument tuples the ``index``-th argument ranges over."""
    arg = g.args[index]
    if not arg.params:
        return cs.from_product(())
    return project_tuple_set(g.constraint, arg.params, domains)


def _group_key(g: Parfactor, index: int, domains) -> tuple[str, TupleSet]:
    return (g.args[index].name, occurrence_set(g, index, domains))


def grounding_multiset(
    parfactors: Iterable[Parfactor], domains: Mapping[str, Domain]
) -> Counter:
    """Multiset of ground factors, for split-preservation checks."""
    out: Counter = Counter()
    for g in parfactors:
        lv_pos = {lv: i for i, lv in enumerate(g.constraint.logvars)}
        body = g.table.tobytes()
        for t in iter_constraint_tuples(g.constraint, domains):
            args = tuple(
                (a.name, tuple(t[lv_pos[lv]] for lv in a.params)) for a in g.args
            )
            out[(args, g.child_index, body)] += 1
    return out


def _as_term(
    term, domains: Mapping[str, Domain]
) -> tuple[str, TupleSet]:
    """Normalize a split term to (prv name, argument-tuple set)."""
    if isinstance(term, GroundRV):
        if term.args:
            return term.name, cs.from_tuples(len(term.args), {term.args})
        return term.name, cs.from_product(())
    if isinstance(term, PRV):
        full = project_tuple_set(
            top_constraint(term.params), term.params, domains
        ) if term.params else cs.from_product(())
        return term.name, full
    if isinstance(term, tuple) and len(term) == 2:
        prv, constraint = term
        if isinstance(prv, PRV) and isinstance(constraint, Constraint):
            return prv.name, project_tuple_set(constraint, prv.params, domains)
        if isinstance(prv, str) and isinstance(constraint, TupleSet):
            return prv, constraint
    raise TypeError(f"cannot interpret split term {term!r}")


def _split_once(
    g: Parfactor,
    prv_name: str,
    group: TupleSet,
    state: LiftedState,
) -> list[Parfactor] | None:
    """Split ``g`` on the first argument that straddles ``group``; None if none does."""
    for i, arg in enumerate(g.args):
        if arg.name != prv_name:
            continue
        occ = occurrence_set(g, i, state.domains)
        if cs.is_disjoint(occ, group) or cs.is_subset(occ, group):
            continue
        inside, outside = split_constraint(
            g.constraint, arg.params, group, state.domains
        )
        assert inside is not None and outside is not None
        state.split_events.append(SplitEvent(g.id, prv_name))
        return [
            Parfactor(
                state.fresh_id(g.id), g.args, g.child_index, c, g.table, g.mutilated
            )
            for c in (inside, outside)
        ]
    return None


def _apply_terms(
    state: LiftedState, terms: Sequence[tuple[str, TupleSet]]
) -> None:
    work = list(state.parfactors)
    done: list[Parfactor] = []
    steps = 0
    while work:
        steps += 1
        if steps > _MAX_STEPS:
            raise RuntimeError("shattering did not terminate")
        g = work.pop(0)
        for name, group in terms:
            pieces = _split_once(g, name, group, state)
            if pieces is not None:
                work = pieces + work
                break
        else:
            done.append(g)
    state.parfactors = done


def _pairwise_shatter(state: LiftedState) -> None:
    """Refine until all same-PRV occurrence sets are identical or disjoint."""
    steps = 0
    while True:
        steps += 1
        if steps > _MAX_STEPS:
            raise RuntimeError("pairwise shattering did not terminate")
        occs: dict[str, list[TupleSet]] = {}
        for g in state.parfactors:
            for i in range(len(g.args)):
                name = g.args[i].name
                occs.setdefault(name, []).append(occurrence_set(g, i, state.domains))
        conflict: tuple[str, TupleSet] | None = None
        for name in sorted(occs):
            sets = sorted(set(occs[name]), key=_ts_key)
            for i, a in enumerate(sets):
                for b in sets[i + 1 :]:
                    if not cs.is_disjoint(a, b) and a != b:
                        inter = cs.intersect(a, b)
                        conflict = (name, inter)
                        break
                if conflict:
                    break
            if conflict:
                break
        if conflict is None:
            return
        _apply_terms(state, [conflict])


def shatter(state: LiftedState, terms: Iterable[object], verify: bool = False) -> LiftedState:
    """Split parfactors so every term's instance set aligns with whole groups.

    Terms may be ground variables, whole PRVs, or (PRV, Constraint) pairs.
    After shattering, every argument occurrence of a term's PRV lies
    entirely inside or entirely outside the term's instance set, so all
    occurrences of that PRV are pairwise identical or disjoint.  A term
    covering the full occurrence set of an argument causes no split.
    Occurrence alignment for unrelated PRVs is left to the query engine,
    which refines on demand.  With ``verify`` the ground-factor multiset
    is checked to be unchanged.
    """
    out = state.copy()
    norm = [_as_term(t, out.domains) for t in terms]
    before = grounding_multiset(out.parfactors, out.domains) if verify else None
    _apply_terms(out, norm)
    if verify:
        after = grounding_multiset(out.parfactors, out.domains)
        if before != after:
            raise AssertionError("shattering changed the grounding multiset")
    return out


# ---------------------------------------------------------------------------
# Lifted multiply
# ---------------------------------------------------------------------------


def _join_constraints(
    c1: Constraint,
    c2: Constraint,
    domains: Mapping[str, Domain],
) -> Constraint | None:
    """Natural join on shared logvar names; None when empty."""
    lvs = tuple(sorted(set(c1.logvars) | set(c2.logvars)))
    t1 = constraint_tuple_set(c1, domains)
    t2 = constraint_tuple_set(c2, domains)
    if t1.coord_sets is not None and t2.coord_sets is not None:
        coords = []
        for lv in lvs:
            s: frozenset[str] | None = None
            if lv in c1.logvars:
                s = t1.coord_sets[c1.position(lv)]
            if lv in c2.logvars:
                s2 = t2.coord_sets[c2.position(lv)]
                s = s2 if s is None else (s & s2)
            coords.append(s)
        if any(not c for c in coords):
            return None
        return make_constraint(lvs, cs.from_product(coords), domains)
    shared = [lv for lv in c2.logvars if lv in c1.logvars]
    only2 = [lv for lv in c2.logvars if lv not in c1.logvars]
    by_shared: dict[tuple[str, ...], list[tuple[str, ...]]] = {}
    for t in constraint_tuple_set(c2, domains).materialize():
        key = tuple(t[c2.position(lv)] for lv in shared)
        by_shared.setdefault(key, []).append(tuple(t[c2.position(lv)] for lv in only2))
    joined = set()
    for t in constraint_tuple_set(c1, domains).materialize():
        key = tuple(t[c1.position(lv)] for lv in shared)
        for ext in by_shared.get(key, ()):
            combo = dict(zip(c1.logvars, t))
            combo.update(zip(only2, ext))
            joined.add(tuple(combo[lv] for lv in lvs))
    if not joined:
        return None
    return make_constraint(lvs, cs.from_tuples(len(lvs), joined), domains)


def _rename_parfactor(
    g: Parfactor, mapping: Mapping[str, str], domains
) -> Parfactor:
    """Apply a logvar renaming; collapsing names restricts to their diagonal.

    A non-injective mapping merges logvars: only assignments where the
    merged logvars coincide survive.  Callers must verify no instances
    were dropped (the one-to-one multiply check does).
    """
    if not mapping or all(k == v for k, v in mapping.items()):
        return g
    args = tuple(
        PRV(a.name, tuple(mapping.get(lv, lv) for lv in a.params), a.range)
        for a in g.args
    )
    old = g.constraint.logvars
    new = tuple(mapping.get(lv, lv) for lv in old)
    lvs = tuple(sorted(set(new)))
    ts = constraint_tuple_set(g.constraint, domains)
    if len(set(new)) == len(new):
        order = sorted(range(len(new)), key=lambda i: new[i])
        if ts.coord_sets is not None:
            allowed = cs.from_product([ts.coord_sets[i] for i in order])
        else:
            allowed = cs.from_tuples(
                len(lvs), {tuple(t[i] for i in order) for t in ts.tuples}
            )
    else:
        slots: dict[str, list[int]] = {}
        for i, name in enumerate(new):
            slots.setdefault(name, []).append(i)
        if ts.coord_sets is not None:
            coords = []
            for name in lvs:
                merged: frozenset[str] | None = None
                for i in slots[name]:
                    merged = (
                        ts.coord_sets[i]
                        if merged is None
                        else merged & ts.coord_sets[i]
                    )
                if not merged:
                    raise ShatterRequiredError("logvar merge leaves no instances")
                coords.append(merged)
            allowed = cs.from_product(coords)
        else:
            kept = set()
            for t in ts.tuples:
                values: dict[str, str] = {}
                consistent = True
                for i, name in enumerate(new):
                    if values.setdefault(name, t[i]) != t[i]:
                        consistent = False
                        break
                if consistent:
                    kept.add(tuple(values[name] for name in lvs))
            if not kept:
                raise ShatterRequiredError("logvar merge leaves no instances")
            allowed = cs.from_tuples(len(lvs), kept)
    return Parfactor(
        g.id, args, g.child_index, make_constraint(lvs, allowed, domains), g.table, g.mutilated
    )


def _plan_multiply(
    g1: Parfactor, g2: Parfactor, state: LiftedState
) -> tuple[Parfactor, Constraint, tuple[PRV, ...], list[int]]:
    """Rename ``g2`` apart, join constraints, and plan the argument union.

    Returns the renamed second operand, the joined constraint, the result
    argument tuple, and for each ``g2`` argument its axis in the result.
    Raises :class:`ShatterRequiredError` when the grounding correspondence
    is not one-to-one.
    """
    domains = state.domains
    keys1 = [_group_key(g1, i, domains) for i in range(len(g1.args))]
    keys2 = [_group_key(g2, i, domains) for i in range(len(g2.args))]
    if len(set(keys1)) != len(keys1) or len(set(keys2)) != len(keys2):
        raise ShatterRequiredError("duplicate occurrence groups inside one parfactor")
    mapping: dict[str, str] = {}
    shared_pairs = [
        (i, keys2.index(k)) for i, k in enumerate(keys1) if k in keys2
    ]
    for i1, i2 in shared_pairs:
        p1, p2 = g1.args[i1].params, g2.args[i2].params
        for a, b in zip(p2, p1):
            if mapping.get(a, b) != b:
                raise ShatterRequiredError(
                    f"cannot align logvars of shared {g1.args[i1].name}"
                )
            mapping[a] = b
    taken = set(g1.constraint.logvars) | set(mapping.values())
    for lv in g2.constraint.logvars:
        if lv not in mapping:
            mapping[lv] = (
                state.fresh_logvar(lv) if lv in taken else lv
            )
            taken.add(mapping[lv])
    g2r = _rename_parfactor(g2, mapping, domains)
    joined = _join_constraints(g1.constraint, g2r.constraint, domains)
    if joined is None:
        raise ShatterRequiredError("constraint join is empty")
    n = constraint_count(joined, domains)
    # Compare against the operands' original grounding counts so that a
    # merge that silently dropped instances is rejected as well.
    if n != constraint_count(g1.constraint, domains) or n != constraint_count(
        g2.constraint, domains
    ):
        raise ShatterRequiredError("grounding correspondence is not one-to-one")
    shared2 = {i2 for _, i2 in shared_pairs}
    args = tuple(g1.args) + tuple(
        a for i, a in enumerate(g2r.args) if i not in shared2
    )
    axis2 = []
    extra = len(g1.args)
    pos_of_shared = {i2: i1 for i1, i2 in shared_pairs}
    for i in range(len(g2r.args)):
        if i in pos_of_shared:
            axis2.append(pos_of_shared[i])
        else:
            axis2.append(extra)
            extra += 1
    return g2r, joined, args, axis2


def lifted_multiply(
    g1: Parfactor, g2: Parfactor, state: LiftedState
) -> Parfactor:
    """One-to-one product of two parfactors sharing aligned groups.

    Grounding the result yields exactly the pairwise products of the
    operands' ground factors.  Logvars of the second operand that are not
    aligned through a shared argument are renamed apart.
    """
    g2r, joined, args, axis2 = _plan_multiply(g1, g2, state)
    keys1 = list(range(len(g1.args)))
    keys2 = [axis2[i] for i in range(len(g2r.args))]
    order, table = keyed_product(keys1, g1.table, keys2, g2r.table)
    perm = [order.index(i) for i in range(len(args))]
    table = np.transpose(table, perm)
    return Parfactor(
        state.fresh_id("w"),
        args,
        None,
        joined,
        table,
        g1.mutilated or g2.mutilated,
    )


# ---------------------------------------------------------------------------
# Lifted sum-out
# ---------------------------------------------------------------------------


def _sum_out_exponent(
    g: Parfactor, index: int, domains: Mapping[str, Domain]
) -> tuple[int, Constraint]:
    """Validate sum-out preconditions; return (exponent, result constraint).

    Each ground instance of the parfactor must contain its own private
    instance of the target argument (injectivity), and the number of
    instances collapsing onto one instance of the remaining arguments must
    be uniform (the exponent).
    """
    target = g.args[index]
    ts = constraint_tuple_set(g.constraint, domains)
    total = ts.count()
    rest_lvs = tuple(
        sorted({lv for i, a in enumerate(g.args) if i != index for lv in a.params})
    )
    if target.params:
        proj = project_tuple_set(g.constraint, target.params, domains)
        if proj.count() != total:
            raise ShatterRequiredError(
                f"instances of {target.name} are shared across groundings"
            )
    elif total != 1:
        raise ShatterRequiredError(
            f"propositional {target.name} is shared across groundings"
        )
    if rest_lvs:
        rest_proj = project_tuple_set(g.constraint, rest_lvs, domains)
        groups = rest_proj.count()
        if total % groups != 0:
            raise ShatterRequiredError("constraint is not count-uniform")
        r = total // groups
        if ts.coord_sets is None:
            counts = Counter()
            pos = [g.constraint.position(lv) for lv in rest_lvs]
            for t in ts.materialize():
                counts[tuple(t[i] for i in pos)] += 1
            if len(set(counts.values())) != 1:
                raise ShatterRequiredError("constraint is not count-uniform")
            r = next(iter(counts.values()))
        result = make_constraint(rest_lvs, rest_proj, domains)
    else:
        r = total
        result = Constraint(())
    return r, result


def lifted_sum_out(
    g: Parfactor, index: int, state: LiftedState
) -> tuple[Parfactor, float]:
    """Eliminate one argument group from a parfactor.

    Sums the target axis out of the table and raises the result to the
    number of eliminated instances per remaining instance.  Returns the
    new parfactor together with a log-scale correction: the represented
    table is ``table * exp(log_delta)``, kept separate to avoid overflow
    for large exponents.
    """
    r, constraint = _sum_out_exponent(g, index, state.domains)
    summed = g.table.sum(axis=index)
    args = tuple(a for i, a in enumerate(g.args) if i != index)
    log_delta = 0.0
    if r != 1:
        peak = float(summed.max())
        if peak <= 0.0:
            summed = np.zeros_like(summed)
        else:
            exponent_span = r * math.log10(max(peak, 1e-300))
            if -250.0 < exponent_span < 250.0 and r * math.log10(
                max(float(summed.min()) if summed.min() > 0 else peak, 1e-300)
            ) > -250.0:
                summed = summed**r
            else:
                summed = (summed / peak) ** r
                log_delta = r * math.log(peak)
    return (
        Parfactor(state.fresh_id("w"), args, None, constraint, summed, g.mutilated),
        log_delta,
    )


def ground_logvar(g: Parfactor, logvar: str, state: LiftedState) -> list[Parfactor]:
    """Replace a parfactor by one copy per value of one logical variable."""
    if logvar not in g.constraint.logvars:
        raise ValueError(f"{logvar} is not a logvar of {g.id}")
    values = project_tuple_set(g.constraint, (logvar,), state.domains)
    order = state.domains[base_logvar(logvar)].constants
    out = []
    for (v,) in values.iter_tuples([order]):
        pinned, _ = split_constraint(
            g.constraint, (logvar,), cs.from_tuples(1, {(v,)}), state.domains
        )
        assert pinned is not None
        out.append(
            Parfactor(
                state.fresh_id(g.id), g.args, g.child_index, pinned, g.table, g.mutilated
            )
        )
    return out


# ---------------------------------------------------------------------------
# Query driver
# ---------------------------------------------------------------------------


def _groups(state: LiftedState) -> dict[tuple[str, TupleSet], list[tuple[int, int]]]:
    """Occurrence groups -> list of (parfactor position, arg index)."""
    out: dict[tuple[str, TupleSet], list[tuple[int, int]]] = {}
    for pi, g in enumerate(state.parfactors):
        for ai in range(len(g.args)):
            out.setdefault(_group_key(g, ai, state.domains), []).append((pi, ai))
    return out


def _absorb_evidence(state: LiftedState, evidence: Mapping[GroundRV, str]) -> None:
    ev_keys = {
        (rv.name, cs.from_tuples(len(rv.args), {rv.args}) if rv.args else cs.from_product(())): value
        for rv, value in evidence.items()
    }
    new_parfactors = []
    for g in state.parfactors:
        table = g.table
        keep: list[int] = []
        dropped = False
        for i, arg in enumerate(g.args):
            key = (arg.name, occurrence_set(g, i, state.domains))
            if key in ev_keys:
                dropped = True
            else:
                keep.append(i)
        if not dropped:
            new_parfactors.append(g)
            continue
        for i in sorted(set(range(len(g.args))) - set(keep), reverse=True):
            arg = g.args[i]
            key = (arg.name, occurrence_set(g, i, state.domains))
            table = np.take(table, arg.range.index(ev_keys[key]), axis=i)
        args = tuple(g.args[i] for i in keep)
        rest_lvs = tuple(sorted({lv for a in args for lv in a.params}))
        before = constraint_count(g.constraint, state.domains)
        if rest_lvs == g.constraint.logvars:
            constraint = g.constraint
        else:
            proj = project_tuple_set(g.constraint, rest_lvs, state.domains)
            assert proj.count() == before, "evidence slice dropped instances"
            constraint = make_constraint(rest_lvs, proj, state.domains)
        new_parfactors.append(
            Parfactor(state.fresh_id(g.id), args, None, constraint, table, g.mutilated)
        )
    state.parfactors = new_parfactors


def _candidate_plan(
    state: LiftedState, members: list[tuple[int, int]]
) -> tuple[int, list[int]] | None:
    """Feasibility and table-size cost of eliminating one group; None if blocked."""
    positions = sorted({pi for pi, _ in members})
    probe = state.copy()
    try:
        folded = probe.parfactors[positions[0]]
        for pi in positions[1:]:
            _, joined, args, _ = _plan_multiply(folded, probe.parfactors[pi], probe)
            folded = Parfactor(
                "probe", args, None, joined, np.broadcast_to(
                    np.float64(1.0), tuple(a.range.size for a in args)
                )
            )
        name, ts = _group_key(state.parfactors[members[0][0]], members[0][1], state.domains)
        idx = next(
            i for i, a in enumerate(folded.args)
            if a.name == name and occurrence_set(folded, i, state.domains) == ts
        )
        _sum_out_exponent(folded, idx, state.domains)
    except ShatterRequiredError:
        return None
    cost = prod(a.range.size for i, a in enumerate(folded.args) if i != idx)
    return cost, positions


def _eliminate_group(
    state: LiftedState, members: list[tuple[int, int]]
) -> None:
    positions = sorted({pi for pi, _ in members})
    name, ts = _group_key(
        state.parfactors[members[0][0]], members[0][1], state.domains
    )
    folded = state.parfactors[positions[0]]
    for pi in positions[1:]:
        folded = lifted_multiply(folded, state.parfactors[pi], state)
    idx = next(
        i for i, a in enumerate(folded.args)
        if a.name == name and occurrence_set(folded, i, state.domains) == ts
    )
    result, log_delta = lifted_sum_out(folded, idx, state)
    state.log_weight += log_delta
    remaining = [g for pi, g in enumerate(state.parfactors) if pi not in positions]
    remaining.append(result)
    state.parfactors = remaining


def _fallback_ground(state: LiftedState) -> None:
    """Ground the cheapest (parfactor, logvar) slot to unblock elimination."""
    best = None
    for pi, g in enumerate(state.parfactors):
        for lv in g.constraint.logvars:
            n = project_tuple_set(g.constraint, (lv,), state.domains).count()
            if n <= 1:
                continue
            key = (n, lv, g.id)
            if best is None or key < best[0]:
                best = (key, pi, lv)
    if best is None:
        raise RuntimeError("no lifted operator applies and nothing left to ground")
    _, pi, lv = best
    g = state.parfactors[pi]
    pieces = ground_logvar(g, lv, state)
    state.parfactors = (
        state.parfactors[:pi] + pieces + state.parfactors[pi + 1 :]
    )
    _pairwise_shatter(state)


def _normalize_targets(
    state: LiftedState, targets: Sequence[GroundRV | PRV]
) -> list[GroundRV]:
    out: list[GroundRV] = []
    for t in targets:
        if isinstance(t, PRV):
            out.extend(prv_groundings(t, state.domains))
        else:
            out.append(t)
    if len(set(out)) != len(out):
        raise QueryError("duplicate query targets")
    known = {p.name: p for p in state.prvs}
    for rv in out:
        prv = known.get(rv.name)
        if prv is None:
            raise QueryError(f"unknown variable {rv}")
        if rv not in prv_groundings(prv, state.domains):
            raise QueryError(f"{rv} is not an instance of {prv}")
    return out


def lve_query(
    source: PCFG | LiftedState,
    targets: Sequence[GroundRV | PRV],
    evidence: Mapping[GroundRV, str] | None = None,
    verify_shatter: bool = False,
) -> Distribution:
    """Lifted sum-product query answering.

    Shatters on targets and evidence, absorbs the evidence, then
    repeatedly eliminates the group with the smallest resulting table
    among those a lifted operator can handle, grounding one logvar at a
    time when none can.  PRV targets stand for all their instances.
    """
    state = make_state(source) if isinstance(source, PCFG) else source.copy()
    evidence = dict(evidence or {})
    rv_targets = _normalize_targets(state, targets)
    if not rv_targets:
        raise QueryError("query needs at least one target")
    known = {p.name: p for p in state.prvs}
    for rv, value in evidence.items():
        prv = known.get(rv.name)
        if prv is None or rv not in prv_groundings(prv, state.domains):
            raise QueryError(f"unknown evidence variable {rv}")
        if value not in rv.range.values:
            raise QueryError(f"value {value} not in range of {rv}")
        if rv in rv_targets:
            raise QueryError(f"{rv} cannot be both target and evidence")
    state = shatter(state, list(rv_targets) + list(evidence), verify=verify_shatter)
    _absorb_evidence(state, evidence)
    _pairwise_shatter(state)

    target_keys = {
        (
            rv.name,
            cs.from_tuples(len(rv.args), {rv.args}) if rv.args else cs.from_product(()),
        )
        for rv in rv_targets
    }
    steps = 0
    while True:
        steps += 1
        if steps > _MAX_STEPS:
            raise RuntimeError("elimination did not terminate")
        groups = _groups(state)
        todo = {k: v for k, v in groups.items() if k not in target_keys}
        if not todo:
            break
        plans = []
        for key in sorted(todo, key=lambda k: (k[0], _ts_key(k[1]))):
            plan = _candidate_plan(state, todo[key])
            if plan is not None:
                plans.append((plan[0], key))
        if plans:
            _, key = min(plans, key=lambda p: (p[0], p[1][0], _ts_key(p[1][1])))
            _eliminate_group(state, todo[key])
            _pairwise_shatter(state)
        else:
            _fallback_ground(state)
    return _finalize(state, rv_targets)


def _finalize(state: LiftedState, targets: list[GroundRV]) -> Distribution:
    keys: list[GroundRV] = []
    table = np.ones(())
    for g in state.parfactors:
        assert constraint_count(g.constraint, state.domains) == 1, (
            "finalization requires fully pinned constraints"
        )
        t = next(iter_constraint_tuples(g.constraint, state.domains))
        pos = {lv: i for i, lv in enumerate(g.constraint.logvars)}
        rvs = [
            GroundRV(a.name, tuple(t[pos[lv]] for lv in a.params), a.range)
            for a in g.args
        ]
        keys, table = keyed_product(keys, table, rvs, g.table)
        peak = table.max()
        if peak > 0:
            table = table / peak
    for rv in targets:
        if rv not in keys:
            keys, table = keyed_product(keys, table, [rv], np.ones(rv.range.size))
    extra = [k for k in keys if k not in set(targets)]
    assert not extra, f"unexpected free variables {extra} after elimination"
    mass = float(table.sum())
    if mass <= 0.0:
        raise InconsistentEvidenceError("evidence has probability zero")
    dist = Distribution(tuple(keys), table / mass)
    return dist.reordered(tuple(targets))
