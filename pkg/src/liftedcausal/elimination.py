"""Propositional variable elimination over ground factor graphs.

This is the ground baseline: sum-product elimination with a greedy
ordering heuristic, plus the local-rescaling conversion from a directed
factor graph to conditional-probability-table form.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ._tableops import keyed_product, sum_out
from .errors import InconsistentEvidenceError
from .ground import Distribution, GroundFG, GroundFactor, ground_do
from .model import GroundRV


def choose_order(
    model: GroundFG,
    targets: Sequence[GroundRV],
    evidence: Sequence[GroundRV] = (),
    heuristic: str = "min_degree",
) -> list[GroundRV]:
    """Greedy elimination order over the non-target, non-evidence variables.

    ``min_degree`` picks the variable with the fewest remaining neighbors,
    ``min_fill`` the one whose elimination adds the fewest new edges.
    Ties break lexicographically on the variable's printed name.
    """
    if heuristic not in ("min_degree", "min_fill"):
        raise ValueError(f"unknown heuristic {heuristic!r}")
    skip = set(targets) | set(evidence)
    neighbors: dict[GroundRV, set[GroundRV]] = {
        rv: set() for rv in model.rvs if rv not in skip
    }
    for f in model.factors:
        scope = [rv for rv in f.args if rv not in skip]
        for rv in scope:
            neighbors[rv].update(o for o in scope if o != rv)
    order: list[GroundRV] = []
    remaining = dict(neighbors)
    while remaining:
        if heuristic == "min_degree":
            cost = {rv: len(ns) for rv, ns in remaining.items()}
        else:
            cost = {
                rv: sum(
                    1
                    for i, a in enumerate(sorted(ns, key=str))
                    for b in sorted(ns, key=str)[i + 1 :]
                    if b not in remaining.get(a, ()) and a not in remaining.get(b, ())
                )
                for rv, ns in remaining.items()
            }
        pick = min(remaining, key=lambda rv: (cost[rv], str(rv)))
        order.append(pick)
        ns = remaining.pop(pick)
        for a in ns:
            if a in remaining:
                remaining[a].discard(pick)
                remaining[a].update(b for b in ns if b != a and b in remaining)
    return order


def ve_query(
    model: GroundFG,
    targets: Sequence[GroundRV],
    evidence: Mapping[GroundRV, str] | None = None,
    do_values: Mapping[GroundRV, str] | None = None,
    order: Sequence[GroundRV] | None = None,
    heuristic: str = "min_degree",
) -> Distribution:
    """Sum-product elimination answering the same queries as the oracle.

    Interventions are applied by factor rewriting before elimination,
    evidence by slicing tables (restrict-and-drop).  Intermediate tables
    are rescaled to unit maximum; the final distribution is normalized, so
    the rescaling cancels.
    """
    evidence = dict(evidence or {})
    do_values = dict(do_values or {})
    if not targets:
        raise ValueError("query needs at least one target")
    if set(evidence) & set(do_values):
        raise ValueError("evidence and intervention overlap")
    if len(set(targets)) != len(targets):
        raise ValueError("duplicate query targets")
    unknown = (set(targets) | set(evidence) | set(do_values)) - set(model.rvs)
    if unknown:
        raise KeyError(f"unknown ground variables: {sorted(map(str, unknown))}")
    if do_values:
        model = ground_do(model, do_values)
    work: list[tuple[list[GroundRV], np.ndarray]] = []
    for f in model.factors:
        keys = list(f.args)
        table = f.table
        for rv, value in evidence.items():
            while rv in keys:
                axis = keys.index(rv)
                table = np.take(table, rv.range.index(value), axis=axis)
                keys.pop(axis)
        work.append((keys, table))
    if order is None:
        order = choose_order(model, targets, tuple(evidence), heuristic)
    else:
        expected = set(model.rvs) - set(targets) - set(evidence)
        if set(order) != expected or len(order) != len(expected):
            raise ValueError("order must contain exactly the non-target variables once")
    for rv in order:
        touched = [wf for wf in work if rv in wf[0]]
        if not touched:
            continue
        work = [wf for wf in work if rv not in wf[0]]
        keys, table = touched[0]
        for k2, t2 in touched[1:]:
            keys, table = keyed_product(keys, table, k2, t2)
        keys, table = sum_out(keys, table, rv)
        peak = table.max()
        if peak > 0:
            table = table / peak
        work.append((keys, table))
    keys: list[GroundRV] = []
    table = np.ones(())
    for k2, t2 in work:
        keys, table = keyed_product(keys, table, k2, t2)
    for rv in targets:
        if rv not in keys:
            # Target mentioned by no remaining factor: uniform axis.
            keys, table = keyed_product(
                keys, table, [rv], np.ones(rv.range.size)
            )
    mass = float(table.sum())
    if mass <= 0.0:
        raise InconsistentEvidenceError("evidence has probability zero")
    dist = Distribution(tuple(keys), table / mass)
    return dist.reordered(tuple(targets))


def to_bayes_net(model: GroundFG) -> GroundFG:
    """Rescale every factor so its child-axis slices sum to one.

    Requires each ground variable to be the child of exactly one factor.
    When every factor's pre-rescaling child sums are constant across
    parent assignments (in particular for already-normalized tables), the
    represented distribution is unchanged.
    """
    owners: dict[GroundRV, list[GroundFactor]] = {rv: [] for rv in model.rvs}
    for f in model.factors:
        if f.child_index is None:
            raise ValueError(f"factor {f.id} has no child")
        owners[f.child].append(f)
    bad = {rv: fs for rv, fs in owners.items() if len(fs) != 1}
    if bad:
        detail = ", ".join(
            f"{rv} ({len(fs)} factors)" for rv, fs in sorted(bad.items(), key=lambda x: str(x[0]))
        )
        raise ValueError(f"not convertible to conditional tables: {detail}")
    factors = []
    for f in model.factors:
        sums = f.table.sum(axis=f.child_index, keepdims=True)
        factors.append(
            GroundFactor(f.id, f.args, f.child_index, f.table / sums, f.mutilated)
        )
    return GroundFG(model.rvs, tuple(factors))
