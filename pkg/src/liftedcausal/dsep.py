"""Ground-level d-separation over the directed factor graph.

The checker grounds the model, collapses factors into parent-to-child
edges (factor nodes are pass-through for reachability purposes), and runs
the classic active-trail reachability: a path is blocked when it passes
through an observed chain or fork node, or through a collider none of
whose descendants is observed.  The companion check verifies claimed
separations numerically against the enumeration oracle.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import QueryError
from .ground import DEFAULT_GROUND_LIMIT, GroundFG, ground, oracle_query
from .model import GroundRV, PCFG, validate


@dataclass(frozen=True)
class DsepQuery:
    """Three disjoint ground-variable sets: is X independent of Y given Z?"""

    x_set: tuple[GroundRV, ...]
    y_set: tuple[GroundRV, ...]
    z_set: tuple[GroundRV, ...] = ()

    def __post_init__(self):
        if not self.x_set or not self.y_set:
            raise QueryError("d-separation needs non-empty X and Y")
        x, y, z = set(self.x_set), set(self.y_set), set(self.z_set)
        if x & y or x & z or y & z:
            raise QueryError("X, Y and Z must be pairwise disjoint")


def _rv_dag(fg: GroundFG) -> tuple[dict[GroundRV, set[GroundRV]], dict[GroundRV, set[GroundRV]]]:
    parents: dict[GroundRV, set[GroundRV]] = {rv: set() for rv in fg.rvs}
    children: dict[GroundRV, set[GroundRV]] = {rv: set() for rv in fg.rvs}
    for f in fg.factors:
        if f.child_index is None:
            continue
        child = f.child
        for i, rv in enumerate(f.args):
            if i != f.child_index:
                parents[child].add(rv)
                children[rv].add(child)
    return parents, children


def d_separated(
    model: PCFG | GroundFG,
    query: DsepQuery,
    limit: int = DEFAULT_GROUND_LIMIT,
) -> bool:
    """True iff Z blocks every path between X and Y in the grounding."""
    fg = model if isinstance(model, GroundFG) else ground(model, limit)
    missing = [
        rv
        for rv in (*query.x_set, *query.y_set, *query.z_set)
        if rv not in fg.rv_index
    ]
    if missing:
        raise QueryError(f"unknown ground variables: {sorted(map(str, missing))}")
    parents, children = _rv_dag(fg)
    z = set(query.z_set)
    # Z together with its ancestors: exactly the nodes at which a collider
    # may pass the trail back up to a parent.
    opens_colliders = set(z)
    stack = list(z)
    while stack:
        node = stack.pop()
        for p in parents[node]:
            if p not in opens_colliders:
                opens_colliders.add(p)
                stack.append(p)
    y = set(query.y_set)
    # States: (node, came_from_parent); start as if arriving from a child.
    seen: set[tuple[GroundRV, bool]] = set()
    queue: deque[tuple[GroundRV, bool]] = deque(
        (x, False) for x in query.x_set
    )
    while queue:
        node, from_parent = queue.popleft()
        if (node, from_parent) in seen:
            continue
        seen.add((node, from_parent))
        if node in y:
            return False
        if from_parent:
            if node in opens_colliders:
                for p in parents[node]:
                    queue.append((p, False))
            if node not in z:
                for c in children[node]:
                    queue.append((c, True))
        else:
            if node in z:
                continue
            for p in parents[node]:
                queue.append((p, False))
            for c in children[node]:
                queue.append((c, True))
    return True


@dataclass(frozen=True)
class CiCheckEntry:
    """Numeric verification result for one d-separated triple."""

    query: DsepQuery
    separated: bool
    max_deviation: float
    skipped_conditions: int
    violated: bool


@dataclass
class CiReport:
    """Outcome of checking separation claims against the oracle."""

    row_normalized: bool
    entries: list[CiCheckEntry] = field(default_factory=list)

    @property
    def violations(self) -> list[CiCheckEntry]:
        return [e for e in self.entries if e.violated]


def _verify_factorization(
    fg: GroundFG, query: DsepQuery, tol: float
) -> tuple[float, int]:
    """Max deviation of P(X,Y|Z) from P(X|Z)P(Y|Z) over all conditions."""
    targets = list(query.x_set) + list(query.y_set) + list(query.z_set)
    dist = oracle_query(fg, targets)
    nx, ny = len(query.x_set), len(query.y_set)
    x_axes = tuple(range(nx))
    y_axes = tuple(range(nx, nx + ny))
    probs = dist.probs
    z_shape = probs.shape[nx + ny :]
    worst = 0.0
    skipped = 0
    for z_idx in itertools.product(*(range(s) for s in z_shape)):
        block = probs[(slice(None),) * (nx + ny) + z_idx]
        mass = float(block.sum())
        if mass <= 0.0:
            skipped += 1
            continue
        joint = block / mass
        px = joint.sum(axis=y_axes)
        py = joint.sum(axis=x_axes)
        outer = np.multiply.outer(px, py).reshape(joint.shape)
        worst = max(worst, float(np.max(np.abs(joint - outer))))
    return worst, skipped


def dsep_ci_check(
    model: PCFG,
    queries: Iterable[DsepQuery] = (),
    trials: int = 0,
    rng=None,
    tol: float = 1e-9,
    limit: int = DEFAULT_GROUND_LIMIT,
) -> CiReport:
    """Check that d-separated triples factorize numerically.

    Verifies the given queries plus ``trials`` randomly sampled triples.
    Triples that are not d-separated are recorded without verification.
    Conditioning events of probability zero are skipped and counted.
    Violations on models whose tables are not child-normalized are
    expected; the report carries the normalization status.
    """
    warnings = [v for v in validate(model, row_norm_tol=tol) if v.severity == "warning"]
    report = CiReport(row_normalized=not warnings)
    fg = ground(model, limit)
    todo = list(queries)
    if trials:
        if rng is None:
            raise ValueError("random trials need an rng")
        todo.extend(_sample_triples(fg, trials, rng))
    for q in todo:
        if not d_separated(fg, q):
            report.entries.append(CiCheckEntry(q, False, 0.0, 0, False))
            continue
        deviation, skipped = _verify_factorization(fg, q, tol)
        report.entries.append(
            CiCheckEntry(q, True, deviation, skipped, deviation > tol)
        )
    return report


def _sample_triples(fg: GroundFG, trials: int, rng) -> list[DsepQuery]:
    rvs = list(fg.rvs)
    out = []
    for _ in range(trials):
        if len(rvs) < 2:
            break
        x, y = rng.sample(rvs, 2)
        rest = [rv for rv in rvs if rv not in (x, y)]
        z_size = rng.randint(0, min(3, len(rest)))
        z = tuple(rng.sample(rest, z_size)) if z_size else ()
        out.append(DsepQuery((x,), (y,), z))
    return out
