"""Grounding and the brute-force enumeration oracle.

Grounding instantiates every parfactor once per constraint-allowed tuple,
producing a directed ground factor graph.  The oracle enumerates the full
joint over all ground variables and answers marginal, conditional and
interventional queries exactly; it exists as the reference every other
engine is checked against, so it is deliberately simple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import prod
from typing import Mapping, Sequence

import numpy as np

from .errors import InconsistentEvidenceError, SizeLimitError
from .model import (
    GroundRV,
    PCFG,
    constraint_count,
    iter_constraint_tuples,
    prv_groundings,
)

# Default caps: ground graph size and joint state-space entries.
DEFAULT_GROUND_LIMIT = 200_000
DEFAULT_JOINT_LIMIT = 1 << 20


@dataclass(frozen=True, eq=False)
class GroundFactor:
    """One instantiated factor over ground variables."""

    id: str
    args: tuple[GroundRV, ...]
    child_index: int | None
    table: np.ndarray
    mutilated: bool = False

    def __post_init__(self):
        expected = tuple(a.range.size for a in self.args)
        if self.table.shape != expected:
            raise ValueError(f"factor {self.id}: table shape mismatch")
        self.table.setflags(write=False)

    @property
    def child(self) -> GroundRV:
        if self.child_index is None:
            raise ValueError(f"factor {self.id} has no child")
        return self.args[self.child_index]


@dataclass(frozen=True)
class GroundFG:
    """Directed ground factor graph."""

    rvs: tuple[GroundRV, ...]
    factors: tuple[GroundFactor, ...]
    rv_index: dict[GroundRV, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rv_index", {rv: i for i, rv in enumerate(self.rvs)})


@dataclass(frozen=True)
class JointTable:
    """Full joint distribution over every ground variable."""

    rvs: tuple[GroundRV, ...]
    probs: np.ndarray  # shape = per-rv range sizes, sums to 1


@dataclass(frozen=True)
class Distribution:
    """Normalized probability table over a sequence of ground variables."""

    rvs: tuple[GroundRV, ...]
    probs: np.ndarray

    def __post_init__(self):
        expected = tuple(rv.range.size for rv in self.rvs)
        if self.probs.shape != expected:
            raise ValueError("distribution shape does not match target ranges")
        self.probs.setflags(write=False)

    def prob(self, assignment: Mapping[GroundRV, str]) -> float:
        idx = tuple(rv.range.index(assignment[rv]) for rv in self.rvs)
        return float(self.probs[idx])

    def allclose(self, other: "Distribution", tol: float = 1e-9) -> bool:
        if self.rvs != other.rvs:
            other = other.reordered(self.rvs)
        return bool(np.allclose(self.probs, other.probs, atol=tol, rtol=0.0))

    def reordered(self, rvs: Sequence[GroundRV]) -> "Distribution":
        if set(rvs) != set(self.rvs):
            raise ValueError("cannot reorder to a different variable set")
        perm = [self.rvs.index(rv) for rv in rvs]
        return Distribution(tuple(rvs), np.transpose(self.probs, perm))


def ground(model: PCFG, limit: int = DEFAULT_GROUND_LIMIT) -> GroundFG:
    """Instantiate a model into its ground factor graph.

    One ground factor per constraint-allowed tuple of each parfactor, with
    the parfactor table shared by every instance.  Refuses models whose
    ground size exceeds ``limit``.
    """
    domains = model.domain_map
    total = 0
    for g in model.parfactors:
        total += constraint_count(g.constraint, domains)
        if total > limit:
            raise SizeLimitError(
                f"grounding exceeds the limit of {limit} ground factors"
            )
    rvs: list[GroundRV] = []
    seen = set()
    for p in model.prvs:
        for rv in prv_groundings(p, domains):
            if rv not in seen:
                seen.add(rv)
                rvs.append(rv)
    factors: list[GroundFactor] = []
    for g in model.parfactors:
        lv_pos = {lv: i for i, lv in enumerate(g.constraint.logvars)}
        for t in iter_constraint_tuples(g.constraint, domains):
            args = tuple(
                GroundRV(a.name, tuple(t[lv_pos[lv]] for lv in a.params), a.range)
                for a in g.args
            )
            suffix = ",".join(t) if t else ""
            factors.append(
                GroundFactor(
                    f"{g.id}[{suffix}]", args, g.child_index, g.table, g.mutilated
                )
            )
    return GroundFG(tuple(rvs), tuple(factors))


def joint(model: GroundFG, limit: int = DEFAULT_JOINT_LIMIT) -> JointTable:
    """Enumerate the normalized full joint distribution.

    The normalization constant is accumulated with exact compensated
    summation over all states.
    """
    shape = tuple(rv.range.size for rv in model.rvs)
    size = prod(shape) if shape else 1
    if size > limit:
        raise SizeLimitError(f"joint state space {size} exceeds the limit of {limit}")
    full = np.ones(shape, dtype=np.float64)
    for f in model.factors:
        full *= _broadcast_to(model, f)
    z = math.fsum(full.ravel().tolist())
    if z <= 0.0:
        raise InconsistentEvidenceError("model assigns zero mass to every state")
    return JointTable(model.rvs, full / z)


def _broadcast_to(model: GroundFG, f: GroundFactor) -> np.ndarray:
    """View of a factor table aligned to the joint's axis order."""
    axes = [model.rv_index[rv] for rv in f.args]
    order = np.argsort(axes)
    table = np.transpose(f.table, order)
    shape = [1] * len(model.rvs)
    for a in axes:
        shape[a] = model.rvs[a].range.size
    return table.reshape(shape)


def ground_do(model: GroundFG, do_values: Mapping[GroundRV, str]) -> GroundFG:
    """Apply intervention semantics to a ground factor graph.

    Every factor whose child is intervened is replaced by an indicator:
    entries assigning the child its intervention value become 1, all other
    entries become 0.  Factors whose child is not intervened are untouched.
    Each intervened variable must be the child of at least one factor.
    """
    for rv, value in do_values.items():
        if rv not in model.rv_index:
            raise KeyError(f"unknown ground variable {rv}")
        if value not in rv.range.values:
            raise ValueError(f"value {value} not in range of {rv}")
    clamped: set[GroundRV] = set()
    factors: list[GroundFactor] = []
    for f in model.factors:
        if f.child_index is not None and f.child in do_values:
            rv = f.child
            table = np.zeros_like(f.table)
            sel = [slice(None)] * table.ndim
            sel[f.child_index] = rv.range.index(do_values[rv])
            table[tuple(sel)] = 1.0
            factors.append(
                GroundFactor(f.id, f.args, f.child_index, table, mutilated=True)
            )
            clamped.add(rv)
        else:
            factors.append(f)
    missing = set(do_values) - clamped
    if missing:
        names = ", ".join(sorted(str(rv) for rv in missing))
        raise ValueError(
            f"cannot intervene on {names}: not the child of any factor"
        )
    return GroundFG(model.rvs, tuple(factors))


def oracle_query(
    model: GroundFG,
    targets: Sequence[GroundRV],
    evidence: Mapping[GroundRV, str] | None = None,
    do_values: Mapping[GroundRV, str] | None = None,
    limit: int = DEFAULT_JOINT_LIMIT,
) -> Distribution:
    """Exact query answering by full enumeration.

    Mutilates for the interventions, enumerates the joint, conditions on
    the evidence and marginalizes onto the targets.
    """
    evidence = dict(evidence or {})
    do_values = dict(do_values or {})
    if not targets:
        raise ValueError("query needs at least one target")
    overlap = set(evidence) & set(do_values)
    if overlap:
        raise ValueError(f"evidence and intervention overlap on {sorted(map(str, overlap))}")
    if do_values:
        model = ground_do(model, do_values)
    jt = joint(model, limit=limit)
    probs = jt.probs
    # Condition by slicing the joint at the evidence values.
    sel: list[object] = [slice(None)] * len(jt.rvs)
    for rv, value in evidence.items():
        sel[model.rv_index[rv]] = rv.range.index(value)
    probs = probs[tuple(sel)]
    kept = [rv for rv in jt.rvs if rv not in evidence]
    mass = float(probs.sum())
    if mass <= 0.0:
        raise InconsistentEvidenceError("evidence has probability zero")
    probs = probs / mass
    target_set = set(targets)
    if len(target_set) != len(targets):
        raise ValueError("duplicate query targets")
    drop = tuple(i for i, rv in enumerate(kept) if rv not in target_set)
    probs = probs.sum(axis=drop) if drop else probs
    remaining = [rv for rv in kept if rv in target_set]
    if set(remaining) != target_set:
        missing = target_set - set(remaining)
        raise KeyError(f"targets not in model: {sorted(map(str, missing))}")
    dist = Distribution(tuple(remaining), probs)
    return dist.reordered(tuple(targets))
