"""Core lifted data model: domains, PRVs, constraints, parfactors, models.

A parametric causal factor graph is a directed bipartite graph of
parameterized random variables (PRVs) and parfactors.  Each parfactor
carries a potential table over the ranges of its argument PRVs, a
designated child argument, and a constraint restricting the allowed
instantiations of its logical variables.  Grounding a model instantiates
every parfactor once per constraint-allowed tuple; the model represents
the normalized product of all ground potentials.

Model objects are immutable after construction; all derived models
(splits, mutilations, groundings) are new objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import constraints as cs
from .constraints import TupleSet
from .errors import ModelValidationError


def base_logvar(name: str) -> str:
    """Domain name of a logvar; working copies are tagged ``name$k``."""
    return name.split("$", 1)[0]


@dataclass(frozen=True)
class Domain:
    """Named finite set of constants with a stable declaration order."""

    name: str
    constants: tuple[str, ...]

    def __post_init__(self):
        if not self.constants:
            raise ValueError(f"domain {self.name} must have at least one constant")
        if len(set(self.constants)) != len(self.constants):
            raise ValueError(f"domain {self.name} has duplicate constants")

    @property
    def size(self) -> int:
        return len(self.constants)


@dataclass(frozen=True)
class RangeSpec:
    """Ordered set of range symbols a variable can take."""

    values: tuple[str, ...]
    name: str = ""

    def __post_init__(self):
        if not self.values:
            raise ValueError("range must have at least one value")
        if len(set(self.values)) != len(self.values):
            raise ValueError("range has duplicate values")

    @property
    def size(self) -> int:
        return len(self.values)

    def index(self, value: str) -> int:
        return self.values.index(value)


@dataclass(frozen=True)
class PRV:
    """Parameterized random variable: a name over zero or more logvars."""

    name: str
    params: tuple[str, ...]
    range: RangeSpec

    @property
    def is_propositional(self) -> bool:
        return not self.params

    def __str__(self) -> str:
        if not self.params:
            return self.name
        return f"{self.name}({', '.join(self.params)})"


@dataclass(frozen=True)
class GroundRV:
    """A single instance of a PRV, identified by its constant arguments."""

    name: str
    args: tuple[str, ...]
    range: RangeSpec

    def __str__(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}({', '.join(self.args)})"


@dataclass(frozen=True)
class Constraint:
    """Restriction of a sorted logvar sequence to an allowed tuple set.

    ``allowed is None`` denotes the unrestricted constraint (the full
    Cartesian product of the logvar domains).  Logvars are kept sorted by
    name so that semantically equal constraints compare equal.
    """

    logvars: tuple[str, ...]
    allowed: TupleSet | None = None

    def __post_init__(self):
        if tuple(sorted(self.logvars)) != self.logvars:
            raise ValueError("constraint logvars must be sorted by name")
        if len(set(self.logvars)) != len(self.logvars):
            raise ValueError("constraint logvars must be unique")
        if self.allowed is not None and self.allowed.arity != len(self.logvars):
            raise ValueError("tuple arity does not match logvar count")

    @property
    def is_top(self) -> bool:
        return self.allowed is None

    def position(self, logvar: str) -> int:
        return self.logvars.index(logvar)

    def __str__(self) -> str:
        if self.allowed is None:
            return "TOP"
        n = self.allowed.count()
        return f"<{','.join(self.logvars)}:{n} tuples>"


def top_constraint(logvars: Iterable[str]) -> Constraint:
    return Constraint(tuple(sorted(set(logvars))))


def make_constraint(
    logvars: Iterable[str],
    allowed: TupleSet | None,
    domains: Mapping[str, Domain],
) -> Constraint:
    """Build a constraint in canonical form.

    Collapses a product-form tuple set that covers the whole domain
    product back to the unrestricted form.
    """
    lvs = tuple(sorted(set(logvars)))
    if allowed is not None and allowed.coord_sets is not None:
        full = all(
            s == frozenset(domains[base_logvar(lv)].constants)
            for lv, s in zip(lvs, allowed.coord_sets)
        )
        if full:
            allowed = None
    return Constraint(lvs, allowed)


def constraint_tuple_set(c: Constraint, domains: Mapping[str, Domain]) -> TupleSet:
    """The allowed tuple set, with TOP resolved against the domains."""
    if c.allowed is not None:
        return c.allowed
    return cs.from_product(
        [frozenset(domains[base_logvar(lv)].constants) for lv in c.logvars]
    )


def constraint_count(c: Constraint, domains: Mapping[str, Domain]) -> int:
    if c.allowed is not None:
        return c.allowed.count()
    return prod(domains[base_logvar(lv)].size for lv in c.logvars)


def constraint_orders(
    c: Constraint, domains: Mapping[str, Domain]
) -> list[tuple[str, ...]]:
    return [domains[base_logvar(lv)].constants for lv in c.logvars]


def iter_constraint_tuples(
    c: Constraint, domains: Mapping[str, Domain]
) -> Iterator[tuple[str, ...]]:
    """Allowed tuples in canonical (domain declaration) order."""
    ts = constraint_tuple_set(c, domains)
    yield from ts.iter_tuples(constraint_orders(c, domains))


def project_tuple_set(
    c: Constraint,
    onto: Sequence[str],
    domains: Mapping[str, Domain],
) -> TupleSet:
    """Project the allowed set onto a logvar sequence (repeats permitted).

    The result is a set of tuples over the positions of ``onto``; it is the
    set of argument tuples a PRV with params ``onto`` takes under ``c``.
    """
    ts = constraint_tuple_set(c, domains)
    idx = [c.position(lv) for lv in onto]
    if ts.coord_sets is not None and len(set(onto)) == len(onto):
        return cs.from_product([ts.coord_sets[i] for i in idx])
    tuples = {tuple(t[i] for i in idx) for t in ts.materialize()}
    return cs.from_tuples(len(onto), tuples)


def split_constraint(
    c: Constraint,
    occ_params: Sequence[str],
    group: TupleSet,
    domains: Mapping[str, Domain],
) -> tuple[Constraint | None, Constraint | None]:
    """Partition ``c`` by whether the projection onto ``occ_params`` is in ``group``.

    Returns ``(inside, outside)``; either side is None when empty.
    """
    ts = constraint_tuple_set(c, domains)
    idx = [c.position(lv) for lv in occ_params]
    if ts.coord_sets is not None and group.coord_sets is not None and len(set(occ_params)) == len(occ_params):
        # Product fast path: membership factorizes per logvar.
        required = list(ts.coord_sets)
        for pos, i in enumerate(idx):
            required[i] = required[i] & group.coord_sets[pos]
        if any(not s for s in required):
            return None, make_constraint(c.logvars, ts, domains)
        inside = cs.from_product(required)
        outside = cs.subtract(ts, inside)
        return (
            make_constraint(c.logvars, inside, domains),
            make_constraint(c.logvars, outside, domains) if outside else None,
        )
    ins, outs = [], []
    for t in ts.materialize():
        (ins if tuple(t[i] for i in idx) in group else outs).append(t)
    inside_c = (
        make_constraint(c.logvars, cs.from_tuples(len(c.logvars), ins), domains)
        if ins
        else None
    )
    outside_c = (
        make_constraint(c.logvars, cs.from_tuples(len(c.logvars), outs), domains)
        if outs
        else None
    )
    return inside_c, outside_c


@dataclass(frozen=True, eq=False)
class Parfactor:
    """Directed parametric factor.

    ``table`` is a dense array whose axes follow ``args`` and whose axis
    sizes follow each argument's range, in range order.  ``child_index``
    designates the child argument.  ``mutilated`` marks tables rewritten
    by an intervention, which are exempt from the positivity requirement.
    """

    id: str
    args: tuple[PRV, ...]
    child_index: int | None
    constraint: Constraint
    table: np.ndarray
    mutilated: bool = False

    def __post_init__(self):
        expected = tuple(a.range.size for a in self.args)
        if self.table.shape != expected:
            raise ValueError(
                f"parfactor {self.id}: table shape {self.table.shape} "
                f"does not match ranges {expected}"
            )
        self.table.setflags(write=False)

    @property
    def child(self) -> PRV:
        if self.child_index is None:
            raise ValueError(f"parfactor {self.id} has no child")
        return self.args[self.child_index]

    @property
    def logvars(self) -> tuple[str, ...]:
        return tuple(sorted({lv for a in self.args for lv in a.params}))

    def __str__(self) -> str:
        args = ", ".join(str(a) for a in self.args)
        return f"{self.id}({args})->{self.child if self.child_index is not None else '?'}"


@dataclass(frozen=True)
class PCFG:
    """Parametric causal factor graph: domains, PRVs and parfactors."""

    domains: tuple[Domain, ...]
    prvs: tuple[PRV, ...]
    parfactors: tuple[Parfactor, ...]
    domain_map: dict[str, Domain] = field(init=False, compare=False, repr=False)
    prv_map: dict[str, PRV] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "domain_map", {d.name: d for d in self.domains})
        object.__setattr__(self, "prv_map", {p.name: p for p in self.prvs})

    def prv(self, name: str) -> PRV:
        return self.prv_map[name]

    def parfactor(self, pf_id: str) -> Parfactor:
        for g in self.parfactors:
            if g.id == pf_id:
                return g
        raise KeyError(pf_id)


@dataclass(frozen=True)
class Violation:
    """One validation finding; ``severity`` is ``error`` or ``warning``."""

    severity: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"[{self.severity}] {self.subject}: {self.message}"


def groundings(
    prv: PRV,
    constraint: Constraint,
    domains: Mapping[str, Domain],
) -> tuple[GroundRV, ...]:
    """All instances of ``prv`` allowed by ``constraint``, in canonical order.

    The constraint may cover more logvars than the PRV uses; projection
    deduplicates.  A parameterless PRV yields its single instance.
    """
    for lv in prv.params:
        if lv not in constraint.logvars:
            raise ValueError(f"constraint does not cover logvar {lv}")
    if not prv.params:
        return (GroundRV(prv.name, (), prv.range),)
    ts = project_tuple_set(constraint, prv.params, domains)
    orders = [domains[base_logvar(lv)].constants for lv in prv.params]
    return tuple(GroundRV(prv.name, t, prv.range) for t in ts.iter_tuples(orders))


def prv_groundings(prv: PRV, domains: Mapping[str, Domain]) -> tuple[GroundRV, ...]:
    """All instances of a PRV under the unrestricted constraint."""
    return groundings(prv, top_constraint(prv.params), domains)


def parent_factors(model: PCFG, target: PRV | GroundRV) -> tuple[Parfactor, ...]:
    """Parfactors whose child is (an instance of) ``target``."""
    out = []
    for g in model.parfactors:
        if g.child_index is None:
            raise ModelValidationError(
                [Violation("error", g.id, "parfactor has no child in a directed model")]
            )
        child = g.args[g.child_index]
        if isinstance(target, PRV):
            if child.name == target.name:
                out.append(g)
        else:
            if child.name == target.name:
                inst = groundings(g.child, g.constraint, model.domain_map)
                if any(rv.args == target.args for rv in inst):
                    out.append(g)
    return tuple(out)


def child_prv(parfactor: Parfactor) -> PRV:
    """The designated child of a directed parfactor."""
    return parfactor.child


def _acyclic(model: PCFG) -> bool:
    # Edges between PRV names: parent -> child per parfactor.
    succ: dict[str, set[str]] = {p.name: set() for p in model.prvs}
    for g in model.parfactors:
        if g.child_index is None or not (0 <= g.child_index < len(g.args)):
            continue
        child = g.args[g.child_index].name
        for i, a in enumerate(g.args):
            if i != g.child_index:
                succ.setdefault(a.name, set()).add(child)
    seen: dict[str, int] = {}  # 1 = visiting, 2 = done

    def visit(n: str) -> bool:
        state = seen.get(n)
        if state == 1:
            return False
        if state == 2:
            return True
        seen[n] = 1
        for m in sorted(succ.get(n, ())):
            if not visit(m):
                return False
        seen[n] = 2
        return True

    return all(visit(n) for n in sorted(succ))


def validate(model: PCFG, row_norm_tol: float | None = None) -> list[Violation]:
    """Structural validation; returns violations instead of raising.

    With ``row_norm_tol`` set, additionally checks (warning level) that for
    every parfactor the entries differing only at the child position sum
    to one within the tolerance.
    """
    out: list[Violation] = []
    names = [d.name for d in model.domains]
    if len(set(names)) != len(names):
        out.append(Violation("error", "domains", "duplicate domain names"))
    all_constants = {c for d in model.domains for c in d.constants}
    if all_constants & set(names):
        out.append(Violation("error", "domains", "constant collides with a domain name"))

    prv_names = [p.name for p in model.prvs]
    if len(set(prv_names)) != len(prv_names):
        out.append(Violation("error", "prvs", "duplicate PRV names"))
    for p in model.prvs:
        for lv in p.params:
            if lv not in model.domain_map:
                out.append(Violation("error", str(p), f"unknown logvar {lv}"))

    used: set[str] = set()
    ids = [g.id for g in model.parfactors]
    if len(set(ids)) != len(ids):
        out.append(Violation("error", "parfactors", "duplicate parfactor ids"))
    if not model.parfactors:
        out.append(Violation("error", "model", "no parfactors"))
    for g in model.parfactors:
        arg_names = [a.name for a in g.args]
        used.update(arg_names)
        if len(set(arg_names)) != len(arg_names):
            out.append(Violation("error", g.id, "duplicate PRV in argument list"))
        for a in g.args:
            declared = model.prv_map.get(a.name)
            if declared is None or declared != a:
                out.append(Violation("error", g.id, f"argument {a} not declared"))
        if g.child_index is None:
            out.append(Violation("error", g.id, "missing child in a directed model"))
        elif not (0 <= g.child_index < len(g.args)):
            out.append(Violation("error", g.id, "child index out of range"))
        lv_args = {lv for a in g.args for lv in a.params}
        if set(g.constraint.logvars) != lv_args:
            out.append(
                Violation("error", g.id, "constraint logvars differ from argument logvars")
            )
        elif g.constraint.allowed is not None:
            problem = _check_constraint_members(g.constraint, model.domain_map)
            if problem is not None:
                out.append(Violation("error", g.id, problem))
        if not np.all(np.isfinite(g.table)) or np.any(g.table < 0):
            out.append(Violation("error", g.id, "table has negative or non-finite entries"))
        elif not g.mutilated and np.any(g.table <= 0):
            out.append(
                Violation("error", g.id, "non-mutilated table must be strictly positive")
            )
        if row_norm_tol is not None and g.child_index is not None:
            sums = g.table.sum(axis=g.child_index)
            if not np.allclose(sums, 1.0, atol=row_norm_tol, rtol=0.0):
                out.append(
                    Violation(
                        "warning",
                        g.id,
                        "entries differing only at the child do not sum to one",
                    )
                )
    for p in model.prvs:
        if p.name not in used:
            out.append(Violation("error", str(p), "PRV not used in any parfactor"))
    if not _acyclic(model):
        out.append(Violation("error", "model", "directed graph has a cycle"))
    return out


def _check_constraint_members(
    c: Constraint, domains: Mapping[str, Domain]
) -> str | None:
    ts = c.allowed
    if ts.coord_sets is not None:
        for lv, s in zip(c.logvars, ts.coord_sets):
            dom = set(domains[base_logvar(lv)].constants)
            if not s <= dom:
                return f"constraint values {sorted(s - dom)} not in domain of {lv}"
        return None
    doms = [set(domains[base_logvar(lv)].constants) for lv in c.logvars]
    for t in ts.tuples:
        for v, dom, lv in zip(t, doms, c.logvars):
            if v not in dom:
                return f"constraint value {v} not in domain of {lv}"
    return None


def ensure_valid(model: PCFG) -> PCFG:
    """Raise :class:`ModelValidationError` on error-level violations."""
    problems = [v for v in validate(model) if v.severity == "error"]
    if problems:
        raise ModelValidationError(problems)
    return model
