"""Textual model format and query language.

Model files (``.pcfg``) are line-oriented with ``#`` comments::

    domain E = {alice, bob, dave, eve}
    range quality = {low, medium, high}
    prv Comp(E) : quality
    prv Rev : quality
    parfactor g4 (Comp(E), Rev) child Rev constraint TOP {
        (low, low) = 0.6; (low, medium) = 0.3; ...
    }

Every range combination must appear exactly once in a table block, which
makes totality checking trivial and files self-contained.  Constraints
are ``TOP`` (may be omitted) or an enumerated tuple set over the
parfactor's logvars in name order, e.g. ``constraint {(bob, t1)}``.
Tables rewritten by an intervention carry an ``@mutilated`` marker.

Queries use ``P(targets | evidence ; do(...))``, e.g.::

    P(Rev)
    P(Rev | do(Train(bob,t1)=true))
    P(Comp(alice) | Qual(t1)=high ; do(Train(E,t1)=true))

Target and intervention terms may be ground (``Comp(alice)``), lifted
(``Comp(E)``), or mixed (``Train(E,t1)``, the instance group).
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import constraints as cs
from .errors import ModelValidationError, ParseError, QueryError
from .ground import Distribution
from .intervention import DoAssignment, Query
from .model import (
    Constraint,
    Domain,
    GroundRV,
    PCFG,
    PRV,
    Parfactor,
    RangeSpec,
    groundings,
    iter_constraint_tuples,
    make_constraint,
    top_constraint,
    validate,
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_.'$]*")
_NUMBER = re.compile(r"[0-9]+(?:\.[0-9]*)?(?:[eE][+-]?[0-9]+)?|\.[0-9]+(?:[eE][+-]?[0-9]+)?")
_PUNCT = "(){}=,;:|"


@dataclass(frozen=True)
class Token:
    kind: str  # ident | number | punct | marker | eof
    text: str
    line: int
    column: int


def _tokenize(text: str) -> Iterator[Token]:
    line = 1
    col = 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in _PUNCT:
            yield Token("punct", ch, line, col)
            i += 1
            col += 1
            continue
        if ch == "@":
            m = _IDENT.match(text, i + 1)
            if not m:
                raise ParseError("expected a marker name after '@'", line, col)
            yield Token("marker", m.group(), line, col)
            col += m.end() - i
            i = m.end()
            continue
        m = _NUMBER.match(text, i)
        if m and m.start() == i:
            yield Token("number", m.group(), line, col)
            col += m.end() - i
            i = m.end()
            continue
        m = _IDENT.match(text, i)
        if m and m.start() == i:
            yield Token("ident", m.group(), line, col)
            col += m.end() - i
            i = m.end()
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    yield Token("eof", "", line, col)


class _TokenStream:
    def __init__(self, text: str):
        self.tokens = list(_tokenize(text))
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            got = tok.text or "end of input"
            raise ParseError(f"expected {want!r}, found {got!r}", tok.line, tok.column)
        return self.next()

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        tok = self.peek()
        if tok.kind == kind and (text is None or tok.text == text):
            return self.next()
        return None


def _parse_name_list(ts: _TokenStream) -> list[str]:
    ts.expect("punct", "{")
    names = []
    while True:
        tok = ts.peek()
        if tok.kind not in ("ident", "number"):
            raise ParseError(
                f"expected a name, found {tok.text or 'end of input'!r}",
                tok.line,
                tok.column,
            )
        names.append(ts.next().text)
        if ts.accept("punct", ","):
            continue
        ts.expect("punct", "}")
        return names


def parse_model(text: str) -> PCFG:
    """Parse a model document; raises :class:`ParseError` with a span.

    Validation runs after parsing; structural violations raise
    :class:`ModelValidationError`.
    """
    ts = _TokenStream(text)
    domains: dict[str, Domain] = {}
    ranges: dict[str, RangeSpec] = {}
    prvs: dict[str, PRV] = {}
    parfactors: list[Parfactor] = []
    pf_ids: set[str] = set()
    while ts.peek().kind != "eof":
        tok = ts.expect("ident")
        if tok.text == "domain":
            name_tok = ts.expect("ident")
            if name_tok.text in domains:
                raise ParseError(
                    f"duplicate domain {name_tok.text}", name_tok.line, name_tok.column
                )
            ts.expect("punct", "=")
            constants = _parse_name_list(ts)
            try:
                domains[name_tok.text] = Domain(name_tok.text, tuple(constants))
            except ValueError as exc:
                raise ParseError(str(exc), name_tok.line, name_tok.column) from None
        elif tok.text == "range":
            name_tok = ts.expect("ident")
            if name_tok.text in ranges:
                raise ParseError(
                    f"duplicate range {name_tok.text}", name_tok.line, name_tok.column
                )
            ts.expect("punct", "=")
            values = _parse_name_list(ts)
            try:
                ranges[name_tok.text] = RangeSpec(tuple(values), name=name_tok.text)
            except ValueError as exc:
                raise ParseError(str(exc), name_tok.line, name_tok.column) from None
        elif tok.text == "prv":
            name_tok = ts.expect("ident")
            if name_tok.text in prvs:
                raise ParseError(
                    f"duplicate prv {name_tok.text}", name_tok.line, name_tok.column
                )
            params: list[str] = []
            if ts.accept("punct", "("):
                while True:
                    p = ts.expect("ident")
                    if p.text not in domains:
                        raise ParseError(f"unknown domain {p.text}", p.line, p.column)
                    params.append(p.text)
                    if ts.accept("punct", ","):
                        continue
                    ts.expect("punct", ")")
                    break
            ts.expect("punct", ":")
            r = ts.expect("ident")
            if r.text not in ranges:
                raise ParseError(f"unknown range {r.text}", r.line, r.column)
            prvs[name_tok.text] = PRV(name_tok.text, tuple(params), ranges[r.text])
        elif tok.text == "parfactor":
            parfactors.append(
                _parse_parfactor(ts, domains, prvs, pf_ids)
            )
        else:
            raise ParseError(
                f"expected a declaration, found {tok.text!r}", tok.line, tok.column
            )
    if not parfactors:
        tok = ts.peek()
        raise ParseError("no parfactors", tok.line, tok.column)
    model = PCFG(tuple(domains.values()), tuple(prvs.values()), tuple(parfactors))
    problems = [v for v in validate(model) if v.severity == "error"]
    if problems:
        raise ModelValidationError(problems)
    return model


def _parse_prv_ref(ts: _TokenStream, prvs: Mapping[str, PRV]) -> PRV:
    name_tok = ts.expect("ident")
    prv = prvs.get(name_tok.text)
    if prv is None:
        raise ParseError(f"unknown prv {name_tok.text}", name_tok.line, name_tok.column)
    params: list[str] = []
    if ts.accept("punct", "("):
        while True:
            p = ts.expect("ident")
            params.append(p.text)
            if ts.accept("punct", ","):
                continue
            ts.expect("punct", ")")
            break
    if tuple(params) != prv.params:
        raise ParseError(
            f"{name_tok.text} is declared with parameters ({', '.join(prv.params)})",
            name_tok.line,
            name_tok.column,
        )
    return prv


def _parse_parfactor(
    ts: _TokenStream,
    domains: Mapping[str, Domain],
    prvs: Mapping[str, PRV],
    pf_ids: set[str],
) -> Parfactor:
    id_tok = ts.expect("ident")
    if id_tok.text in pf_ids:
        raise ParseError(f"duplicate parfactor {id_tok.text}", id_tok.line, id_tok.column)
    pf_ids.add(id_tok.text)
    ts.expect("punct", "(")
    args: list[PRV] = []
    while True:
        args.append(_parse_prv_ref(ts, prvs))
        if ts.accept("punct", ","):
            continue
        ts.expect("punct", ")")
        break
    ts.expect("ident", "child")
    child_tok = ts.peek()
    child = _parse_prv_ref(ts, prvs)
    matches = [i for i, a in enumerate(args) if a == child]
    if not matches:
        raise ParseError(
            f"child {child.name} is not an argument of {id_tok.text}",
            child_tok.line,
            child_tok.column,
        )
    child_index = matches[0]
    logvars = tuple(sorted({lv for a in args for lv in a.params}))
    constraint = top_constraint(logvars)
    if ts.accept("ident", "constraint"):
        constraint = _parse_constraint(ts, logvars, domains)
    mutilated = False
    if ts.accept("marker", "mutilated"):
        mutilated = True
    table = _parse_table(ts, args, id_tok, mutilated)
    return Parfactor(id_tok.text, tuple(args), child_index, constraint, table, mutilated)


def _parse_constraint(
    ts: _TokenStream, logvars: tuple[str, ...], domains: Mapping[str, Domain]
) -> Constraint:
    if ts.accept("ident", "TOP"):
        return top_constraint(logvars)
    brace = ts.expect("punct", "{")
    tuples: set[tuple[str, ...]] = set()
    while True:
        tok = ts.peek()
        if tok.kind == "punct" and tok.text == "}":
            ts.next()
            break
        ts.expect("punct", "(")
        values = []
        while True:
            v = ts.expect("ident")
            values.append(v.text)
            if ts.accept("punct", ","):
                continue
            ts.expect("punct", ")")
            break
        if len(values) != len(logvars):
            raise ParseError(
                f"constraint tuple has {len(values)} values, expected {len(logvars)} "
                f"for ({', '.join(logvars)})",
                tok.line,
                tok.column,
            )
        tuples.add(tuple(values))
        if not ts.accept("punct", ";"):
            ts.accept("punct", ",")
    if not tuples:
        raise ParseError("constraint tuple set must not be empty", brace.line, brace.column)
    return make_constraint(logvars, cs.from_tuples(len(logvars), tuples), domains)


def _parse_table(
    ts: _TokenStream, args: Sequence[PRV], id_tok: Token, mutilated: bool
) -> np.ndarray:
    open_tok = ts.expect("punct", "{")
    shape = tuple(a.range.size for a in args)
    table = np.full(shape, np.nan)
    while True:
        tok = ts.peek()
        if tok.kind == "punct" and tok.text == "}":
            ts.next()
            break
        if tok.kind == "eof":
            raise ParseError("unterminated table block", open_tok.line, open_tok.column)
        if len(args) > 1 or ts.peek().text == "(":
            ts.expect("punct", "(")
            values = []
            while True:
                v = ts.expect("ident")
                values.append(v.text)
                if ts.accept("punct", ","):
                    continue
                ts.expect("punct", ")")
                break
        else:
            values = [ts.expect("ident").text]
        if len(values) != len(args):
            raise ParseError(
                f"table key has {len(values)} values, expected {len(args)}",
                tok.line,
                tok.column,
            )
        idx = []
        for v, a in zip(values, args):
            if v not in a.range.values:
                raise ParseError(
                    f"{v} is not in the range of {a.name}", tok.line, tok.column
                )
            idx.append(a.range.index(v))
        ts.expect("punct", "=")
        num = ts.expect("number")
        value = float(num.text)
        if not np.isfinite(value) or value < 0 or (value == 0 and not mutilated):
            raise ParseError(
                "potentials must be positive (zero only with @mutilated)",
                num.line,
                num.column,
            )
        if not np.isnan(table[tuple(idx)]):
            raise ParseError(
                f"duplicate table entry ({', '.join(values)})", tok.line, tok.column
            )
        table[tuple(idx)] = value
        ts.accept("punct", ";")
    if np.isnan(table).any():
        missing = int(np.isnan(table).sum())
        raise ParseError(
            f"table of {id_tok.text} is missing {missing} entries",
            open_tok.line,
            open_tok.column,
        )
    return table


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _format_float(x: float) -> str:
    return repr(float(x))


def serialize_model(model: PCFG) -> str:
    """Canonical text form; parse(serialize(m)) is structurally equal to m."""
    lines: list[str] = []
    for d in model.domains:
        lines.append(f"domain {d.name} = {{{', '.join(d.constants)}}}")
    seen: dict[RangeSpec, str] = {}
    counter = 0
    for p in model.prvs:
        if p.range not in seen:
            name = p.range.name
            if not name or name in seen.values():
                counter += 1
                name = f"r{counter}"
            seen[p.range] = name
            lines.append(f"range {name} = {{{', '.join(p.range.values)}}}")
    for p in model.prvs:
        params = f"({', '.join(p.params)})" if p.params else ""
        lines.append(f"prv {p.name}{params} : {seen[p.range]}")
    for g in model.parfactors:
        args = ", ".join(str(a) for a in g.args)
        head = f"parfactor {g.id} ({args}) child {g.args[g.child_index]}"
        if g.constraint.allowed is not None:
            tuples = "; ".join(
                f"({', '.join(t)})"
                for t in iter_constraint_tuples(g.constraint, model.domain_map)
            )
            head += f" constraint {{{tuples}}}"
        if g.mutilated:
            head += " @mutilated"
        lines.append(head + " {")
        for combo in itertools.product(*(a.range.values for a in g.args)):
            idx = tuple(a.range.index(v) for a, v in zip(g.args, combo))
            key = f"({', '.join(combo)})" if len(combo) > 1 else combo[0]
            lines.append(f"  {key} = {_format_float(g.table[idx])};")
        lines.append("}")
    return "\n".join(lines) + "\n"


def serialize_distribution(dist: Distribution) -> str:
    """One ``value<TAB>probability`` line per assignment, in range order."""
    lines = []
    for combo in itertools.product(*(rv.range.values for rv in dist.rvs)):
        idx = tuple(rv.range.index(v) for rv, v in zip(dist.rvs, combo))
        lines.append(f"{','.join(combo)}\t{dist.probs[idx]:.12g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Query parsing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Term:
    prv: PRV
    args: tuple[str, ...]  # constants, or the prv's own logvar names
    line: int
    column: int

    @property
    def is_ground(self) -> bool:
        return not any(a in self.prv.params for a in self.args)


def _parse_term(ts: _TokenStream, model: PCFG) -> _Term:
    name_tok = ts.expect("ident")
    prv = model.prv_map.get(name_tok.text)
    if prv is None:
        raise ParseError(f"unknown variable {name_tok.text}", name_tok.line, name_tok.column)
    args: list[str] = []
    if ts.accept("punct", "("):
        while True:
            a = ts.expect("ident")
            args.append(a.text)
            if ts.accept("punct", ","):
                continue
            ts.expect("punct", ")")
            break
    if len(args) != len(prv.params):
        raise ParseError(
            f"{prv.name} takes {len(prv.params)} arguments",
            name_tok.line,
            name_tok.column,
        )
    for a, lv in zip(args, prv.params):
        if a == lv:
            continue
        if a in model.domain_map:
            raise ParseError(
                f"expected logvar {lv} or one of its constants, found {a}",
                name_tok.line,
                name_tok.column,
            )
        if a not in model.domain_map[lv].constants:
            raise ParseError(
                f"{a} is not in the domain of {lv}", name_tok.line, name_tok.column
            )
    return _Term(prv, tuple(args), name_tok.line, name_tok.column)


def _term_constraint(term: _Term, model: PCFG) -> Constraint | None:
    """Constraint over the term's logvars; None when the term is the whole PRV."""
    if all(a in term.prv.params for a in term.args):
        return None
    lvs = tuple(sorted(set(term.prv.params)))
    if len(lvs) != len(term.prv.params):
        raise ParseError(
            f"{term.prv.name} repeats a logvar; spell out instances",
            term.line,
            term.column,
        )
    sets = []
    for lv in lvs:
        position = term.prv.params.index(lv)
        a = term.args[position]
        if a == lv:
            sets.append(set(model.domain_map[lv].constants))
        else:
            sets.append({a})
    return make_constraint(lvs, cs.from_product(sets), model.domain_map)


def _term_targets(term: _Term, model: PCFG) -> list[GroundRV]:
    if term.is_ground:
        return [GroundRV(term.prv.name, term.args, term.prv.range)]
    constraint = _term_constraint(term, model)
    if constraint is None:
        constraint = top_constraint(term.prv.params)
    return list(groundings(term.prv, constraint, model.domain_map))


def _check_value(term: _Term, value_tok: Token) -> str:
    if value_tok.text not in term.prv.range.values:
        raise ParseError(
            f"{value_tok.text} is not in the range of {term.prv.name}",
            value_tok.line,
            value_tok.column,
        )
    return value_tok.text


def parse_query(text: str, model: PCFG) -> Query:
    """Parse ``P(targets | evidence ; do(...))`` against a model."""
    ts = _TokenStream(text)
    ts.expect("ident", "P")
    ts.expect("punct", "(")
    targets: list[GroundRV | PRV] = []
    while True:
        term = _parse_term(ts, model)
        if term.is_ground or _term_constraint(term, model) is not None:
            targets.extend(_term_targets(term, model))
        else:
            targets.append(term.prv)
        if ts.accept("punct", ","):
            continue
        break
    evidence: list[tuple[GroundRV, str]] = []
    dos: list[DoAssignment] = []
    if ts.accept("punct", "|"):
        while True:
            tok = ts.peek()
            if tok.kind == "ident" and tok.text == "do":
                ts.next()
                ts.expect("punct", "(")
                while True:
                    term = _parse_term(ts, model)
                    ts.expect("punct", "=")
                    value = _check_value(term, ts.expect("ident"))
                    dos.append(
                        DoAssignment(term.prv, value, _term_constraint(term, model))
                    )
                    if ts.accept("punct", ","):
                        continue
                    ts.expect("punct", ")")
                    break
            else:
                term = _parse_term(ts, model)
                if not term.is_ground:
                    raise ParseError(
                        "evidence must be on ground variables", term.line, term.column
                    )
                ts.expect("punct", "=")
                value = _check_value(term, ts.expect("ident"))
                evidence.append(
                    (GroundRV(term.prv.name, term.args, term.prv.range), value)
                )
            if ts.accept("punct", ";"):
                continue
            break
    ts.expect("punct", ")")
    tok = ts.peek()
    if tok.kind != "eof":
        raise ParseError(f"unexpected trailing {tok.text!r}", tok.line, tok.column)
    try:
        query = Query(tuple(targets), tuple(evidence), tuple(dos))
        _validate_do_overlap(query, model)
    except QueryError as exc:
        raise ParseError(str(exc), 1, 1) from None
    return query


def _validate_do_overlap(query: Query, model: PCFG) -> None:
    from .intervention import expand_do_map

    expand_do_map(query.dos, model.domain_map)


def parse_dsep_query(text: str, model: PCFG):
    """Parse ``X {, X} ; Y {, Y} [| Z {, Z}]`` into a DsepQuery."""
    from .dsep import DsepQuery

    ts = _TokenStream(text)

    def ground_terms() -> list[GroundRV]:
        out = []
        while True:
            term = _parse_term(ts, model)
            if not term.is_ground:
                raise ParseError(
                    "d-separation terms must be ground", term.line, term.column
                )
            out.append(GroundRV(term.prv.name, term.args, term.prv.range))
            if ts.accept("punct", ","):
                continue
            return out

    x = ground_terms()
    ts.expect("punct", ";")
    y = ground_terms()
    z: list[GroundRV] = []
    if ts.accept("punct", "|"):
        z = ground_terms()
    tok = ts.peek()
    if tok.kind != "eof":
        raise ParseError(f"unexpected trailing {tok.text!r}", tok.line, tok.column)
    try:
        return DsepQuery(tuple(x), tuple(y), tuple(z))
    except QueryError as exc:
        raise ParseError(str(exc), 1, 1) from None
