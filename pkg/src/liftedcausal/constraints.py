"""Tuple-set algebra backing constraints on logical variables.

A :class:`TupleSet` is a non-empty set of constant tuples of fixed arity.
Two storage forms are used:

* product form: one value set per coordinate, denoting the Cartesian
  product of those sets.  All common cases (unrestricted constraints and
  the sets produced by splitting on a single instance or an instance
  group) stay in product form, which keeps set operations cheap even for
  domains with thousands of constants.
* explicit form: a frozenset of tuples, used when a set does not
  factorize coordinate-wise (e.g. the complement of one tuple inside a
  two-variable product).

Construction always normalizes: an explicit set that happens to be a
Cartesian product is stored in product form, so equal sets compare equal
via dataclass equality.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product as iterproduct
from math import prod
from typing import Iterable, Iterator, Sequence

from .errors import SizeLimitError

# Explicit materialization guard; product-form sets never materialize.
MATERIALIZE_LIMIT = 1_000_000


@dataclass(frozen=True)
class TupleSet:
    """Non-empty set of constant tuples with a fixed arity."""

    arity: int
    coord_sets: tuple[frozenset[str], ...] | None = None
    tuples: frozenset[tuple[str, ...]] | None = None

    @property
    def is_product(self) -> bool:
        return self.coord_sets is not None

    def count(self) -> int:
        if self.coord_sets is not None:
            return prod(len(s) for s in self.coord_sets)
        return len(self.tuples)

    def __contains__(self, item: tuple[str, ...]) -> bool:
        if self.coord_sets is not None:
            return len(item) == self.arity and all(
                v in s for v, s in zip(item, self.coord_sets)
            )
        return item in self.tuples

    def iter_tuples(self, coord_orders: Sequence[Sequence[str]]) -> Iterator[tuple[str, ...]]:
        """Iterate tuples in the canonical order.

        ``coord_orders`` gives, per coordinate, the full ordered constant
        list of the underlying domain; iteration is lexicographic in those
        orders.
        """
        if self.coord_sets is not None:
            axes = [
                [v for v in order if v in chosen]
                for order, chosen in zip(coord_orders, self.coord_sets)
            ]
            yield from iterproduct(*axes)
        else:
            ranks = [{v: i for i, v in enumerate(order)} for order in coord_orders]
            yield from sorted(
                self.tuples, key=lambda t: tuple(r[v] for r, v in zip(ranks, t))
            )

    def materialize(self) -> frozenset[tuple[str, ...]]:
        if self.tuples is not None:
            return self.tuples
        if self.count() > MATERIALIZE_LIMIT:
            raise SizeLimitError(
                f"refusing to materialize {self.count()} tuples "
                f"(limit {MATERIALIZE_LIMIT})"
            )
        return frozenset(iterproduct(*self.coord_sets))


def from_tuples(arity: int, tuples: Iterable[tuple[str, ...]]) -> TupleSet:
    """Build a TupleSet from explicit tuples, normalizing to product form."""
    tset = frozenset(tuple(t) for t in tuples)
    if not tset:
        raise ValueError("tuple set must be non-empty")
    for t in tset:
        if len(t) != arity:
            raise ValueError(f"tuple {t} does not have arity {arity}")
    if arity == 0:
        return TupleSet(0, coord_sets=())
    coords = tuple(frozenset(t[i] for t in tset) for i in range(arity))
    if prod(len(c) for c in coords) == len(tset):
        return TupleSet(arity, coord_sets=coords)
    return TupleSet(arity, tuples=tset)


def from_product(coord_sets: Sequence[Iterable[str]]) -> TupleSet:
    coords = tuple(frozenset(s) for s in coord_sets)
    if any(not s for s in coords):
        raise ValueError("product coordinate sets must be non-empty")
    return TupleSet(len(coords), coord_sets=coords)


def intersect(a: TupleSet, b: TupleSet) -> TupleSet | None:
    """Intersection, or None when empty."""
    if a.arity != b.arity:
        raise ValueError("arity mismatch")
    if a.coord_sets is not None and b.coord_sets is not None:
        coords = tuple(x & y for x, y in zip(a.coord_sets, b.coord_sets))
        if any(not c for c in coords):
            return None
        return TupleSet(a.arity, coord_sets=coords)
    # At least one side explicit: filter the explicit side.
    if a.tuples is not None:
        kept = frozenset(t for t in a.tuples if t in b)
    else:
        kept = frozenset(t for t in b.tuples if t in a)
    return from_tuples(a.arity, kept) if kept else None


def subtract(a: TupleSet, b: TupleSet) -> TupleSet | None:
    """Set difference a \\ b, or None when empty."""
    if a.arity != b.arity:
        raise ValueError("arity mismatch")
    inter = intersect(a, b)
    if inter is None:
        return a
    if a.coord_sets is not None and inter.coord_sets is not None:
        # a \ (product inside a product) stays a product iff the inner set
        # is strictly smaller in exactly one coordinate.
        narrow = [
            i
            for i, (av, iv) in enumerate(zip(a.coord_sets, inter.coord_sets))
            if iv != av
        ]
        if not narrow:
            return None  # inter == a
        if len(narrow) == 1:
            i = narrow[0]
            coords = list(a.coord_sets)
            coords[i] = a.coord_sets[i] - inter.coord_sets[i]
            return TupleSet(a.arity, coord_sets=tuple(coords))
    remaining = a.materialize() - inter.materialize()
    return from_tuples(a.arity, remaining) if remaining else None


def is_subset(a: TupleSet, b: TupleSet) -> bool:
    if a.coord_sets is not None and b.coord_sets is not None:
        return all(x <= y for x, y in zip(a.coord_sets, b.coord_sets))
    if a.tuples is not None:
        return all(t in b for t in a.tuples)
    return all(t in b for t in a.materialize())


def is_disjoint(a: TupleSet, b: TupleSet) -> bool:
    return intersect(a, b) is None
