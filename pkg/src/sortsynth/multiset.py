"""AC-normal multiset arithmetic.

A multiset expression is flattened into a bag of atoms: singletons {e},
list wrappers for whole lists, and bare multiset variables.  Union is
commutative and associative with unit msempty, so the bag itself is the
normal form.  List wrappers over cons cells are expanded eagerly; the dual
compression step reintroduces constructors only as an explicit proof move.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterator, Union

from .terms import (
    App, Meta, Sort, Substitution, Term, NIL, MSEMPTY,
    cons, metas_of, ms, mse, msunion, pp, substitute, term_key,
)


class AtomMissing(Exception):
    """Compression asked for an atom the polynomial does not contain."""


@dataclass(frozen=True)
class Singleton:
    term: Term  # element


@dataclass(frozen=True)
class ListWrap:
    term: Term  # list


@dataclass(frozen=True)
class MsVar:
    term: Term  # multiset-sorted variable or constant


MsAtom = Union[Singleton, ListWrap, MsVar]

_ATOM_RANK = {Singleton: 0, ListWrap: 1, MsVar: 2}


def atom_key(a: MsAtom):
    return (_ATOM_RANK[type(a)], term_key(a.term))


class MsPoly:
    """Bag of MsAtoms with multiplicities; hashable and order-canonical."""

    __slots__ = ("_bag", "_key")

    def __init__(self, atoms: Counter | dict | None = None):
        bag: Counter = Counter()
        if atoms:
            for a, n in (atoms.items() if isinstance(atoms, (Counter, dict)) else atoms):
                if n < 0:
                    raise ValueError("negative multiplicity")
                if n:
                    bag[a] += n
        self._bag = bag
        self._key = tuple(sorted(((atom_key(a), a, n) for a, n in bag.items()), key=lambda x: x[0]))

    @classmethod
    def of(cls, *atoms: MsAtom) -> "MsPoly":
        return cls(Counter(atoms))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MsPoly) and self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __bool__(self) -> bool:
        return bool(self._bag)

    def __len__(self) -> int:
        return sum(self._bag.values())

    def __iter__(self) -> Iterator[MsAtom]:
        for _, a, n in self._key:
            for _ in range(n):
                yield a

    def __repr__(self) -> str:
        return pp(self.to_term())

    def atoms(self) -> list[MsAtom]:
        return [a for _, a, _ in self._key]

    def count(self, a: MsAtom) -> int:
        return self._bag.get(a, 0)

    def add(self, other: "MsPoly") -> "MsPoly":
        return MsPoly(self._bag + other._bag)

    def remove(self, a: MsAtom, n: int = 1) -> "MsPoly":
        if self._bag.get(a, 0) < n:
            raise AtomMissing(f"{pp(a.term)} not in polynomial")
        bag = Counter(self._bag)
        bag[a] -= n
        return MsPoly(+bag)

    def subtract(self, other: "MsPoly") -> "MsPoly":
        bag = Counter(self._bag)
        bag.subtract(other._bag)
        if any(v < 0 for v in bag.values()):
            raise AtomMissing("not a sub-bag")
        return MsPoly(+bag)

    def singletons(self) -> list[Singleton]:
        return [a for a in self.atoms() if isinstance(a, Singleton)]

    def wraps(self) -> list[ListWrap]:
        return [a for a in self.atoms() if isinstance(a, ListWrap)]

    def has_meta(self) -> bool:
        return any(metas_of(a.term) for a in self.atoms())

    def to_term(self) -> Term:
        """Canonical multiset term for this bag (msempty when empty)."""
        parts: list[Term] = []
        for a in self:
            if isinstance(a, Singleton):
                parts.append(mse(a.term))
            elif isinstance(a, ListWrap):
                parts.append(ms(a.term))
            else:
                parts.append(a.term)
        return msunion(*parts) if parts else MSEMPTY


EMPTY = MsPoly()


def normalize(t: Term) -> MsPoly:
    """Flatten a multiset term into its AC-normal, fully expanded bag."""
    if t.sort is not Sort.MSET:
        raise ValueError(f"normalize expects a multiset term, got {pp(t)}")
    if isinstance(t, App):
        if t.sym == "msempty":
            return EMPTY
        if t.sym == "mse":
            return MsPoly.of(Singleton(t.args[0]))
        if t.sym == "union":
            return normalize(t.args[0]).add(normalize(t.args[1]))
        if t.sym == "ms":
            return _expand_list(t.args[0])
    return MsPoly.of(MsVar(t))


def _expand_list(lst: Term) -> MsPoly:
    # ms(nil) = msempty and ms(cons(a,U)) = union(mse(a), ms(U))
    bag: Counter = Counter()
    cur = lst
    while isinstance(cur, App) and cur.sym == "cons":
        bag[Singleton(cur.args[0])] += 1
        cur = cur.args[1]
    if not (isinstance(cur, App) and cur.sym == "nil"):
        bag[ListWrap(cur)] += 1
    return MsPoly(bag)


def substitute_poly(p: MsPoly, s: Substitution) -> MsPoly:
    """Apply a substitution; changed atoms are re-normalized."""
    out = EMPTY
    for a in p:
        new = substitute(a.term, s)
        if new == a.term:
            out = out.add(MsPoly.of(a))
        elif isinstance(a, Singleton):
            out = out.add(MsPoly.of(Singleton(new)))
        elif isinstance(a, ListWrap):
            out = out.add(_expand_list(new))
        else:
            out = out.add(normalize(new))
    return out


def compress(p: MsPoly, single: Singleton, wrap: ListWrap) -> MsPoly:
    """Replace {e} + <<U>> with <<cons(e, U)>> inside p."""
    if p.count(single) < 1 or p.count(wrap) < 1:
        raise AtomMissing("compression pair not present")
    return p.remove(single).remove(wrap).add(MsPoly.of(ListWrap(cons(single.term, wrap.term))))


def cancel_common(lhs: MsPoly, rhs: MsPoly) -> tuple[MsPoly, MsPoly]:
    """Remove shared atoms pairwise, respecting multiplicity."""
    common = Counter(dict(lhs._bag)) & Counter(dict(rhs._bag))
    return lhs.subtract(MsPoly(common)), rhs.subtract(MsPoly(common))


def subset(p: MsPoly, q: MsPoly) -> bool:
    return all(q.count(a) >= n for a, n in p._bag.items())


def strict_subset(p: MsPoly, q: MsPoly) -> bool:
    return subset(p, q) and p != q


def _fold_cons(seq: list[Term], base: Term) -> Term:
    out = base
    for e in reversed(seq):
        out = cons(e, out)
    return out


def solve_candidates(lhs: MsPoly, rhs: MsPoly,
                     order_key: Callable[[list[Term]], object] | None = None) -> list[Substitution]:
    """Enumerate bindings for a lone metavariable atom on one side.

    One side (after cancelling common atoms) must be exactly a wrapped or
    singleton metavariable; the other side must be meta-free.  When the
    ground side mixes singletons with at most one list wrapper, the
    singletons are compressed onto the wrapper (or onto nil); every
    compression order is offered, sorted by order_key.
    """
    l, r = cancel_common(lhs, rhs)
    out: list[Substitution] = []
    seen: set = set()
    for meta_side, ground_side in ((l, r), (r, l)):
        if len(meta_side) != 1 or ground_side.has_meta():
            continue
        atom = meta_side.atoms()[0]
        if not isinstance(atom.term, Meta):
            continue
        m = atom.term
        if isinstance(atom, Singleton):
            singles = ground_side.singletons()
            if len(ground_side) == 1 and len(singles) == 1:
                out.append(Substitution({m: singles[0].term}))
            continue
        if not isinstance(atom, ListWrap):
            continue
        wraps = ground_side.wraps()
        if len(wraps) > 1 or any(isinstance(a, MsVar) for a in ground_side.atoms()):
            continue
        base = wraps[0].term if wraps else NIL
        singles = [a.term for a in ground_side.singletons()]
        orders = sorted({perm for perm in itertools.permutations(singles)},
                        key=lambda seq: [term_key(t) for t in seq])
        if order_key is not None:
            orders.sort(key=lambda seq: order_key(list(seq)))
        for seq in orders:
            binding = Substitution({m: _fold_cons(list(seq), base)})
            key = pp(binding.get(m))
            if key not in seen:
                seen.add(key)
                out.append(binding)
    return out


def solve_meta(lhs: MsPoly, rhs: MsPoly) -> Substitution | None:
    """First candidate binding for the goal equation lhs = rhs, if any."""
    cands = solve_candidates(lhs, rhs)
    return cands[0] if cands else None
