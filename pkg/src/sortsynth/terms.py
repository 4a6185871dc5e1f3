"""Terms, formulas, substitutions, and first-order matching.

The object language has three term sorts (elements, lists, multisets) plus
booleans for formulas.  Variables are universal placeholders, Skolem
constants stand for "arbitrary but fixed" values, and metavariables are the
unknowns whose bindings become synthesis witnesses.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Union


class Sort(Enum):
    ELEM = "elem"
    LIST = "list"
    MSET = "mset"
    BOOL = "bool"


class SortError(Exception):
    """A term or substitution violates the sort discipline."""


class NoMatch(Exception):
    """Pattern matching failed (constructor clash or inconsistent binding)."""


@dataclass(frozen=True)
class Var:
    name: str
    sort: Sort


@dataclass(frozen=True)
class Skolem:
    name: str
    sort: Sort
    index: int


@dataclass(frozen=True)
class Meta:
    name: str
    sort: Sort
    index: int


@dataclass(frozen=True)
class App:
    sym: str
    args: tuple["Term", ...]
    sort: Sort


Term = Union[Var, Skolem, Meta, App]

# Builtin symbols: name -> (argument sorts, result sort).  Synthesized
# functions are added per knowledge base via SymbolTable.extend.
BUILTIN_SIGNATURES: dict[str, tuple[tuple[Sort, ...], Sort]] = {
    "nil": ((), Sort.LIST),
    "cons": ((Sort.ELEM, Sort.LIST), Sort.LIST),
    "msempty": ((), Sort.MSET),
    "mse": ((Sort.ELEM,), Sort.MSET),
    "ms": ((Sort.LIST,), Sort.MSET),
    "union": ((Sort.MSET, Sort.MSET), Sort.MSET),
}

PREDICATES = {"eq", "neq", "leq", "lt", "sorted", "true", "false"}


class SymbolTable:
    """Immutable-by-convention registry of function signatures."""

    def __init__(self, extra: dict[str, tuple[tuple[Sort, ...], Sort]] | None = None):
        self._sigs = dict(BUILTIN_SIGNATURES)
        if extra:
            self._sigs.update(extra)

    def __contains__(self, sym: str) -> bool:
        return sym in self._sigs

    def signature(self, sym: str) -> tuple[tuple[Sort, ...], Sort]:
        try:
            return self._sigs[sym]
        except KeyError:
            raise SortError(f"unknown function symbol {sym!r}")

    def extend(self, sym: str, arg_sorts: tuple[Sort, ...], result: Sort) -> "SymbolTable":
        if sym in self._sigs and self._sigs[sym] != (arg_sorts, result):
            raise SortError(f"symbol {sym!r} redeclared with a different signature")
        return SymbolTable({**{k: v for k, v in self._sigs.items() if k not in BUILTIN_SIGNATURES},
                            sym: (arg_sorts, result)})

    def extras(self) -> dict[str, tuple[tuple[Sort, ...], Sort]]:
        return {k: v for k, v in self._sigs.items() if k not in BUILTIN_SIGNATURES}


DEFAULT_TABLE = SymbolTable()


def app(table: SymbolTable, sym: str, *args: Term) -> App:
    arg_sorts, result = table.signature(sym)
    if len(args) != len(arg_sorts):
        raise SortError(f"{sym} expects {len(arg_sorts)} arguments, got {len(args)}")
    for a, want in zip(args, arg_sorts):
        if a.sort is not want:
            raise SortError(f"{sym}: argument {pp(a)} has sort {a.sort.value}, expected {want.value}")
    return App(sym, tuple(args), result)


NIL = App("nil", (), Sort.LIST)
MSEMPTY = App("msempty", (), Sort.MSET)


def cons(head: Term, tail: Term) -> App:
    return app(DEFAULT_TABLE, "cons", head, tail)


def ms(lst: Term) -> App:
    return app(DEFAULT_TABLE, "ms", lst)


def mse(elem: Term) -> App:
    return app(DEFAULT_TABLE, "mse", elem)


def msunion(*parts: Term) -> Term:
    if not parts:
        return MSEMPTY
    acc = parts[-1]
    for p in reversed(parts[:-1]):
        acc = app(DEFAULT_TABLE, "union", p, acc)
    return acc


# ---------------------------------------------------------------------------
# Formulas


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class Not:
    body: "Formula"


@dataclass(frozen=True)
class And:
    parts: tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    parts: tuple["Formula", ...]


@dataclass(frozen=True)
class Implies:
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class Forall:
    var: Var
    body: "Formula"


@dataclass(frozen=True)
class Exists:
    var: Var
    body: "Formula"


Formula = Union[Atom, Not, And, Or, Implies, Forall, Exists]

TRUE = Atom("true", ())
FALSE = Atom("false", ())


def conj(parts: list[Formula]) -> Formula:
    parts = [p for p in parts if p != TRUE]
    if not parts:
        return TRUE
    if len(parts) == 1:
        return parts[0]
    return And(tuple(parts))


def conjuncts(f: Formula) -> list[Formula]:
    if isinstance(f, And):
        out: list[Formula] = []
        for p in f.parts:
            out.extend(conjuncts(p))
        return out
    if f == TRUE:
        return []
    return [f]


def eq_atom(lhs: Term, rhs: Term) -> Atom:
    if lhs.sort is not rhs.sort:
        raise SortError(f"eq over mixed sorts: {pp(lhs)} / {pp(rhs)}")
    return Atom("eq", (lhs, rhs))


def leq(lhs: Term, rhs: Term) -> Atom:
    return Atom("leq", (lhs, rhs))


def lt(lhs: Term, rhs: Term) -> Atom:
    return Atom("lt", (lhs, rhs))


def sorted_atom(lst: Term) -> Atom:
    if lst.sort is not Sort.LIST:
        raise SortError("sorted expects a list")
    return Atom("sorted", (lst,))


def neq(lhs: Term, rhs: Term) -> Atom:
    return Atom("neq", (lhs, rhs))


# ---------------------------------------------------------------------------
# Substitutions


class Substitution:
    """Sort-preserving map from Vars/Skolems/Metas to terms."""

    def __init__(self, bindings: dict[Term, Term] | None = None):
        self._b: dict[Term, Term] = dict(bindings or {})
        for k, v in self._b.items():
            if not isinstance(k, (Var, Skolem, Meta)):
                raise SortError("substitution keys must be Var/Skolem/Meta")
            if k.sort is not v.sort:
                raise SortError(f"binding {pp(k)} -> {pp(v)} changes sort")

    def __bool__(self) -> bool:
        return bool(self._b)

    def __len__(self) -> int:
        return len(self._b)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Substitution) and self._b == other._b

    def __repr__(self) -> str:
        inner = ", ".join(f"{pp(k)} -> {pp(v)}" for k, v in sorted(self._b.items(), key=lambda kv: term_key(kv[0])))
        return "{" + inner + "}"

    def get(self, key: Term) -> Term | None:
        return self._b.get(key)

    def items(self) -> Iterator[tuple[Term, Term]]:
        return iter(self._b.items())

    def keys(self) -> set[Term]:
        return set(self._b)

    def bind(self, key: Term, value: Term) -> "Substitution":
        if key in self._b and self._b[key] != value:
            raise SortError(f"rebinding {pp(key)}")
        new = dict(self._b)
        new[key] = value
        return Substitution(new)

    def merge(self, other: "Substitution") -> "Substitution":
        out = self
        for k, v in other.items():
            out = out.bind(k, v)
        return out

    def resolved(self) -> "Substitution":
        """Close the bindings so no bound key appears in any image."""
        b = dict(self._b)
        for _ in range(len(b) + 1):
            changed = False
            for k in b:
                new = substitute(b[k], Substitution(b))
                if new != b[k]:
                    b[k] = new
                    changed = True
            if not changed:
                return Substitution(b)
        raise SortError("cyclic substitution")


def substitute(obj, s: Substitution):
    """Replace bound Vars/Skolems/Metas throughout a term or formula."""
    if isinstance(obj, (Var, Skolem, Meta)):
        hit = s.get(obj)
        return hit if hit is not None else obj
    if isinstance(obj, App):
        new_args = tuple(substitute(a, s) for a in obj.args)
        if new_args == obj.args:
            return obj
        return App(obj.sym, new_args, obj.sort)
    if isinstance(obj, Atom):
        return Atom(obj.pred, tuple(substitute(a, s) for a in obj.args))
    if isinstance(obj, Not):
        return Not(substitute(obj.body, s))
    if isinstance(obj, And):
        return And(tuple(substitute(p, s) for p in obj.parts))
    if isinstance(obj, Or):
        return Or(tuple(substitute(p, s) for p in obj.parts))
    if isinstance(obj, Implies):
        return Implies(substitute(obj.lhs, s), substitute(obj.rhs, s))
    if isinstance(obj, (Forall, Exists)):
        # quantified variables are never substitution keys in this artifact
        cls = type(obj)
        return cls(obj.var, substitute(obj.body, s))
    raise TypeError(f"cannot substitute into {obj!r}")


def match_pattern(pattern: Term, ground: Term, s: Substitution | None = None) -> Substitution | None:
    """First-order matching: find s with substitute(pattern, s) == ground.

    Vars and Metas in the pattern are match variables; Skolems and function
    applications must agree structurally.  Returns None on clash.
    """
    s = s if s is not None else Substitution()
    if isinstance(pattern, (Var, Meta)):
        prev = s.get(pattern)
        if prev is not None:
            return s if prev == ground else None
        if pattern.sort is not ground.sort:
            return None
        return s.bind(pattern, ground)
    if isinstance(pattern, Skolem):
        return s if pattern == ground else None
    if isinstance(pattern, App):
        if not isinstance(ground, App) or pattern.sym != ground.sym:
            return None
        for p, g in zip(pattern.args, ground.args):
            nxt = match_pattern(p, g, s)
            if nxt is None:
                return None
            s = nxt
        return s
    raise TypeError(f"bad pattern {pattern!r}")


def subterms(t: Term) -> Iterator[Term]:
    yield t
    if isinstance(t, App):
        for a in t.args:
            yield from subterms(a)


def metas_of(obj) -> set[Meta]:
    out: set[Meta] = set()
    _collect(obj, Meta, out)
    return out


def skolems_of(obj) -> set[Skolem]:
    out: set[Skolem] = set()
    _collect(obj, Skolem, out)
    return out


def vars_of(obj) -> set[Var]:
    out: set[Var] = set()
    _collect(obj, Var, out)
    return out


def _collect(obj, cls, out: set) -> None:
    if isinstance(obj, cls):
        out.add(obj)
    if isinstance(obj, App):
        for a in obj.args:
            _collect(a, cls, out)
    elif isinstance(obj, Atom):
        for a in obj.args:
            _collect(a, cls, out)
    elif isinstance(obj, Not):
        _collect(obj.body, cls, out)
    elif isinstance(obj, (And, Or)):
        for p in obj.parts:
            _collect(p, cls, out)
    elif isinstance(obj, Implies):
        _collect(obj.lhs, cls, out)
        _collect(obj.rhs, cls, out)
    elif isinstance(obj, (Forall, Exists)):
        _collect(obj.body, cls, out)


def constant_multiset(t: Term) -> Counter:
    """Multiset of the Skolem constants occurring in t (with multiplicity).

    This is the measure behind the Noetherian meta-ordering on terms.
    """
    out: Counter = Counter()
    for sub in subterms(t):
        if isinstance(sub, Skolem):
            out[sub] += 1
    return out


class Gensym:
    """Per-proof-run fresh-name supply for Skolems and metavariables."""

    def __init__(self) -> None:
        self._next: Counter = Counter()

    def skolem(self, base: str, sort: Sort) -> Skolem:
        i = self._next["sk:" + base]
        self._next["sk:" + base] += 1
        return Skolem(base, sort, i)

    def meta(self, base: str, sort: Sort) -> Meta:
        i = self._next["mv:" + base]
        self._next["mv:" + base] += 1
        return Meta(base, sort, i)


# ---------------------------------------------------------------------------
# Canonical total order (deterministic printing and bag layouts)

_KIND_RANK = {Var: 0, Skolem: 1, Meta: 2, App: 3}


def term_key(t: Term):
    if isinstance(t, App):
        return (3, t.sym, len(t.args), tuple(term_key(a) for a in t.args))
    idx = t.index if isinstance(t, (Skolem, Meta)) else -1
    return (_KIND_RANK[type(t)], t.name, idx, ())


# ---------------------------------------------------------------------------
# Canonical textual syntax (one-to-one printable/parsable)


def pp(obj) -> str:
    """Print a term or formula in the canonical syntax."""
    if isinstance(obj, Var):
        return obj.name
    if isinstance(obj, Skolem):
        return f"sk:{obj.name}{obj.index}"
    if isinstance(obj, Meta):
        return f"meta:{obj.name}{obj.index}"
    if isinstance(obj, App):
        if not obj.args:
            return obj.sym
        return f"{obj.sym}({', '.join(pp(a) for a in obj.args)})"
    if isinstance(obj, Atom):
        if not obj.args:
            return obj.pred
        return f"{obj.pred}({', '.join(pp(a) for a in obj.args)})"
    if isinstance(obj, Not):
        return f"not({pp(obj.body)})"
    if isinstance(obj, And):
        return f"and({', '.join(pp(p) for p in obj.parts)})"
    if isinstance(obj, Or):
        return f"or({', '.join(pp(p) for p in obj.parts)})"
    if isinstance(obj, Implies):
        return f"implies({pp(obj.lhs)}, {pp(obj.rhs)})"
    if isinstance(obj, Forall):
        return f"forall({obj.var.name}:{obj.var.sort.value}, {pp(obj.body)})"
    if isinstance(obj, Exists):
        return f"exists({obj.var.name}:{obj.var.sort.value}, {pp(obj.body)})"
    raise TypeError(f"cannot print {obj!r}")


def _split_indexed(token: str) -> tuple[str, int]:
    i = len(token)
    while i > 0 and token[i - 1].isdigit():
        i -= 1
    if i == len(token) or i == 0:
        raise SortError(f"expected an indexed name, got {token!r}")
    return token[:i], int(token[i:])


def _name_sort(name: str) -> Sort:
    # Paper convention: lowercase letters denote elements, capitalized names
    # denote lists.  Used only when no signature position fixes the sort.
    return Sort.ELEM if name[0].islower() else Sort.LIST


class _Parser:
    def __init__(self, text: str, table: SymbolTable, var_sorts: dict[str, Sort] | None = None):
        self.text = text
        self.pos = 0
        self.table = table
        self.var_sorts = dict(var_sorts or {})

    def error(self, msg: str):
        raise SortError(f"parse error at {self.pos} in {self.text!r}: {msg}")

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        self.skip_ws()
        if not self.text.startswith(ch, self.pos):
            self.error(f"expected {ch!r}")
        self.pos += len(ch)

    def ident(self) -> str:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isalnum() or self.text[self.pos] in "_:"):
            self.pos += 1
        if start == self.pos:
            self.error("expected an identifier")
        return self.text[start:self.pos]

    def parse_formula(self) -> Formula:
        tok = self.ident()
        if tok == "true":
            return TRUE
        if tok == "false":
            return FALSE
        if tok in ("and", "or"):
            parts = tuple(self.parse_args(self.parse_formula))
            return And(parts) if tok == "and" else Or(parts)
        if tok == "not":
            self.expect("(")
            body = self.parse_formula()
            self.expect(")")
            return Not(body)
        if tok == "implies":
            self.expect("(")
            lhs = self.parse_formula()
            self.expect(",")
            rhs = self.parse_formula()
            self.expect(")")
            return Implies(lhs, rhs)
        if tok in ("forall", "exists"):
            self.expect("(")
            v = self.parse_annotated_var()
            self.expect(",")
            saved = self.var_sorts.get(v.name)
            self.var_sorts[v.name] = v.sort
            body = self.parse_formula()
            if saved is None:
                del self.var_sorts[v.name]
            else:
                self.var_sorts[v.name] = saved
            self.expect(")")
            return Forall(v, body) if tok == "forall" else Exists(v, body)
        if tok in ("eq", "neq", "leq", "lt"):
            args = self.parse_args(lambda: self.parse_term(None))
            if tok == "eq" and args[0].sort is not args[1].sort:
                self.error("eq over mixed sorts")
            return Atom(tok, tuple(args))
        if tok == "sorted":
            args = self.parse_args(lambda: self.parse_term(Sort.LIST))
            return Atom("sorted", tuple(args))
        self.error(f"unknown formula head {tok!r}")

    def parse_annotated_var(self) -> Var:
        name = self.ident()
        self.expect(":")
        sort = self.ident()
        return Var(name, Sort(sort))

    def parse_args(self, sub) -> list:
        self.expect("(")
        out = [sub()]
        while self.peek() == ",":
            self.expect(",")
            out.append(sub())
        self.expect(")")
        return out

    def parse_term(self, want: Sort | None) -> Term:
        tok = self.ident()
        if tok.startswith("sk:") or tok.startswith("meta:"):
            kind, raw = tok.split(":", 1)
            base, idx = _split_indexed(raw)
            sort = want or _name_sort(base)
            return Skolem(base, sort, idx) if kind == "sk" else Meta(base, sort, idx)
        if tok in self.table:
            arg_sorts, result = self.table.signature(tok)
            if not arg_sorts:
                return App(tok, (), result)
            args: list[Term] = []
            self.expect("(")
            for i, asort in enumerate(arg_sorts):
                if i:
                    self.expect(",")
                args.append(self.parse_term(asort))
            self.expect(")")
            t = App(tok, tuple(args), result)
            if want is not None and t.sort is not want:
                self.error(f"{tok} has sort {t.sort.value}, expected {want.value}")
            return t
        # plain variable
        sort = self.var_sorts.get(tok) or want or _name_sort(tok)
        if want is not None and sort is not want:
            self.error(f"variable {tok} has sort {sort.value}, expected {want.value}")
        return Var(tok, sort)

    def done(self):
        self.skip_ws()
        if self.pos != len(self.text):
            self.error("trailing input")


def parse_term(text: str, table: SymbolTable = DEFAULT_TABLE,
               var_sorts: dict[str, Sort] | None = None, want: Sort | None = None) -> Term:
    p = _Parser(text, table, var_sorts)
    t = p.parse_term(want)
    p.done()
    return t


def parse_formula(text: str, table: SymbolTable = DEFAULT_TABLE,
                  var_sorts: dict[str, Sort] | None = None) -> Formula:
    p = _Parser(text, table, var_sorts)
    f = p.parse_formula()
    p.done()
    return f
