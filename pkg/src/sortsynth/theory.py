"""Knowledge base: base axioms, function specifications, cover sets, and
the registry of already-synthesized functions with their characteristic
properties."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

from .terms import (
    And, Atom, Exists, Forall, Formula, Implies, Not, Or,
    Sort, SortError, Substitution, SymbolTable, Term, Var,
    TRUE, NIL, MSEMPTY, app, conj, conjuncts, cons, eq_atom, leq, lt, ms, mse,
    msunion, neq, parse_formula, parse_term, pp, sorted_atom, substitute,
)
from . import multiset


class NameClash(Exception):
    """A function with this name but a different spec is already registered."""


@dataclass(frozen=True)
class FunctionSpec:
    """Input/output condition pair; the seed of a synthesis conjecture.

    Multi-output specs (one proof, several functions) carry one name per
    output variable; names[0] identifies the spec as a whole.
    """
    names: tuple[str, ...]
    inputs: tuple[Var, ...]
    outputs: tuple[Var, ...]
    precondition: Formula
    postcondition: Formula

    def __post_init__(self):
        if len(self.names) != len(self.outputs):
            raise SortError("one function name per output variable")

    @property
    def name(self) -> str:
        return self.names[0]

    @property
    def main_input(self) -> int:
        """Index of the input the cover-set strategy splits (first list)."""
        for i, v in enumerate(self.inputs):
            if v.sort is Sort.LIST:
                return i
        raise SortError(f"spec {self.name} has no list input")

    def output_apps(self, table: SymbolTable, arg_terms: tuple[Term, ...] | None = None) -> tuple[Term, ...]:
        args = arg_terms if arg_terms is not None else self.inputs
        return tuple(app(table, n, *args) for n in self.names)


def conjecture_of(spec: FunctionSpec) -> Formula:
    """Universally quantified inputs, implication from the input condition,
    existentially quantified outputs over the output condition."""
    body: Formula = spec.postcondition
    for y in reversed(spec.outputs):
        body = Exists(y, body)
    if spec.precondition != TRUE:
        body = Implies(spec.precondition, body)
    for x in reversed(spec.inputs):
        body = Forall(x, body)
    return body


def characteristic_property(spec: FunctionSpec, table: SymbolTable) -> Formula:
    """The assumption recorded after a successful synthesis: the output
    condition with each existential replaced by the function application."""
    s = Substitution({y: f for y, f in zip(spec.outputs, spec.output_apps(table))})
    body: Formula = substitute(spec.postcondition, s)
    if spec.precondition != TRUE:
        body = Implies(spec.precondition, body)
    for x in reversed(spec.inputs):
        body = Forall(x, body)
    return body


@dataclass(frozen=True)
class CoverTerm:
    term: Term
    conditions: tuple[Formula, ...] = ()  # implicit in patterns, never guards


@dataclass(frozen=True)
class CoverSet:
    name: str
    terms: tuple[CoverTerm, ...]


@dataclass(frozen=True)
class KnownFunction:
    spec: FunctionSpec
    prop: Formula
    algorithm: object | None = None  # extract.Algorithm once synthesized


@dataclass(frozen=True)
class KnowledgeBase:
    table: SymbolTable
    axioms: tuple[Formula, ...]
    known: tuple[tuple[str, KnownFunction], ...] = ()
    cover_sets: tuple[CoverSet, ...] = ()
    specs: tuple[FunctionSpec, ...] = ()  # top-level synthesis targets

    def known_map(self) -> dict[str, KnownFunction]:
        return dict(self.known)

    def spec_named(self, name: str) -> FunctionSpec:
        for s in self.specs:
            if name in s.names:
                return s
        raise KeyError(f"no spec named {name!r} in the theory")

    def cover_set(self, name: str) -> CoverSet:
        for c in self.cover_sets:
            if c.name == name:
                return c
        raise KeyError(f"no cover set named {name!r}")

    def register_synthesized(self, spec: FunctionSpec, algorithm: object | None) -> "KnowledgeBase":
        """Add a synthesized function (or function pair) plus its property."""
        existing = self.known_map()
        for n in spec.names:
            if n in existing:
                if canonical_shape(existing[n].spec) == canonical_shape(spec):
                    return self  # identical spec: reuse silently
                raise NameClash(f"function {n!r} already registered with a different spec")
        table = self.table
        for n, y in zip(spec.names, spec.outputs):
            table = table.extend(n, tuple(v.sort for v in spec.inputs), y.sort)
        prop = characteristic_property(spec, table)
        kf = KnownFunction(spec, prop, algorithm)
        return replace(self, table=table,
                       known=self.known + tuple((n, kf) for n in spec.names))

    def with_algorithm(self, name: str, algorithm: object) -> "KnowledgeBase":
        new = tuple((n, KnownFunction(kf.spec, kf.prop, algorithm) if name in kf.spec.names else kf)
                    for n, kf in self.known)
        return replace(self, known=new)


# ---------------------------------------------------------------------------
# Base theory


def _base_axioms() -> tuple[Formula, ...]:
    a = Var("a", Sort.ELEM)
    b = Var("b", Sort.ELEM)
    x = Var("x", Sort.ELEM)
    y = Var("y", Sort.ELEM)
    U = Var("U", Sort.LIST)
    V = Var("V", Sort.LIST)
    table = SymbolTable().extend("Conc", (Sort.LIST, Sort.LIST), Sort.LIST)

    def fa(vs, f):
        for v in reversed(vs):
            f = Forall(v, f)
        return f

    sorted_cons = sorted_atom(cons(a, U))
    body = And((leq(a, U), sorted_atom(U)))
    return (
        # multiset of a list
        eq_atom(ms(NIL), MSEMPTY),
        fa([a, U], eq_atom(ms(cons(a, U)), msunion(mse(a), ms(U)))),
        # sortedness
        sorted_atom(NIL),
        fa([a, U], Implies(sorted_cons, body)),
        fa([a, U], Implies(body, sorted_cons)),
        # ordering extension: empty list is below and above everything
        fa([a], leq(a, NIL)),
        fa([a], leq(NIL, a)),
        fa([U], leq(U, NIL)),
        fa([U], leq(NIL, U)),
        # ordering extension: composite lists compare pointwise
        fa([x, b, U], Implies(leq(x, cons(b, U)), And((leq(x, b), leq(x, U))))),
        fa([x, b, U], Implies(And((leq(x, b), leq(x, U))), leq(x, cons(b, U)))),
        fa([x, b, U], Implies(leq(cons(b, U), x), And((leq(b, x), leq(U, x))))),
        fa([x, b, U], Implies(And((leq(b, x), leq(U, x))), leq(cons(b, U), x))),
        # composition through an element middle (safe despite the empty-list
        # exceptions to transitivity: the middle is a single element)
        fa([x, y], Implies(lt(x, y), leq(x, y))),
        fa([U, y, V], Implies(And((leq(U, y), leq(y, V))), leq(U, V))),
        fa([U, y, V], Implies(And((leq(U, y), lt(y, V))), lt(U, V))),
        fa([U, y, V], Implies(And((lt(U, y), leq(y, V))), lt(U, V))),
        # concatenation as a pattern construct: its multiset is the union
        fa([U, V], eq_atom(app(table, "ms", app(table, "Conc", U, V)),
                           msunion(app(table, "ms", U), app(table, "ms", V)))),
    )


def base_theory() -> KnowledgeBase:
    """Knowledge base with the list/multiset axioms and builtin cover sets."""
    table = SymbolTable().extend("Conc", (Sort.LIST, Sort.LIST), Sort.LIST)
    a = Var("a", Sort.ELEM)
    U = Var("U", Sort.LIST)
    V = Var("V", Sort.LIST)
    definition = CoverSet("definition", (CoverTerm(NIL), CoverTerm(cons(a, U))))
    dac = CoverSet("dac", (
        CoverTerm(NIL),
        CoverTerm(cons(a, NIL)),
        CoverTerm(app(table, "Conc", U, V), (neq(U, NIL), neq(V, NIL))),
    ))
    return KnowledgeBase(table=table, axioms=_base_axioms(), cover_sets=(definition, dac))


# ---------------------------------------------------------------------------
# Spec shapes: alpha- and orientation-invariant canonical forms, used both to
# name cascaded functions deterministically and to detect spec reuse.


def _canon_formula(f: Formula, renaming: Substitution) -> frozenset:
    out = set()
    for c in conjuncts(substitute(f, renaming)):
        if isinstance(c, Atom) and c.pred == "eq" and c.args[0].sort is Sort.MSET:
            l = multiset.normalize(c.args[0])
            r = multiset.normalize(c.args[1])
            out.add(frozenset({pp(l.to_term()), pp(r.to_term())}))
        else:
            out.add(pp(c))
    return frozenset(out)


def canonical_shape(spec: FunctionSpec):
    """Shape key: input/output sorts plus positionally renamed conditions."""
    renaming = Substitution(
        {v: Var(f"x{i}", v.sort) for i, v in enumerate(spec.inputs)}
        | {v: Var(f"y{i}", v.sort) for i, v in enumerate(spec.outputs)})
    return (
        tuple(v.sort for v in spec.inputs),
        tuple(v.sort for v in spec.outputs),
        _canon_formula(spec.precondition, renaming),
        _canon_formula(spec.postcondition, renaming),
    )


def _permuted(spec: FunctionSpec, in_perm: tuple[int, ...], out_perm: tuple[int, ...]) -> FunctionSpec:
    return replace(spec,
                   inputs=tuple(spec.inputs[i] for i in in_perm),
                   outputs=tuple(spec.outputs[i] for i in out_perm),
                   names=tuple(spec.names[i] for i in out_perm))


def match_shape(spec: FunctionSpec, reference: FunctionSpec) -> FunctionSpec | None:
    """Match spec against a reference shape modulo argument/output order.

    Returns the spec with inputs/outputs permuted into the reference order
    and the reference's function names, or None."""
    if len(spec.inputs) != len(reference.inputs) or len(spec.outputs) != len(reference.outputs):
        return None
    ref_key = canonical_shape(reference)
    for in_perm in itertools.permutations(range(len(spec.inputs))):
        for out_perm in itertools.permutations(range(len(spec.outputs))):
            cand = _permuted(spec, in_perm, out_perm)
            if canonical_shape(cand) == ref_key:
                return replace(cand, names=reference.names)
    return None


def paper_shapes() -> tuple[FunctionSpec, ...]:
    """Reference specs giving cascaded functions their conventional names."""
    a = Var("a", Sort.ELEM)
    X = Var("X", Sort.LIST)
    Y = Var("Y", Sort.LIST)
    y = Var("y", Sort.ELEM)
    V = Var("V", Sort.LIST)
    W = Var("W", Sort.LIST)
    return (
        FunctionSpec(("min", "Trim"), (X,), (y, V), neq(X, NIL),
                     And((eq_atom(ms(cons(y, V)), ms(X)), leq(y, X)))),
        FunctionSpec(("minA", "TrimA"), (a, X), (y, V), TRUE,
                     And((eq_atom(ms(cons(y, V)), ms(cons(a, X))), leq(y, a), leq(y, X)))),
        FunctionSpec(("Insert",), (a, X), (V,), sorted_atom(X),
                     And((eq_atom(ms(V), msunion(mse(a), ms(X))), sorted_atom(V)))),
        FunctionSpec(("SmEq", "Bigger"), (a, X), (V, W), TRUE,
                     And((eq_atom(ms(X), msunion(ms(V), ms(W))), leq(V, a), lt(a, W)))),
        FunctionSpec(("Conc",), (X, Y), (V,),
                     And((leq(X, Y), sorted_atom(X), sorted_atom(Y))),
                     And((eq_atom(ms(V), msunion(ms(X), ms(Y))), sorted_atom(V)))),
        FunctionSpec(("Merge",), (X, Y), (W,),
                     And((sorted_atom(X), sorted_atom(Y))),
                     And((eq_atom(ms(W), msunion(ms(X), ms(Y))), sorted_atom(W)))),
    )


def assign_names(spec: FunctionSpec, taken: set[str], aux_counter: list[int]) -> FunctionSpec:
    """Deterministic naming for a cascaded conjecture: the fixed shape table
    first, fallback aux<N> (aux<N>r for secondary outputs)."""
    for ref in paper_shapes():
        hit = match_shape(spec, ref)
        if hit is not None and not any(n in taken for n in hit.names):
            return hit
    aux_counter[0] += 1
    base = f"aux{aux_counter[0]}"
    names = tuple(base if i == 0 else f"{base}r{i}" for i in range(len(spec.outputs)))
    return replace(spec, names=names)


# ---------------------------------------------------------------------------
# Theory files: one declaration per line.
#   spec Name(in:sort, ... -> out:sort, ...) requires <formula> ensures <formula>
#   coverset name = { term; term | <side condition>; ... }
#   axiom <formula>


def parse_theory(text: str, kb: KnowledgeBase | None = None) -> KnowledgeBase:
    kb = kb if kb is not None else base_theory()
    specs: list[FunctionSpec] = list(kb.specs)
    covers = list(kb.cover_sets)
    axioms = list(kb.axioms)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if line.startswith("spec "):
                specs.append(_parse_spec_line(line[5:], kb.table))
            elif line.startswith("coverset "):
                cs = _parse_coverset_line(line[9:], kb.table)
                covers = [c for c in covers if c.name != cs.name] + [cs]
            elif line.startswith("axiom "):
                axioms.append(parse_formula(line[6:], kb.table))
            else:
                raise SortError(f"unknown declaration {line.split()[0]!r}")
        except SortError as e:
            raise SortError(f"theory line {lineno}: {e}") from e
    return replace(kb, specs=tuple(specs), cover_sets=tuple(covers), axioms=tuple(axioms))


def _parse_vars(text: str) -> tuple[Var, ...]:
    out = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        name, _, sort = chunk.partition(":")
        out.append(Var(name.strip(), Sort(sort.strip())))
    return tuple(out)


def _parse_spec_line(line: str, table: SymbolTable) -> FunctionSpec:
    head, _, rest = line.partition(")")
    name, _, argtext = head.partition("(")
    ins_text, arrow, outs_text = argtext.partition("->")
    if not arrow:
        raise SortError("spec needs '-> outputs' in its argument list")
    inputs = _parse_vars(ins_text)
    outputs = _parse_vars(outs_text)
    rest = rest.strip()
    if not rest.startswith("requires"):
        raise SortError("spec needs a requires clause")
    req_text, _, ens_text = rest[len("requires"):].partition("ensures")
    var_sorts = {v.name: v.sort for v in inputs + outputs}
    pre = parse_formula(req_text.strip(), table, var_sorts)
    post = parse_formula(ens_text.strip(), table, var_sorts)
    return FunctionSpec((name.strip(),), inputs, outputs, pre, post)


def _parse_coverset_line(line: str, table: SymbolTable) -> CoverSet:
    name, _, body = line.partition("=")
    body = body.strip()
    if not (body.startswith("{") and body.endswith("}")):
        raise SortError("coverset body must be { term; ... }")
    terms = []
    for chunk in body[1:-1].split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        term_text, _, cond_text = chunk.partition("|")
        term = parse_term(term_text.strip(), table, want=Sort.LIST)
        conds = tuple(conjuncts(parse_formula(cond_text.strip(), table))) if cond_text.strip() else ()
        terms.append(CoverTerm(term, conds))
    return CoverSet(name.strip(), tuple(terms))


def theory_text(kb: KnowledgeBase) -> str:
    """Print the declarations of a knowledge base in theory-file syntax."""
    lines = []
    for s in kb.specs:
        ins = ", ".join(f"{v.name}:{v.sort.value}" for v in s.inputs)
        outs = ", ".join(f"{v.name}:{v.sort.value}" for v in s.outputs)
        lines.append(f"spec {s.name}({ins} -> {outs}) requires {pp(s.precondition)} ensures {pp(s.postcondition)}")
    for c in kb.cover_sets:
        chunks = []
        for ct in c.terms:
            cond = f" | {pp(conj(list(ct.conditions)))}" if ct.conditions else ""
            chunks.append(pp(ct.term) + cond)
        lines.append(f"coverset {c.name} = {{ {'; '.join(chunks)} }}")
    return "\n".join(lines) + "\n"
