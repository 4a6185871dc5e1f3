"""Turn closed proofs into named sets of guarded rewrite rules."""

from __future__ import annotations

from dataclasses import dataclass

from .terms import (
    App, Atom, Formula, Meta, Not, Skolem, Sort, SortError, Substitution, Term,
    Var, NIL, conj, conjuncts, eq_atom, pp, skolems_of, substitute, vars_of,
)
from .theory import FunctionSpec
from .engine import CascadeRecord, Leaf, Solution

BUILTIN_HEADS = {"nil", "cons", "ms", "mse", "union", "msempty"}


class OpenBranch(Exception):
    pass


class UnboundMetaInWitness(Exception):
    pass


@dataclass(frozen=True)
class RewriteRule:
    head: str
    lhs: tuple[Term, ...]
    guard: Formula | None
    rhs: Term

    def __repr__(self) -> str:
        g = f" | {pp(self.guard)}" if self.guard is not None else ""
        return f"{self.head}[{', '.join(display(t) for t in self.lhs)}] = {display(self.rhs)}{g}"


@dataclass(frozen=True)
class Algorithm:
    name: str
    rules: tuple[RewriteRule, ...]
    auxiliaries: tuple[str, ...]

    def arity(self) -> int:
        return len(self.rules[0].lhs) if self.rules else 0


def _rename_skolems(terms: list[Term], formulas: list[Formula]):
    sks = sorted({s for t in terms for s in skolems_of(t)}
                 | {s for f in formulas for s in skolems_of(f)},
                 key=lambda s: (s.name, s.index))
    used: set[str] = set()
    mapping: dict[Term, Term] = {}
    for s in sks:
        name = s.name
        n = 0
        while name in used:
            n += 1
            name = f"{s.name}{n}"
        used.add(name)
        mapping[s] = Var(name, s.sort)
    return Substitution(mapping)


def _absorb_equations(patterns: list[Term], witnesses: list[Term],
                      conditions: list[Formula]):
    """Conditions pinning a bare pattern constant to a constructor term are
    folded into the pattern itself."""
    changed = True
    while changed:
        changed = False
        for c in list(conditions):
            if isinstance(c, Atom) and c.pred == "eq" and isinstance(c.args[0], Skolem):
                sk, val = c.args
                if not skolems_of(val) or isinstance(val, App):
                    s = Substitution({sk: val})
                    for i in range(len(patterns)):
                        patterns[i] = substitute(patterns[i], s)
                    for i in range(len(witnesses)):
                        witnesses[i] = substitute(witnesses[i], s)
                    conditions.remove(c)
                    for i in range(len(conditions)):
                        conditions[i] = substitute(conditions[i], s)
                    changed = True
                    break
    return patterns, witnesses, conditions


def extract(solution: Solution, spec: FunctionSpec) -> list[Algorithm]:
    """One Algorithm per output function; rules share patterns and guards."""
    if not solution.leaves:
        raise OpenBranch(f"no closed branches for {spec.name}")
    per_output: list[list[RewriteRule]] = [[] for _ in spec.outputs]
    aux: set[str] = set()
    for leaf in solution.leaves:
        if len(leaf.witnesses) != len(spec.outputs):
            raise UnboundMetaInWitness(f"{spec.name}: branch closed without all outputs")
        patterns = list(leaf.patterns)
        witnesses = list(leaf.witnesses)
        conditions = [c for c in leaf.conditions]
        patterns, witnesses, conditions = _absorb_equations(patterns, witnesses, conditions)
        renaming = _rename_skolems(patterns + witnesses, conditions)
        patterns = [substitute(t, renaming) for t in patterns]
        witnesses = [substitute(t, renaming) for t in witnesses]
        conditions = [substitute(c, renaming) for c in conditions]
        lhs_vars = {v for t in patterns for v in vars_of(t)}
        guard = conj(conditions) if conditions else None
        if guard is not None and pp(guard) == "true":
            guard = None
        if guard is not None and not vars_of(guard) <= lhs_vars:
            raise SortError(f"{spec.name}: guard uses variables outside the pattern")
        for j, w in enumerate(witnesses):
            if not vars_of(w) <= lhs_vars:
                raise SortError(f"{spec.names[j]}: witness uses variables outside the pattern")
            for a in _apps(w):
                if a.sym not in BUILTIN_HEADS and a.sym != spec.names[j]:
                    aux.add(a.sym)
            per_output[j].append(RewriteRule(spec.names[j], tuple(patterns), guard, w))
    out = []
    for j, rules in enumerate(per_output):
        own_aux = tuple(sorted(a for a in aux if a not in spec.names))
        out.append(Algorithm(spec.names[j], tuple(rules), own_aux))
    return out


def extract_all(solution: Solution, spec: FunctionSpec) -> list[Algorithm]:
    """The solution's algorithms plus all cascaded auxiliaries, dependency first."""
    algos: list[Algorithm] = []

    def visit(rec: CascadeRecord):
        sub = Solution(rec.leaves, rec.cascades, rec.trace)
        for r in rec.cascades:
            visit(r)
        for a in extract(sub, rec.spec):
            if all(x.name != a.name for x in algos):
                algos.append(a)

    for rec in solution.cascades:
        visit(rec)
    algos.extend(extract(solution, spec))
    return algos


def _apps(t: Term):
    if isinstance(t, App):
        yield t
        for a in t.args:
            yield from _apps(a)


# ---------------------------------------------------------------------------
# Alpha equivalence (golden-test comparator)


def _canon_term(t: Term, renaming: dict[str, str]) -> str:
    if isinstance(t, Var):
        if t.name not in renaming:
            renaming[t.name] = f"v{len(renaming)}"
        return renaming[t.name]
    if isinstance(t, App):
        if not t.args:
            return t.sym
        return f"{t.sym}({','.join(_canon_term(a, renaming) for a in t.args)})"
    raise SortError(f"unexpected {pp(t)} in an extracted rule")


def _canon_guard_atom(f: Formula, renaming: dict[str, str], positive: bool = True):
    if isinstance(f, Not):
        return _canon_guard_atom(f.body, renaming, not positive)
    if isinstance(f, Atom) and f.pred in ("leq", "lt"):
        l, r = (_canon_term(a, renaming) for a in f.args)
        # lt(a, b) is the complement of leq(b, a); canonicalize to signed leq
        if f.pred == "leq":
            return (positive, "leq", l, r)
        return (not positive, "leq", r, l)
    if isinstance(f, Atom) and f.pred in ("eq", "neq"):
        l, r = sorted(_canon_term(a, renaming) for a in f.args)
        pred = "eq" if (f.pred == "eq") == positive else "neq"
        return (True, pred, l, r)
    if isinstance(f, Atom):
        return (positive, f.pred) + tuple(_canon_term(a, renaming) for a in f.args)
    raise SortError(f"cannot canonicalize guard {pp(f)}")


def _canon_rule(r: RewriteRule):
    renaming: dict[str, str] = {}
    lhs = tuple(_canon_term(t, renaming) for t in r.lhs)
    guard = frozenset(_canon_guard_atom(g, renaming) for g in conjuncts(r.guard)) \
        if r.guard is not None else frozenset()
    rhs = _canon_term(r.rhs, renaming)
    return (r.head, lhs, guard, rhs)


def alpha_equivalent(a: Algorithm, b: Algorithm) -> bool:
    """Rule-set equality up to variable renaming, rule order, and guard
    complementation (leq(x,y) vs not(lt(y,x)))."""
    if a.arity() != b.arity():
        return False
    return {_canon_rule(r) for r in a.rules} == {_canon_rule(r) for r in b.rules}


# ---------------------------------------------------------------------------
# Algorithm files: `Head[pat, ...] = rhs | guard`, auxiliaries in a comment.


def display(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Skolem):
        return f"sk:{t.name}{t.index}"
    if isinstance(t, App):
        if not t.args:
            return t.sym
        inner = ", ".join(display(a) for a in t.args)
        if t.sym in BUILTIN_HEADS:
            return f"{t.sym}({inner})"
        return f"{t.sym}[{inner}]"
    raise SortError(f"cannot display {t!r}")


def algorithm_text(alg: Algorithm) -> str:
    lines = []
    if alg.auxiliaries:
        lines.append(f"# uses: {', '.join(alg.auxiliaries)}")
    for r in alg.rules:
        g = f" | {pp(r.guard)}" if r.guard is not None else ""
        lines.append(f"{r.head}[{', '.join(display(t) for t in r.lhs)}] = {display(r.rhs)}{g}")
    return "\n".join(lines) + "\n"


def parse_algorithm(text: str, signatures: dict[str, tuple[tuple[Sort, ...], Sort]]) -> Algorithm:
    """Parse the bijective algorithm display format.

    signatures must cover every non-builtin head used in the file."""
    rules: list[RewriteRule] = []
    aux: tuple[str, ...] = ()
    name = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("# uses:"):
            aux = tuple(s.strip() for s in line[len("# uses:"):].split(",") if s.strip())
            continue
        if line.startswith("#"):
            continue
        head_part, _, rest = line.partition("=")
        rhs_text, _, guard_text = rest.partition("|")
        head, args_text = head_part.strip().rstrip("]").split("[", 1)
        head = head.strip()
        name = name or head
        lhs = _parse_display_args(args_text, signatures)
        rhs = _parse_display_term(rhs_text.strip(), signatures, None)
        guard = None
        if guard_text.strip():
            from .terms import parse_formula, SymbolTable
            table = SymbolTable()
            for s, sig in signatures.items():
                table = table.extend(s, *sig)
            guard = parse_formula(guard_text.strip(), table,
                                  {v.name: v.sort for t in lhs for v in vars_of(t)})
        rules.append(RewriteRule(head, tuple(lhs), guard, rhs))
    if name is None:
        raise SortError("empty algorithm file")
    return Algorithm(name, tuple(rules), aux)


def _parse_display_args(text: str, signatures) -> list[Term]:
    parts = _split_commas(text)
    return [_parse_display_term(p, signatures, None) for p in parts]


def _split_commas(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        parts.append(tail)
    return parts


def _parse_display_term(text: str, signatures, want: Sort | None) -> Term:
    text = text.strip()
    if "(" in text or "[" in text:
        opener = min((i for i in (text.find("("), text.find("[")) if i >= 0))
    else:
        opener = -1
    if opener == -1:
        if text == "nil":
            return NIL
        if text == "msempty":
            from .terms import MSEMPTY
            return MSEMPTY
        sort = want or (Sort.ELEM if text[0].islower() else Sort.LIST)
        return Var(text, sort)
    head = text[:opener]
    inner = text[opener + 1:-1]
    args_text = _split_commas(inner)
    from .terms import BUILTIN_SIGNATURES
    if head in BUILTIN_SIGNATURES:
        arg_sorts, result = BUILTIN_SIGNATURES[head]
    elif head in signatures:
        arg_sorts, result = signatures[head]
    else:
        raise SortError(f"unknown head {head!r} in algorithm file")
    args = [_parse_display_term(t, signatures, s) for t, s in zip(args_text, arg_sorts)]
    return App(head, tuple(args), result)
