"""Natural-style prover for synthesis conjectures.

A proof state carries ground facts, universal property rules, a conjunctive
goal over metavariables, and a stack of induction targets.  Moves transform
states; branching (cover sets, two-constants case splits) combines the
closed sub-branches into leaf forests from which rewrite rules are read off.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

from .terms import (
    App, Atom, Formula, Meta, Skolem, Sort, SortError, Substitution, Term, Var,
    TRUE, NIL, Gensym, constant_multiset, conj, conjuncts, cons, eq_atom,
    leq, lt, metas_of, ms, neq, pp, skolems_of, sorted_atom, substitute, term_key,
)
from .multiset import (
    EMPTY, ListWrap, MsPoly, MsVar, Singleton, compress, normalize,
    solve_candidates, strict_subset, subset, substitute_poly,
)
from .theory import (
    FunctionSpec, KnowledgeBase, KnownFunction, assign_names, canonical_shape,
    match_shape,
)


class LimitExceeded(Exception):
    pass


class NotApplicable(Exception):
    pass


class NotSmaller(Exception):
    """Induction candidate is not below the target in the Noetherian order."""


class TargetMissing(Exception):
    pass


class OpenBranch(Exception):
    pass


class UnboundMetaInWitness(Exception):
    pass


@dataclass(frozen=True)
class PolyEq:
    lhs: MsPoly
    rhs: MsPoly

    def key(self):
        return frozenset((self.lhs._key, self.rhs._key))

    def __repr__(self) -> str:
        return f"eq({self.lhs!r}, {self.rhs!r})"


GoalItem = PolyEq  # or Atom
Fact = PolyEq      # or Atom


@dataclass(frozen=True)
class PropertyRule:
    """Compiled universal assumption: conds => eq /\\ concl."""
    uvars: tuple[Var, ...]
    conds: tuple[Atom, ...]
    eq: PolyEq | None
    concl: tuple[Atom, ...]
    label: str
    expansion_only: bool = False  # axioms only expand app-wraps, never introduce them


@dataclass(frozen=True)
class TargetEntry:
    spec: FunctionSpec
    input_terms: tuple[Term, ...]
    main: int

    @property
    def main_term(self) -> Term:
        return self.input_terms[self.main]


@dataclass(frozen=True)
class TraceNode:
    kind: str
    detail: str
    children: tuple["TraceNode", ...] = ()


@dataclass(frozen=True)
class Leaf:
    patterns: tuple[Term, ...]        # per spec input, Skolems still in place
    witnesses: tuple[Term, ...]       # per spec output, fully resolved
    conditions: tuple[Formula, ...]   # explicit guards (two-constants etc.)
    steps: tuple[TraceNode, ...]


@dataclass(frozen=True)
class CascadeRecord:
    spec: FunctionSpec
    leaves: tuple[Leaf, ...]
    cascades: tuple["CascadeRecord", ...]
    trace: TraceNode


@dataclass(frozen=True)
class Solution:
    leaves: tuple[Leaf, ...]
    cascades: tuple[CascadeRecord, ...]
    trace: TraceNode


@dataclass(frozen=True)
class ProofResult:
    spec: FunctionSpec
    solutions: tuple[Solution, ...]
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return bool(self.solutions)


@dataclass(frozen=True)
class Limits:
    max_depth: int = 64
    max_cascade_depth: int = 3
    max_alternatives: int = 256
    max_nodes: int = 20000


class ProofContext:
    """Shared mutable pieces of one proof run."""

    def __init__(self, limits: Limits):
        self.limits = limits
        self.gensym = Gensym()
        self.aux_counter = [0]
        self.nodes = 0
        self.stamps: dict[tuple[str, int], int] = {}
        self.failed_shapes: dict[object, int] = {}

    def tick(self):
        self.nodes += 1
        if self.nodes > self.limits.max_nodes:
            raise LimitExceeded(f"search exceeded {self.limits.max_nodes} nodes")

    def skolem(self, base: str, sort: Sort) -> Skolem:
        sk = self.gensym.skolem(base, sort)
        self.stamps[(sk.name, sk.index)] = len(self.stamps)
        return sk

    def stamp(self, sk: Skolem) -> int:
        return self.stamps.get((sk.name, sk.index), -1)


@dataclass(frozen=True, eq=False)
class ProofState:
    kb: KnowledgeBase
    facts: tuple[Fact, ...]
    rules: tuple[PropertyRule, ...]
    goal: tuple[GoalItem, ...]
    bindings: Substitution
    conditions: tuple[Formula, ...]
    targets: tuple[TargetEntry, ...]
    out_metas: tuple[Meta, ...]
    cascades: tuple[CascadeRecord, ...]
    steps: tuple[TraceNode, ...]
    ctx: ProofContext = field(repr=False)
    in_progress: tuple = ()
    depth: int = 64
    cascade_depth: int = 3
    seen: frozenset = frozenset()

    def goal_sig(self):
        return frozenset(it.key() if isinstance(it, PolyEq) else pp(it) for it in self.goal)


def _fact_key(f) -> str:
    if isinstance(f, PolyEq):
        return "eq:" + pp(f.lhs.to_term()) + "=" + pp(f.rhs.to_term())
    return pp(f)


# ---------------------------------------------------------------------------
# Fact handling and the little ground provers


def _expand_atom(a: Atom) -> list[Atom] | None:
    """Definition/ordering expansion of one atom; None means drop (vacuous)."""
    if a.pred == "sorted":
        (t,) = a.args
        if isinstance(t, App) and t.sym == "nil":
            return None
        if isinstance(t, App) and t.sym == "cons":
            return [leq(t.args[0], t.args[1]), sorted_atom(t.args[1])]
        return [a]
    if a.pred in ("leq", "lt"):
        l, r = a.args
        if (isinstance(l, App) and l.sym == "nil") or (isinstance(r, App) and r.sym == "nil"):
            return None
        if isinstance(r, App) and r.sym == "cons":
            return [x for part in (Atom(a.pred, (l, r.args[0])), Atom(a.pred, (l, r.args[1])))
                    for x in (_expand_atom(part) or [])]
        if isinstance(l, App) and l.sym == "cons":
            return [x for part in (Atom(a.pred, (l.args[0], r)), Atom(a.pred, (l.args[1], r)))
                    for x in (_expand_atom(part) or [])]
        return [a]
    if a.pred == "true":
        return None
    return [a]


def add_facts(facts: tuple[Fact, ...], new: list) -> tuple[Fact, ...]:
    out = list(facts)
    keys = {_fact_key(f) for f in facts}
    for f in new:
        pieces: list = [f]
        if isinstance(f, Atom):
            expanded = _expand_atom(f)
            pieces = expanded if expanded is not None else []
        for p in pieces:
            k = _fact_key(p)
            if k not in keys:
                keys.add(k)
                out.append(p)
    return tuple(out)


def _ground(obj) -> bool:
    return not metas_of(obj)


class Provers:
    """Goal-directed ground provers over one state's facts."""

    def __init__(self, state: ProofState):
        self.state = state
        self.atom_facts: set[str] = set()
        self.ord_facts: list[Atom] = []
        self.eq_facts: list[PolyEq] = []
        for f in state.facts:
            if isinstance(f, PolyEq):
                self.eq_facts.append(f)
            else:
                self.atom_facts.add(pp(f))
                if f.pred in ("leq", "lt"):
                    self.ord_facts.append(f)
        self.middles = sorted(
            {t for a in self.ord_facts for t in a.args if t.sort is Sort.ELEM},
            key=term_key)
        self._memo: dict = {}

    def has_atom(self, a: Atom) -> bool:
        return pp(a) in self.atom_facts

    def wrap_expansions(self, t: Term) -> MsPoly | None:
        """A poly provably ms-equal to <<t>>, if some fact or axiom gives one."""
        one = MsPoly.of(ListWrap(t))
        for f in self.eq_facts:
            if f.lhs == one:
                return f.rhs
            if f.rhs == one:
                return f.lhs
        for r in self.state.rules:
            if r.eq is None or r.conds or not r.expansion_only:
                continue
            for src, dst in ((r.eq.lhs, r.eq.rhs), (r.eq.rhs, r.eq.lhs)):
                if len(src) != 1:
                    continue
                for sigma, _bag in poly_match(src, one):
                    return substitute_poly(dst, sigma)
        return None

    def expand_poly(self, p: MsPoly, fuel: int = 8) -> MsPoly:
        """Fixpoint expansion of wraps through known multiset equalities."""
        cur = p
        seen: set[Term] = set()
        while fuel > 0:
            fuel -= 1
            for a in cur.atoms():
                if isinstance(a, ListWrap) and a.term not in seen:
                    seen.add(a.term)
                    if isinstance(a.term, App) and a.term.sym == "cons":
                        cur = cur.remove(a).add(normalize(ms(a.term)))
                        break
                    hit = self.wrap_expansions(a.term)
                    if hit is not None:
                        n = cur.count(a)
                        cur = cur.remove(a, n)
                        for _ in range(n):
                            cur = cur.add(hit)
                        break
            else:
                return cur
        return cur

    def atom(self, a: Atom) -> bool:
        if a.pred == "true":
            return True
        if a.pred == "false":
            return False
        if self.has_atom(a):
            return True
        if not _ground(a):
            return False
        if a.pred in ("leq", "lt"):
            return self.ord(a.args[0], a.args[1], a.pred == "lt")
        if a.pred == "sorted":
            return self.sorted_(a.args[0])
        if a.pred == "neq":
            l, r = a.args
            if isinstance(l, App) and isinstance(r, App) and l.sym != r.sym and \
                    {l.sym, r.sym} <= {"nil", "cons"}:
                return True
            return False
        if a.pred == "eq":
            if a.args[0] == a.args[1]:
                return True
            if a.args[0].sort is Sort.MSET:
                return normalize(a.args[0]) == normalize(a.args[1])
            return False
        return False

    def ord(self, l: Term, r: Term, strict: bool, seen: frozenset = frozenset()) -> bool:
        key = (pp(l), pp(r), strict, seen)
        if key in self._memo:
            return self._memo[key]
        self._memo[key] = False  # cut cycles pessimistically
        res = self._ord(l, r, strict, seen)
        self._memo[key] = res
        return res

    def _ord(self, l: Term, r: Term, strict: bool, seen: frozenset) -> bool:
        if isinstance(l, App) and l.sym == "nil" or isinstance(r, App) and r.sym == "nil":
            return True
        if l == r and l.sort is Sort.ELEM and not strict:
            return True
        if self.has_atom(Atom("lt", (l, r))):
            return True
        if not strict and self.has_atom(Atom("leq", (l, r))):
            return True
        if isinstance(l, App) and l.sym == "cons":
            return self.ord(l.args[0], r, strict, seen) and self.ord(l.args[1], r, strict, seen)
        if isinstance(r, App) and r.sym == "cons":
            return self.ord(l, r.args[0], strict, seen) and self.ord(l, r.args[1], strict, seen)
        # replace a list operand by its known multiset expansion
        for t, side in ((l, "l"), (r, "r")):
            if t.sort is Sort.LIST and (side, pp(t)) not in seen:
                exp = self.wrap_expansions(t)
                if exp is not None:
                    seen2 = seen | {(side, pp(t))}
                    parts = [a.term for a in exp.atoms() if not isinstance(a, MsVar)]
                    if any(isinstance(a, MsVar) for a in exp.atoms()):
                        continue
                    if not parts:
                        return True  # provably empty list
                    if side == "l":
                        if all(self.ord(x, r, strict, seen2) for x in parts):
                            return True
                    else:
                        if all(self.ord(l, x, strict, seen2) for x in parts):
                            return True
        # composition through an element-valued middle
        if len(seen) < 6:
            for m in self.middles:
                if m == l or m == r:
                    continue
                key = ("m", pp(m), pp(l), pp(r))
                if key in seen:
                    continue
                seen2 = seen | {key}
                if strict:
                    if (self.ord(l, m, True, seen2) and self.ord(m, r, False, seen2)) or \
                       (self.ord(l, m, False, seen2) and self.ord(m, r, True, seen2)):
                        return True
                else:
                    if self.ord(l, m, False, seen2) and self.ord(m, r, False, seen2):
                        return True
        return False

    def sorted_(self, t: Term, fuel: int = 32) -> bool:
        if fuel <= 0:
            return False
        if isinstance(t, App) and t.sym == "nil":
            return True
        if isinstance(t, App) and t.sym == "cons":
            return self.ord(t.args[0], t.args[1], False) and self.sorted_(t.args[1], fuel - 1)
        return self.has_atom(sorted_atom(t))


# ---------------------------------------------------------------------------
# Poly pattern matching (for universal rules)


def poly_match(pattern: MsPoly, target: MsPoly,
               sigma: Substitution | None = None) -> list[tuple[Substitution, MsPoly]]:
    """All ways of matching pattern (with variables) into a sub-bag of target.

    Returns (substitution, matched sub-bag) pairs."""
    sigma = sigma if sigma is not None else Substitution()
    atoms = pattern.atoms()
    if not atoms:
        return [(sigma, EMPTY)]
    out: list[tuple[Substitution, MsPoly]] = []
    first = atoms[0]
    rest = pattern.remove(first, pattern.count(first))
    seen_keys = set()
    for cand in target.atoms():
        if type(cand) is not type(first):
            continue
        from .terms import match_pattern
        s2 = match_pattern(first.term, cand.term, sigma)
        if s2 is None:
            continue
        need = pattern.count(first)
        if target.count(cand) < need:
            continue
        taken = MsPoly({cand: need})
        for s3, bag in poly_match(rest, target.subtract(taken), s2):
            combined = bag.add(taken)
            key = (repr(s3), combined._key)
            if key not in seen_keys:
                seen_keys.add(key)
                out.append((s3, combined))
    return out


def compile_property(spec: FunctionSpec, table, label: str | None = None) -> PropertyRule:
    apps = spec.output_apps(table)
    s = Substitution({y: f for y, f in zip(spec.outputs, apps)})
    conds = tuple(c for c in conjuncts(spec.precondition) if isinstance(c, Atom) and c.pred != "true")
    eq: PolyEq | None = None
    concl: list[Atom] = []
    for c in conjuncts(substitute(spec.postcondition, s)):
        if isinstance(c, Atom) and c.pred == "eq" and c.args[0].sort is Sort.MSET:
            if eq is not None:
                raise SortError("property with two multiset equations")
            eq = PolyEq(normalize(c.args[0]), normalize(c.args[1]))
        elif isinstance(c, Atom):
            concl.append(c)
        else:
            raise SortError(f"non-atomic conclusion in property of {spec.name}")
    return PropertyRule(spec.inputs, conds, eq, tuple(concl), label or f"property:{spec.name}")


def compile_rules(kb: KnowledgeBase) -> tuple[PropertyRule, ...]:
    rules: list[PropertyRule] = []
    from .terms import Forall
    for ax in kb.axioms:
        uvars = []
        body = ax
        while isinstance(body, Forall):
            uvars.append(body.var)
            body = body.body
        if isinstance(body, Atom) and body.pred == "eq" and body.args and body.args[0].sort is Sort.MSET:
            eq = PolyEq(normalize(body.args[0]), normalize(body.args[1]))
            if eq.lhs == eq.rhs:
                continue  # absorbed by normalization already
            rules.append(PropertyRule(tuple(uvars), (), eq, (), "axiom", expansion_only=True))
    done = set()
    for name, kf in kb.known:
        if kf.spec.names in done:
            continue
        done.add(kf.spec.names)
        rules.append(compile_property(kf.spec, kb.table))
    return tuple(rules)


# ---------------------------------------------------------------------------
# State construction and simplification


def _convert_goal_formula(f: Formula) -> list:
    items: list = []
    for c in conjuncts(f):
        if isinstance(c, Atom) and c.pred == "eq" and c.args[0].sort is Sort.MSET:
            items.append(PolyEq(normalize(c.args[0]), normalize(c.args[1])))
        elif isinstance(c, Atom):
            items.append(c)
        else:
            raise SortError(f"goal must be a conjunction of atoms: {pp(c)}")
    return items


def simplify(state: ProofState) -> ProofState | None:
    """Expansion, trivial-truth removal, and ordering orientation; fixpoint."""
    goal = list(state.goal)
    changed = True
    guard = 0
    while changed and guard < 30:
        guard += 1
        changed = False
        provers = Provers(state)
        new_goal: list[GoalItem] = []
        for it in goal:
            if isinstance(it, PolyEq):
                if it.lhs == it.rhs:
                    changed = True
                    continue
                if not it.lhs.has_meta() and not it.rhs.has_meta() and _polyeq_fact(provers, it):
                    changed = True
                    continue
                new_goal.append(it)
            else:
                expanded = _expand_atom(it)
                if expanded is None:
                    changed = True
                    continue
                if expanded != [it]:
                    changed = True
                    new_goal.extend(expanded)
                    continue
                if _ground(it) and provers.atom(it):
                    changed = True
                    continue
                new_goal.append(it)
        goal = _dedup_items(new_goal)
        oriented = _orient_meta_orderings(goal)
        if oriented is not None:
            goal = _dedup_items(oriented)
            changed = True
    return replace(state, goal=tuple(goal))


def _polyeq_fact(provers: Provers, it: PolyEq) -> bool:
    for f in provers.eq_facts:
        if {f.lhs, f.rhs} == {it.lhs, it.rhs}:
            return True
    return False


def _dedup_items(items: list) -> list:
    out = []
    seen = set()
    for it in items:
        k = it.key() if isinstance(it, PolyEq) else pp(it)
        if k not in seen:
            seen.add(k)
            out.append(it)
    return out


def _orient_meta_orderings(goal: list) -> list | None:
    """Redirect orderings on a meta-side singleton through the goal equation.

    If {e} + rest = T with conjuncts e <= c for every atom c of rest, those
    conjuncts are jointly equivalent to e <= T; rewriting them against the
    meta-free side exposes constraints on known constants."""
    atom_items = [it for it in goal if isinstance(it, Atom)]
    for eq in goal:
        if not isinstance(eq, PolyEq):
            continue
        for side, other in ((eq.lhs, eq.rhs), (eq.rhs, eq.lhs)):
            if not side.has_meta() or other.has_meta():
                continue
            for s in side.singletons():
                e = s.term
                rest = side.remove(s)
                if not rest or not rest.has_meta():
                    continue
                required = [Atom("leq", (e, a.term)) for a in rest.atoms() if a.term != e]
                if not required:
                    continue
                have = {pp(a) for a in atom_items}
                if not all(pp(rq) in have for rq in required):
                    continue
                replacement = [Atom("leq", (e, a.term)) for a in other.atoms()]
                new_goal = [it for it in goal if not (isinstance(it, Atom) and pp(it) in {pp(r) for r in required})]
                new_goal.extend(replacement)
                return new_goal
    return None


def bind_metas(state: ProofState, binding: Substitution, step: TraceNode | None = None) -> ProofState | None:
    goal = []
    for it in state.goal:
        if isinstance(it, PolyEq):
            goal.append(PolyEq(substitute_poly(it.lhs, binding), substitute_poly(it.rhs, binding)))
        else:
            goal.append(substitute(it, binding))
    facts = []
    for f in state.facts:
        if isinstance(f, PolyEq):
            facts.append(PolyEq(substitute_poly(f.lhs, binding), substitute_poly(f.rhs, binding)))
        else:
            facts.append(substitute(f, binding))
    st = replace(state,
                 goal=tuple(goal),
                 facts=add_facts((), facts),
                 bindings=state.bindings.merge(binding),
                 steps=state.steps + ((step,) if step else ()))
    return simplify(st)


def with_goal(state: ProofState, goal: list, step: TraceNode, extra_facts: list | None = None) -> ProofState | None:
    st = replace(state, goal=tuple(goal),
                 facts=add_facts(state.facts, extra_facts or []),
                 steps=state.steps + (step,))
    return simplify(st)


# ---------------------------------------------------------------------------
# Noetherian guard


def _nonempty_ok(provers: Provers, sk: Skolem) -> bool:
    if sk.sort is Sort.ELEM:
        return True
    return provers.has_atom(neq(sk, NIL))


def noetherian_less(state: ProofState, candidate: Term, entry: TargetEntry,
                    provers: Provers | None = None) -> bool:
    """Strict Noetherian descent of candidate below the entry's main term.

    Checked syntactically on constant multisets (every dropped list constant
    must be provably nonempty) or semantically through known multiset
    equalities; the semantic route demands a strictly smaller bound."""
    provers = provers or Provers(state)
    target_term = entry.main_term
    cm_c = constant_multiset(candidate)
    cm_t = constant_multiset(target_term)
    if cm_c != cm_t and all(cm_c[k] <= cm_t[k] for k in cm_c):
        dropped = [k for k in cm_t if cm_t[k] > cm_c[k]]
        if all(_nonempty_ok(provers, k) for k in dropped):
            return True
    target_poly = provers.expand_poly(normalize(ms(target_term)))
    wrap = ListWrap(candidate)
    for f in provers.eq_facts:
        for s_side, t_side in ((f.lhs, f.rhs), (f.rhs, f.lhs)):
            if s_side.count(wrap) < 1:
                continue
            slack = s_side.remove(wrap)
            bound = provers.expand_poly(t_side)
            if not subset(bound, target_poly):
                continue
            strict = bool(slack.singletons()) or strict_subset(bound, target_poly)
            if strict:
                return True
    return False


# ---------------------------------------------------------------------------
# Individual moves.  Each yields (child_state, TraceNode); children are
# pre-simplified.  Rewriting moves are blocked from revisiting a goal seen
# on the current path.


def _meta_side(eq: PolyEq) -> tuple[MsPoly, MsPoly] | None:
    """(meta side, ground side) when exactly one side carries metas."""
    lm, rm = eq.lhs.has_meta(), eq.rhs.has_meta()
    if lm and not rm:
        return eq.lhs, eq.rhs
    if rm and not lm:
        return eq.rhs, eq.lhs
    return None


def _singleton_order_key(provers: Provers):
    def key(seq: list[Term]):
        bad = 0
        for a, b in zip(seq, seq[1:]):
            if not provers.ord(a, b, False):
                bad += 1
        return (bad, [term_key(t) for t in seq])
    return key


def move_solve(state: ProofState, provers: Provers):
    """IR4 / ST6: bind metavariables from a solvable multiset equation."""
    for idx, it in enumerate(state.goal):
        if not isinstance(it, PolyEq):
            continue
        sides = _meta_side(it)
        if sides is None:
            continue
        mside, gside = sides
        rest = [g for j, g in enumerate(state.goal) if j != idx]
        bindables = [a for a in mside.atoms() if isinstance(a.term, Meta)]
        if len(mside) == 1 and bindables:
            for b in solve_candidates(mside, gside, _singleton_order_key(provers)):
                child = bind_metas(replace(state, goal=tuple(rest)), b,
                                   TraceNode("IR4", f"solve {b!r}"))
                if child is not None:
                    yield child
            continue
        if len(bindables) == len(mside.atoms()) and len(mside) == len(bindables) and len(bindables) >= 2:
            yield from _split_goal_equation(state, provers, idx, mside, gside)


def _split_goal_equation(state: ProofState, provers: Provers, idx: int, mside: MsPoly, gside: MsPoly):
    """ST6: one equation per metavariable, constituents routed by the
    ordering conjuncts that mention the respective metavariable."""
    elem_metas = [a.term for a in mside.atoms() if isinstance(a, Singleton)]
    list_metas = [a.term for a in mside.atoms() if isinstance(a, ListWrap)]
    constraints: dict[Meta, list[Atom]] = {m: [] for m in elem_metas + list_metas}
    for it in state.goal:
        if isinstance(it, Atom) and it.pred in ("leq", "lt"):
            ms_args = [t for t in it.args if isinstance(t, Meta) and t in constraints]
            if len(ms_args) == 1 and _ground(it.args[0] if it.args[1] in ms_args else it.args[1]):
                constraints[ms_args[0]].append(it)

    def passes(m: Meta, content: Term) -> bool:
        for c in constraints[m]:
            inst = substitute(c, Substitution({m: content}))
            if not provers.atom(inst):
                return False
        return True

    satoms = gside.singletons()
    watoms = gside.wraps()
    elem_assignments: list[list[tuple[Meta, Singleton]]] = [[]]
    for m in elem_metas:
        nxt = []
        for assign in elem_assignments:
            used = [a for _, a in assign]
            for sa in satoms:
                if used.count(sa) < gside.count(sa) - sum(1 for u in used if u == sa) + 0 and sa not in used:
                    if passes(m, sa.term):
                        nxt.append(assign + [(m, sa)])
        elem_assignments = nxt
    for assign in elem_assignments:
        taken = EMPTY
        for _, sa in assign:
            taken = taken.add(MsPoly.of(sa))
        remainder = gside.subtract(taken)
        group_opts: list[list[tuple[Meta, MsPoly]]] = [[]]
        rem_atoms = list(remainder)
        if len(list_metas) == 1:
            groups = [[(list_metas[0], remainder)]]
        elif len(list_metas) == 2:
            groups = []
            for mask in itertools.product((0, 1), repeat=len(rem_atoms)):
                g0 = MsPoly({a: 1 for a in []})
                parts = [EMPTY, EMPTY]
                ok = True
                for bit, a in zip(mask, rem_atoms):
                    content = a.term
                    if not passes(list_metas[bit], content):
                        ok = False
                        break
                    parts[bit] = parts[bit].add(MsPoly.of(a))
                if ok:
                    groups.append([(list_metas[0], parts[0]), (list_metas[1], parts[1])])
        elif not list_metas:
            groups = [[]] if not remainder else []
        else:
            groups = []
        for group in groups:
            binding: dict = {m: sa.term for m, sa in assign}
            ok = True
            for m, part in group:
                cands = solve_candidates(MsPoly.of(ListWrap(m)), part, _singleton_order_key(provers))
                if not cands:
                    ok = False
                    break
                binding[m] = cands[0].get(m)
            if not ok:
                continue
            rest = [g for j, g in enumerate(state.goal) if j != idx]
            child = bind_metas(replace(state, goal=tuple(rest)), Substitution(binding),
                               TraceNode("ST6", f"split equation, bind {Substitution(binding)!r}"))
            if child is not None:
                yield child


def _rule_sigma_instance(provers: Provers, rule: PropertyRule, sigma: Substitution) -> tuple[list, bool]:
    """Instance facts of a rule under sigma; ok=False when conds unprovable."""
    for c in rule.conds:
        inst = substitute(c, sigma)
        if not _ground(inst) or not provers.atom(inst):
            return [], False
    facts: list = []
    if rule.eq is not None:
        facts.append(PolyEq(substitute_poly(rule.eq.lhs, sigma), substitute_poly(rule.eq.rhs, sigma)))
    facts.extend(substitute(c, sigma) for c in rule.concl)
    return facts, True


def _rewrite_children(state: ProofState, idx: int, side_name: str, new_side: MsPoly,
                      step: TraceNode, extra_facts: list):
    it = state.goal[idx]
    assert isinstance(it, PolyEq)
    new_eq = PolyEq(new_side, it.rhs) if side_name == "l" else PolyEq(it.lhs, new_side)
    goal = list(state.goal)
    goal[idx] = new_eq
    child = with_goal(state, goal, step, extra_facts)
    if child is None:
        return None
    if child.goal_sig() in state.seen or child.goal_sig() == state.goal_sig():
        return None
    return replace(child, seen=state.seen | {state.goal_sig()})


def move_by_equality(state: ProofState, provers: Provers):
    """Rewrite goal equations by ground multiset equalities and by
    (conditional) universal properties, matching sub-bags."""
    for idx, it in enumerate(state.goal):
        if not isinstance(it, PolyEq):
            continue
        for side_name, side in (("l", it.lhs), ("r", it.rhs)):
            options = []
            for f in provers.eq_facts:
                for src, dst in ((f.lhs, f.rhs), (f.rhs, f.lhs)):
                    if src and subset(src, side):
                        enrich = _app_wrap_count(dst) - _app_wrap_count(src)
                        options.append((-enrich, 0, src, dst, [], f"fact {f!r}"))
            for rule in state.rules:
                if rule.eq is None:
                    continue
                dirs = ((rule.eq.lhs, rule.eq.rhs), (rule.eq.rhs, rule.eq.lhs))
                for src_pat, dst_pat in dirs:
                    if not src_pat:
                        continue
                    introduces = _app_wrap_count(dst_pat) > _app_wrap_count(src_pat)
                    if rule.expansion_only and introduces:
                        continue
                    for sigma, bag in poly_match(src_pat, side):
                        if set(rule.uvars) - sigma.keys():
                            continue
                        inst_facts, ok = _rule_sigma_instance(provers, rule, sigma)
                        if not ok:
                            continue
                        dst = substitute_poly(dst_pat, sigma)
                        enrich = _app_wrap_count(dst) - _app_wrap_count(bag)
                        options.append((-enrich, 1, bag, dst, inst_facts, f"{rule.label} {sigma!r}"))
            options.sort(key=lambda o: (o[0], o[1], repr(o[2]._key)))
            for _, _, src, dst, extra, label in options:
                new_side = side.subtract(src).add(dst)
                child = _rewrite_children(state, idx, side_name, new_side,
                                          TraceNode("IR2/IR7", f"rewrite by equality: {label}"), extra)
                if child is not None:
                    yield child


def _app_wrap_count(p: MsPoly) -> int:
    n = 0
    for a in p.atoms():
        if isinstance(a, ListWrap) and isinstance(a.term, App) and a.term.sym not in ("nil", "cons"):
            n += p.count(a)
    return n


def move_pair_induction(state: ProofState, provers: Provers):
    """ST4 resolutions of a pair by induction on a target function."""
    for idx, it in enumerate(state.goal):
        if not isinstance(it, PolyEq):
            continue
        sides = _meta_side(it)
        if sides is None:
            continue
        mside, gside = sides
        if not (len(mside) == 1 and isinstance(mside.atoms()[0], ListWrap)
                and isinstance(mside.atoms()[0].term, Meta)):
            continue
        if len(gside) < 2:
            continue
        atoms = gside.atoms()
        for a, b in itertools.combinations(range(len(atoms)), 2):
            pair = (atoms[a], atoms[b])
            for entry in state.targets:
                if len(entry.spec.outputs) != 1 or len(entry.spec.inputs) < 2:
                    continue
                yield from _induct_pair(state, provers, idx, it, gside, pair, entry)


def _induct_pair(state: ProofState, provers: Provers, idx: int, it: PolyEq,
                 gside: MsPoly, pair, entry: TargetEntry):
    spec = entry.spec
    in_sorts = [v.sort for v in spec.inputs]
    contents = []
    for atom in pair:
        if isinstance(atom, Singleton):
            contents.append((Sort.ELEM, atom))
        elif isinstance(atom, ListWrap):
            contents.append((Sort.LIST, atom))
        else:
            return
    if any(metas_of(a.term) for _, a in contents):
        return
    for perm in itertools.permutations(contents):
        if [s for s, _ in perm] != in_sorts:
            continue
        args = tuple(a.term for _, a in perm)
        main_arg = args[entry.main]
        fixed_ok = all(args[i] == entry.input_terms[i] or i == entry.main
                       for i in range(len(args))) if _entry_is_nested(state, entry) else True
        if _entry_is_nested(state, entry):
            if not (fixed_ok and noetherian_less(state, main_arg, entry, provers)):
                continue
        else:
            if not noetherian_less(state, main_arg, entry, provers):
                continue
        sigma = Substitution({v: t for v, t in zip(spec.inputs, args)})
        rule = compile_property(spec, state.kb.table.extend(
            spec.names[0], tuple(in_sorts), spec.outputs[0].sort), f"induction:{spec.name}")
        inst_facts, ok = _rule_sigma_instance(provers, rule, sigma)
        if not ok:
            continue
        fapp = spec.output_apps(state.kb.table.extend(spec.names[0], tuple(in_sorts),
                                                      spec.outputs[0].sort), args)[0]
        new_side = gside
        for _, a in perm:
            new_side = new_side.remove(a)
        new_side = new_side.add(MsPoly.of(ListWrap(fapp)))
        side_name = "l" if it.lhs is gside else "r"
        child = _rewrite_children(state, idx, side_name, new_side,
                                  TraceNode("ST2/ST4", f"induction: pair -> {pp(fapp)}"), inst_facts)
        if child is not None:
            yield child


def _entry_is_nested(state: ProofState, entry: TargetEntry) -> bool:
    return state.targets and entry is not state.targets[0]


def move_compress(state: ProofState, provers: Provers):
    """IR6: compress {e} + <<U>> when e <= U is provable."""
    for idx, it in enumerate(state.goal):
        if not isinstance(it, PolyEq):
            continue
        for side_name, side in (("l", it.lhs), ("r", it.rhs)):
            if side.has_meta():
                continue
            options = []
            for s in side.singletons():
                for w in side.wraps():
                    if provers.ord(s.term, w.term, False):
                        maximal = all(provers.ord(o.term, s.term, False)
                                      for o in side.singletons() if o != s)
                        options.append((0 if maximal else 1, s, w))
            options.sort(key=lambda o: (o[0], term_key(o[1].term), term_key(o[2].term)))
            for _, s, w in options:
                new_side = compress(side, s, w)
                child = _rewrite_children(state, idx, side_name, new_side,
                                          TraceNode("IR6", f"compress {pp(s.term)} onto {pp(w.term)}"), [])
                if child is not None:
                    yield child


def move_metaintro(state: ProofState, provers: Provers):
    """IR2 principle: replace a bare list metavariable M constrained by
    sorted(M) with TargetF(M'), M' fresh; exists-introduction backwards.

    Productive only when M sits inside a larger metavariable-side bag, so
    that the subsequent induction on M' has nonempty slack."""
    if not state.targets:
        return
    entry = state.targets[0]
    spec = entry.spec
    if len(spec.inputs) != 1 or len(spec.outputs) != 1 or spec.inputs[0].sort is not Sort.LIST:
        return
    if not any(isinstance(c, Atom) and c.pred == "sorted" for c in conjuncts(spec.postcondition)):
        return
    embedded: set[Meta] = set()
    for it in state.goal:
        if isinstance(it, PolyEq):
            for side in (it.lhs, it.rhs):
                if len(side) >= 2:
                    for w in side.wraps():
                        if isinstance(w.term, Meta):
                            embedded.add(w.term)
    for it in state.goal:
        if isinstance(it, Atom) and it.pred == "sorted" and isinstance(it.args[0], Meta) \
                and it.args[0] in embedded:
            m = it.args[0]
            fresh = state.ctx.gensym.meta("W", Sort.LIST)
            table = state.kb.table.extend(spec.names[0], (Sort.LIST,), Sort.LIST)
            fapp = spec.output_apps(table, (fresh,))[0]
            child = bind_metas(state, Substitution({m: fapp}),
                               TraceNode("IR2", f"introduce {pp(fapp)} for {pp(m)}"))
            if child is not None:
                yield child
            return


def move_induction(state: ProofState, provers: Provers):
    """ST2 variants: induct on cover constants (and metavariables) of the
    goal, adding the target-function property instances and rewriting."""
    if not state.targets:
        return
    entry = state.targets[0]
    spec = entry.spec
    blocked_heads = {n for n, kf in state.kb.known
                     if any(isinstance(c, Atom) and c.pred == "sorted" for c in conjuncts(kf.spec.postcondition))}
    blocked_heads |= set(spec.names) | {"Conc"}

    # (C) metavariable case: <<F(M)>> + nonempty slack against the target bag
    yield from _induct_meta(state, provers, entry)

    candidates: list[Term] = []
    for it in state.goal:
        if not isinstance(it, PolyEq):
            continue
        for side in (it.lhs, it.rhs):
            for w in side.wraps():
                t = w.term
                if metas_of(t):
                    continue
                if isinstance(t, App) and t.sym in blocked_heads:
                    continue
                if noetherian_less(state, t, entry, provers) and t not in candidates:
                    candidates.append(t)
    if not candidates:
        return
    if len(spec.inputs) == 1:
        table = state.kb.table
        for n, y in zip(spec.names, spec.outputs):
            table = table.extend(n, tuple(v.sort for v in spec.inputs), y.sort)
        rule = compile_property(spec, table, f"induction:{spec.name}")
        all_facts: list = []
        ok_all = True
        for c in candidates:
            sigma = Substitution({spec.inputs[0]: c})
            fs, ok = _rule_sigma_instance(provers, rule, sigma)
            if not ok:
                ok_all = False
                break
            all_facts.extend(fs)
        if ok_all and len(spec.outputs) == 1:
            goal = []
            mapping = {}
            for c in candidates:
                fapp = spec.output_apps(table, (c,))[0]
                mapping[ListWrap(c)] = ListWrap(fapp)
            for it in state.goal:
                if isinstance(it, PolyEq):
                    goal.append(PolyEq(_swap_atoms(it.lhs, mapping), _swap_atoms(it.rhs, mapping)))
                else:
                    goal.append(it)
            child = with_goal(state, goal,
                              TraceNode("ST2", "induction on " + ", ".join(pp(c) for c in candidates)),
                              all_facts)
            if child is not None and child.goal_sig() not in state.seen:
                yield replace(child, seen=state.seen | {state.goal_sig()})
        elif ok_all:
            # multi-output target: add the instance facts, let rewriting use them
            child = with_goal(state, list(state.goal),
                              TraceNode("ST2", "induction (facts) on " + ", ".join(pp(c) for c in candidates)),
                              all_facts)
            if child is not None and len(child.facts) > len(state.facts):
                yield child
    else:
        # multi-input target: instantiate the non-main slots with ground terms
        elems = sorted({s for it in state.goal for s in skolems_of(_item_terms(it)) if s.sort is Sort.ELEM}
                       | {s for f in state.facts for s in skolems_of(_item_terms(f)) if s.sort is Sort.ELEM},
                       key=state.ctx.stamp)
        lists = [w.term for it in state.goal if isinstance(it, PolyEq)
                 for side in (it.lhs, it.rhs) for w in side.wraps() if not metas_of(w.term)]
        for c in candidates:
            slot_opts: list[list[Term]] = []
            for i, v in enumerate(spec.inputs):
                if i == entry.main:
                    slot_opts.append([c])
                elif v.sort is Sort.ELEM:
                    slot_opts.append(list(elems))
                else:
                    slot_opts.append([t for t in lists if t != c])
            table = state.kb.table
            for n, y in zip(spec.names, spec.outputs):
                table = table.extend(n, tuple(v.sort for v in spec.inputs), y.sort)
            rule = compile_property(spec, table, f"induction:{spec.name}")
            for combo in itertools.product(*slot_opts):
                sigma = Substitution({v: t for v, t in zip(spec.inputs, combo)})
                fs, ok = _rule_sigma_instance(provers, rule, sigma)
                if not ok:
                    continue
                child = with_goal(state, list(state.goal),
                                  TraceNode("ST2", "induction instance " +
                                            ", ".join(pp(t) for t in combo)),
                                  fs)
                if child is not None and len(child.facts) > len(state.facts):
                    yield child


def _item_terms(it):
    if isinstance(it, PolyEq):
        return it.lhs.to_term()
    return it


def _swap_atoms(p: MsPoly, mapping: dict) -> MsPoly:
    out = EMPTY
    for a in p:
        out = out.add(MsPoly.of(mapping.get(a, a)))
    return out


def _induct_meta(state: ProofState, provers: Provers, entry: TargetEntry):
    spec = entry.spec
    if len(spec.inputs) != 1 or len(spec.outputs) != 1:
        return
    fname = spec.names[0]
    table = state.kb.table.extend(fname, (spec.inputs[0].sort,), spec.outputs[0].sort)
    target_poly = provers.expand_poly(normalize(ms(entry.main_term)))
    for idx, it in enumerate(state.goal):
        if not isinstance(it, PolyEq):
            continue
        for side, other in ((it.lhs, it.rhs), (it.rhs, it.lhs)):
            if other.has_meta():
                continue
            for w in side.wraps():
                t = w.term
                if not (isinstance(t, App) and t.sym == fname and len(t.args) == 1
                        and isinstance(t.args[0], Meta)):
                    continue
                m = t.args[0]
                slack = side.remove(w)
                bound = provers.expand_poly(other)
                if not subset(bound, target_poly):
                    continue
                if not (slack.singletons() or strict_subset(bound, target_poly)):
                    continue
                # P[m] with the target function inserted for the existential
                rule = compile_property(spec, table, f"induction:{fname}")
                sigma = Substitution({spec.inputs[0]: m})
                inst_facts = []
                if rule.eq is not None:
                    inst_facts.append(PolyEq(substitute_poly(rule.eq.lhs, sigma),
                                             substitute_poly(rule.eq.rhs, sigma)))
                inst_facts.extend(substitute(c, sigma) for c in rule.concl)
                # discharge sorted(F(m)) and expose the bare metavariable
                fapp = substitute(t, Substitution())
                goal = []
                for j, g in enumerate(state.goal):
                    if isinstance(g, Atom) and g == sorted_atom(fapp):
                        continue
                    if isinstance(g, PolyEq):
                        mapping = {ListWrap(fapp): ListWrap(m)}
                        goal.append(PolyEq(_swap_atoms(g.lhs, mapping), _swap_atoms(g.rhs, mapping)))
                    else:
                        goal.append(g)
                child = with_goal(state, goal,
                                  TraceNode("ST2", f"induction on metavariable {pp(m)}"),
                                  inst_facts)
                if child is not None and child.goal_sig() not in state.seen:
                    yield replace(child, seen=state.seen | {state.goal_sig()})


# ---------------------------------------------------------------------------
# Cascading (ST3 / ST4-pair / ST5): build a conjecture, prove it recursively,
# register the synthesized functions, resume.


_ELEM_POOL = ["a", "b", "c", "d", "e"]
_LIST_POOL = ["X", "Y", "Z", "U", "V"]
_OUT_ELEM_POOL = ["y", "z", "x"]
_OUT_LIST_POOL = ["V", "W", "U"]


def _fact_forms(provers: Provers, inputs: list[Term]) -> list[Atom]:
    """Provable facts worth keeping as the cascaded input condition."""
    out: list[Atom] = []
    for t in inputs:
        if t.sort is Sort.LIST:
            if provers.sorted_(t):
                out.append(sorted_atom(t))
            if provers.has_atom(neq(t, NIL)):
                out.append(neq(t, NIL))
    for t, u in itertools.permutations(inputs, 2):
        if provers.ord(t, u, True):
            out.append(lt(t, u))
        elif provers.ord(t, u, False):
            out.append(leq(t, u))
    return out


def _generalize(state: ProofState, provers: Provers, goal_items: list) -> tuple[FunctionSpec, Substitution, Substitution] | None:
    """Build a cascade conjecture from goal items.

    Returns (spec, generalization var->term, meta->output var)."""
    ground_terms: list[Term] = []
    metas: list[Meta] = []

    def note_term(t: Term):
        if isinstance(t, Meta):
            if t not in metas:
                metas.append(t)
        elif _ground(t) and t not in ground_terms:
            ground_terms.append(t)

    for it in goal_items:
        if isinstance(it, PolyEq):
            for side in (it.lhs, it.rhs):
                for a in side.atoms():
                    if isinstance(a, MsVar):
                        return None
                    note_term(a.term)
        else:
            for t in it.args:
                note_term(t)
    if not metas:
        return None
    elems = [t for t in ground_terms if t.sort is Sort.ELEM]
    lists = [t for t in ground_terms if t.sort is Sort.LIST]
    facts = _fact_forms(provers, elems + lists)
    order = {pp(t): i for i, t in enumerate(lists)}
    for f in facts:
        if f.pred == "leq" and f.args[0].sort is Sort.LIST and f.args[1].sort is Sort.LIST:
            a, b = pp(f.args[0]), pp(f.args[1])
            if order.get(a, 0) > order.get(b, 0):
                order[a], order[b] = order[b], order[a]
    lists.sort(key=lambda t: order[pp(t)])
    inputs = elems + lists
    if len(elems) > len(_ELEM_POOL) or len(lists) > len(_LIST_POOL):
        return None
    gen_map: dict[Term, Var] = {}
    for t, n in zip(elems, _ELEM_POOL):
        gen_map[t] = Var(n, Sort.ELEM)
    for t, n in zip(lists, _LIST_POOL):
        gen_map[t] = Var(n, Sort.LIST)
    out_elems = [m for m in metas if m.sort is Sort.ELEM]
    out_lists = [m for m in metas if m.sort is Sort.LIST]
    out_map: dict[Meta, Var] = {}
    for m, n in zip(out_elems, _OUT_ELEM_POOL):
        out_map[m] = Var(n, Sort.ELEM)
    for m, n in zip(out_lists, _OUT_LIST_POOL):
        out_map[m] = Var(n, Sort.LIST)

    def gen_term(t: Term) -> Term:
        if t in gen_map:
            return gen_map[t]
        if isinstance(t, Meta):
            return out_map[t]
        if isinstance(t, App) and t.args:
            return App(t.sym, tuple(gen_term(a) for a in t.args), t.sort)
        return t

    post_parts: list[Formula] = []
    for it in goal_items:
        if isinstance(it, PolyEq):
            post_parts.append(eq_atom(_gen_poly(it.lhs, gen_term), _gen_poly(it.rhs, gen_term)))
        else:
            post_parts.append(Atom(it.pred, tuple(gen_term(t) for t in it.args)))
    pre_parts: list[Formula] = [Atom(f.pred, tuple(gen_term(t) for t in f.args)) for f in facts]
    in_vars = tuple(gen_map[t] for t in inputs)
    out_vars = tuple(out_map[m] for m in out_elems + out_lists)
    spec = FunctionSpec(tuple(f"f{i}" for i in range(len(out_vars))), in_vars, out_vars,
                        conj(pre_parts), conj(post_parts))
    gen_inst = Substitution({v: t for t, v in gen_map.items()})
    return spec, gen_inst, Substitution({m: out_map[m] for m in metas})


def _gen_poly(p: MsPoly, gen_term) -> Term:
    parts = []
    for a in p:
        if isinstance(a, Singleton):
            parts.append(App("mse", (gen_term(a.term),), Sort.MSET))
        elif isinstance(a, ListWrap):
            parts.append(App("ms", (gen_term(a.term),), Sort.MSET))
        else:
            parts.append(gen_term(a.term))
    from .terms import msunion, MSEMPTY
    return msunion(*parts) if parts else MSEMPTY


def _cascade_prove(state: ProofState, spec: FunctionSpec):
    """Name, reuse-or-prove, and register a cascaded conjecture.

    Returns (kb', permuted spec, cascade record or None) or None on failure."""
    if state.cascade_depth <= 0:
        return None
    named = None
    for _, kf in state.kb.known:
        hit = match_shape(spec, kf.spec)
        if hit is not None:
            return state.kb, hit, None  # reuse without a new proof
    known_names = {n for n, _ in state.kb.known} | {"Sort", "Merge"}
    named = assign_names(spec, known_names, state.ctx.aux_counter)
    shape = canonical_shape(named)
    if shape in state.in_progress:
        return None
    if state.ctx.failed_shapes.get(shape, -1) >= state.cascade_depth - 1:
        return None
    result = prove_spec(named, state.kb, "definition", "skolem", state.ctx,
                        in_progress=state.in_progress + (shape,),
                        cascade_depth=state.cascade_depth - 1)
    if not result.ok:
        prior = state.ctx.failed_shapes.get(shape, -1)
        state.ctx.failed_shapes[shape] = max(prior, state.cascade_depth - 1)
        return None
    sol = result.solutions[0]
    kb2 = state.kb.register_synthesized(named, None)
    record = CascadeRecord(named, sol.leaves, sol.cascades, sol.trace)
    return kb2, named, record


def _resume_with_function(state: ProofState, provers: Provers, spec: FunctionSpec,
                          kb2: KnowledgeBase, record, gen_inst: Substitution,
                          meta_map: Substitution, step_label: str):
    """After a cascade: bind output metas to the new function applications."""
    table = kb2.table
    args = tuple(substitute(v, gen_inst) for v in spec.inputs)
    apps = spec.output_apps(table, args)
    binding = {}
    for m, ov in meta_map.items():
        out_idx = spec.outputs.index(substitute(ov, Substitution())) if ov in spec.outputs else None
        if out_idx is None:
            continue
        binding[m] = apps[out_idx]
    rule = compile_property(spec, table, f"property:{spec.name}")
    sigma = Substitution({v: a for v, a in zip(spec.inputs, args)})
    inst_facts = []
    if rule.eq is not None:
        inst_facts.append(PolyEq(substitute_poly(rule.eq.lhs, sigma), substitute_poly(rule.eq.rhs, sigma)))
    inst_facts.extend(substitute(c, sigma) for c in rule.concl)
    st = replace(state, kb=kb2, rules=compile_rules(kb2),
                 facts=add_facts(state.facts, inst_facts),
                 cascades=state.cascades + ((record,) if record else ()),
                 steps=state.steps + (TraceNode("ST3", step_label),))
    return bind_metas(st, Substitution(binding),
                      TraceNode("ST3", "resume with " + ", ".join(spec.names)))


def move_pair_cascade(state: ProofState, provers: Provers):
    """ST4: cascade a conjecture for a pair of multiset operands."""
    for idx, it in enumerate(state.goal):
        if not isinstance(it, PolyEq):
            continue
        sides = _meta_side(it)
        if sides is None:
            continue
        mside, gside = sides
        if not (len(mside) == 1 and isinstance(mside.atoms()[0], ListWrap)
                and isinstance(mside.atoms()[0].term, Meta)):
            continue
        if len(gside) < 2:
            continue
        m = mside.atoms()[0].term
        wants_sorted = any(isinstance(g, Atom) and g == sorted_atom(m) for g in state.goal)
        atoms = gside.atoms()
        for a, b in itertools.combinations(range(len(atoms)), 2):
            pair = (atoms[a], atoms[b])
            if any(isinstance(x, MsVar) or metas_of(x.term) for x in pair):
                continue
            if not any(isinstance(x, ListWrap) for x in pair):
                continue
            fresh_out = state.ctx.gensym.meta("V", Sort.LIST)
            pair_poly = MsPoly.of(pair[0]).add(MsPoly.of(pair[1]))
            items: list = [PolyEq(MsPoly.of(ListWrap(fresh_out)), pair_poly)]
            if wants_sorted:
                items.append(sorted_atom(fresh_out))
            built = _generalize(state, provers, items)
            if built is None:
                continue
            spec, gen_inst, meta_map = built
            res = _cascade_prove(state, spec)
            if res is None:
                continue
            kb2, named, record = res
            perm_gen = _repermute_instance(spec, named, gen_inst)
            if perm_gen is None:
                continue
            args = tuple(substitute(v, perm_gen) for v in named.inputs)
            table = kb2.table
            fapp = named.output_apps(table, args)[0]
            rule = compile_property(named, table)
            sigma = Substitution({v: t for v, t in zip(named.inputs, args)})
            inst_facts, ok = _rule_sigma_instance(provers, rule, sigma)
            if not ok:
                continue
            new_side = gside.remove(pair[0]).remove(pair[1]).add(MsPoly.of(ListWrap(fapp)))
            side_name = "l" if it.lhs is gside else "r"
            st = replace(state, kb=kb2, rules=compile_rules(kb2),
                         cascades=state.cascades + ((record,) if record else ()))
            child = _rewrite_children(st, idx, side_name, new_side,
                                      TraceNode("ST4", f"pair resolved by {named.name}"), inst_facts)
            if child is not None:
                yield child


def _repermute_instance(orig: FunctionSpec, named: FunctionSpec, gen_inst: Substitution) -> Substitution | None:
    """gen_inst maps orig input vars to terms; reuse it for the named spec,
    whose inputs are a permutation (possibly renamed) of orig's."""
    mapping = {}
    used = set()
    for v in named.inputs:
        img = gen_inst.get(v)
        if img is None:
            for ov in orig.inputs:
                if ov.sort is v.sort and ov.name == v.name:
                    img = gen_inst.get(ov)
                    break
        if img is None:
            for ov in orig.inputs:
                if ov.sort is v.sort and pp(ov) not in used:
                    img = gen_inst.get(ov)
                    break
        if img is None:
            return None
        used.add(pp(v))
        mapping[v] = img
    return Substitution(mapping)


def move_split(state: ProofState, provers: Provers):
    """ST5: split an incomparable {a} + <<X>> into SmEq/Bigger parts."""
    for idx, it in enumerate(state.goal):
        if not isinstance(it, PolyEq):
            continue
        sides = _meta_side(it)
        if sides is None:
            continue
        mside, gside = sides
        if not (len(mside) == 1 and isinstance(mside.atoms()[0], ListWrap)
                and isinstance(mside.atoms()[0].term, Meta)):
            continue
        m = mside.atoms()[0].term
        if not any(isinstance(g, Atom) and g == sorted_atom(m) for g in state.goal):
            continue
        if len(gside) != 2:
            continue
        singles, wraps = gside.singletons(), gside.wraps()
        if len(singles) != 1 or len(wraps) != 1:
            continue
        e, L = singles[0].term, wraps[0].term
        if metas_of(e) or metas_of(L):
            continue
        if isinstance(L, App) and L.sym not in ("nil", "cons"):
            continue
        if provers.ord(e, L, False) or provers.ord(L, e, False):
            continue
        a = Var("a", Sort.ELEM)
        X = Var("X", Sort.LIST)
        V1 = Var("V", Sort.LIST)
        V2 = Var("W", Sort.LIST)
        from .terms import msunion
        spec = FunctionSpec(("f0", "f1"), (a, X), (V1, V2), TRUE,
                            conj([eq_atom(ms(X), msunion(ms(V1), ms(V2))),
                                  leq(V1, a), lt(a, V2)]))
        res = _cascade_prove(state, spec)
        if res is None:
            continue
        kb2, named, record = res
        args = (e, L)
        table = kb2.table
        rule = compile_property(named, table)
        sigma = Substitution({v: t for v, t in zip(named.inputs, args)})
        inst_facts, ok = _rule_sigma_instance(provers, rule, sigma)
        if not ok:
            continue
        apps = named.output_apps(table, args)
        new_side = gside.remove(wraps[0]).add(MsPoly.of(ListWrap(apps[0]))).add(MsPoly.of(ListWrap(apps[1])))
        side_name = "l" if it.lhs is gside else "r"
        st = replace(state, kb=kb2, rules=compile_rules(kb2),
                     cascades=state.cascades + ((record,) if record else ()))
        child = _rewrite_children(st, idx, side_name, new_side,
                                  TraceNode("ST5", f"split {pp(L)} around {pp(e)}"), inst_facts)
        if child is not None:
            yield child


def move_whole_cascade(state: ProofState, provers: Provers):
    """ST3 on the whole goal; the fallback that mints auxiliary functions."""
    clean_syms = {"nil", "cons", "ms", "mse", "union", "msempty"}
    for it in state.goal:
        terms = []
        if isinstance(it, PolyEq):
            terms = [a.term for side in (it.lhs, it.rhs) for a in side.atoms()]
        else:
            terms = list(it.args)
        for t in terms:
            for sub in _apps_of(t):
                if sub.sym not in clean_syms:
                    return
    built = _generalize(state, provers, list(state.goal))
    if built is None:
        return
    spec, gen_inst, meta_map = built
    res = _cascade_prove(state, spec)
    if res is None:
        return
    kb2, named, record = res
    perm_gen = _repermute_instance(spec, named, gen_inst)
    if perm_gen is None:
        return
    # align output metas with the (possibly permuted) named outputs
    meta_out: dict[Meta, Var] = {}
    for m, v in meta_map.items():
        meta_out[m] = v
    named_meta_map = Substitution(meta_out)
    child = _resume_with_named(state, provers, named, kb2, record, perm_gen, meta_map)
    if child is not None:
        yield child


def _resume_with_named(state, provers, named: FunctionSpec, kb2, record,
                       gen_inst: Substitution, meta_map: Substitution):
    table = kb2.table
    args = tuple(substitute(v, gen_inst) for v in named.inputs)
    apps = named.output_apps(table, args)
    var_to_app = {v: f for v, f in zip(named.outputs, apps)}
    binding = {}
    for m, ov in list(meta_map.items()):
        if ov in var_to_app:
            binding[m] = var_to_app[ov]
    if len(binding) != len(list(meta_map.items())):
        return None
    rule = compile_property(named, table)
    sigma = Substitution({v: a for v, a in zip(named.inputs, args)})
    inst_facts, ok = _rule_sigma_instance(provers, rule, sigma)
    if not ok:
        return None
    st = replace(state, kb=kb2, rules=compile_rules(kb2),
                 facts=add_facts(state.facts, inst_facts),
                 cascades=state.cascades + ((record,) if record else ()),
                 steps=state.steps + (TraceNode("ST3", f"cascade {', '.join(named.names)}"),))
    return bind_metas(st, Substitution(binding), TraceNode("ST3", "resume"))


def _apps_of(t: Term):
    if isinstance(t, App):
        yield t
        for a in t.args:
            yield from _apps_of(a)


# ---------------------------------------------------------------------------
# Case splits


def _unrelated_elem_pair(state: ProofState, provers: Provers) -> tuple[Skolem, Skolem] | None:
    elems = sorted({s for it in state.goal for s in skolems_of(_goal_skolem_carrier(it))
                    if s.sort is Sort.ELEM}, key=state.ctx.stamp)
    for x, y in itertools.combinations(elems, 2):
        if not provers.ord(x, y, False) and not provers.ord(y, x, False) \
                and not provers.ord(x, y, True) and not provers.ord(y, x, True):
            return x, y
    return None


def _goal_skolem_carrier(it):
    if isinstance(it, PolyEq):
        from .terms import msunion
        return App("union", (it.lhs.to_term(), it.rhs.to_term()), Sort.MSET)
    return it


def two_constants_children(state: ProofState, x: Skolem, y: Skolem):
    """IR8: both orientations of the dichotomy on two element constants."""
    for first, second in ((leq(x, y), lt(y, x)), (leq(y, x), lt(x, y))):
        children = []
        for guard in (first, second):
            st = replace(state,
                         facts=add_facts(state.facts, [guard]),
                         conditions=state.conditions + (guard,),
                         steps=state.steps + (TraceNode("IR8", f"case {pp(guard)}"),))
            st = simplify(st)
            children.append(st)
        yield children


# ---------------------------------------------------------------------------
# The search


def _leaf_of(state: ProofState) -> Leaf | None:
    resolved = state.bindings.resolved()
    witnesses = []
    for m in state.out_metas:
        w = substitute(m, resolved)
        if metas_of(w):
            return None
    witnesses = tuple(substitute(m, resolved) for m in state.out_metas)
    patterns = state.targets[0].input_terms if state.targets else ()
    return Leaf(patterns, witnesses, state.conditions, state.steps)


def solutions(state: ProofState | None, nested_allowed: bool = True):
    """DFS over moves; yields leaf forests (tuples of closed leaves)."""
    if state is None:
        return
    state.ctx.tick()
    if state.depth <= 0:
        return
    if not state.goal:
        leaf = _leaf_of(state)
        if leaf is not None:
            yield (leaf,), state.cascades
        return
    provers = Provers(state)

    pair = _unrelated_elem_pair(state, provers)
    if pair is not None:
        fired = False
        for children in two_constants_children(state, *pair):
            combo = []
            ok = True
            casc: tuple = ()
            for child in children:
                child = child and replace(child, depth=state.depth - 1)
                got = next(solutions(child, nested_allowed), None)
                if got is None:
                    ok = False
                    break
                leaves, c = got
                combo.extend(leaves)
                casc = casc + tuple(r for r in c if r not in casc)
            if ok:
                fired = True
                yield tuple(combo), casc
                break  # one successful orientation suffices
        if fired:
            return
        # fall through when neither orientation closes

    move_groups = (move_solve, move_by_equality, move_pair_induction,
                   move_compress, move_metaintro, move_induction,
                   move_pair_cascade, move_split)
    yielded = False
    emitted = set()
    for group in move_groups:
        for child in group(state, provers):
            key = (child.goal_sig(), len(child.facts), len(child.bindings))
            if key in emitted:
                continue
            emitted.add(key)
            child = replace(child, depth=state.depth - 1)
            for sol in solutions(child, nested_allowed):
                yielded = True
                yield sol
    if nested_allowed:
        for forest in nested_cover(state, provers):
            yielded = True
            yield forest
    if not yielded:
        for child in move_whole_cascade(state, provers):
            child = replace(child, depth=state.depth - 1)
            yield from solutions(child, nested_allowed)


def nested_cover(state: ProofState, provers: Provers):
    """ST1 applied in a nested fashion to a second input constant."""
    if len(state.targets) != 1:
        return
    entry = state.targets[0]
    if len(entry.spec.inputs) < 2:
        return
    for i, t in enumerate(entry.input_terms):
        if i == entry.main or not isinstance(t, Skolem) or t.sort is not Sort.LIST:
            continue
        cover = state.kb.cover_set("definition")
        branches = []
        for ct in cover.terms:
            got = _cover_branch_state(state, entry, i, ct, nested=True)
            if got is None:
                continue  # pruned
            branches.append(got)
        combo: list[Leaf] = []
        casc: tuple = ()
        ok = True
        for child in branches:
            got = next(solutions(child, nested_allowed=False), None)
            if got is None:
                ok = False
                break
            leaves, c = got
            combo.extend(leaves)
            casc = casc + tuple(r for r in c if r not in casc)
        if ok and branches:
            yield tuple(combo), casc
        return


_FRESH_ELEMS = "abcde"
_FRESH_LISTS = ("U", "V", "W", "X", "Y", "Z")


def _fresh_base(state: ProofState, preferred: str, sort: Sort) -> str:
    taken = {s.name for it in state.goal for s in skolems_of(_goal_skolem_carrier(it))}
    for f in state.facts:
        taken |= {s.name for s in skolems_of(_goal_skolem_carrier(f))}
    for e in state.targets:
        taken |= {s.name for t in e.input_terms for s in skolems_of(t)}
    if preferred not in taken:
        return preferred
    pool = _FRESH_ELEMS if sort is Sort.ELEM else _FRESH_LISTS
    for cand in pool:
        if cand not in taken:
            return cand
    return preferred


def _cover_branch_state(state: ProofState, entry: TargetEntry, slot: int, ct,
                        nested: bool) -> ProofState | None:
    """Ground a cover term and substitute it for the slot's Skolem."""
    target_sk = entry.input_terms[slot]
    assert isinstance(target_sk, Skolem)
    var_map = {}
    for v in sorted(set(_vars_in(ct.term)), key=lambda v: v.name):
        var_map[v] = state.ctx.skolem(_fresh_base(state, v.name, v.sort), v.sort)
    inst = substitute(ct.term, Substitution(var_map))
    binding = Substitution({target_sk: inst})
    facts = []
    for f in state.facts:
        if isinstance(f, PolyEq):
            facts.append(PolyEq(substitute_poly(f.lhs, binding), substitute_poly(f.rhs, binding)))
        else:
            facts.append(substitute(f, binding))
    # prune branches whose substituted facts are refuted (e.g. neq(nil, nil))
    for f in facts:
        if isinstance(f, Atom) and f.pred == "neq" and f.args[0] == f.args[1]:
            return None
    goal = []
    for it in state.goal:
        if isinstance(it, PolyEq):
            goal.append(PolyEq(substitute_poly(it.lhs, binding), substitute_poly(it.rhs, binding)))
        else:
            goal.append(substitute(it, binding))
    side_facts = [substitute(c, Substitution(var_map)) for c in ct.conditions]
    new_targets = []
    for e in state.targets:
        new_targets.append(replace(e, input_terms=tuple(substitute(t, binding) for t in e.input_terms)))
    if nested:
        base = new_targets[0]
        new_targets.append(TargetEntry(base.spec, base.input_terms, slot))
    st = replace(state,
                 facts=add_facts(tuple(facts), side_facts),
                 goal=tuple(goal),
                 targets=tuple(new_targets),
                 steps=state.steps + (TraceNode("ST1", f"case {pp(target_sk)} = {pp(inst)}"),),
                 seen=frozenset())
    return simplify(st)


def _vars_in(t: Term):
    from .terms import vars_of
    return vars_of(t)


# ---------------------------------------------------------------------------
# Top level: Skolemize, apply the cover-set strategy, search, collect.


def _initial_state(spec: FunctionSpec, kb: KnowledgeBase, ctx: ProofContext,
                   in_progress: tuple, cascade_depth: int):
    gens = ctx.gensym
    sk_map = {v: ctx.skolem(v.name, v.sort) for v in spec.inputs}
    mv_map = {v: gens.meta(v.name, v.sort) for v in spec.outputs}
    s = Substitution({**sk_map, **mv_map})
    facts = add_facts((), [substitute(c, s) for c in conjuncts(spec.precondition)])
    goal = []
    for c in conjuncts(spec.postcondition):
        c = substitute(c, s)
        if isinstance(c, Atom) and c.pred == "eq" and c.args[0].sort is Sort.MSET:
            goal.append(PolyEq(normalize(c.args[0]), normalize(c.args[1])))
        elif isinstance(c, Atom):
            goal.append(c)
        else:
            raise SortError("output condition must be a conjunction of atoms")
    entry = TargetEntry(spec, tuple(sk_map[v] for v in spec.inputs), spec.main_input)
    state = ProofState(
        kb=kb, facts=facts, rules=compile_rules(kb), goal=tuple(goal),
        bindings=Substitution(), conditions=(), targets=(entry,),
        out_metas=tuple(mv_map[v] for v in spec.outputs),
        cascades=(), steps=(TraceNode("skolemize", pp(conj([spec.postcondition]))),),
        ctx=ctx, in_progress=in_progress,
        depth=ctx.limits.max_depth, cascade_depth=cascade_depth)
    return simplify(state), sk_map, mv_map


def _negate_condition(c: Formula) -> Formula:
    if isinstance(c, Atom) and c.pred == "eq":
        return neq(*c.args)
    if isinstance(c, Atom) and c.pred == "neq":
        return eq_atom(*c.args)
    if isinstance(c, Atom) and c.pred == "leq":
        return lt(c.args[1], c.args[0])
    if isinstance(c, Atom) and c.pred == "lt":
        return leq(c.args[1], c.args[0])
    from .terms import Not
    return Not(c)


def _constant_branch_conditions(state: ProofState) -> tuple[Formula, ...] | None:
    """Turn the residual ground goal of a constant cover branch into input
    conditions (an empty multiset of a list pins the list to nil)."""
    conds: list[Formula] = []
    for it in state.goal:
        if isinstance(it, PolyEq):
            if it.lhs.has_meta() or it.rhs.has_meta():
                return None
            empty, other = (it.lhs, it.rhs) if not it.lhs else (it.rhs, it.lhs)
            if not empty and len(other) == 1 and isinstance(other.atoms()[0], ListWrap):
                conds.append(eq_atom(other.atoms()[0].term, NIL))
            else:
                conds.append(eq_atom(it.lhs.to_term(), it.rhs.to_term()))
        else:
            if metas_of(it):
                return None
            conds.append(it)
    return tuple(conds)


def prove_spec(spec: FunctionSpec, kb: KnowledgeBase, cover_name: str, mode: str,
               ctx: ProofContext | None = None, in_progress: tuple = (),
               cascade_depth: int | None = None, all_solutions: bool = False,
               limits: Limits | None = None) -> ProofResult:
    """Prove the synthesis conjecture of spec with the given cover set.

    mode 'skolem' applies the cover set to the main input constant, 'meta'
    to the principal output metavariable."""
    limits = limits or (ctx.limits if ctx else Limits())
    ctx = ctx or ProofContext(limits)
    cascade_depth = cascade_depth if cascade_depth is not None else limits.max_cascade_depth
    try:
        state0, sk_map, mv_map = _initial_state(spec, kb, ctx, in_progress, cascade_depth)
    except SortError as e:
        return ProofResult(spec, (), failure=str(e))
    if state0 is None:
        return ProofResult(spec, (), failure="initial simplification refuted the goal")
    cover = kb.cover_set(cover_name)
    entry = state0.targets[0]
    try:
        if mode == "meta":
            streams = _meta_mode_branches(spec, state0, cover, mv_map)
        elif mode == "skolem":
            streams = _skolem_mode_branches(spec, state0, cover, entry)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        sols = _collect(spec, streams, all_solutions, limits)
    except LimitExceeded as e:
        return ProofResult(spec, (), failure=str(e))
    if not sols:
        return ProofResult(spec, (), failure="no closed proof within limits")
    return ProofResult(spec, tuple(sols))


def _meta_mode_branches(spec: FunctionSpec, state0: ProofState, cover, mv_map):
    """Cover set on the principal list-valued output metavariable."""
    target = None
    for v in spec.outputs:
        if v.sort is Sort.LIST:
            target = mv_map[v]
            break
    if target is None:
        raise TargetMissing("no list-valued output to branch on")
    branch_iters = []
    negations: list[Formula] = []
    for ct in cover.terms:
        has_vars = bool(_vars_in(ct.term))
        if not has_vars:
            child = bind_metas(
                replace(state0, facts=add_facts(state0.facts, list(negations)),
                        steps=state0.steps + (TraceNode("ST1", f"case {pp(target)} = {pp(ct.term)}"),)),
                Substitution({target: ct.term}))
            if child is None:
                continue
            conds = _constant_branch_conditions(child)
            if conds is None:
                branch_iters.append(iter(()))
                continue
            leaf = Leaf(child.targets[0].input_terms, tuple(substitute(m, child.bindings.resolved())
                                                            for m in child.out_metas),
                        child.conditions + conds, child.steps)
            branch_iters.append(iter(((((leaf,), child.cascades)),)))
            negations.extend(_negate_condition(c) for c in conds)
        else:
            var_map = {v: state0.ctx.gensym.meta(v.name, v.sort) for v in _vars_in(ct.term)}
            inst = substitute(ct.term, Substitution(var_map))
            child = bind_metas(
                replace(state0, facts=add_facts(state0.facts, list(negations)),
                        conditions=state0.conditions + tuple(negations),
                        steps=state0.steps + (TraceNode("ST1", f"case {pp(target)} = {pp(inst)}"),)),
                Substitution({target: inst}))
            branch_iters.append(solutions(child))
    return branch_iters


def _skolem_mode_branches(spec: FunctionSpec, state0: ProofState, cover, entry: TargetEntry):
    branch_iters = []
    for ct in cover.terms:
        child = _cover_branch_state(state0, entry, entry.main, ct, nested=False)
        if child is None:
            continue  # pruned by the input condition
        branch_iters.append(solutions(child))
    return branch_iters


def _collect(spec: FunctionSpec, branch_iters: list, all_solutions: bool, limits: Limits):
    """Combine per-branch solution streams into whole-proof solutions."""
    cap = limits.max_alternatives if all_solutions else 1
    pools: list[list] = []
    for it in branch_iters:
        pool = list(itertools.islice(it, cap if all_solutions else 1))
        if not pool:
            return []
        pools.append(pool)
    sols = []
    for combo in itertools.islice(itertools.product(*pools), cap):
        leaves: list[Leaf] = []
        cascades: tuple = ()
        for branch_leaves, branch_casc in combo:
            leaves.extend(branch_leaves)
            for r in branch_casc:
                if r not in cascades:
                    cascades = cascades + (r,)
        trace = TraceNode("proof", spec.name,
                          tuple(TraceNode("branch", f"branch {i + 1}", leaf.steps)
                                for i, leaf in enumerate(leaves)))
        sols.append(Solution(tuple(leaves), _flatten_cascades(cascades), trace))
    return sols


def _flatten_cascades(records: tuple) -> tuple:
    out: list[CascadeRecord] = []

    def visit(r: CascadeRecord):
        for sub in r.cascades:
            visit(sub)
        if all(x.spec.names != r.spec.names for x in out):
            out.append(r)

    for r in records:
        visit(r)
    return tuple(out)
