"""Execute extracted algorithms on concrete integer lists and check them
against their specifications by brute-force enumeration."""

from __future__ import annotations

import itertools
import random
from collections import Counter
from dataclasses import dataclass, field

from .terms import (
    App, Atom, Formula, Implies, Meta, Not, And, Or, Skolem, Sort, Term, Var,
    conjuncts, pp,
)
from .theory import FunctionSpec
from .extract import Algorithm, RewriteRule

Value = object  # int | tuple[int, ...] | bool | Counter


class NoRuleMatches(Exception):
    pass


class StepLimitExceeded(Exception):
    """Rewriting did not terminate within the step budget."""


@dataclass
class Registry:
    algorithms: dict[str, Algorithm] = field(default_factory=dict)

    def add(self, alg: Algorithm) -> None:
        self.algorithms[alg.name] = alg

    def __contains__(self, name: str) -> bool:
        return name in self.algorithms


def split_halves(v: tuple) -> tuple[tuple, tuple]:
    """Midpoint split for the concatenation pattern; both halves nonempty
    for length >= 2."""
    k = (len(v) + 1) // 2
    return v[:k], v[k:]


def _match_value(pattern: Term, value: Value, env: dict) -> bool:
    if isinstance(pattern, (Var, Skolem)):
        key = pattern if isinstance(pattern, Var) else Var(f"sk:{pattern.name}{pattern.index}", pattern.sort)
        if key in env:
            return env[key] == value
        env[key] = value
        return True
    if isinstance(pattern, App):
        if pattern.sym == "nil":
            return value == ()
        if pattern.sym == "cons":
            if not (isinstance(value, tuple) and value):
                return False
            return _match_value(pattern.args[0], value[0], env) and \
                _match_value(pattern.args[1], value[1:], env)
        if pattern.sym == "Conc":
            if not (isinstance(value, tuple) and len(value) >= 2):
                return False
            l, r = split_halves(value)
            return _match_value(pattern.args[0], l, env) and _match_value(pattern.args[1], r, env)
    raise NoRuleMatches(f"unsupported pattern {pp(pattern)}")


class Evaluator:
    def __init__(self, registry: Registry, step_limit: int = 100_000):
        self.registry = registry
        self.step_limit = step_limit
        self.steps = 0

    def _tick(self):
        self.steps += 1
        if self.steps > self.step_limit:
            raise StepLimitExceeded(f"more than {self.step_limit} rewrite steps")

    def call(self, name: str, args: tuple[Value, ...]) -> Value:
        self._tick()
        alg = self.registry.algorithms.get(name)
        if alg is None:
            raise NoRuleMatches(f"no algorithm named {name!r}")
        for rule in alg.rules:
            if len(rule.lhs) != len(args):
                continue
            env: dict = {}
            if all(_match_value(p, v, env) for p, v in zip(rule.lhs, args)):
                if rule.guard is None or self.formula(rule.guard, env):
                    return self.term(rule.rhs, env)
        raise NoRuleMatches(f"{name}{args!r} matches no rule")

    def term(self, t: Term, env: dict) -> Value:
        if isinstance(t, Var):
            return env[t]
        if isinstance(t, Skolem):
            return env[Var(f"sk:{t.name}{t.index}", t.sort)]
        if isinstance(t, App):
            if t.sym == "nil":
                return ()
            if t.sym == "cons":
                head = self.term(t.args[0], env)
                tail = self.term(t.args[1], env)
                return (head,) + tail
            if t.sym == "msempty":
                return Counter()
            if t.sym == "mse":
                return Counter([self.term(t.args[0], env)])
            if t.sym == "ms":
                return Counter(self.term(t.args[0], env))
            if t.sym == "union":
                return self.term(t.args[0], env) + self.term(t.args[1], env)
            args = tuple(self.term(a, env) for a in t.args)
            return self.call(t.sym, args)
        raise NoRuleMatches(f"cannot evaluate {pp(t)}")

    def formula(self, f: Formula, env: dict) -> bool:
        if isinstance(f, Atom):
            if f.pred == "true":
                return True
            if f.pred == "false":
                return False
            args = [self.term(t, env) for t in f.args]
            if f.pred == "eq":
                return args[0] == args[1]
            if f.pred == "neq":
                return args[0] != args[1]
            if f.pred == "sorted":
                v = args[0]
                return all(a <= b for a, b in zip(v, v[1:]))
            if f.pred in ("leq", "lt"):
                return _ord_value(args[0], args[1], f.pred == "lt")
            raise NoRuleMatches(f"unknown predicate {f.pred}")
        if isinstance(f, Not):
            return not self.formula(f.body, env)
        if isinstance(f, And):
            return all(self.formula(p, env) for p in f.parts)
        if isinstance(f, Or):
            return any(self.formula(p, env) for p in f.parts)
        if isinstance(f, Implies):
            return (not self.formula(f.lhs, env)) or self.formula(f.rhs, env)
        raise NoRuleMatches(f"cannot evaluate formula {pp(f)}")


def _ord_value(l: Value, r: Value, strict: bool) -> bool:
    ls = l if isinstance(l, tuple) else (l,)
    rs = r if isinstance(r, tuple) else (r,)
    if strict:
        return all(a < b for a in ls for b in rs)
    return all(a <= b for a in ls for b in rs)


def eval_call(registry: Registry, name: str, args: tuple[Value, ...],
              step_limit: int = 100_000) -> Value:
    return Evaluator(registry, step_limit).call(name, args)


def oracle_sort(v: tuple) -> tuple:
    """Ground-truth sorted output (multiset equality plus sortedness is
    exactly harmonised with Python's total sort on integers)."""
    return tuple(sorted(v))


def all_lists(max_len: int, alphabet: tuple[int, ...]):
    for n in range(max_len + 1):
        for combo in itertools.product(alphabet, repeat=n):
            yield combo


def sorted_lists(max_len: int, alphabet: tuple[int, ...]):
    for v in all_lists(max_len, alphabet):
        if all(a <= b for a, b in zip(v, v[1:])):
            yield v


@dataclass
class Report:
    checked: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _domain_for(sort: Sort, max_len: int, alphabet: tuple[int, ...]):
    if sort is Sort.ELEM:
        return list(alphabet)
    return list(all_lists(max_len, alphabet))


def check_spec(registry: Registry, spec: FunctionSpec, max_len: int = 5,
               alphabet: tuple[int, ...] = (1, 2, 3),
               extra_inputs: list[tuple[Value, ...]] | None = None,
               step_limit: int = 200_000) -> Report:
    """Brute-force I => O over the enumerated domain; counterexamples listed."""
    report = Report()
    domains = [_domain_for(v.sort, max_len, alphabet) for v in spec.inputs]
    ev = Evaluator(registry, step_limit)
    inputs = itertools.chain(itertools.product(*domains), extra_inputs or [])
    for combo in inputs:
        env = {v: val for v, val in zip(spec.inputs, combo)}
        ev.steps = 0
        if not ev.formula(spec.precondition, env):
            continue
        report.checked += 1
        try:
            for v, name in zip(spec.outputs, spec.names):
                env[v] = ev.call(name, tuple(combo))
            if not ev.formula(spec.postcondition, env):
                report.failures.append((combo, {pp(v): env[v] for v in spec.outputs}))
        except (NoRuleMatches, StepLimitExceeded) as e:
            report.failures.append((combo, str(e)))
    return report


def random_lists(count: int, max_len: int, lo: int, hi: int, seed: int) -> list[tuple]:
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        n = rng.randint(0, max_len)
        out.append(tuple(rng.randint(lo, hi) for _ in range(n)))
    return out


def exhaustiveness(registry: Registry, spec: FunctionSpec, max_len: int = 4,
                   alphabet: tuple[int, ...] = (1, 2, 3)) -> Report:
    """Every input satisfying I matches exactly one rule of each algorithm."""
    report = Report()
    ev = Evaluator(registry)
    domains = [_domain_for(v.sort, max_len, alphabet) for v in spec.inputs]
    for combo in itertools.product(*domains):
        env = {v: val for v, val in zip(spec.inputs, combo)}
        if not ev.formula(spec.precondition, env):
            continue
        report.checked += 1
        for name in spec.names:
            alg = registry.algorithms[name]
            hits = 0
            for rule in alg.rules:
                env2: dict = {}
                if len(rule.lhs) == len(combo) and \
                        all(_match_value(p, v, env2) for p, v in zip(rule.lhs, combo)):
                    if rule.guard is None or ev.formula(rule.guard, env2):
                        hits += 1
            if hits != 1:
                report.failures.append((combo, f"{name}: {hits} rules match"))
    return report


def replay_branch(registry: Registry, spec: FunctionSpec, leaf, max_len: int = 4,
                  alphabet: tuple[int, ...] = (1, 2, 3)) -> Report:
    """Soundness spot-check: substitute the witnesses into the branch goal
    and evaluate over all assignments of the branch's Skolem constants."""
    from .terms import skolems_of
    report = Report()
    sks = sorted({s for t in list(leaf.patterns) + list(leaf.witnesses) for s in skolems_of(t)}
                 | {s for c in leaf.conditions for s in skolems_of(c)},
                 key=lambda s: (s.name, s.index))
    domains = [_domain_for(s.sort, max_len, alphabet) for s in sks]
    ev = Evaluator(registry, 200_000)
    for combo in itertools.product(*domains):
        env: dict = {Var(f"sk:{s.name}{s.index}", s.sort): v for s, v in zip(sks, combo)}
        ev.steps = 0
        try:
            if not all(ev.formula(c, env) for c in leaf.conditions):
                continue
            ins = [ev.term(p, env) for p in leaf.patterns]
            full = dict(env)
            for v, val in zip(spec.inputs, ins):
                full[v] = val
            if not ev.formula(spec.precondition, full):
                continue
            report.checked += 1
            for v, w in zip(spec.outputs, leaf.witnesses):
                full[v] = ev.term(w, env)
            if not ev.formula(spec.postcondition, full):
                report.failures.append((combo, [pp(w) for w in leaf.witnesses]))
        except (NoRuleMatches, StepLimitExceeded) as e:
            report.failures.append((combo, str(e)))
    return report
