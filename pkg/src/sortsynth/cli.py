"""Command-line harness: load a theory, synthesize, run, verify, trace."""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import engine, extract, interp, theory
from .terms import SortError, pp
from .engine import Limits, TraceNode


EXIT_OK = 0
EXIT_PROOF_FAILURE = 2
EXIT_COUNTEREXAMPLE = 3
EXIT_INPUT_ERROR = 4


def default_theory_path() -> Path:
    return Path(str(resources.files("sortsynth").joinpath("data/base.theory")))


def load_theory(path: str | None) -> theory.KnowledgeBase:
    p = Path(path) if path else default_theory_path()
    return theory.parse_theory(p.read_text())


def _limits(args) -> Limits:
    return Limits(max_depth=args.max_depth, max_cascade_depth=args.max_cascade)


def _dedup_algorithms(per_solution: list[list[extract.Algorithm]]) -> list[list[extract.Algorithm]]:
    """Drop solutions whose target algorithm duplicates an earlier one."""
    seen: list[extract.Algorithm] = []
    out = []
    for algos in per_solution:
        target = algos[-1]
        if any(extract.alpha_equivalent(target, s) for s in seen):
            continue
        seen.append(target)
        out.append(algos)
    return out


def synthesize(kb: theory.KnowledgeBase, name: str, cover: str, alt: str,
               all_variants: bool, limits: Limits) -> list[list[extract.Algorithm]]:
    """All distinct extractions for the named spec: per variant, the cascaded
    auxiliaries in dependency order followed by the target algorithm."""
    spec = kb.spec_named(name)
    modes = {"meta": ["meta"], "skolem": ["skolem"], "all": ["meta", "skolem"]}[alt]
    per_solution: list[list[extract.Algorithm]] = []
    for mode in modes:
        result = engine.prove_spec(spec, kb, cover, mode, all_solutions=all_variants, limits=limits)
        for sol in result.solutions:
            per_solution.append(extract.extract_all(sol, result.spec))
            if not all_variants:
                break
    return _dedup_algorithms(per_solution)


def _trace_lines(node: TraceNode, prefix: str, out: list[str], depth: int = 0):
    pad = "  " * depth
    label = node.detail if node.kind in ("proof", "branch") else f"{node.kind}: {node.detail}"
    out.append(f"{pad}{prefix}{label}")
    for child in node.children:
        _trace_lines(child, "", out, depth + 1)


def render_trace(solutions_by_alt: list[tuple[str, engine.Solution]], fmt: str) -> str:
    if fmt == "tree":
        def node_json(n: TraceNode):
            return {"kind": n.kind, "detail": n.detail,
                    "children": [node_json(c) for c in n.children]}
        return json.dumps([{"alternative": i + 1, "mode": mode,
                            "trace": node_json(sol.trace)}
                           for i, (mode, sol) in enumerate(solutions_by_alt)], indent=2)
    lines: list[str] = []
    for i, (mode, sol) in enumerate(solutions_by_alt, 1):
        lines.append(f"Alternative {i} (cover set on {mode} target)")
        for b, leaf in enumerate(sol.leaves, 1):
            case = _case_label(sol, b - 1, i)
            lines.append(f"  Case {case}")
            for step in leaf.steps:
                lines.append(f"    {step.kind}: {step.detail}")
    return "\n".join(lines) + "\n"


def _case_label(sol: engine.Solution, leaf_idx: int, alt: int) -> str:
    """Hierarchical case numbering from the branching markers of each leaf."""
    paths = []
    for leaf in sol.leaves:
        markers = tuple(s.detail for s in leaf.steps if s.kind in ("ST1", "IR8") and s.detail.startswith("case"))
        paths.append(markers)
    trie: dict = {}
    numbers = []
    for markers in paths:
        node = trie
        label = [str(alt)]
        for m in markers:
            if m not in node:
                node[m] = ({}, len(node) + 1)
            sub, idx = node[m]
            label.append(str(idx))
            node = sub
        numbers.append(".".join(label))
    return numbers[leaf_idx]


def parse_value(text: str):
    text = text.strip()
    if text.startswith("["):
        inner = text[1:-1].strip()
        if not inner:
            return ()
        return tuple(int(x) for x in inner.split(","))
    return int(text)


def format_value(v) -> str:
    if isinstance(v, tuple):
        return "[" + ",".join(str(x) for x in v) + "]"
    return str(v)


def _load_registry(out_dir: Path, kb: theory.KnowledgeBase) -> interp.Registry:
    signatures = dict(kb.table.extras())
    paths = sorted(out_dir.glob("*.alg"))
    if not paths:
        raise FileNotFoundError(f"no .alg files in {out_dir}")
    # two passes: head signatures first (from rule shapes), then full parse
    for p in paths:
        for line in p.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            head = line.split("[", 1)[0].strip()
            arity = len(extract._split_commas(line.split("[", 1)[1].split("]")[0]))
            if head not in signatures:
                from .terms import Sort
                rhs = line.partition("=")[2]
                result = Sort.ELEM if head in ("min", "minA") else Sort.LIST
                args = tuple(Sort.ELEM if i == 0 and head not in ("Sort", "Trim", "min", "Merge", "Conc")
                             else Sort.LIST for i in range(arity))
                signatures[head] = (args, result)
    registry = interp.Registry()
    for p in paths:
        registry.add(extract.parse_algorithm(p.read_text(), signatures))
    return registry


def cmd_synth(args) -> int:
    kb = load_theory(args.theory)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = synthesize(kb, args.target, args.cover, args.alt, args.all, _limits(args))
    if not variants:
        print(f"synthesis failed for {args.target}", file=sys.stderr)
        return EXIT_PROOF_FAILURE
    written = []
    for i, algos in enumerate(variants, 1):
        suffix = "" if len(variants) == 1 else f".{i}"
        for alg in algos:
            is_target = alg.name == args.target or (alg.name in kb.spec_named(args.target).names)
            fname = f"{alg.name}{suffix if is_target else ''}.alg"
            path = out_dir / fname
            path.write_text(extract.algorithm_text(alg))
            if str(path) not in written:
                written.append(str(path))
    for w in written:
        print(w)
    return EXIT_OK


def cmd_trace(args) -> int:
    kb = load_theory(args.theory)
    spec = kb.spec_named(args.target)
    modes = ["meta", "skolem"] if args.alt == "all" else [args.alt]
    collected = []
    for mode in modes:
        result = engine.prove_spec(spec, kb, args.cover, mode, all_solutions=False,
                                   limits=_limits(args))
        for sol in result.solutions:
            collected.append((mode, sol))
    if not collected:
        print(f"no proof found for {args.target}", file=sys.stderr)
        return EXIT_PROOF_FAILURE
    text = render_trace(collected, args.trace_format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_run(args) -> int:
    kb = load_theory(args.theory)
    try:
        registry = _load_registry(Path(args.out_dir), kb)
        values = tuple(parse_value(v) for v in args.values)
        result = interp.eval_call(registry, args.target, values)
    except (FileNotFoundError, SortError, ValueError) as e:
        print(str(e), file=sys.stderr)
        return EXIT_INPUT_ERROR
    except (interp.NoRuleMatches, interp.StepLimitExceeded) as e:
        print(str(e), file=sys.stderr)
        return EXIT_PROOF_FAILURE
    print(format_value(result))
    return EXIT_OK


def cmd_verify(args) -> int:
    kb = load_theory(args.theory)
    try:
        registry = _load_registry(Path(args.out_dir), kb)
        spec = kb.spec_named(args.target)
    except (FileNotFoundError, KeyError) as e:
        print(str(e), file=sys.stderr)
        return EXIT_INPUT_ERROR
    max_len = 5 if len(spec.inputs) == 1 else 4
    report = interp.check_spec(registry, spec, max_len=max_len)
    exhaustive = report.checked
    extra = 0
    if len(spec.inputs) == 1 and spec.inputs[0].sort.value == "list":
        randoms = interp.random_lists(200, 12, 1, 100, args.seed)
        r2 = interp.check_spec(registry, spec, max_len=-1, extra_inputs=[(v,) for v in randoms])
        extra = r2.checked
        report.failures.extend(r2.failures)
    if report.failures:
        for c, why in report.failures[:10]:
            print(f"counterexample {c}: {why}", file=sys.stderr)
        return EXIT_COUNTEREXAMPLE
    print(f"pass ({exhaustive} exhaustive + {extra} random)")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="sortsynth",
                                     description="deductive synthesis of sorting algorithms")
    parser.add_argument("--theory", default=None, help="theory file (default: bundled)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-depth", type=int, default=64)
    parser.add_argument("--max-cascade", type=int, default=3)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="synthesize algorithms from a spec")
    p_synth.add_argument("target")
    p_synth.add_argument("--cover", choices=["definition", "dac"], default="definition")
    p_synth.add_argument("--alt", choices=["meta", "skolem", "all"], default="skolem")
    p_synth.add_argument("--all", action="store_true", help="emit every distinct extraction")
    p_synth.add_argument("--out-dir", default=".")
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="evaluate an extracted algorithm")
    p_run.add_argument("target")
    p_run.add_argument("values", nargs="+", help="arguments, e.g. \"[2,1,3]\"")
    p_run.add_argument("--out-dir", default=".")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="check algorithms against their spec")
    p_verify.add_argument("target")
    p_verify.add_argument("--out-dir", default=".")
    p_verify.set_defaults(func=cmd_verify)

    p_trace = sub.add_parser("trace", help="render the synthesis proof")
    p_trace.add_argument("target")
    p_trace.add_argument("--cover", choices=["definition", "dac"], default="definition")
    p_trace.add_argument("--alt", choices=["meta", "skolem", "all"], default="all")
    p_trace.add_argument("--trace-format", choices=["text", "tree"], default="text")
    p_trace.add_argument("--out", default=None)
    p_trace.set_defaults(func=cmd_trace)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SortError as e:
        print(str(e), file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
