"""Command-line surface tying the compiler, checkers and simulator together.

Exit codes: 0 success / passing verdict, 1 analysis failure (rejected
compile or FAIL verdict), 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .checkers import (
    BoundExceeded,
    PreconditionError,
    Verdict,
    build_bounded_bisim,
    check_cube,
    check_decomp_side_conditions,
    check_no_high_branching,
    check_refinement_run,
)
from .compiler import CompileOutput, compile_program
from .lang import BLOCKED, STOPPED, format_exp
from .policy import Policy, initial_mode_state
from .risc import Program, RiscConfig, risc_step, risc_stops
from .sim import SystemConfig, ThreadSpec, check_mode_compatibility, sim_run, two_run_noninterference
from .syntax import ParseError, PolicyParseError, emit_asm, parse_asm, parse_policy, parse_program
from .whilelang import WhileConfig, while_step, while_stops


class UsageError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _load_policy(path: str) -> Policy:
    return parse_policy(_read(path))


def _parse_mem_overrides(items: Optional[List[str]]) -> Dict[str, int]:
    out: Dict[str, int] = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"expected var=value, got {item!r}")
        name, _, val = item.partition("=")
        try:
            out[name.strip()] = int(val)
        except ValueError:
            raise UsageError(f"expected integer value in {item!r}") from None
    return out


def _initial_memory(policy: Policy, overrides: Dict[str, int]) -> Dict[str, int]:
    mem = {x: 0 for x in policy.universe}
    for k, v in overrides.items():
        if k not in mem:
            raise UsageError(f"variable {k!r} not in the policy universe")
        mem[k] = v
    return mem


def _load_env_script(path: str) -> List[Tuple[int, str, int]]:
    """One write per line: `<step> <var> <value>`; `#` comments allowed."""
    writes = []
    for lineno, raw in enumerate(_read(path).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise UsageError(f"{path}:{lineno}: expected `<step> <var> <value>`")
        writes.append((int(parts[0]), parts[1], int(parts[2])))
    return writes


def _annotation_lines(out: CompileOutput) -> List[str]:
    lines = []
    for i, ci in enumerate(out.annotated):
        lines.append(
            json.dumps(
                {
                    "index": i,
                    "label": ci.instr.label,
                    "regrec": {f"r{r}": format_exp(e) for r, e in sorted(ci.rec.regrec.items())},
                    "asm_no_w": sorted(ci.rec.asmrec.no_write),
                    "asm_no_rw": sorted(ci.rec.asmrec.no_read_write),
                    "epilogue": ci.epilogue,
                    "guard": sorted(ci.guard_vars),
                }
            )
        )
    lines.append(
        json.dumps(
            {
                "final": True,
                "regrec": {f"r{r}": format_exp(e) for r, e in sorted(out.final_rec.regrec.items())},
                "asm_no_w": sorted(out.final_rec.asmrec.no_write),
                "asm_no_rw": sorted(out.final_rec.asmrec.no_read_write),
                "exit_label": out.exit_label,
                "next_label": out.next_label,
            }
        )
    )
    return lines


def load_annotations(prog: Program, text: str) -> CompileOutput:
    """Rebuild a compiler output from an assembly program plus its
    JSON-lines annotation sidecar (inverse of --annotations)."""
    from .compiler import AsmRec, CompRec, CompiledInstr
    from .syntax import parse_expr_text

    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows or not rows[-1].get("final"):
        raise UsageError("annotation sidecar is missing its final record line")

    def rec_of(obj) -> CompRec:
        regrec = {int(k[1:]): parse_expr_text(v) for k, v in obj["regrec"].items()}
        return CompRec(regrec, AsmRec(frozenset(obj["asm_no_w"]), frozenset(obj["asm_no_rw"])))

    if len(rows) - 1 != len(prog):
        raise UsageError("annotation sidecar does not match the program length")
    annotated = tuple(
        CompiledInstr(prog[row["index"]], rec_of(row), row["epilogue"], frozenset(row["guard"]))
        for row in rows[:-1]
    )
    final = rows[-1]
    return CompileOutput(annotated, final["exit_label"], final["next_label"], rec_of(final), False)


def _precompiled(args) -> Optional[CompileOutput]:
    if not args.precompiled and not args.annotations_in:
        return None
    if not (args.precompiled and args.annotations_in):
        raise UsageError("--precompiled and --use-annotations must be given together")
    prog = parse_asm(_read(args.precompiled))
    return load_annotations(prog, _read(args.annotations_in))


def cmd_compile(args) -> int:
    policy = _load_policy(args.policy)
    src = parse_program(_read(args.source))
    out = compile_program(src, policy, reg_count=args.registers)
    if out.failed:
        for reason in out.reasons:
            print(f"compile failed: {reason}", file=sys.stderr)
        return 1
    text = emit_asm(out.program)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.annotations:
        Path(args.annotations).write_text("\n".join(_annotation_lines(out)) + "\n")
    return 0


def cmd_run(args) -> int:
    policy = _load_policy(args.policy)
    mem = _initial_memory(policy, _parse_mem_overrides(args.mem))
    mds = initial_mode_state(policy)
    if args.source.endswith(".s"):
        cfg = RiscConfig(0, parse_asm(_read(args.source)), (0,) * args.registers, mds, mem)
        stepper, stops = risc_step, risc_stops
    else:
        cfg = WhileConfig(parse_program(_read(args.source)), mds, mem)
        stepper, stops = while_step, while_stops
    steps = 0
    while steps < args.max_steps and not stops(cfg):
        nxt = stepper(cfg, policy)
        if nxt is BLOCKED:
            print("blocked on a lock; halting", file=sys.stderr)
            break
        if nxt is STOPPED:
            break
        cfg = nxt
        steps += 1
    for x in sorted(cfg.mem):
        print(f"{x} = {cfg.mem[x]}")
    print(f"# steps = {steps}", file=sys.stderr)
    return 0


def _report(verdict: Verdict, dump: Optional[str]) -> int:
    print(verdict.format_line())
    for note in verdict.notes:
        print(f"# {note}")
    if not verdict.passed:
        for line in verdict.trace:
            print(f"  {line}", file=sys.stderr)
    if dump:
        Path(dump).write_text("\n".join(verdict.trace) + "\n")
    return 0 if verdict.passed else 1


def cmd_check(args) -> int:
    policy = _load_policy(args.policy)
    is_asm = args.source.endswith(".s")
    src = None
    prog: Optional[Program] = None
    if is_asm:
        prog = parse_asm(_read(args.source))
    else:
        src = parse_program(_read(args.source))

    if args.kind == "refinement":
        if src is None:
            raise UsageError("refinement checking needs a source program")
        mem = _initial_memory(policy, _parse_mem_overrides(args.mem))
        script = _load_env_script(args.env_script) if args.env_script else None
        verdict = check_refinement_run(
            src, policy, mem=mem, env_script=script, max_steps=args.max_steps,
            reg_count=args.registers, seed=args.seed, compiled=_precompiled(args),
        )
        return _report(verdict, args.trace_dump)

    if args.kind == "timing":
        kwargs = dict(
            count=args.pairs, max_steps=args.max_steps, seed=args.seed,
            include_pc_coupling=not args.no_pc_coupling, probe_period=args.probe_period,
            reg_count=args.registers,
        )
        if is_asm:
            verdict = check_decomp_side_conditions(policy, raw_prog=prog, **kwargs)
        else:
            verdict = check_decomp_side_conditions(
                policy, src=src, compiled=_precompiled(args), **kwargs
            )
        return _report(verdict, args.trace_dump)

    if args.kind == "high-branching":
        if src is None:
            raise UsageError("the branching check needs a source program")
        verdict = check_no_high_branching(
            src, policy, count=args.pairs, max_steps=args.max_steps, seed=args.seed
        )
        return _report(verdict, args.trace_dump)

    domain = tuple(int(v) for v in args.domain.split(","))
    if args.kind == "bisim":
        if src is None:
            raise UsageError("bisimulation building needs a source program")
        result = build_bounded_bisim(src, policy, domain)
        if result.ok:
            print(f"PASS bisim pairs={len(result.relation.pairs)} states={result.reachable}")
            return 0
        a, b = result.counterexample
        print("FAIL bisim counterexample:")
        print(f"  mem1 = {dict(sorted(a.mem.items()))}")
        print(f"  mem2 = {dict(sorted(b.mem.items()))}")
        return 1

    if args.kind == "cube":
        if src is None:
            raise UsageError("cube checking needs a source program")
        result = build_bounded_bisim(src, policy, domain)
        if not result.ok:
            print("FAIL cube: no bisimulation witness for the source program")
            return 1
        verdict = check_cube(
            result.relation, src, policy, domain,
            max_steps=args.max_steps, reg_count=args.registers, seed=args.seed,
        )
        return _report(verdict, args.trace_dump)

    raise UsageError(f"unknown check kind {args.kind!r}")


def cmd_simulate(args) -> int:
    policy = _load_policy(args.policy)
    threads = []
    for path in args.thread:
        if path.endswith(".s"):
            threads.append(ThreadSpec(parse_asm(_read(path))))
        else:
            threads.append(ThreadSpec(parse_program(_read(path))))
    if not threads:
        raise UsageError("at least one --thread is required")
    mem = _initial_memory(policy, _parse_mem_overrides(args.mem))
    system = SystemConfig(tuple(threads), mem, args.seed)

    if args.two_run:
        mutation = _parse_mem_overrides(args.mutate)
        if not mutation:
            raise UsageError("--two-run needs at least one --mutate var=val")
        verdict = two_run_noninterference(
            system, policy, mutation, max_steps=args.steps,
            seeds=range(args.seed, args.seed + args.runs),
        )
        return _report(verdict, args.trace_dump)

    result = sim_run(system, policy, args.steps)
    if args.trace_dump:
        Path(args.trace_dump).write_text(result.format_trace() + "\n")
    print(f"steps = {result.steps}  deadlocked = {result.deadlocked}")
    for x in sorted(result.mem):
        print(f"{x} = {result.mem[x]}")
    verdict = check_mode_compatibility(result, policy)
    print(verdict.format_line())
    return 0 if verdict.passed else 1


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="whilerisc",
        description="While-to-RISC secure compilation toolkit: compiler, "
        "interpreters, refinement/timing checkers and an interleaving simulator.",
    )
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--policy", required=True, help="policy file (TOML)")
        p.add_argument("--registers", type=int, default=16, help="register bank size")

    p = sub.add_parser("compile", help="compile a source program to assembly")
    p.add_argument("source")
    common(p)
    p.add_argument("-o", "--output", help="assembly output path (default: stdout)")
    p.add_argument("--annotations", help="JSON-lines sidecar with per-instruction records")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="interpret a .w or .s program")
    p.add_argument("source")
    common(p)
    p.add_argument("--mem", action="append", help="initial memory override var=val")
    p.add_argument("--max-steps", type=int, default=100_000)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="run a dynamic checker")
    p.add_argument("kind", choices=["refinement", "timing", "high-branching", "bisim", "cube"])
    p.add_argument("source", help=".w source (or .s assembly for timing)")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=100, help="memory pairs for two-run checks")
    p.add_argument("--max-steps", type=int, default=10_000)
    p.add_argument("--mem", action="append", help="initial memory override var=val")
    p.add_argument("--env-script", help="environment write schedule file")
    p.add_argument("--precompiled", help="previously compiled assembly to check")
    p.add_argument("--use-annotations", dest="annotations_in",
                   help="annotation sidecar for --precompiled")
    p.add_argument("--no-pc-coupling", action="store_true",
                   help="drop the program-location coupling clause (timing only)")
    p.add_argument("--probe-period", type=int, default=0,
                   help="inject an environment write every N paired steps (timing only)")
    p.add_argument("--domain", default="0,1", help="value domain for bisim/cube")
    p.add_argument("--trace-dump", help="write the verdict trace to a file")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="run an interleaved multi-thread system")
    p.add_argument("--thread", action="append", default=[], help="thread program (.w or .s)")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--mem", action="append", help="initial memory override var=val")
    p.add_argument("--two-run", action="store_true", help="two-run noninterference mode")
    p.add_argument("--mutate", action="append", help="High-variable mutation var=val")
    p.add_argument("--runs", type=int, default=20, help="seed count for --two-run")
    p.add_argument("--trace-dump", help="write the interleaving trace to a file")
    p.set_defaults(func=cmd_simulate)
    return top


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (UsageError, ParseError, PolicyParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PreconditionError, BoundExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
