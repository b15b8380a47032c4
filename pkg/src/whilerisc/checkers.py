"""Dynamic checks for security-preserving compilation.

The central check co-executes a source program with its compiled output,
advancing the source by the pacing function's count of abstract steps per
machine step, and asserts at every paired point that mode state and shared
memory agree and that the configuration stays consistent with the
compilation-record annotation in force.  Around it sit the decomposition
side-condition check (consistent stopping, pacing and program-location
coupling across two observationally equivalent runs), the source-level
no-high-branching check, an explicit-state bounded bisimulation builder,
and a direct cube-shaped cross-validation of the decomposition.

Environment interference is applied only at paired points where the
written variable is writable under the current mode state and not listed
in the instruction's guard set (variables already read by an in-flight
expression evaluation); other writes are deferred to the next such point.
Guard windows close at the consuming store or branch, so deferral is
bounded by one expression evaluation.
"""

from __future__ import annotations

import itertools
import random
from collections import deque
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

from . import risc as rs
from . import whilelang as wl
from .compiler import CompileOutput, CompiledInstr, compile_program, config_consistent
from .lang import BLOCKED, STOPPED, Memory, eval_exp, mem_key, wrap
from .policy import (
    HIGH,
    Policy,
    classify,
    control_vars,
    initial_mode_state,
    low_mds_eq,
    readable,
    writable,
)
from .risc import Program, RiscConfig, risc_step, risc_stops
from .whilelang import WhileConfig, leftmost_cmd, while_step, while_stops


class CheckerMisuseError(Exception):
    """The checker was driven outside its contract (pc out of range)."""


class PreconditionError(Exception):
    """Inputs violate a check's entry conditions; distinct from a FAIL."""


class BoundExceeded(Exception):
    """State-space or enumeration budget exhausted; not a verdict."""


@dataclass(frozen=True)
class PairedState:
    abs: WhileConfig
    conc: RiscConfig


@dataclass(frozen=True)
class CoupledState:
    left: RiscConfig
    right: RiscConfig


@dataclass(frozen=True)
class Verdict:
    passed: bool
    check: str
    seed: Optional[int]
    steps: int
    clause: Optional[str] = None
    step_index: Optional[int] = None
    trace: Tuple[str, ...] = ()
    notes: Tuple[str, ...] = ()

    def format_line(self) -> str:
        word = "PASS" if self.passed else "FAIL"
        line = f"{word} {self.check} seed={self.seed} steps={self.steps}"
        if self.clause is not None:
            line += f" clause={self.clause} at step={self.step_index}"
        return line


@dataclass(frozen=True)
class BoundedRelation:
    kind: str
    pairs: FrozenSet[Tuple[tuple, tuple]]
    configs: Dict[tuple, WhileConfig]


@dataclass
class BisimResult:
    relation: Optional[BoundedRelation]
    counterexample: Optional[Tuple[WhileConfig, WhileConfig]]
    reachable: int
    initial_pairs: int
    iterations: int

    @property
    def ok(self) -> bool:
        return self.relation is not None


PacingFn = Callable[[WhileConfig, RiscConfig, Sequence[CompiledInstr]], int]

_EXPR_INSTRS = (rs.Load, rs.MoveK, rs.Op)


def abs_steps(abs_cfg: WhileConfig, conc: RiscConfig, annotated: Sequence[CompiledInstr]) -> int:
    """Abstract steps to pair with the machine step about to execute.

    Expression-evaluation instructions pace 1 only when the source side
    sits at a loop header (letting the loop unroll alongside the first
    condition instruction), else 0; epilogue control flow paces 0; every
    other instruction runs in lockstep.
    """
    if conc.pc >= len(annotated):
        raise CheckerMisuseError("pacing queried past the end of the program")
    ci = annotated[conc.pc]
    if ci.epilogue:
        return 0
    if isinstance(ci.instr.body, _EXPR_INSTRS):
        return 1 if isinstance(leftmost_cmd(abs_cfg.cmd), wl.While) else 0
    return 1


def _rec_at(compiled: CompileOutput, pc: int):
    if pc < len(compiled.annotated):
        return compiled.annotated[pc].rec
    return compiled.final_rec


def _fmt_while_cfg(cfg: WhileConfig) -> str:
    from .syntax import format_cmd

    cmd = " ".join(format_cmd(cfg.cmd).split())
    mem = " ".join(f"{k}={v}" for k, v in sorted(cfg.mem.items()))
    return f"abstract | {cmd} | {mem}"


def _fmt_risc_cfg(cfg: RiscConfig) -> str:
    from .syntax import format_instr

    instr = format_instr(cfg.prog[cfg.pc]) if cfg.pc < len(cfg.prog) else "<stopped>"
    regs = " ".join(f"r{i}={v}" for i, v in enumerate(cfg.regs) if v)
    mem = " ".join(f"{k}={v}" for k, v in sorted(cfg.mem.items()))
    return f"machine  | pc={cfg.pc}: {instr} | {regs} | {mem}"


def _with_mem(abs_cfg: WhileConfig, conc: RiscConfig, x: str, v: int):
    m1 = dict(abs_cfg.mem)
    m1[x] = v
    m2 = dict(conc.mem)
    m2[x] = v
    return (
        WhileConfig(abs_cfg.cmd, abs_cfg.mds, m1),
        RiscConfig(conc.pc, conc.prog, conc.regs, conc.mds, m2),
    )


def check_refinement_run(
    src: wl.Cmd,
    policy: Policy,
    *,
    mem: Memory,
    held: Tuple[str, ...] = (),
    regs: Optional[Tuple[int, ...]] = None,
    env_script: Optional[Sequence[Tuple[int, str, int]]] = None,
    max_steps: int = 100_000,
    reg_count: int = 16,
    compiled: Optional[CompileOutput] = None,
    pacing: Optional[PacingFn] = None,
    seed: Optional[int] = None,
    check_name: str = "refinement",
) -> Verdict:
    """Co-execute `src` with its compilation, one machine step at a time.

    At every paired point this asserts mode-state and memory equality
    between the two sides and consistency of the configuration with the
    record annotation at the current pc; scheduled environment writes are
    applied identically to both sides (writable variables only, deferred
    past guard windows), after which the same assertions are re-checked.
    Passes when both sides stop together or the step budget runs out with
    no violation (an inconclusive pass, noted).
    """
    if compiled is None:
        compiled = compile_program(src, policy, reg_count, held)
    if compiled.failed:
        raise PreconditionError("compilation failed: " + "; ".join(compiled.reasons))
    annotated = compiled.annotated
    prog = compiled.program
    pace = pacing or abs_steps

    mds0 = initial_mode_state(policy, held)
    if regs is None:
        regs = (0,) * reg_count
    abs_cfg = WhileConfig(src, mds0, dict(mem))
    conc = RiscConfig(0, prog, tuple(regs), mds0, dict(mem))
    if not config_consistent(_rec_at(compiled, 0), conc.regs, conc.mds, conc.mem):
        raise PreconditionError("initial configuration inconsistent with the compilation record")

    sched = sorted(env_script or [], key=lambda t: t[0])
    si = 0
    pending: List[Tuple[str, int]] = []
    notes: List[str] = []
    trace: deque = deque(maxlen=80)
    steps = 0

    def fail(clause: str, msg: str) -> Verdict:
        lines = tuple(trace) + (
            f"{steps}: {msg}",
            _fmt_while_cfg(abs_cfg),
            _fmt_risc_cfg(conc),
        )
        return Verdict(False, check_name, seed, steps, clause, steps, lines, tuple(notes))

    def assert_point() -> Optional[Verdict]:
        if abs_cfg.mds != conc.mds:
            return fail("mds-equality", "abstract and concrete mode states differ")
        if abs_cfg.mem != conc.mem:
            diffs = sorted(x for x in conc.mem if abs_cfg.mem.get(x) != conc.mem[x])
            return fail("memory-equality", f"memories differ on {diffs}")
        if not config_consistent(_rec_at(compiled, conc.pc), conc.regs, conc.mds, conc.mem):
            return fail("config-consistency", f"record annotation at pc={conc.pc} violated")
        return None

    while True:
        while si < len(sched) and sched[si][0] <= steps:
            pending.append((sched[si][1], sched[si][2]))
            si += 1
        if pending:
            still: List[Tuple[str, int]] = []
            for x, val in pending:
                guard = annotated[conc.pc].guard_vars if conc.pc < len(prog) else frozenset()
                if x in guard or not writable(conc.mds, x):
                    still.append((x, val))
                    continue
                abs_cfg, conc = _with_mem(abs_cfg, conc, x, wrap(val))
                trace.append(f"{steps}: env write {x}:={val}")
                bad = assert_point()
                if bad:
                    return bad
            pending = still

        if risc_stops(conc):
            if while_stops(abs_cfg):
                return Verdict(True, check_name, seed, steps, notes=tuple(notes))
            return fail("stopping", "concrete program stopped but abstract did not")
        if steps >= max_steps:
            notes.append("inconclusive: step budget exhausted before joint stop")
            return Verdict(True, check_name, seed, steps, notes=tuple(notes))

        n = pace(abs_cfg, conc, annotated)
        nxt = risc_step(conc, policy)
        if nxt is BLOCKED:
            if while_step(abs_cfg, policy) is BLOCKED:
                notes.append("deadlock: both sides blocked on a lock")
                return Verdict(True, check_name, seed, steps, notes=tuple(notes))
            return fail("blocked-mismatch", "concrete blocked without the abstract side")
        conc = nxt
        for _ in range(n):
            an = while_step(abs_cfg, policy)
            if an is STOPPED or an is BLOCKED:
                return fail("pacing", f"abstract side cannot take {n} paired step(s)")
            abs_cfg = an
        steps += 1
        trace.append(f"{steps}: pc={conc.pc} n={n}")
        bad = assert_point()
        if bad:
            return bad


def low_eq_memory_pairs(
    policy: Policy,
    mds,
    rng: random.Random,
    count: int,
    value_range: Tuple[int, int] = (-8, 8),
) -> List[Tuple[Memory, Memory]]:
    """Memory pairs satisfying low-equivalence modulo modes at `mds`.

    Lock variables start free (0) on both sides; variables exempt from the
    equality (High-classified or read-restricted non-control variables)
    get independent values in the second memory.  Draws are biased toward
    zero so truthiness boundaries and dependent-classification switches
    are well represented.
    """
    lo, hi = value_range

    def draw() -> int:
        return 0 if rng.random() < 0.35 else rng.randint(lo, hi)

    ctrl = control_vars(policy)
    pairs = []
    for _ in range(count):
        m1: Memory = {}
        for x in policy.universe:
            m1[x] = 0 if x in policy.lock_names else draw()
        m2 = dict(m1)
        for x in policy.universe:
            if x in policy.lock_names or x in ctrl:
                continue
            if classify(policy, m1, x) == HIGH or not readable(mds, x):
                m2[x] = draw()
        pairs.append((m1, m2))
    return pairs


def check_no_high_branching(
    src: wl.Cmd,
    policy: Policy,
    *,
    count: int = 100,
    max_steps: int = 10_000,
    seed: int = 0,
    held: Tuple[str, ...] = (),
    pairs: Optional[Sequence[Tuple[Memory, Memory]]] = None,
    value_range: Tuple[int, int] = (-8, 8),
    check_name: str = "high-branching",
) -> Verdict:
    """Co-execute the source program on low-equivalent memory pairs and
    reject any branch whose condition disagrees in truthiness (the two
    sides must also remain at syntactically equal commands)."""
    mds0 = initial_mode_state(policy, held)
    rng = random.Random(seed)
    if pairs is None:
        pairs = low_eq_memory_pairs(policy, mds0, rng, count, value_range)
    total = 0
    for pi, (m1, m2) in enumerate(pairs):
        if not low_mds_eq(policy, mds0, m1, m2):
            raise PreconditionError("memory pair is not low-equivalent")
        a1 = WhileConfig(src, mds0, dict(m1))
        a2 = WhileConfig(src, mds0, dict(m2))
        for step in range(max_steps):
            if a1.cmd != a2.cmd:
                return Verdict(
                    False, check_name, seed, total, "program-sync", step,
                    (f"pair {pi}: commands diverged at step {step}",),
                )
            lm = leftmost_cmd(a1.cmd)
            if isinstance(lm, wl.If):
                t1 = eval_exp(a1.mem, lm.cond) != 0
                t2 = eval_exp(a2.mem, lm.cond) != 0
                if t1 != t2:
                    return Verdict(
                        False, check_name, seed, total, "high-branching", step,
                        (f"pair {pi}: branch condition disagrees at step {step}",),
                    )
            n1 = while_step(a1, policy)
            n2 = while_step(a2, policy)
            total += 1
            if n1 is STOPPED and n2 is STOPPED:
                break
            if (n1 is STOPPED) != (n2 is STOPPED):
                return Verdict(
                    False, check_name, seed, total, "stopping", step,
                    (f"pair {pi}: one side stopped at step {step}",),
                )
            if (n1 is BLOCKED) or (n2 is BLOCKED):
                if n1 is not n2:
                    return Verdict(
                        False, check_name, seed, total, "blocked-mismatch", step,
                        (f"pair {pi}: one side blocked at step {step}",),
                    )
                break
            a1, a2 = n1, n2
    return Verdict(True, check_name, seed, total)


def check_decomp_side_conditions(
    policy: Policy,
    *,
    src: Optional[wl.Cmd] = None,
    compiled: Optional[CompileOutput] = None,
    raw_prog: Optional[Program] = None,
    count: int = 100,
    max_steps: int = 10_000,
    seed: int = 0,
    held: Tuple[str, ...] = (),
    reg_count: int = 16,
    include_pc_coupling: bool = True,
    precheck_high_branching: bool = True,
    probe_period: int = 0,
    pacing: Optional[PacingFn] = None,
    pairs: Optional[Sequence[Tuple[Memory, Memory]]] = None,
    value_range: Tuple[int, int] = (-8, 8),
    check_name: str = "timing",
) -> Verdict:
    """Timing/stopping side conditions over low-equivalent memory pairs.

    Runs the machine program twice in lockstep from each pair and asserts,
    at every paired index: equal stopping, equal pacing (when a source
    program supplies the abstract sides), program-location coupling (same
    pc in the same program) and mode-state equality.  With `probe_period`
    set, closure under environment changes is sampled by injecting
    writable-variable writes on both runs (equal values for observable
    variables, independently chosen values for High ones) and re-checking.

    Hand-written assembly can be checked directly via `raw_prog`; the
    pacing clause (and the pc-coupling clause, when the program pads both
    branch arms to equal step counts instead) can then be dropped.
    """
    with_abs = src is not None
    if with_abs:
        if compiled is None:
            compiled = compile_program(src, policy, reg_count, held)
        if compiled.failed:
            raise PreconditionError("compilation failed: " + "; ".join(compiled.reasons))
        prog = compiled.program
        annotated = compiled.annotated
        if precheck_high_branching:
            pre = check_no_high_branching(
                src, policy, count=count, max_steps=max_steps, seed=seed,
                held=held, value_range=value_range,
            )
            if not pre.passed:
                return Verdict(
                    False, check_name, seed, 0, "high-branching-precondition", 0, pre.trace
                )
    else:
        if raw_prog is None:
            raise PreconditionError("either a source program or a raw program is required")
        prog = raw_prog
        annotated = ()

    pace = pacing or abs_steps
    mds0 = initial_mode_state(policy, held)
    rng = random.Random(seed)
    if pairs is None:
        pairs = low_eq_memory_pairs(policy, mds0, rng, count, value_range)
    ctrl = control_vars(policy)
    regs0 = (0,) * reg_count
    total = 0
    notes: List[str] = []

    for pi, (m1, m2) in enumerate(pairs):
        if not low_mds_eq(policy, mds0, m1, m2):
            raise PreconditionError("memory pair is not low-equivalent")
        c1 = RiscConfig(0, prog, regs0, mds0, dict(m1))
        c2 = RiscConfig(0, prog, regs0, mds0, dict(m2))
        a1 = WhileConfig(src, mds0, dict(m1)) if with_abs else None
        a2 = WhileConfig(src, mds0, dict(m2)) if with_abs else None

        def fail(clause: str, step: int, msg: str) -> Verdict:
            return Verdict(
                False, check_name, seed, total, clause, step,
                (f"pair {pi}: {msg}", _fmt_risc_cfg(c1), _fmt_risc_cfg(c2)),
            )

        for step in range(max_steps):
            s1, s2 = risc_stops(c1), risc_stops(c2)
            if s1 != s2:
                return fail("stopping", step, "stopping behaviour diverged")
            if s1:
                break
            if include_pc_coupling and (c1.pc != c2.pc or c1.prog != c2.prog):
                return fail("pc-coupling", step, "program locations diverged")
            if with_abs:
                n1 = pace(a1, c1, annotated)
                n2 = pace(a2, c2, annotated)
                if n1 != n2:
                    return fail("pacing", step, f"pacing diverged ({n1} vs {n2})")
            if c1.mds != c2.mds:
                return fail("mds-equality", step, "mode states diverged")

            if probe_period and step % probe_period == probe_period - 1:
                guard = annotated[c1.pc].guard_vars if annotated and c1.pc < len(prog) else frozenset()
                cand = [
                    x for x in policy.universe
                    if x not in policy.lock_names and x not in guard and writable(c1.mds, x)
                ]
                if cand:
                    x = cand[rng.randrange(len(cand))]
                    lo, hi = value_range
                    if (
                        x not in ctrl
                        and classify(policy, c1.mem, x) == HIGH
                        and classify(policy, c2.mem, x) == HIGH
                    ):
                        v1, v2 = rng.randint(lo, hi), rng.randint(lo, hi)
                    else:
                        v1 = v2 = rng.randint(lo, hi)
                    c1 = RiscConfig(c1.pc, prog, c1.regs, c1.mds, {**c1.mem, x: v1})
                    c2 = RiscConfig(c2.pc, prog, c2.regs, c2.mds, {**c2.mem, x: v2})
                    if with_abs:
                        a1 = WhileConfig(a1.cmd, a1.mds, {**a1.mem, x: v1})
                        a2 = WhileConfig(a2.cmd, a2.mds, {**a2.mem, x: v2})
                    if include_pc_coupling and (c1.pc != c2.pc or c1.prog != c2.prog):
                        return fail("pc-coupling", step, "coupling broken by environment write")
                    if c1.mds != c2.mds:
                        return fail("mds-equality", step, "mode states broken by environment write")

            r1 = risc_step(c1, policy)
            r2 = risc_step(c2, policy)
            total += 1
            if (r1 is BLOCKED) != (r2 is BLOCKED):
                return fail("blocked-mismatch", step, "one run blocked on a lock")
            if r1 is BLOCKED:
                notes.append(f"pair {pi}: deadlock after {step} steps")
                break
            c1, c2 = r1, r2
            if with_abs:
                for _ in range(n1):
                    an1 = while_step(a1, policy)
                    an2 = while_step(a2, policy)
                    if an1 in (STOPPED, BLOCKED) or an2 in (STOPPED, BLOCKED):
                        return fail("pacing", step, "abstract sides cannot keep pace")
                    a1, a2 = an1, an2
        else:
            notes.append(f"pair {pi}: inconclusive after {max_steps} steps")
    return Verdict(True, check_name, seed, total, notes=tuple(notes))


# --- bounded bisimulation ---


def _value_memories(policy: Policy, domain: Sequence[int]) -> List[Memory]:
    """Every memory over the universe with program variables drawn from
    `domain` and lock variables from {0, 1}."""
    names = list(policy.universe)
    axes = [
        (0, 1) if x in policy.lock_names else tuple(domain)
        for x in names
    ]
    out = []
    for combo in itertools.product(*axes):
        out.append(dict(zip(names, combo)))
    return out


def _mem_variants(mem: Memory, free: List[str], axes: Dict[str, Tuple[int, ...]]):
    """All memories agreeing with `mem` outside `free`."""
    if not free:
        return [mem]
    out = []
    for combo in itertools.product(*(axes[x] for x in free)):
        m = dict(mem)
        m.update(zip(free, combo))
        out.append(m)
    return out


def build_bounded_bisim(
    src: wl.Cmd,
    policy: Policy,
    domain: Sequence[int],
    *,
    held: Tuple[str, ...] = (),
    max_states: int = 50_000,
    max_pairs: int = 400_000,
) -> BisimResult:
    """Greatest bisimulation over the reachable finite-domain state space.

    States are source configurations reachable from every initial memory
    (program variables over `domain`, lock variables over {0,1}) by thread
    steps and by environment writes to writable variables.  Starting from
    all modes-equal low-equivalent pairs, pairs are evicted until the set
    is symmetric, matches steps into itself with equal mode states, and is
    closed under simultaneous environment changes that touch only writable
    variables and preserve low-equivalence.  If some initial low-equivalent
    pair does not survive, the first such eviction is the counterexample.
    """
    mds0 = initial_mode_state(policy, held)
    axes = {
        x: ((0, 1) if x in policy.lock_names else tuple(domain))
        for x in policy.universe
    }

    init_cfgs = [WhileConfig(src, mds0, m) for m in _value_memories(policy, domain)]
    configs: Dict[tuple, WhileConfig] = {}
    succ: Dict[tuple, Optional[tuple]] = {}
    frontier = []
    for cfg in init_cfgs:
        k = cfg.key()
        if k not in configs:
            configs[k] = cfg
            frontier.append(cfg)
    while frontier:
        cfg = frontier.pop()
        k = cfg.key()
        res = while_step(cfg, policy)
        if isinstance(res, WhileConfig):
            sk = res.key()
            succ[k] = sk
            if sk not in configs:
                configs[sk] = res
                frontier.append(res)
        else:
            succ[k] = None
        for x in policy.universe:
            if not writable(cfg.mds, x):
                continue
            for v in axes[x]:
                if cfg.mem[x] == v:
                    continue
                m2 = dict(cfg.mem)
                m2[x] = v
                nxt = WhileConfig(cfg.cmd, cfg.mds, m2)
                nk = nxt.key()
                if nk not in configs:
                    configs[nk] = nxt
                    frontier.append(nxt)
        if len(configs) > max_states:
            raise BoundExceeded(f"reachable state space exceeds {max_states} states")

    by_mds: Dict[object, List[tuple]] = {}
    for k, cfg in configs.items():
        by_mds.setdefault(cfg.mds, []).append(k)

    pairs = set()
    for _, keys in by_mds.items():
        for k1 in keys:
            cfg1 = configs[k1]
            for k2 in keys:
                if low_mds_eq(policy, cfg1.mds, cfg1.mem, configs[k2].mem):
                    pairs.add((k1, k2))
                if len(pairs) > max_pairs:
                    raise BoundExceeded(f"candidate relation exceeds {max_pairs} pairs")

    initial_pairs = [
        (a.key(), b.key())
        for a in init_cfgs
        for b in init_cfgs
        if low_mds_eq(policy, mds0, a.mem, b.mem)
    ]

    # cg-closure targets depend only on the mode state and the two
    # memories, so cache them per memory pair.
    move_cache: Dict[tuple, List[Tuple[tuple, tuple]]] = {}

    def cg_targets(cfg1: WhileConfig, cfg2: WhileConfig) -> List[Tuple[tuple, tuple]]:
        ck = (cfg1.mds, mem_key(cfg1.mem), mem_key(cfg2.mem))
        hit = move_cache.get(ck)
        if hit is not None:
            return hit
        mds = cfg1.mds
        free = [x for x in policy.universe if writable(mds, x)]
        frozen = [x for x in policy.universe if not writable(mds, x)]
        out = []
        for m1p in _mem_variants(cfg1.mem, free, axes):
            if any(
                classify(policy, cfg1.mem, x) != classify(policy, m1p, x) for x in frozen
            ):
                continue
            for m2p in _mem_variants(cfg2.mem, free, axes):
                if low_mds_eq(policy, mds, m1p, m2p):
                    out.append((mem_key(m1p), mem_key(m2p)))
        move_cache[ck] = out
        return out

    evicted_initial: Optional[Tuple[tuple, tuple]] = None
    iterations = 0
    initial_set = set(initial_pairs)
    while True:
        iterations += 1
        doomed = []
        for (k1, k2) in pairs:
            if (k2, k1) not in pairs:
                doomed.append((k1, k2))
                continue
            s1 = succ.get(k1)
            if s1 is not None:
                s2 = succ.get(k2)
                if (
                    s2 is None
                    or configs[s1].mds != configs[s2].mds
                    or (s1, s2) not in pairs
                ):
                    doomed.append((k1, k2))
                    continue
            cfg1, cfg2 = configs[k1], configs[k2]
            bad = False
            for mk1, mk2 in cg_targets(cfg1, cfg2):
                t1 = (cfg1.cmd, cfg1.mds, mk1)
                t2 = (cfg2.cmd, cfg2.mds, mk2)
                if (t1, t2) not in pairs:
                    bad = True
                    break
            if bad:
                doomed.append((k1, k2))
        if not doomed:
            break
        for p in doomed:
            pairs.discard(p)
            if evicted_initial is None and p in initial_set:
                evicted_initial = p

    if evicted_initial is None:
        missing = [p for p in initial_pairs if p not in pairs]
        if missing:
            evicted_initial = missing[0]

    if evicted_initial is not None:
        a, b = evicted_initial
        return BisimResult(None, (configs[a], configs[b]), len(configs), len(initial_pairs), iterations)
    rel = BoundedRelation("B", frozenset(pairs), configs)
    return BisimResult(rel, None, len(configs), len(initial_pairs), iterations)


# --- cube cross-validation ---


@dataclass
class _RState:
    abs: WhileConfig
    conc: RiscConfig


def _advance_abs(cfg: WhileConfig, n: int, policy: Policy) -> Optional[WhileConfig]:
    for _ in range(n):
        nxt = while_step(cfg, policy)
        if not isinstance(nxt, WhileConfig):
            return None
        cfg = nxt
    return cfg


def check_cube(
    bisim: BoundedRelation,
    src: wl.Cmd,
    policy: Policy,
    domain: Sequence[int],
    *,
    held: Tuple[str, ...] = (),
    max_steps: int = 400,
    reg_count: int = 16,
    pacing: Optional[PacingFn] = None,
    max_quads: int = 2_000_000,
    seed: Optional[int] = None,
    check_name: str = "cube",
) -> Verdict:
    """Directly verify the cube-shaped preservation obligation.

    The abstract/concrete relation is realized extensionally as the set of
    paired states co-reached by the paced co-execution from every initial
    memory over the finite domain; the concrete coupling relates machine
    configurations at the same location of the same program.  For every
    related pair and machine step, the matching abstract advance must stay
    in the relation, and every coupled, bisimilar counterpart must take a
    machine step that lands back in both relations with equal mode states.
    """
    compiled = compile_program(src, policy, reg_count, held)
    if compiled.failed:
        raise PreconditionError("compilation failed: " + "; ".join(compiled.reasons))
    annotated = compiled.annotated
    prog = compiled.program
    pace = pacing or abs_steps
    mds0 = initial_mode_state(policy, held)
    regs0 = (0,) * reg_count

    rel: Dict[Tuple[tuple, tuple], _RState] = {}
    broken_runs = 0
    for mem in _value_memories(policy, domain):
        abs_cfg = WhileConfig(src, mds0, dict(mem))
        conc = RiscConfig(0, prog, regs0, mds0, dict(mem))
        for _ in range(max_steps):
            rel[(abs_cfg.key(), conc.key())] = _RState(abs_cfg, conc)
            if risc_stops(conc):
                break
            n = pace(abs_cfg, conc, annotated)
            nxt = risc_step(conc, policy)
            if nxt is BLOCKED:
                break
            conc = nxt
            stepped = _advance_abs(abs_cfg, n, policy)
            if stepped is None:
                broken_runs += 1
                break
            abs_cfg = stepped
        if len(rel) > max_quads:
            raise BoundExceeded("relation too large for cube enumeration")

    by_location: Dict[tuple, List[Tuple[tuple, tuple]]] = {}
    for (ak, ck), st in rel.items():
        by_location.setdefault((st.conc.pc, st.conc.prog), []).append((ak, ck))
    b_pairs = bisim.pairs

    checked = 0
    for (ak1, ck1), st1 in rel.items():
        conc1 = st1.conc
        if risc_stops(conc1):
            continue
        n = pace(st1.abs, conc1, annotated)
        conc1p = risc_step(conc1, policy)
        if conc1p is BLOCKED:
            continue
        abs1p = _advance_abs(st1.abs, n, policy)
        if abs1p is None:
            return Verdict(
                False, check_name, seed, checked, "front-face", checked,
                (f"no {n}-step abstract advance matches the machine step at pc={conc1.pc}",),
            )
        if (abs1p.key(), conc1p.key()) not in rel:
            return Verdict(
                False, check_name, seed, checked, "front-face", checked,
                (f"paired successor not in the refinement relation (pc={conc1.pc})",),
            )
        for (ak2, ck2) in by_location.get((conc1.pc, conc1.prog), ()):
            st2 = rel[(ak2, ck2)]
            if (ak1, ak2) not in b_pairs:
                continue
            if st1.abs.mds != st2.abs.mds or conc1.mds != st2.conc.mds:
                continue
            abs2p = _advance_abs(st2.abs, n, policy)
            if abs2p is None:
                continue
            if abs1p.mds != abs2p.mds:
                continue
            checked += 1
            if checked > max_quads:
                raise BoundExceeded("cube enumeration budget exhausted")
            conc2p = risc_step(st2.conc, policy)
            if not isinstance(conc2p, RiscConfig):
                return Verdict(
                    False, check_name, seed, checked, "back-face", checked,
                    ("coupled counterpart has no machine step",),
                )
            if conc1p.mds != conc2p.mds:
                return Verdict(
                    False, check_name, seed, checked, "back-face", checked,
                    ("coupled step broke mode-state equality",),
                )
            if (abs2p.key(), conc2p.key()) not in rel:
                return Verdict(
                    False, check_name, seed, checked, "back-face", checked,
                    ("coupled successor left the refinement relation",),
                )
            if (conc1p.pc, conc1p.prog) != (conc2p.pc, conc2p.prog):
                return Verdict(
                    False, check_name, seed, checked, "back-face", checked,
                    ("coupled successors diverged in program location",),
                )
    notes = (f"broken co-execution runs: {broken_runs}",) if broken_runs else ()
    if broken_runs:
        return Verdict(
            False, check_name, seed, checked, "front-face", checked,
            ("a co-execution run could not keep the prescribed pace",), notes,
        )
    return Verdict(True, check_name, seed, checked, notes=notes)
