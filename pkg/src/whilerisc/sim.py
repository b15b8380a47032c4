"""Interleaving simulator for systems of threads sharing one memory.

Interleavings are simulated, never real: a seeded round-robin scheduler
with a random quantum of 1-4 steps drives one thread at a time over the
shared memory.  The schedule is drawn up front from the seed alone, so two
runs with the same seed interleave identically regardless of what the
threads compute - which is what the two-run noninterference test needs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

from . import risc as rs
from . import whilelang as wl
from .checkers import PreconditionError, Verdict
from .lang import BLOCKED, Memory, ModeState, exp_vars
from .policy import HIGH, Policy, classify, initial_mode_state
from .risc import Program, RiscConfig, risc_step
from .whilelang import WhileConfig, leftmost_cmd, while_step


@dataclass(frozen=True)
class ThreadSpec:
    program: Union[wl.Cmd, Program]
    held: Tuple[str, ...] = ()


@dataclass(frozen=True)
class SystemConfig:
    threads: Tuple[ThreadSpec, ...]
    mem: Memory
    seed: int = 0


@dataclass(frozen=True)
class InterferenceScript:
    """Environment writes applied at given step indices.  Writes must
    target variables writable under the audited thread's mode state when
    they fire; the checkers defer writes that are not yet applicable."""

    writes: Tuple[Tuple[int, str, int], ...]


@dataclass
class TraceStep:
    index: int
    tid: int
    action: str
    reads: FrozenSet[str]
    writes: Tuple[Tuple[str, int], ...]
    lockop: Optional[Tuple[str, str]] = None
    detail: str = ""


@dataclass
class SimResult:
    trace: List[TraceStep]
    mem: Memory
    threads: Tuple[object, ...]
    initial_mds: Tuple[ModeState, ...]
    schedule: Tuple[int, ...]
    logged_vars: Tuple[str, ...]
    value_log: List[tuple]
    deadlocked: bool = False
    steps: int = 0

    def format_trace(self) -> str:
        return "\n".join(
            f"{t.index} {t.tid} {t.action} {t.detail}".rstrip() for t in self.trace
        )


def unsynchronized_low_sinks(policy: Policy) -> List[str]:
    """Permanently-Low variables ungoverned by any lock: the locations an
    attacker can watch without following the synchronization scheme."""
    cls = policy.classification
    dep = {d.var for d in cls.dependent}
    out = []
    for x in policy.universe:
        if x in policy.lock_names or x in cls.static_high or x in dep:
            continue
        if policy.governed_lock(x) is not None:
            continue
        out.append(x)
    return out


def _draw_schedule(n_threads: int, slots: int, seed: int) -> Tuple[int, ...]:
    rng = random.Random(seed)
    out: List[int] = []
    while len(out) < slots:
        for tid in range(n_threads):
            out.extend([tid] * rng.randint(1, 4))
    return tuple(out[:slots])


def _while_action(cmd) -> Tuple[str, FrozenSet[str], str]:
    lm = leftmost_cmd(cmd)
    if isinstance(lm, wl.Assign):
        return "assign", exp_vars(lm.expr), lm.var
    if isinstance(lm, wl.If):
        return "branch", exp_vars(lm.cond), ""
    if isinstance(lm, wl.While):
        return "unroll", frozenset(), ""  # the condition is read at the If step
    if isinstance(lm, wl.LockAcq):
        return "acquire", frozenset(), lm.lock
    if isinstance(lm, wl.LockRel):
        return "release", frozenset(), lm.lock
    return "skip", frozenset(), ""


def _risc_action(body, regs):
    if isinstance(body, rs.Load):
        return "load", frozenset((body.var,)), None, f"r{body.reg}<-{body.var}"
    if isinstance(body, rs.Store):
        return "store", frozenset(), (body.var, regs[body.reg]), f"{body.var}={regs[body.reg]}"
    if isinstance(body, rs.LockAcq):
        return "acquire", frozenset(), None, body.lock
    if isinstance(body, rs.LockRel):
        return "release", frozenset(), None, body.lock
    return "exec", frozenset(), None, type(body).__name__.lower()


def sim_run(
    system: SystemConfig,
    policy: Policy,
    max_steps: int = 10_000,
    log_vars: Optional[Sequence[str]] = None,
) -> SimResult:
    """Run the interleaved system; deterministic for a given seed.

    The scheduler skips blocked threads (their slot is consumed); the run
    ends when every thread stopped, the slots run out, or every live
    thread is stuck (recorded as a deadlock).  `value_log` records the
    values of `log_vars` (default: the unsynchronized Low sinks) after
    every slot.
    """
    n = len(system.threads)
    mem: Memory = dict(system.mem)
    cmds: List[object] = []  # per thread: Cmd, or (pc, prog, regs)
    mds: List[ModeState] = []
    for spec in system.threads:
        mds.append(initial_mode_state(policy, spec.held))
        if isinstance(spec.program, Program):
            cmds.append((0, spec.program, (0,) * 16))
        else:
            cmds.append(spec.program)
    schedule = _draw_schedule(n, max_steps, system.seed)
    logged = tuple(log_vars) if log_vars is not None else tuple(unsynchronized_low_sinks(policy))
    trace: List[TraceStep] = []
    value_log: List[tuple] = []
    deadlocked = False
    steps = 0

    def stopped(tid: int) -> bool:
        st = cmds[tid]
        if isinstance(st, tuple):
            return st[0] >= len(st[1])
        return isinstance(st, wl.Stop)

    def stuck(tid: int) -> bool:
        st = cmds[tid]
        if isinstance(st, tuple):
            pc, prog, _ = st
            if pc >= len(prog):
                return False
            body = prog[pc].body
            return isinstance(body, rs.LockAcq) and mem[body.lock] != 0
        lm = leftmost_cmd(st)
        return isinstance(lm, wl.LockAcq) and mem[lm.lock] != 0

    for index, tid in enumerate(schedule):
        if all(stopped(t) for t in range(n)):
            break
        if all(stopped(t) or stuck(t) for t in range(n)):
            deadlocked = True
            trace.append(TraceStep(index, tid, "deadlock", frozenset(), ()))
            break
        st = cmds[tid]
        if stopped(tid):
            value_log.append(tuple(mem[x] for x in logged))
            continue
        if isinstance(st, tuple):
            pc, prog, regs = st
            cfg = RiscConfig(pc, prog, regs, mds[tid], mem)
            body = prog[pc].body
            action, reads, write, detail = _risc_action(body, regs)
            nxt = risc_step(cfg, policy)
            if nxt is BLOCKED:
                value_log.append(tuple(mem[x] for x in logged))
                continue
            cmds[tid] = (nxt.pc, nxt.prog, nxt.regs)
            mds[tid] = nxt.mds
            mem = dict(nxt.mem)
            writes = (write,) if write is not None else ()
            lockop = (action, detail) if action in ("acquire", "release") else None
            trace.append(TraceStep(index, tid, action, reads, writes, lockop, detail))
        else:
            cfg = WhileConfig(st, mds[tid], mem)
            action, reads, target = _while_action(st)
            nxt = while_step(cfg, policy)
            if nxt is BLOCKED:
                value_log.append(tuple(mem[x] for x in logged))
                continue
            cmds[tid] = nxt.cmd
            mds[tid] = nxt.mds
            writes = ()
            detail = target
            if action == "assign":
                writes = ((target, nxt.mem[target]),)
                detail = f"{target}={nxt.mem[target]}"
            lockop = (action, target) if action in ("acquire", "release") else None
            mem = dict(nxt.mem)
            trace.append(TraceStep(index, tid, action, reads, writes, lockop, detail))
        steps += 1
        value_log.append(tuple(mem[x] for x in logged))

    final_states = []
    for tid, st in enumerate(cmds):
        if isinstance(st, tuple):
            final_states.append(RiscConfig(st[0], st[1], st[2], mds[tid], mem))
        else:
            final_states.append(WhileConfig(st, mds[tid], mem))
    initial = tuple(initial_mode_state(policy, s.held) for s in system.threads)
    return SimResult(
        trace, mem, tuple(final_states), initial, schedule, logged, value_log, deadlocked, steps
    )


def check_mode_compatibility(result: SimResult, policy: Policy) -> Verdict:
    """Audit a trace for assume-guarantee violations: no thread may write a
    variable another thread assumes unwritten, nor read one another thread
    assumes unread."""
    mds = list(result.initial_mds)
    for t in result.trace:
        for u in range(len(mds)):
            if u == t.tid:
                continue
            forbidden_w = mds[u].asm_no_w | mds[u].asm_no_rw
            for var, _ in t.writes:
                if var in forbidden_w:
                    return Verdict(
                        False, "mode-compatibility", None, t.index, "assume-write", t.index,
                        (f"thread {t.tid} wrote {var!r} under thread {u}'s assumption",),
                    )
            hit = t.reads & mds[u].asm_no_rw
            if hit:
                return Verdict(
                    False, "mode-compatibility", None, t.index, "assume-read", t.index,
                    (f"thread {t.tid} read {sorted(hit)} under thread {u}'s assumption",),
                )
        if t.lockop is not None:
            kind, lock = t.lockop
            spec = policy.lock_interp(lock)
            if kind == "acquire":
                mds[t.tid] = mds[t.tid].acquire(spec.no_write, spec.no_read_write)
            else:
                mds[t.tid] = mds[t.tid].release(spec.no_write, spec.no_read_write)
    return Verdict(True, "mode-compatibility", None, len(result.trace))


def thread_write_sequence(result: SimResult, tid: int) -> List[Tuple[str, int]]:
    """The ordered shared-memory writes performed by one thread."""
    out: List[Tuple[str, int]] = []
    for t in result.trace:
        if t.tid == tid:
            out.extend(t.writes)
    return out


def two_run_noninterference(
    system: SystemConfig,
    policy: Policy,
    high_mutation: Dict[str, int],
    *,
    max_steps: int = 10_000,
    seeds: Sequence[int] = tuple(range(20)),
    sinks: Optional[Sequence[str]] = None,
) -> Verdict:
    """Run the system twice per seed - baseline and High-mutated - under
    the identical schedule and compare the value traces of the untrusted
    sinks.  The mutation may only touch variables classified High under
    the initial memory."""
    for x in high_mutation:
        if classify(policy, system.mem, x) != HIGH:
            raise PreconditionError(f"mutation touches {x!r}, which is not High initially")
    sink_list = tuple(sinks) if sinks is not None else tuple(unsynchronized_low_sinks(policy))
    total = 0
    last_seed = None
    for seed in seeds:
        last_seed = seed
        mut_mem = dict(system.mem)
        mut_mem.update(high_mutation)
        r1 = sim_run(SystemConfig(system.threads, dict(system.mem), seed), policy, max_steps, sink_list)
        r2 = sim_run(SystemConfig(system.threads, mut_mem, seed), policy, max_steps, sink_list)
        total += max(r1.steps, r2.steps)
        if r1.value_log != r2.value_log:
            at = 0
            for i, (a, b) in enumerate(zip(r1.value_log, r2.value_log)):
                if a != b:
                    at = i
                    break
            else:
                at = min(len(r1.value_log), len(r2.value_log))
            return Verdict(
                False, "two-run-noninterference", seed, total, "sink-divergence", at,
                (f"sink traces diverge at slot {at} for seed {seed}", f"sinks={list(sink_list)}"),
            )
    return Verdict(True, "two-run-noninterference", last_seed, total)
