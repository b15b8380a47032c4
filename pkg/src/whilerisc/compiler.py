"""The While-to-RISC compiler with stability tracking.

The compiler threads a *compilation record* through the translation: a
register record mapping registers to the expressions they currently hold
(enabling redundant-load elimination) paired with an assumption record of
the no-write / no-read-write assumption sets active at that program point.

Register-record entries are kept only for expressions whose variables are
all *stable* (covered, along with their control variables, by active
assumptions): an unstable variable can be rewritten by another thread at
any time, so caching it would let the register bank drift from shared
memory.  Consequences:

  * cached reuse of a variable's register only ever happens under a lock
    that makes the variable stable;
  * every per-instruction record annotation stays `regrec_stable`, and
    remains consistent under environment writes to writable variables.

Compilation never raises on bad input programs: data races, mode-state
inconsistencies and register exhaustion all surface as ``failed=True``
with human-readable reasons.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from . import risc
from . import whilelang as wl
from .lang import Const, Expr, Memory, ModeState, Var, exp_vars, wrap
from .policy import Policy, var_stable
from .risc import Instruction, Program

DEFAULT_REG_COUNT = 16


@dataclass(frozen=True)
class AsmRec:
    """Pair of variable sets with active AsmNoW / AsmNoRW assumptions."""

    no_write: FrozenSet[str] = frozenset()
    no_read_write: FrozenSet[str] = frozenset()


@dataclass(frozen=True)
class CompRec:
    """Compiler bookkeeping: register record plus assumption record."""

    regrec: Dict[int, Expr] = field(default_factory=dict)
    asmrec: AsmRec = AsmRec()


@dataclass(frozen=True)
class CompiledInstr:
    """One emitted instruction with the record in force before it.

    `epilogue` marks pure control-flow stitching (the pacing function
    assigns such steps zero abstract progress).  `guard_vars` lists the
    variables already read by the surrounding expression evaluation when
    control sits at this instruction; an environment write to one of them
    here would desynchronise the register bank from a re-evaluation.
    """

    instr: Instruction
    rec: CompRec
    epilogue: bool = False
    guard_vars: FrozenSet[str] = frozenset()


@dataclass(frozen=True)
class CompileOutput:
    annotated: Tuple[CompiledInstr, ...]
    exit_label: Optional[int]
    next_label: int
    final_rec: CompRec
    failed: bool
    reasons: Tuple[str, ...] = ()

    @property
    def program(self) -> Program:
        return Program(tuple(ci.instr for ci in self.annotated), self.exit_label)


@dataclass(frozen=True)
class ExprCompilation:
    instrs: Tuple[CompiledInstr, ...]
    reg: Optional[int]
    rec: CompRec
    failed: bool
    loaded: FrozenSet[str] = frozenset()


def reg_alloc(regrec: Dict[int, Expr], avoid: FrozenSet[int], reg_count: int = DEFAULT_REG_COUNT) -> Optional[int]:
    """Lowest-index register outside `avoid`, preferring ones with no
    record entry; None when every register is unavailable."""
    free = [r for r in range(reg_count) if r not in avoid]
    for r in free:
        if r not in regrec:
            return r
    return free[0] if free else None


def reg_alloc_cached(regrec: Dict[int, Expr], avoid: FrozenSet[int], v: str) -> Optional[int]:
    """Register outside `avoid` whose record entry is exactly `Var(v)`."""
    want = Var(v)
    for r in sorted(regrec):
        if r not in avoid and regrec[r] == want:
            return r
    return None


def exp_stable(asmrec: AsmRec, policy: Policy, e: Expr) -> bool:
    return all(var_stable(asmrec, policy, v) for v in exp_vars(e))


def regrec_stable(rec: CompRec, policy: Policy) -> bool:
    """Every recorded expression mentions only stable variables."""
    return all(exp_stable(rec.asmrec, policy, e) for e in rec.regrec.values())


def config_consistent(rec: CompRec, regs: Sequence[int], mds: ModeState, mem: Memory) -> bool:
    """The record matches a concrete configuration: every register entry
    evaluates to the register's content, and the assumption record equals
    the mode state's assumption sets."""
    from .lang import eval_exp

    if rec.asmrec != AsmRec(mds.asm_no_w, mds.asm_no_rw):
        return False
    return all(regs[r] == eval_exp(mem, e) for r, e in rec.regrec.items())


def meet_regrec(phi1: Dict[int, Expr], phi2: Dict[int, Expr]) -> Dict[int, Expr]:
    """Pointwise agreement of two register records."""
    return {r: e for r, e in phi1.items() if phi2.get(r) == e}


def _rec_set(rec: CompRec, r: int, e: Expr, policy: Policy) -> CompRec:
    """Record `r` as holding `e`, or drop `r` when `e` is not stable."""
    phi = dict(rec.regrec)
    if exp_stable(rec.asmrec, policy, e):
        phi[r] = e
    else:
        phi.pop(r, None)
    return CompRec(phi, rec.asmrec)


def _flush_mentions(phi: Dict[int, Expr], variables: FrozenSet[str]) -> Dict[int, Expr]:
    return {r: e for r, e in phi.items() if not (exp_vars(e) & variables)}


def compile_expr(
    rec: CompRec,
    avoid: FrozenSet[int],
    entry: Optional[int],
    e: Expr,
    policy: Policy,
    reg_count: int = DEFAULT_REG_COUNT,
) -> ExprCompilation:
    """Compile `e`, leaving its value in the returned register.

    Constants move into fresh registers; variables reuse a cached register
    when one holds exactly that variable, else load once.  Binary
    operations evaluate the right operand first, then the left with the
    right's register protected, and combine with an `Op` writing the right
    register - so a register caching a variable for later reuse is never
    clobbered while still wanted.  Fails only on register exhaustion.
    """
    instrs: List[CompiledInstr] = []
    loaded: set = set()

    def emit(body, rec_before: CompRec) -> None:
        instrs.append(CompiledInstr(Instruction(body), rec_before, False, frozenset(loaded)))

    def go(rec: CompRec, avoid: FrozenSet[int], e: Expr):
        if isinstance(e, Const):
            r = reg_alloc(rec.regrec, avoid, reg_count)
            if r is None:
                return None, rec, False
            emit(risc.MoveK(r, wrap(e.value)), rec)
            return r, _rec_set(rec, r, e, policy), True
        if isinstance(e, Var):
            rc = reg_alloc_cached(rec.regrec, avoid, e.name)
            if rc is not None:
                return rc, rec, True
            r = reg_alloc(rec.regrec, avoid, reg_count)
            if r is None:
                return None, rec, False
            emit(risc.Load(r, e.name), rec)
            loaded.add(e.name)
            return r, _rec_set(rec, r, e, policy), True
        rr, rec1, ok = go(rec, avoid, e.right)
        if not ok:
            return None, rec1, False
        rl, rec2, ok = go(rec1, avoid | {rr}, e.left)
        if not ok:
            return None, rec2, False
        emit(risc.Op(e.op, rl, rr), rec2)
        return rr, _rec_set(rec2, rr, e, policy), True

    reg, rec_out, ok = go(rec, frozenset(avoid), e)
    if entry is not None and instrs:
        head = instrs[0]
        instrs[0] = CompiledInstr(
            Instruction(head.instr.body, entry), head.rec, head.epilogue, head.guard_vars
        )
    return ExprCompilation(tuple(instrs), reg, rec_out, not ok, frozenset(loaded))


def _fail(next_label: int, rec: CompRec, reasons) -> CompileOutput:
    return CompileOutput((), None, next_label, rec, True, tuple(reasons))


def compile_cmd(
    rec: CompRec,
    entry: Optional[int],
    next_label: int,
    c: wl.Cmd,
    policy: Policy,
    reg_count: int = DEFAULT_REG_COUNT,
) -> CompileOutput:
    """Compile one command given the record in force, an optional entry
    label for the fragment's first instruction, and the next fresh label.

    Returns the record-annotated instructions, the fragment's exit label
    (attached to the *successor* fragment's first instruction when
    fragments are sequenced, and resolving one past the end of a finished
    program), the new fresh-label counter and the final record.
    """
    if isinstance(c, wl.Skip):
        nop = CompiledInstr(Instruction(risc.Nop(), entry), rec)
        return CompileOutput((nop,), None, next_label, rec, False)

    if isinstance(c, wl.Assign):
        ec = compile_expr(rec, frozenset(), entry, c.expr, policy, reg_count)
        if ec.failed:
            return _fail(next_label, rec, [f"expression depth exceeds the {reg_count}-register bank"])
        store_label = entry if not ec.instrs else None
        store = CompiledInstr(
            Instruction(risc.Store(c.var, ec.reg), store_label), ec.rec, False, ec.loaded
        )
        phi = _flush_mentions(ec.rec.regrec, frozenset((c.var,)))
        phi.pop(ec.reg, None)
        rec2 = _rec_set(CompRec(phi, ec.rec.asmrec), ec.reg, Var(c.var), policy)
        reasons: List[str] = []
        lock = policy.governed_lock(c.var)
        if lock is not None and not var_stable(ec.rec.asmrec, policy, c.var):
            reasons.append(f"data race: write to {c.var!r} without holding {lock!r}")
        return CompileOutput(
            ec.instrs + (store,), None, next_label, rec2, bool(reasons), tuple(reasons)
        )

    if isinstance(c, wl.Seq):
        out1 = compile_cmd(rec, entry, next_label, c.first, policy, reg_count)
        if out1.failed:
            return _fail(next_label, rec, out1.reasons)
        out2 = compile_cmd(out1.final_rec, out1.exit_label, out1.next_label, c.rest, policy, reg_count)
        if out2.failed:
            return _fail(next_label, rec, out2.reasons)
        return CompileOutput(
            out1.annotated + out2.annotated,
            out2.exit_label,
            out2.next_label,
            out2.final_rec,
            False,
        )

    if isinstance(c, wl.If):
        ec = compile_expr(rec, frozenset(), entry, c.cond, policy, reg_count)
        if ec.failed:
            return _fail(next_label, rec, [f"expression depth exceeds the {reg_count}-register bank"])
        br, ex = next_label, next_label + 1
        out1 = compile_cmd(ec.rec, None, next_label + 2, c.then, policy, reg_count)
        if out1.failed:
            return _fail(next_label, rec, out1.reasons)
        out2 = compile_cmd(ec.rec, br, out1.next_label, c.orelse, policy, reg_count)
        if out2.failed:
            return _fail(next_label, rec, out2.reasons)
        if out1.final_rec.asmrec != out2.final_rec.asmrec:
            return _fail(next_label, rec, ["branches act inconsistently on the mode state"])
        jz_label = entry if not ec.instrs else None
        jz = CompiledInstr(Instruction(risc.Jz(br, ec.reg), jz_label), ec.rec, False, ec.loaded)
        jmp = CompiledInstr(Instruction(risc.Jmp(ex), out1.exit_label), out1.final_rec, True)
        nop = CompiledInstr(Instruction(risc.Nop(), out2.exit_label), out2.final_rec, True)
        final = CompRec(
            meet_regrec(out1.final_rec.regrec, out2.final_rec.regrec), out1.final_rec.asmrec
        )
        return CompileOutput(
            ec.instrs + (jz,) + out1.annotated + (jmp,) + out2.annotated + (nop,),
            ex,
            out2.next_label,
            final,
            False,
        )

    if isinstance(c, wl.While):
        if entry is not None:
            header, nl = entry, next_label
        else:
            header, nl = next_label, next_label + 1
        ex = nl
        flushed = CompRec({}, rec.asmrec)  # loop re-entry invalidates cached values
        ec = compile_expr(flushed, frozenset(), header, c.cond, policy, reg_count)
        if ec.failed:
            return _fail(next_label, rec, [f"expression depth exceeds the {reg_count}-register bank"])
        assert ec.instrs, "a condition compiled from a flushed record emits instructions"
        outb = compile_cmd(ec.rec, None, nl + 1, c.body, policy, reg_count)
        if outb.failed:
            return _fail(next_label, rec, outb.reasons)
        if outb.final_rec.asmrec != rec.asmrec:
            return _fail(next_label, rec, ["loop body does not restore the mode state"])
        jz = CompiledInstr(Instruction(risc.Jz(ex, ec.reg)), ec.rec, False, ec.loaded)
        back = CompiledInstr(Instruction(risc.Jmp(header), outb.exit_label), outb.final_rec, True)
        return CompileOutput(
            ec.instrs + (jz,) + outb.annotated + (back,),
            ex,
            outb.next_label,
            ec.rec,
            False,
        )

    if isinstance(c, wl.LockAcq):
        spec = policy.lock_interp(c.lock)
        asm2 = AsmRec(
            rec.asmrec.no_write | spec.no_write,
            rec.asmrec.no_read_write | spec.no_read_write,
        )
        instr = CompiledInstr(Instruction(risc.LockAcq(c.lock), entry), rec)
        return CompileOutput((instr,), None, next_label, CompRec(dict(rec.regrec), asm2), False)

    if isinstance(c, wl.LockRel):
        spec = policy.lock_interp(c.lock)
        if not (
            spec.no_write <= rec.asmrec.no_write
            and spec.no_read_write <= rec.asmrec.no_read_write
        ):
            return _fail(next_label, rec, [f"release of {c.lock!r} without holding it"])
        released = spec.no_write | spec.no_read_write
        asm2 = AsmRec(
            rec.asmrec.no_write - spec.no_write,
            rec.asmrec.no_read_write - spec.no_read_write,
        )
        phi = _flush_mentions(rec.regrec, released)  # entries go unstable with the lock
        instr = CompiledInstr(Instruction(risc.LockRel(c.lock), entry), rec)
        return CompileOutput((instr,), None, next_label, CompRec(phi, asm2), False)

    return _fail(next_label, rec, ["the terminated program has no compilation"])


def unstable_expr_violations(c: wl.Cmd, rec: CompRec, policy: Policy) -> List[str]:
    """Static walk simulating lock effects on the assumption record.

    Flags reads and writes of lock-governed variables at points where they
    are not stable, conditionals whose branches leave different assumption
    records, loops that do not restore the entry record, and releases of
    locks not held.
    """

    def check_expr(e: Expr, asm: AsmRec, out: List[str]) -> None:
        for x in sorted(exp_vars(e)):
            lock = policy.governed_lock(x)
            if lock is not None and not var_stable(asm, policy, x):
                out.append(f"data race: read of {x!r} without holding {lock!r}")

    def walk(c: wl.Cmd, asm: AsmRec, out: List[str]) -> AsmRec:
        if isinstance(c, wl.Skip):
            return asm
        if isinstance(c, wl.Assign):
            check_expr(c.expr, asm, out)
            lock = policy.governed_lock(c.var)
            if lock is not None and not var_stable(asm, policy, c.var):
                out.append(f"data race: write to {c.var!r} without holding {lock!r}")
            return asm
        if isinstance(c, wl.Seq):
            return walk(c.rest, walk(c.first, asm, out), out)
        if isinstance(c, wl.If):
            check_expr(c.cond, asm, out)
            a1 = walk(c.then, asm, out)
            a2 = walk(c.orelse, asm, out)
            if a1 != a2:
                out.append("branches act inconsistently on the mode state")
            return a1
        if isinstance(c, wl.While):
            check_expr(c.cond, asm, out)
            ab = walk(c.body, asm, out)
            if ab != asm:
                out.append("loop body does not restore the mode state")
            return asm
        if isinstance(c, wl.LockAcq):
            spec = policy.lock_interp(c.lock)
            return AsmRec(asm.no_write | spec.no_write, asm.no_read_write | spec.no_read_write)
        if isinstance(c, wl.LockRel):
            spec = policy.lock_interp(c.lock)
            if not (spec.no_write <= asm.no_write and spec.no_read_write <= asm.no_read_write):
                out.append(f"release of {c.lock!r} without holding it")
            return AsmRec(asm.no_write - spec.no_write, asm.no_read_write - spec.no_read_write)
        out.append("stop inside a source program")
        return asm

    violations: List[str] = []
    walk(c, rec.asmrec, violations)
    return violations


def no_unstable_exprs(c: wl.Cmd, rec: CompRec, policy: Policy) -> bool:
    return not unstable_expr_violations(c, rec, policy)


def compile_cmd_input_reqs(
    rec: CompRec, entry: Optional[int], next_label: int, c: wl.Cmd, policy: Policy
) -> bool:
    return (
        not isinstance(c, wl.Stop)
        and (entry is None or entry < next_label)
        and no_unstable_exprs(c, rec, policy)
        and regrec_stable(rec, policy)
    )


def initial_comprec(policy: Policy, held=()) -> CompRec:
    """Empty register record with assumptions matching the held locks."""
    nw, nrw = set(), set()
    for k in held:
        spec = policy.lock_interp(k)
        nw |= spec.no_write
        nrw |= spec.no_read_write
    return CompRec({}, AsmRec(frozenset(nw), frozenset(nrw)))


def compile_program(
    c: wl.Cmd,
    policy: Policy,
    reg_count: int = DEFAULT_REG_COUNT,
    held=(),
) -> CompileOutput:
    """Whole-program entry point: validates the input requirements, then
    compiles from an empty register record and label counter 0."""
    rec0 = initial_comprec(policy, held)
    reasons: List[str] = []
    if isinstance(c, wl.Stop):
        reasons.append("the terminated program has no compilation")
    else:
        reasons.extend(unstable_expr_violations(c, rec0, policy))
    if reasons:
        return _fail(0, rec0, reasons)
    return compile_cmd(rec0, None, 0, c, policy, reg_count)
