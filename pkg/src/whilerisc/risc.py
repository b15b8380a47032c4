"""RISC instruction set, labeled programs and small-step semantics.

Programs are flat instruction lists; an instruction optionally carries a
natural-number label.  Jumps resolve labels to instruction indices; a
program's designated exit label resolves one past the end (the clean stop:
a configuration with `pc >= len(prog)` has stopped).

`Op op a b` is a two-register instruction computing
`regs[b] := regs[a] op regs[b]` — the right operand register doubles as the
destination.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

from .lang import BLOCKED, STOPPED, Memory, ModeState, apply_op, mem_key, wrap
from .policy import Policy
from .whilelang import LockDisciplineError


class LinkError(Exception):
    """A jump targets a label that is neither in the program nor its exit."""


class ConfigError(Exception):
    """A register index is outside the configured register bank."""


@dataclass(frozen=True)
class Load:
    reg: int
    var: str


@dataclass(frozen=True)
class Store:
    var: str
    reg: int


@dataclass(frozen=True)
class Jmp:
    target: int


@dataclass(frozen=True)
class Jz:
    target: int
    reg: int


@dataclass(frozen=True)
class Nop:
    pass


@dataclass(frozen=True)
class MoveK:
    reg: int
    value: int


@dataclass(frozen=True)
class MoveR:
    dst: int
    src: int


@dataclass(frozen=True)
class Op:
    op: str
    left: int
    right: int


@dataclass(frozen=True)
class LockAcq:
    lock: str


@dataclass(frozen=True)
class LockRel:
    lock: str


InstrBody = Union[Load, Store, Jmp, Jz, Nop, MoveK, MoveR, Op, LockAcq, LockRel]


@dataclass(frozen=True)
class Instruction:
    body: InstrBody
    label: Optional[int] = None


@dataclass(frozen=True)
class Program:
    instructions: Tuple[Instruction, ...]
    exit_label: Optional[int] = None

    def __len__(self) -> int:
        return len(self.instructions)

    def __getitem__(self, i: int) -> Instruction:
        return self.instructions[i]

    def labels(self) -> frozenset:
        return frozenset(i.label for i in self.instructions if i.label is not None)

    def jump_targets(self) -> frozenset:
        out = set()
        for i in self.instructions:
            if isinstance(i.body, (Jmp, Jz)):
                out.add(i.body.target)
        return frozenset(out)


@dataclass(frozen=True)
class RiscConfig:
    pc: int
    prog: Program
    regs: Tuple[int, ...]
    mds: ModeState
    mem: Memory

    def key(self) -> tuple:
        return (self.pc, self.prog, self.regs, self.mds, mem_key(self.mem))


def resolve_label(prog: Program, label: int) -> int:
    """Index of the instruction carrying `label`; the program's exit label
    resolves to len(prog)."""
    for idx, instr in enumerate(prog.instructions):
        if instr.label == label:
            return idx
    if prog.exit_label is not None and label == prog.exit_label:
        return len(prog)
    raise LinkError(f"label {label} does not occur in the program")


def risc_stops(cfg: RiscConfig) -> bool:
    return cfg.pc >= len(cfg.prog)


def _set_reg(regs: Tuple[int, ...], r: int, v: int) -> Tuple[int, ...]:
    if not 0 <= r < len(regs):
        raise ConfigError(f"register r{r} out of range (bank size {len(regs)})")
    return regs[:r] + (v,) + regs[r + 1:]


def _get_reg(regs: Tuple[int, ...], r: int) -> int:
    if not 0 <= r < len(regs):
        raise ConfigError(f"register r{r} out of range (bank size {len(regs)})")
    return regs[r]


def risc_step(cfg: RiscConfig, policy: Policy):
    """Deterministic small step: a new RiscConfig, BLOCKED, or STOPPED."""
    if risc_stops(cfg):
        return STOPPED
    instr = cfg.prog[cfg.pc].body
    pc, regs, mds, mem = cfg.pc, cfg.regs, cfg.mds, cfg.mem
    if isinstance(instr, Load):
        regs = _set_reg(regs, instr.reg, mem[instr.var])
        return RiscConfig(pc + 1, cfg.prog, regs, mds, mem)
    if isinstance(instr, Store):
        mem2 = dict(mem)
        mem2[instr.var] = _get_reg(regs, instr.reg)
        return RiscConfig(pc + 1, cfg.prog, regs, mds, mem2)
    if isinstance(instr, Jmp):
        return RiscConfig(resolve_label(cfg.prog, instr.target), cfg.prog, regs, mds, mem)
    if isinstance(instr, Jz):
        if _get_reg(regs, instr.reg) == 0:
            return RiscConfig(resolve_label(cfg.prog, instr.target), cfg.prog, regs, mds, mem)
        return RiscConfig(pc + 1, cfg.prog, regs, mds, mem)
    if isinstance(instr, Nop):
        return RiscConfig(pc + 1, cfg.prog, regs, mds, mem)
    if isinstance(instr, MoveK):
        regs = _set_reg(regs, instr.reg, wrap(instr.value))
        return RiscConfig(pc + 1, cfg.prog, regs, mds, mem)
    if isinstance(instr, MoveR):
        regs = _set_reg(regs, instr.dst, _get_reg(regs, instr.src))
        return RiscConfig(pc + 1, cfg.prog, regs, mds, mem)
    if isinstance(instr, Op):
        a = _get_reg(regs, instr.left)
        b = _get_reg(regs, instr.right)
        regs = _set_reg(regs, instr.right, apply_op(instr.op, a, b))
        return RiscConfig(pc + 1, cfg.prog, regs, mds, mem)
    if isinstance(instr, LockAcq):
        if mem[instr.lock] != 0:
            return BLOCKED
        spec = policy.lock_interp(instr.lock)
        mem2 = dict(mem)
        mem2[instr.lock] = 1
        return RiscConfig(pc + 1, cfg.prog, regs, mds.acquire(spec.no_write, spec.no_read_write), mem2)
    if isinstance(instr, LockRel):
        spec = policy.lock_interp(instr.lock)
        if not (spec.no_write <= mds.asm_no_w and spec.no_read_write <= mds.asm_no_rw):
            raise LockDisciplineError(f"release of {instr.lock!r} without holding it")
        mem2 = dict(mem)
        mem2[instr.lock] = 0
        return RiscConfig(pc + 1, cfg.prog, regs, mds.release(spec.no_write, spec.no_read_write), mem2)
    raise AssertionError(f"cannot step {instr!r}")


def joinable(p1: Program, p2: Program) -> bool:
    """Label discipline letting `p1 ++ p2` concatenate without cross jumps:
    `p1` may jump only within itself or to the first instruction of `p2`,
    and `p2` never jumps into `p1`."""
    own = p1.labels()
    allowed = set(own)
    if len(p2) and p2[0].label is not None:
        allowed.add(p2[0].label)
    if any(t not in allowed for t in p1.jump_targets()):
        return False
    return not (p2.jump_targets() & own)
