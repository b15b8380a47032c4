"""While-language AST and deterministic small-step semantics.

Commands evaluate one atomic step at a time over thread-private command
state plus the shared memory and ghost mode state.  Lock primitives are the
only steps that touch the mode state; acquiring a contended lock is a
disabled step (`BLOCKED`), not a stutter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .lang import BLOCKED, STOPPED, Expr, Memory, ModeState, eval_exp, mem_key
from .policy import Policy


class LockDisciplineError(Exception):
    """A thread released a lock it does not hold."""


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr


@dataclass(frozen=True)
class Seq:
    first: "Cmd"
    rest: "Cmd"


@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Cmd"
    orelse: "Cmd"


@dataclass(frozen=True)
class While:
    cond: Expr
    body: "Cmd"


@dataclass(frozen=True)
class LockAcq:
    lock: str


@dataclass(frozen=True)
class LockRel:
    lock: str


@dataclass(frozen=True)
class Stop:
    pass


Cmd = Union[Skip, Assign, Seq, If, While, LockAcq, LockRel, Stop]

STOP = Stop()


@dataclass(frozen=True)
class WhileConfig:
    cmd: Cmd
    mds: ModeState
    mem: Memory

    def key(self) -> tuple:
        return (self.cmd, self.mds, mem_key(self.mem))


def leftmost_cmd(c: Cmd) -> Cmd:
    """Strip sequencing down to the first command to execute."""
    while isinstance(c, Seq):
        c = c.first
    return c


def while_stops(cfg: WhileConfig) -> bool:
    return isinstance(cfg.cmd, Stop)


def _step_cmd(c: Cmd, mds: ModeState, mem: Memory, policy: Policy):
    """One small step of `c`; returns (cmd', mds', mem') or BLOCKED.

    `Seq` folds the terminating step of its head directly into the tail,
    so `Stop ; c` never appears as an intermediate configuration.
    """
    if isinstance(c, Skip):
        return STOP, mds, mem
    if isinstance(c, Assign):
        val = eval_exp(mem, c.expr)
        mem2 = dict(mem)
        mem2[c.var] = val
        return STOP, mds, mem2
    if isinstance(c, Seq):
        assert not isinstance(c.first, Stop), "Seq(Stop, _) is not a valid configuration"
        res = _step_cmd(c.first, mds, mem, policy)
        if res is BLOCKED:
            return BLOCKED
        c1, mds2, mem2 = res
        if isinstance(c1, Stop):
            return c.rest, mds2, mem2
        return Seq(c1, c.rest), mds2, mem2
    if isinstance(c, If):
        taken = c.then if eval_exp(mem, c.cond) != 0 else c.orelse
        return taken, mds, mem
    if isinstance(c, While):
        return If(c.cond, Seq(c.body, c), STOP), mds, mem
    if isinstance(c, LockAcq):
        if mem[c.lock] != 0:
            return BLOCKED
        spec = policy.lock_interp(c.lock)
        mem2 = dict(mem)
        mem2[c.lock] = 1
        return STOP, mds.acquire(spec.no_write, spec.no_read_write), mem2
    if isinstance(c, LockRel):
        spec = policy.lock_interp(c.lock)
        if not (spec.no_write <= mds.asm_no_w and spec.no_read_write <= mds.asm_no_rw):
            raise LockDisciplineError(f"release of {c.lock!r} without holding it")
        mem2 = dict(mem)
        mem2[c.lock] = 0
        return STOP, mds.release(spec.no_write, spec.no_read_write), mem2
    raise AssertionError(f"cannot step {c!r}")


def while_step(cfg: WhileConfig, policy: Policy):
    """Deterministic small step: a new WhileConfig, BLOCKED, or STOPPED."""
    if isinstance(cfg.cmd, Stop):
        return STOPPED
    res = _step_cmd(cfg.cmd, cfg.mds, cfg.mem, policy)
    if res is BLOCKED:
        return BLOCKED
    c2, mds2, mem2 = res
    return WhileConfig(c2, mds2, mem2)
