"""Shared value, variable, expression, memory and mode-state types.

Values are 64-bit signed integers with wrapping arithmetic; a value is
"true" iff it is nonzero (canonical false is 0).  Memories are total maps
from variable names (program and lock variables alike) to values.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Union

WORD_BITS = 64
_WORD_MOD = 1 << WORD_BITS
_WORD_MIN = -(1 << (WORD_BITS - 1))

VarName = str
LockName = str
Memory = Dict[str, int]


class EvalError(Exception):
    """An expression mentions a variable absent from memory."""


def wrap(n: int) -> int:
    """Reduce an integer to the signed 64-bit word that represents it."""
    return ((n - _WORD_MIN) % _WORD_MOD) + _WORD_MIN


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: VarName


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, BinOp]

#: Binary operators in concrete syntax.  Comparison and logic return 1/0;
#: logic operators are strict (both sides always evaluate).
OPERATORS = ("+", "-", "*", "==", "!=", "<", "&&", "||")


def apply_op(op: str, a: int, b: int) -> int:
    """Apply a binary operator to two word values."""
    if op == "+":
        return wrap(a + b)
    if op == "-":
        return wrap(a - b)
    if op == "*":
        return wrap(a * b)
    if op == "==":
        return 1 if a == b else 0
    if op == "!=":
        return 1 if a != b else 0
    if op == "<":
        return 1 if a < b else 0
    if op == "&&":
        return 1 if a != 0 and b != 0 else 0
    if op == "||":
        return 1 if a != 0 or b != 0 else 0
    raise EvalError(f"unknown operator {op!r}")


def eval_exp(mem: Memory, e: Expr) -> int:
    """Evaluate `e` under `mem`.  Deterministic and pure."""
    if isinstance(e, Const):
        return wrap(e.value)
    if isinstance(e, Var):
        try:
            return mem[e.name]
        except KeyError:
            raise EvalError(f"unknown variable {e.name!r}") from None
    return apply_op(e.op, eval_exp(mem, e.left), eval_exp(mem, e.right))


def exp_vars(e: Expr) -> FrozenSet[VarName]:
    """The set of variables syntactically occurring in `e`."""
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Var):
        return frozenset((e.name,))
    return exp_vars(e.left) | exp_vars(e.right)


def exp_depth(e: Expr) -> int:
    if isinstance(e, (Const, Var)):
        return 1
    return 1 + max(exp_depth(e.left), exp_depth(e.right))


def format_exp(e: Expr) -> str:
    """Concrete syntax: integers, identifiers, fully parenthesized binops."""
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    return f"({format_exp(e.left)} {e.op} {format_exp(e.right)})"


class Mode(Enum):
    ASM_NO_W = "AsmNoW"
    ASM_NO_RW = "AsmNoRW"
    GUAR_NO_W = "GuarNoW"
    GUAR_NO_RW = "GuarNoRW"


@dataclass(frozen=True)
class ModeState:
    """Ghost access-mode map: which variables carry which assume/guarantee."""

    asm_no_w: FrozenSet[VarName] = frozenset()
    asm_no_rw: FrozenSet[VarName] = frozenset()
    guar_no_w: FrozenSet[VarName] = frozenset()
    guar_no_rw: FrozenSet[VarName] = frozenset()

    def get(self, mode: Mode) -> FrozenSet[VarName]:
        return {
            Mode.ASM_NO_W: self.asm_no_w,
            Mode.ASM_NO_RW: self.asm_no_rw,
            Mode.GUAR_NO_W: self.guar_no_w,
            Mode.GUAR_NO_RW: self.guar_no_rw,
        }[mode]

    def acquire(self, no_write: FrozenSet[VarName], no_read_write: FrozenSet[VarName]) -> "ModeState":
        """Shift the given sets from guarantees to assumptions."""
        return ModeState(
            asm_no_w=self.asm_no_w | no_write,
            asm_no_rw=self.asm_no_rw | no_read_write,
            guar_no_w=self.guar_no_w - no_write,
            guar_no_rw=self.guar_no_rw - no_read_write,
        )

    def release(self, no_write: FrozenSet[VarName], no_read_write: FrozenSet[VarName]) -> "ModeState":
        """Shift the given sets from assumptions back to guarantees."""
        return ModeState(
            asm_no_w=self.asm_no_w - no_write,
            asm_no_rw=self.asm_no_rw - no_read_write,
            guar_no_w=self.guar_no_w | no_write,
            guar_no_rw=self.guar_no_rw | no_read_write,
        )


class _Sentinel:
    __slots__ = ("_name",)

    def __init__(self, name: str):
        self._name = name

    def __repr__(self) -> str:
        return self._name


#: Step result sentinels shared by both interpreters.
BLOCKED = _Sentinel("BLOCKED")
STOPPED = _Sentinel("STOPPED")


def mem_key(mem: Memory) -> tuple:
    """Hashable snapshot of a memory (for explicit-state exploration)."""
    return tuple(sorted(mem.items()))
