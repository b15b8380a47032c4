"""Concrete syntax: source programs, policy files, and assembly text.

Source grammar (statements end in `;`, blocks are braced, expressions are
integers, identifiers, or fully parenthesized binary operations):

    prog := stmt+
    stmt := "skip" ";" | ident ":=" expr ";"
          | "if" expr "{" prog "}" "else" "{" prog "}"
          | "while" expr "{" prog "}"
          | "acquire" ident ";" | "release" ident ";"
    expr := int | ident | "(" expr OP expr ")"      OP in + - * == != < && ||

`//` comments run to end of line.  Policies are TOML files (see
`parse_policy`).  Assembly text is one instruction per line,
`[Lnn:] OPCODE operands`; a final bare `Lnn:` line names the program's
off-end exit label.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from typing import List, Optional

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from . import risc
from . import whilelang as wl
from .lang import BinOp, Const, Expr, OPERATORS, Var, format_exp
from .policy import ClassificationSpec, DependentClass, LockSpec, Policy, validate_policy


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        loc = f"line {line}" + (f", column {col}" if col else "") if line else ""
        super().__init__(f"{loc}: {message}" if loc else message)
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<int>-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|&&|\|\||:=|[+\-*<;{}()])
    """,
    re.VERBOSE,
)

KEYWORDS = {"skip", "if", "else", "while", "acquire", "release"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> List[_Tok]:
    toks: List[_Tok] = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        lexeme = m.group()
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    toks.append(_Tok("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.pos = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.pos]

    def error(self, message: str):
        raise ParseError(message, self.cur.line, self.cur.col)

    def eat(self, text: str) -> _Tok:
        if self.cur.text != text or self.cur.kind == "eof":
            self.error(f"expected {text!r}, found {self.cur.text or 'end of input'!r}")
        tok = self.cur
        self.pos += 1
        return tok

    def eat_ident(self) -> str:
        if self.cur.kind != "ident" or self.cur.text in KEYWORDS:
            self.error(f"expected identifier, found {self.cur.text or 'end of input'!r}")
        tok = self.cur
        self.pos += 1
        return tok.text

    def expr(self) -> Expr:
        tok = self.cur
        if tok.kind == "int":
            self.pos += 1
            return Const(int(tok.text))
        if tok.kind == "ident" and tok.text not in KEYWORDS:
            self.pos += 1
            return Var(tok.text)
        if tok.text == "(":
            self.pos += 1
            left = self.expr()
            op_tok = self.cur
            if op_tok.text not in OPERATORS:
                self.error(f"expected binary operator, found {op_tok.text!r}")
            self.pos += 1
            right = self.expr()
            self.eat(")")
            return BinOp(op_tok.text, left, right)
        self.error(f"expected expression, found {tok.text or 'end of input'!r}")

    def stmt(self) -> wl.Cmd:
        tok = self.cur
        if tok.text == "skip":
            self.pos += 1
            self.eat(";")
            return wl.Skip()
        if tok.text == "if":
            self.pos += 1
            cond = self.expr()
            self.eat("{")
            then = self.block()
            self.eat("}")
            self.eat("else")
            self.eat("{")
            orelse = self.block()
            self.eat("}")
            return wl.If(cond, then, orelse)
        if tok.text == "while":
            self.pos += 1
            cond = self.expr()
            self.eat("{")
            body = self.block()
            self.eat("}")
            return wl.While(cond, body)
        if tok.text == "acquire":
            self.pos += 1
            name = self.eat_ident()
            self.eat(";")
            return wl.LockAcq(name)
        if tok.text == "release":
            self.pos += 1
            name = self.eat_ident()
            self.eat(";")
            return wl.LockRel(name)
        if tok.kind == "ident":
            name = self.eat_ident()
            self.eat(":=")
            e = self.expr()
            self.eat(";")
            return wl.Assign(name, e)
        self.error(f"expected statement, found {tok.text or 'end of input'!r}")

    def block(self) -> wl.Cmd:
        stmts = [self.stmt()]
        while self.cur.kind != "eof" and self.cur.text not in ("}",):
            stmts.append(self.stmt())
        cmd = stmts[-1]
        for s in reversed(stmts[:-1]):
            cmd = wl.Seq(s, cmd)
        return cmd


def parse_program(text: str) -> wl.Cmd:
    """Parse source text into a command; raises ParseError with location."""
    p = _Parser(text)
    cmd = p.block()
    if p.cur.kind != "eof":
        p.error(f"unexpected {p.cur.text!r} after program")
    return cmd


def parse_expr_text(text: str) -> Expr:
    p = _Parser(text)
    e = p.expr()
    if p.cur.kind != "eof":
        p.error(f"unexpected {p.cur.text!r} after expression")
    return e


def format_cmd(c: wl.Cmd, indent: int = 0) -> str:
    """Pretty-print a command in the concrete source syntax."""
    pad = "    " * indent
    if isinstance(c, wl.Skip):
        return f"{pad}skip;"
    if isinstance(c, wl.Assign):
        return f"{pad}{c.var} := {format_exp(c.expr)};"
    if isinstance(c, wl.Seq):
        return f"{format_cmd(c.first, indent)}\n{format_cmd(c.rest, indent)}"
    if isinstance(c, wl.If):
        return (
            f"{pad}if {format_exp(c.cond)} {{\n{format_cmd(c.then, indent + 1)}\n"
            f"{pad}}} else {{\n{format_cmd(c.orelse, indent + 1)}\n{pad}}}"
        )
    if isinstance(c, wl.While):
        return f"{pad}while {format_exp(c.cond)} {{\n{format_cmd(c.body, indent + 1)}\n{pad}}}"
    if isinstance(c, wl.LockAcq):
        return f"{pad}acquire {c.lock};"
    if isinstance(c, wl.LockRel):
        return f"{pad}release {c.lock};"
    if isinstance(c, wl.Stop):
        return f"{pad}/* stop */"
    raise AssertionError(c)


# --- policy files ---


class PolicyParseError(Exception):
    def __init__(self, problems: List[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


def parse_policy(text: str) -> Policy:
    """Parse and validate a TOML policy file; raises PolicyParseError with
    every violation found."""
    try:
        data = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise PolicyParseError([f"TOML syntax: {exc}"]) from None

    universe = data.get("vars", {}).get("universe", [])
    if not isinstance(universe, list) or not all(isinstance(v, str) for v in universe):
        raise PolicyParseError(["[vars] universe must be a list of variable names"])
    if not universe:
        raise PolicyParseError(["policy declares an empty variable universe"])

    cls = data.get("classification", {})
    high = cls.get("high", [])
    dependent = tuple(
        DependentClass(d["var"], d["control"], int(d["low_when"]))
        for d in cls.get("dependent", [])
    )
    locks = {
        name: LockSpec(
            frozenset(spec.get("no_write", [])),
            frozenset(spec.get("no_read_write", [])),
        )
        for name, spec in data.get("locks", {}).items()
    }
    policy = Policy(
        universe=tuple(universe),
        classification=ClassificationSpec(frozenset(high), dependent),
        locks=locks,
    )
    problems = validate_policy(policy)
    if problems:
        raise PolicyParseError(problems)
    return policy


# --- assembly text ---

_ASM_LABEL_RE = re.compile(r"^L(\d+):$")


def _fmt_reg(r: int) -> str:
    return f"r{r}"


def _fmt_body(body) -> str:
    if isinstance(body, risc.Load):
        return f"LOAD {_fmt_reg(body.reg)} {body.var}"
    if isinstance(body, risc.Store):
        return f"STORE {body.var} {_fmt_reg(body.reg)}"
    if isinstance(body, risc.Jmp):
        return f"JMP L{body.target}"
    if isinstance(body, risc.Jz):
        return f"JZ L{body.target} {_fmt_reg(body.reg)}"
    if isinstance(body, risc.Nop):
        return "NOP"
    if isinstance(body, risc.MoveK):
        return f"MOVEK {_fmt_reg(body.reg)} {body.value}"
    if isinstance(body, risc.MoveR):
        return f"MOVER {_fmt_reg(body.dst)} {_fmt_reg(body.src)}"
    if isinstance(body, risc.Op):
        return f"OP {body.op} {_fmt_reg(body.left)} {_fmt_reg(body.right)}"
    if isinstance(body, risc.LockAcq):
        return f"LOCKACQ {body.lock}"
    if isinstance(body, risc.LockRel):
        return f"LOCKREL {body.lock}"
    raise AssertionError(body)


def format_instr(instr: risc.Instruction) -> str:
    prefix = f"L{instr.label}: " if instr.label is not None else ""
    return prefix + _fmt_body(instr.body)


def emit_asm(prog: risc.Program) -> str:
    """Assembly text; parse_asm(emit_asm(p)) == p."""
    lines = [format_instr(instr) for instr in prog.instructions]
    if prog.exit_label is not None:
        lines.append(f"L{prog.exit_label}:")
    return "\n".join(lines) + "\n"


def _parse_reg(tok: str, lineno: int) -> int:
    if not re.fullmatch(r"r\d+", tok):
        raise ParseError(f"expected register, found {tok!r}", lineno)
    return int(tok[1:])


def _parse_label_ref(tok: str, lineno: int) -> int:
    if not re.fullmatch(r"L\d+", tok):
        raise ParseError(f"expected label, found {tok!r}", lineno)
    return int(tok[1:])


def parse_asm(text: str) -> risc.Program:
    instrs: List[risc.Instruction] = []
    exit_label: Optional[int] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if exit_label is not None:
            raise ParseError("instructions after the exit-label line", lineno)
        m = _ASM_LABEL_RE.match(line)
        if m:
            exit_label = int(m.group(1))
            continue
        label: Optional[int] = None
        if ":" in line.split()[0]:
            head, line = line.split(":", 1)
            label = _parse_label_ref(head.strip(), lineno)
            line = line.strip()
        parts = line.split()
        opcode, args = parts[0].upper(), parts[1:]

        def arity(n: int):
            if len(args) != n:
                raise ParseError(f"{opcode} expects {n} operand(s)", lineno)

        if opcode == "LOAD":
            arity(2)
            body = risc.Load(_parse_reg(args[0], lineno), args[1])
        elif opcode == "STORE":
            arity(2)
            body = risc.Store(args[0], _parse_reg(args[1], lineno))
        elif opcode == "JMP":
            arity(1)
            body = risc.Jmp(_parse_label_ref(args[0], lineno))
        elif opcode == "JZ":
            arity(2)
            body = risc.Jz(_parse_label_ref(args[0], lineno), _parse_reg(args[1], lineno))
        elif opcode == "NOP":
            arity(0)
            body = risc.Nop()
        elif opcode == "MOVEK":
            arity(2)
            body = risc.MoveK(_parse_reg(args[0], lineno), int(args[1]))
        elif opcode == "MOVER":
            arity(2)
            body = risc.MoveR(_parse_reg(args[0], lineno), _parse_reg(args[1], lineno))
        elif opcode == "OP":
            arity(3)
            if args[0] not in OPERATORS:
                raise ParseError(f"unknown operator {args[0]!r}", lineno)
            body = risc.Op(args[0], _parse_reg(args[1], lineno), _parse_reg(args[2], lineno))
        elif opcode == "LOCKACQ":
            arity(1)
            body = risc.LockAcq(args[0])
        elif opcode == "LOCKREL":
            arity(1)
            body = risc.LockRel(args[0])
        else:
            raise ParseError(f"unknown opcode {opcode!r}", lineno)
        instrs.append(risc.Instruction(body, label))
    return risc.Program(tuple(instrs), exit_label)
