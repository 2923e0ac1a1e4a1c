"""Micro-IR statements and the textual expression grammar.

Grammar (whitespace-insensitive)::

    stmt  := REG ":=" expr | "store<w>(" expr "," expr ")"
    expr  := REG | "0x<hex>:<w>" | "load<w>(" expr ")"
           | BINOP "(" expr "," expr ")" | "not(" expr ")" | "neg(" expr ")"
           | "zext<w>(" expr ")" | "sext<w>(" expr ")" | "extract<hi>:<lo>(" expr ")"
           | "ite(" expr "," expr "," expr ")"
           | "fresh<w>(" NAME ")"
    mem   := "mem" | "store<w>(" mem "," expr "," expr ")"
    expr  += "select<w>(" mem "," expr ")"

``load<w>(a)`` is shorthand for ``select<w>(mem, a)``.  The memory forms only
appear in symbolic summaries, where loads may read through earlier stores.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

from .expr import (
    BINOPS,
    BinOp,
    Const,
    Expr,
    Fresh,
    Init,
    MEM_WIDTHS,
    Ite,
    MemInit,
    MemSelect,
    MemStore,
    UnOp,
    WidthError,
    walk,
)

__all__ = [
    "Assign",
    "IRSyntaxError",
    "Statement",
    "Store",
    "UnknownRegisterError",
    "format_expr",
    "format_stmt",
    "parse_expr",
    "parse_stmt",
    "reads",
]


class IRSyntaxError(ValueError):
    def __init__(self, text: str, pos: int, reason: str):
        super().__init__(f"{reason} at offset {pos} in {text!r}")
        self.text = text
        self.pos = pos
        self.reason = reason


class UnknownRegisterError(IRSyntaxError):
    pass


@dataclass(frozen=True)
class Assign:
    reg: str
    expr: Expr

    def __str__(self) -> str:
        return format_stmt(self)


@dataclass(frozen=True)
class Store:
    addr: Expr
    value: Expr
    size: int

    def __str__(self) -> str:
        return format_stmt(self)


Statement = Union[Assign, Store]


_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<const>0x[0-9a-fA-F]+:\d+)"
    r"|(?P<extract>extract(?P<hi>\d+):(?P<lo>\d+))"
    r"|(?P<assign>:=)"
    r"|(?P<name>[A-Za-z_][\w@.]*)"
    r"|(?P<punct>[(),])"
    r")"
)
_SIZED = re.compile(r"(load|store|select|zext|sext|fresh)(\d+)$")


class _Parser:
    def __init__(self, text: str, regs: Mapping[str, int]):
        self.text = text
        self.regs = regs
        self.upper = {name.upper(): name for name in regs}
        self.tokens: list[tuple[str, str, int, re.Match]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                raise IRSyntaxError(text, pos, "unexpected character")
            kind = "extract" if m.group("extract") else m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind), m))
            pos = m.end()
        self.i = 0

    def error(self, reason: str) -> IRSyntaxError:
        pos = self.tokens[self.i][2] if self.i < len(self.tokens) else len(self.text)
        return IRSyntaxError(self.text, pos, reason)

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self, kind: str, value: str | None = None):
        tok = self.peek()
        if tok is None or tok[0] != kind or (value is not None and tok[1] != value):
            want = value or kind
            raise self.error(f"expected {want!r}")
        self.i += 1
        return tok

    def at_end(self) -> bool:
        return self.i >= len(self.tokens)

    def register(self, name: str, pos: int) -> str:
        if name in self.regs:
            return name
        canon = self.upper.get(name.upper())
        if canon is None:
            raise UnknownRegisterError(self.text, pos, f"unknown register {name!r}")
        return canon

    def args(self, n: int) -> list[Expr]:
        self.take("punct", "(")
        out = [self.expr()]
        for _ in range(n - 1):
            self.take("punct", ",")
            out.append(self.expr())
        self.take("punct", ")")
        return out

    def expr(self) -> Expr:
        tok = self.peek()
        if tok is None:
            raise self.error("unexpected end of expression")
        kind, value, pos, m = tok
        self.i += 1
        try:
            if kind == "const":
                digits, width = value.split(":")
                return Const(int(width), int(digits, 16))
            if kind == "extract":
                (arg,) = self.args(1)
                return UnOp("extract", arg, (int(m.group("hi")), int(m.group("lo"))))
            if kind != "name":
                raise IRSyntaxError(self.text, pos, f"unexpected {value!r}")
            nxt = self.peek()
            is_call = nxt is not None and nxt[1] == "("
            if not is_call:
                if value == "mem":
                    return MemInit
                reg = self.register(value, pos)
                return Init(reg, self.regs[reg])
            sized = _SIZED.match(value)
            if sized:
                head, width = sized.group(1), int(sized.group(2))
                if head == "load":
                    (addr,) = self.args(1)
                    return MemSelect(MemInit, addr, width)
                if head == "select":
                    mem, addr = self.args(2)
                    return MemSelect(mem, addr, width)
                if head == "store":
                    mem, addr, val = self.args(3)
                    return MemStore(mem, addr, val, width)
                if head in ("zext", "sext"):
                    (arg,) = self.args(1)
                    return UnOp(head, arg, (width,))
                if head == "fresh":
                    self.take("punct", "(")
                    name = self.take("name")[1]
                    self.take("punct", ")")
                    return Fresh(name, width)
            if value in BINOPS:
                lhs, rhs = self.args(2)
                return BinOp(value, lhs, rhs)
            if value in ("not", "neg"):
                (arg,) = self.args(1)
                return UnOp(value, arg)
            if value == "ite":
                c, a, b = self.args(3)
                return Ite(c, a, b)
        except WidthError as exc:
            raise IRSyntaxError(self.text, pos, f"width error: {exc}") from None
        raise IRSyntaxError(self.text, pos, f"unknown operator {value!r}")


def parse_expr(text: str, regs: Mapping[str, int]) -> Expr:
    """Parse one expression; ``regs`` maps register names to widths."""
    p = _Parser(text, regs)
    e = p.expr()
    if not p.at_end():
        raise p.error("trailing input")
    return e


def parse_stmt(text: str, regs: Mapping[str, int]) -> Statement:
    p = _Parser(text, regs)
    first = p.peek()
    if first is None:
        raise p.error("empty statement")
    sized = _SIZED.match(first[1]) if first[0] == "name" else None
    if sized and sized.group(1) == "store":
        p.i += 1
        width = int(sized.group(2))
        if width not in MEM_WIDTHS:
            raise IRSyntaxError(text, first[2], f"unsupported store width {width}")
        addr, value = p.args(2)
        if not p.at_end():
            raise p.error("trailing input")
        if value.width != width or addr.is_memory:
            raise IRSyntaxError(text, first[2], f"store{width} of a {value.width}-bit value")
        return Store(addr, value, width)
    name = p.register(p.take("name")[1], first[2])
    p.take("assign")
    e = p.expr()
    if not p.at_end():
        raise p.error("trailing input")
    if e.width != regs[name]:
        raise IRSyntaxError(text, first[2], f"{name} is {regs[name]} bits, expression is {e.width}")
    return Assign(name, e)


def format_expr(expr: Expr) -> str:
    # Iterative post-order so very deep chains do not hit the recursion limit.
    out: dict[int, str] = {}
    for node in walk(expr):
        out[id(node)] = _format_node(node, out)
    return out[id(expr)]


def _format_node(n: Expr, done: dict[int, str]) -> str:
    sub = lambda e: done[id(e)]  # noqa: E731
    if isinstance(n, Const):
        return f"{n.value:#x}:{n.width}"
    if isinstance(n, Init):
        return n.name
    if isinstance(n, Fresh):
        return f"fresh{n.width}({n.name})"
    if isinstance(n, BinOp):
        return f"{n.op}({sub(n.lhs)},{sub(n.rhs)})"
    if isinstance(n, UnOp):
        if n.op in ("zext", "sext"):
            return f"{n.op}{n.params[0]}({sub(n.arg)})"
        if n.op == "extract":
            return f"extract{n.params[0]}:{n.params[1]}({sub(n.arg)})"
        return f"{n.op}({sub(n.arg)})"
    if isinstance(n, Ite):
        return f"ite({sub(n.cond)},{sub(n.then)},{sub(n.other)})"
    if n is MemInit:
        return "mem"
    if isinstance(n, MemStore):
        return f"store{n.size}({sub(n.mem)},{sub(n.addr)},{sub(n.value)})"
    if isinstance(n, MemSelect):
        if n.mem is MemInit:
            return f"load{n.width}({sub(n.addr)})"
        return f"select{n.width}({sub(n.mem)},{sub(n.addr)})"
    raise TypeError(f"cannot format {type(n).__name__}")


def format_stmt(stmt: Statement) -> str:
    if isinstance(stmt, Assign):
        return f"{stmt.reg} := {format_expr(stmt.expr)}"
    return f"store{stmt.size}({format_expr(stmt.addr)}, {format_expr(stmt.value)})"


def reads(stmt: Statement) -> int:
    """Number of memory loads a statement performs."""
    exprs = (stmt.expr,) if isinstance(stmt, Assign) else (stmt.addr, stmt.value)
    return sum(count_loads(e) for e in exprs)


def count_loads(expr: Expr) -> int:
    """Count load occurrences in the tree (shared subtrees counted per use)."""
    counts: dict[int, int] = {}
    for node in walk(expr):
        own = 1 if isinstance(node, MemSelect) else 0
        counts[id(node)] = own + sum(counts[id(c)] for c in node.children())
    return counts[id(expr)]
