"""Seeded random expression trees over a small mixed-width register file."""

from __future__ import annotations

import random

from cfigadgets.arch import Arch
from cfigadgets.expr import BinOp, Const, Expr, Fresh, Init, Ite, MemInit, MemSelect, MemStore, UnOp

GEN_ARCH = Arch(
    name="gen64",
    bits=64,
    endianness="little",
    registers=(("A", 64), ("B", 64), ("C", 64), ("D", 32), ("E", 32), ("H", 16), ("L", 8),
               ("F", 1), ("G", 1), ("SP", 64), ("IP", 64)),
    sp="SP",
    ip="IP",
    classifiable=frozenset(["A", "B", "C", "IP"]),
)

WIDTHS = (1, 8, 16, 32, 64)
_REGS_BY_WIDTH: dict[int, list[str]] = {}
for _name, _w in GEN_ARCH.registers:
    _REGS_BY_WIDTH.setdefault(_w, []).append(_name)

_ARITH = ["add", "sub", "mul", "and", "or", "xor", "shl", "lshr", "ashr"]
_CMP = ["eq", "ne", "ult", "slt", "uge", "sge"]
_INTERESTING = [0, 1, 2, 7, 8, 0x10, 0x1C, 0x7F, 0x80, 0xFF, 0x100, 0x7FFFFFFF, 0xFFFFFFFF]


def _const(rng: random.Random, w: int) -> Const:
    if rng.random() < 0.6:
        v = rng.choice(_INTERESTING)
        if rng.random() < 0.3:
            v = -v
        return Const(w, v)
    return Const(w, rng.getrandbits(w))


class ExprGen:
    def __init__(self, seed: int, max_depth: int = 5):
        self.rng = random.Random(seed)
        self.max_depth = max_depth

    def leaf(self, w: int) -> Expr:
        rng = self.rng
        r = rng.random()
        if r < 0.45 and w in _REGS_BY_WIDTH:
            return Init(rng.choice(_REGS_BY_WIDTH[w]), w)
        if r < 0.55:
            return Fresh(f"f{rng.randrange(2)}", w)
        return _const(rng, w)

    def addr(self, depth: int) -> Expr:
        base = Init(self.rng.choice(["A", "B", "SP"]), 64)
        if self.rng.random() < 0.7:
            return BinOp(self.rng.choice(["add", "sub"]), base, Const(64, self.rng.choice([0, 4, 8, 0x10, 0x1C])))
        return base if self.rng.random() < 0.5 else self.expr(64, depth + 1)

    def memory(self, depth: int) -> Expr:
        mem = MemInit
        for _ in range(self.rng.choice([0, 0, 1, 2])):
            size = self.rng.choice([8, 32, 64])
            mem = MemStore(mem, self.addr(depth), self.expr(size, depth + 1), size)
        return mem

    def expr(self, w: int, depth: int = 0) -> Expr:
        rng = self.rng
        if depth >= self.max_depth or rng.random() < 0.25:
            return self.leaf(w)
        k = rng.random()
        if w == 1:
            if k < 0.5:
                sub = rng.choice([8, 32, 64])
                return BinOp(rng.choice(_CMP), self.expr(sub, depth + 1), self.expr(sub, depth + 1))
            if k < 0.65:
                return UnOp("not", self.expr(1, depth + 1))
            if k < 0.85:
                return BinOp(rng.choice(["and", "or", "xor"]), self.expr(1, depth + 1), self.expr(1, depth + 1))
            if k < 0.92:
                src = rng.choice([8, 32, 64])
                bit = rng.randrange(src)
                return UnOp("extract", self.expr(src, depth + 1), (bit, bit))
            return Ite(self.expr(1, depth + 1), self.expr(1, depth + 1), self.expr(1, depth + 1))
        if k < 0.45:
            op = rng.choice(_ARITH)
            rhs = _const(rng, w) if op in ("shl", "lshr", "ashr") and rng.random() < 0.7 else self.expr(w, depth + 1)
            return BinOp(op, self.expr(w, depth + 1), rhs)
        if k < 0.55:
            return UnOp(rng.choice(["not", "neg"]), self.expr(w, depth + 1))
        if k < 0.65:
            smaller = [x for x in WIDTHS if x <= w]
            src = rng.choice(smaller)
            return UnOp(rng.choice(["zext", "sext"]), self.expr(src, depth + 1), (w,))
        if k < 0.72:
            larger = [x for x in WIDTHS if x >= w and x > 1]
            src = rng.choice(larger)
            lo = rng.randrange(src - w + 1)
            return UnOp("extract", self.expr(src, depth + 1), (lo + w - 1, lo))
        if k < 0.82 and w in (8, 16, 32, 64):
            return MemSelect(self.memory(depth), self.addr(depth), w)
        if k < 0.9:
            return Ite(self.expr(1, depth + 1), self.expr(w, depth + 1), self.expr(w, depth + 1))
        return self.leaf(w)

    def any_expr(self) -> Expr:
        return self.expr(self.rng.choice(WIDTHS))
