"""Lifter for a small ARM A32 subset.

Supported: MOV, ADD, SUB, LDR, STR, TST, CMP, BX, BLX, BL, B, Bcc and
conditional MOV/LDR.  Operands are R0-R15 (SP, LR, PC aliases), ``#imm``
immediates, and ``[Rn]`` / ``[Rn, #imm]`` memory references.  Reading PC
yields the instruction address plus 8.  Predicated MOV/LDR lift to
``ite`` over the old register value; only conditions expressible with the
modeled Z, N and C flags are accepted.
"""

from __future__ import annotations

import re

from ..errors import LiftError
from ..expr import BinOp, Const, Expr, Init, Ite, MemInit, MemSelect, UnOp
from ..ir import Assign, Statement, Store
from ..program import InsnClass
from .lifted import Lifted, parse_int

_ALIASES = {"SP": "SP", "LR": "LR", "PC": "PC", "R13": "SP", "R14": "LR", "R15": "PC"}
_ALIASES.update({f"R{i}": f"R{i}" for i in range(13)})

Z, N, C = (Init(f, 1) for f in ("Z", "N", "C"))
_CONDS: dict[str, Expr | None] = {
    "": None, "AL": None,
    "EQ": Z, "NE": UnOp("not", Z),
    "CS": C, "HS": C, "CC": UnOp("not", C), "LO": UnOp("not", C),
    "MI": N, "PL": UnOp("not", N),
    "HI": BinOp("and", C, UnOp("not", Z)),
    "LS": BinOp("or", UnOp("not", C), Z),
}
# Recognized so they can be rejected with a precise reason.
_UNMODELED = {"GE", "LT", "GT", "LE", "VS", "VC"}
_BASES = ["BLX", "BX", "BL", "B", "MOV", "ADD", "SUB", "LDR", "STR", "TST", "CMP"]
_MEM = re.compile(r"^\[\s*(\w+)\s*(?:,\s*#?([-+]?\w+))?\s*\]$")


def _split_mnemonic(m: str) -> tuple[str, str] | None:
    for base in _BASES:
        if m.startswith(base):
            rest = m[len(base):]
            if rest in _CONDS or rest in _UNMODELED:
                return base, rest
    return None


def _split_operands(text: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


class _Arm:
    def __init__(self, asm: str, addr: int):
        self.addr = addr
        mnem, _, rest = asm.strip().partition(" ")
        self.mnem = mnem.upper()
        self.ops = _split_operands(rest)

    def fail(self, reason: str) -> LiftError:
        return LiftError(self.addr, self.mnem, reason)

    def reg(self, text: str) -> str:
        name = _ALIASES.get(text.strip().upper())
        if name is None:
            raise self.fail(f"not a register: {text!r}")
        return name

    def read_reg(self, name: str) -> Expr:
        if name == "PC":
            return Const(32, self.addr + 8)
        return Init(name, 32)

    def operand2(self, text: str) -> Expr:
        text = text.strip()
        if text.startswith("#"):
            try:
                return Const(32, parse_int(text[1:]))
            except ValueError:
                raise self.fail(f"bad immediate {text!r}") from None
        return self.read_reg(self.reg(text))

    def address(self, text: str) -> Expr:
        m = _MEM.match(text.strip())
        if not m:
            raise self.fail(f"unsupported addressing mode {text!r}")
        base = self.read_reg(self.reg(m.group(1)))
        if m.group(2) is None:
            return base
        try:
            off = parse_int(m.group(2))
        except ValueError:
            raise self.fail(f"bad offset in {text!r}") from None
        return BinOp("add", base, Const(32, off)) if off else base

    def nargs(self, *counts: int) -> list[str]:
        if len(self.ops) not in counts:
            raise self.fail(f"expected {' or '.join(map(str, counts))} operands")
        return self.ops

    def lift(self) -> Lifted:
        split = _split_mnemonic(self.mnem)
        if split is None:
            raise self.fail("unsupported mnemonic")
        base, cc = split
        if cc in _UNMODELED:
            raise self.fail(f"condition {cc} needs the V flag, which is not modeled")
        cond = _CONDS[cc]
        if cond is not None and base not in ("B", "MOV", "LDR"):
            raise self.fail("only B, MOV and LDR may be conditional")
        nxt = Const(32, self.addr + 4)

        if base in ("MOV", "LDR"):
            ops = self.nargs(2)
            rd = self.reg(ops[0])
            if rd == "PC":
                raise self.fail("writing PC with MOV/LDR is not supported")
            value = self.operand2(ops[1]) if base == "MOV" else MemSelect(MemInit, self.address(ops[1]), 32)
            if cond is not None:
                value = Ite(cond, value, Init(rd, 32))
            return Lifted(InsnClass.FALL, (Assign(rd, value),))
        if base == "STR":
            ops = self.nargs(2)
            return Lifted(InsnClass.FALL, (Store(self.address(ops[1]), self.operand2(ops[0]), 32),))
        if base in ("ADD", "SUB"):
            ops = self.nargs(2, 3)
            rd = self.reg(ops[0])
            if rd == "PC":
                raise self.fail("writing PC with ADD/SUB is not supported")
            lhs = self.read_reg(self.reg(ops[-2])) if len(ops) == 3 else self.read_reg(rd)
            return Lifted(InsnClass.FALL, (Assign(rd, BinOp(base.lower(), lhs, self.operand2(ops[-1]))),))
        if base in ("TST", "CMP"):
            ops = self.nargs(2)
            a, b = self.read_reg(self.reg(ops[0])), self.operand2(ops[1])
            res = BinOp("and" if base == "TST" else "sub", a, b)
            ir: list[Statement] = [
                Assign("Z", BinOp("eq", res, Const(32, 0))),
                Assign("N", UnOp("extract", res, (31, 31))),
            ]
            if base == "CMP":
                ir.append(Assign("C", BinOp("uge", a, b)))
            return Lifted(InsnClass.FALL, tuple(ir))
        if base == "BX":
            (rm,) = self.nargs(1)
            r = self.reg(rm)
            cls = InsnClass.RET if r == "LR" else InsnClass.IJUMP
            return Lifted(cls, (Assign("PC", self.read_reg(r)),))
        if base == "BLX":
            (rm,) = self.nargs(1)
            if rm.strip().startswith("#") or rm.strip().upper() not in _ALIASES:
                raise self.fail("BLX with an immediate target is not supported")
            return Lifted(InsnClass.ICALL, (Assign("PC", self.read_reg(self.reg(rm))), Assign("LR", nxt)))
        if base == "BL":
            (tgt,) = self.nargs(1)
            return Lifted(InsnClass.CALL, (Assign("LR", nxt),), call_target=tgt.strip().lstrip("#"))
        if base == "B":
            self.nargs(1)
            if cond is None:
                return Lifted(InsnClass.JUMP, ())
            return Lifted(InsnClass.COND, (), branch_cond=cond)
        raise self.fail("unsupported mnemonic")


def lift_arm(asm: str, addr: int, size: int | None = None) -> Lifted:
    if size not in (None, 4):
        raise LiftError(addr, asm.split()[0] if asm.split() else "", "A32 instructions are 4 bytes")
    return _Arm(asm, addr).lift()
