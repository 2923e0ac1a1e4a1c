"""Lifter for a small x86-64 subset (Intel syntax).

Supported: mov, add, sub, xor, and, or, cmp, test, push, pop, lea, nop,
ret, call, jmp and the unsigned/equality jcc forms.  Operands are 64-bit
or 32-bit general registers, immediates, and memory references of the form
``[base + index*scale + disp]`` with an optional ``qword ptr`` style size.

Flags ZF, SF and CF are written before the destination so that every
statement of one instruction reads the pre-instruction state.  The
overflow flag is not modeled, so signed conditional jumps are rejected.
"""

from __future__ import annotations

import re

from ..arch import X86_64
from ..errors import LiftError
from ..expr import BinOp, Const, Expr, Init, MemInit, MemSelect, UnOp
from ..ir import Assign, Statement, Store
from ..program import InsnClass
from .lifted import Lifted, parse_int

_GPR64 = ["rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp",
          "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15"]
_GPR32 = {"eax": "RAX", "ebx": "RBX", "ecx": "RCX", "edx": "RDX", "esi": "RSI",
          "edi": "RDI", "ebp": "RBP", "esp": "RSP"}
_GPR32.update({f"r{i}d": f"R{i}" for i in range(8, 16)})
_REGS: dict[str, tuple[str, int]] = {r: (r.upper(), 64) for r in _GPR64}
_REGS.update({k: (v, 32) for k, v in _GPR32.items()})

_PTR = {"byte": 8, "word": 16, "dword": 32, "qword": 64}
_MEM = re.compile(r"^(?:(byte|word|dword|qword)\s+ptr\s+)?\[(.*)\]$")

ZF, SF, CF = (Init(f, 1) for f in ("ZF", "SF", "CF"))
_JCC: dict[str, Expr] = {
    "je": ZF, "jz": ZF,
    "jne": UnOp("not", ZF), "jnz": UnOp("not", ZF),
    "js": SF, "jns": UnOp("not", SF),
    "jb": CF, "jc": CF, "jnae": CF,
    "jae": UnOp("not", CF), "jnb": UnOp("not", CF), "jnc": UnOp("not", CF),
    "jbe": BinOp("or", CF, ZF), "jna": BinOp("or", CF, ZF),
    "ja": BinOp("and", UnOp("not", CF), UnOp("not", ZF)),
    "jnbe": BinOp("and", UnOp("not", CF), UnOp("not", ZF)),
}
_SIGNED_JCC = {"jl", "jnge", "jge", "jnl", "jle", "jng", "jg", "jnle", "jo", "jno", "jp", "jnp",
               "jpe", "jpo"}
_ALU = {"add", "sub", "xor", "and", "or"}

RSP = Init("RSP", 64)
RIP = "RIP"


class _Operand:
    kind: str  # "reg" | "imm" | "mem" | "label"

    def __init__(self, kind, *, reg=None, width=None, value=None, addr=None, label=None):
        self.kind, self.reg, self.width = kind, reg, width
        self.value, self.addr, self.label = value, addr, label


class _X86:
    def __init__(self, asm: str, addr: int, size: int | None):
        self.asm, self.addr, self.size = asm, addr, size
        mnem, _, rest = asm.strip().partition(" ")
        self.mnem = mnem.lower()
        self.ops = [o.strip() for o in rest.split(",")] if rest.strip() else []

    def fail(self, reason: str) -> LiftError:
        return LiftError(self.addr, self.mnem, reason)

    def next_addr(self) -> int:
        if self.size is None:
            raise self.fail("instruction size is required")
        return self.addr + self.size

    def operand(self, raw: str) -> _Operand:
        text = raw.lower()
        if text in _REGS:
            name, width = _REGS[text]
            return _Operand("reg", reg=name, width=width)
        m = _MEM.match(text)
        if m:
            width = _PTR[m.group(1)] if m.group(1) else None
            return _Operand("mem", width=width, addr=self.address(m.group(2)))
        try:
            return _Operand("imm", value=parse_int(text))
        except ValueError:
            pass
        if re.fullmatch(r"[a-z_.@$?][\w.@$?]*", text):
            return _Operand("label", label=raw)
        raise self.fail(f"unsupported operand {raw!r}")

    def address(self, body: str) -> Expr:
        terms = re.findall(r"([+-]?)\s*([^+-]+)", body.replace(" ", ""))
        if not terms:
            raise self.fail(f"empty memory operand [{body}]")
        parts: list[Expr] = []
        disp = 0
        for sign, term in terms:
            if "*" in term:
                a, b = term.split("*", 1)
                reg, scale = (a, b) if a in _REGS else (b, a)
                if reg not in _REGS or _REGS[reg][1] != 64:
                    raise self.fail(f"bad index in [{body}]")
                s = parse_int(scale)
                if s not in (1, 2, 4, 8) or sign == "-":
                    raise self.fail(f"bad scale in [{body}]")
                idx = Init(_REGS[reg][0], 64)
                parts.append(idx if s == 1 else BinOp("mul", idx, Const(64, s)))
            elif term == "rip":
                disp += self.next_addr()
            elif term in _REGS:
                if _REGS[term][1] != 64 or sign == "-":
                    raise self.fail(f"bad base register in [{body}]")
                parts.append(Init(_REGS[term][0], 64))
            else:
                try:
                    v = parse_int(term)
                except ValueError:
                    raise self.fail(f"unresolved symbol {term!r} in memory operand") from None
                disp += -v if sign == "-" else v
        if not parts:
            return Const(64, disp)
        out = parts[0]
        for p in parts[1:]:
            out = BinOp("add", out, p)
        if disp % (1 << 64):
            out = BinOp("add", out, Const(64, disp))
        return out

    def read(self, op: _Operand, width: int) -> Expr:
        if op.kind == "reg":
            r = Init(op.reg, 64)
            return r if op.width == 64 else UnOp("extract", r, (op.width - 1, 0))
        if op.kind == "imm":
            return Const(width, op.value)
        if op.kind == "mem":
            return MemSelect(MemInit, op.addr, width)
        raise self.fail("label is not a value operand")

    def write(self, op: _Operand, value: Expr) -> Statement:
        if op.kind == "reg":
            v = value if op.width == 64 else UnOp("zext", value, (64,))
            return Assign(op.reg, v)
        if op.kind == "mem":
            return Store(op.addr, value, value.width)
        raise self.fail("destination must be a register or memory")

    def width_of(self, *ops: _Operand) -> int:
        widths = {o.width for o in ops if o.kind in ("reg", "mem") and o.width}
        if len(widths) > 1:
            raise self.fail("operand size mismatch")
        if not widths:
            return 64
        w = widths.pop()
        if w not in (32, 64):
            raise self.fail(f"{w}-bit operands are not supported")
        return w

    def nargs(self, n: int) -> list[_Operand]:
        if len(self.ops) != n:
            raise self.fail(f"expected {n} operands, got {len(self.ops)}")
        ops = [self.operand(o) for o in self.ops]
        if sum(o.kind == "mem" for o in ops) > 1:
            raise self.fail("at most one memory operand")
        return ops

    def flags(self, kind: str, a: Expr, b: Expr, res: Expr) -> list[Statement]:
        w = res.width
        out: list[Statement] = [
            Assign("ZF", BinOp("eq", res, Const(w, 0))),
            Assign("SF", UnOp("extract", res, (w - 1, w - 1))),
        ]
        if kind == "add":
            out.append(Assign("CF", BinOp("ult", res, a)))
        elif kind == "sub":
            out.append(Assign("CF", BinOp("ult", a, b)))
        else:
            out.append(Assign("CF", Const(1, 0)))
        return out

    def lift(self) -> Lifted:
        m = self.mnem
        if m in _ALU or m in ("cmp", "test"):
            dst, src = self.nargs(2)
            w = self.width_of(dst, src)
            a, b = self.read(dst, w), self.read(src, w)
            op = {"cmp": "sub", "test": "and"}.get(m, m)
            res = BinOp(op, a, b)
            ir = self.flags(op, a, b, res)
            if m not in ("cmp", "test"):
                ir.append(self.write(dst, res))
            return Lifted(InsnClass.FALL, tuple(ir))
        if m == "mov":
            dst, src = self.nargs(2)
            w = self.width_of(dst, src)
            return Lifted(InsnClass.FALL, (self.write(dst, self.read(src, w)),))
        if m == "lea":
            dst, src = self.nargs(2)
            if dst.kind != "reg" or src.kind != "mem":
                raise self.fail("lea needs a register and a memory operand")
            a = src.addr if dst.width == 64 else UnOp("extract", src.addr, (31, 0))
            return Lifted(InsnClass.FALL, (self.write(dst, a),))
        if m == "push":
            (src,) = self.nargs(1)
            if src.kind == "reg" and src.width != 64:
                raise self.fail("push needs a 64-bit operand")
            v = self.read(src, 64)
            slot = BinOp("sub", RSP, Const(64, 8))
            return Lifted(InsnClass.FALL, (Store(slot, v, 64), Assign("RSP", slot)))
        if m == "pop":
            (dst,) = self.nargs(1)
            if dst.kind != "reg" or dst.width != 64 or dst.reg == "RSP":
                raise self.fail("pop needs a 64-bit register other than rsp")
            return Lifted(InsnClass.FALL, (
                Assign(dst.reg, MemSelect(MemInit, RSP, 64)),
                Assign("RSP", BinOp("add", RSP, Const(64, 8))),
            ))
        if m == "nop":
            return Lifted(InsnClass.FALL, ())
        if m == "ret":
            if self.ops:
                raise self.fail("ret with an immediate is not supported")
            return Lifted(InsnClass.RET, (
                Assign(RIP, MemSelect(MemInit, RSP, 64)),
                Assign("RSP", BinOp("add", RSP, Const(64, 8))),
            ))
        if m == "call":
            (tgt,) = self.nargs(1)
            slot = BinOp("sub", RSP, Const(64, 8))
            push = (Store(slot, Const(64, self.next_addr()), 64), Assign("RSP", slot))
            if tgt.kind in ("reg", "mem"):
                if tgt.width not in (None, 64):
                    raise self.fail("indirect call target must be 64 bits")
                return Lifted(InsnClass.ICALL, (Assign(RIP, self.read(tgt, 64)),) + push)
            name = tgt.label if tgt.kind == "label" else f"{tgt.value:#x}"
            return Lifted(InsnClass.CALL, push, call_target=name)
        if m == "jmp":
            (tgt,) = self.nargs(1)
            if tgt.kind in ("reg", "mem"):
                if tgt.width not in (None, 64):
                    raise self.fail("indirect jump target must be 64 bits")
                return Lifted(InsnClass.IJUMP, (Assign(RIP, self.read(tgt, 64)),))
            return Lifted(InsnClass.JUMP, ())
        if m in _JCC:
            (tgt,) = self.nargs(1)
            if tgt.kind not in ("imm", "label"):
                raise self.fail("conditional jump target must be direct")
            return Lifted(InsnClass.COND, (), branch_cond=_JCC[m])
        if m in _SIGNED_JCC:
            raise self.fail("signed and parity conditions need flags that are not modeled")
        raise self.fail("unsupported mnemonic")


def lift_x86(asm: str, addr: int, size: int | None = None) -> Lifted:
    return _X86(asm, addr, size).lift()


ARCH = X86_64
