"""Semantic tags for register equations and memory writes, plus ranking keys.

Matching is purely syntactic on simplified trees.  A register gets the
first definition that fits, in the order NOP, MovReg, LoadReg, LoadMem,
Arithmetic, ArithmeticLoad, else Undefined.  Memory writes are peeled off
the store chain outermost layer first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, NamedTuple

from .expr import COMMUTATIVE, BinOp, Const, Expr, Init, MemInit, MemSelect, MemStore
from .ir import format_expr, parse_expr

if TYPE_CHECKING:
    from .evaluator import MachineState
    from .symexec import SymbolicSummary

__all__ = [
    "REG_KINDS",
    "MEM_KINDS",
    "ComplexityKey",
    "SemanticTag",
    "classify_equation",
    "classify_memory_writes",
    "classify_register",
    "classify_summary",
    "complexity_key",
    "count_nops",
    "peel_stores",
    "ranking_key",
    "store_holds",
    "tag_holds",
]

log = logging.getLogger(__name__)

REG_KINDS = ("NOP", "MovReg", "LoadReg", "LoadMem", "Arithmetic", "ArithmeticLoad", "Undefined")
MEM_KINDS = ("StoreMem", "ArithmeticStore", "Undefined")


@dataclass(frozen=True)
class SemanticTag:
    """One semantic definition with its operands.

    ``args`` by kind: MovReg (src,), LoadReg (const,), LoadMem (addr,),
    Arithmetic and ArithmeticLoad (lhs, rhs) exactly as they appear in the
    equation, StoreMem (addr, src), ArithmeticStore (addr, operand).
    ``width`` is the access width for the memory kinds and 0 otherwise.
    """

    kind: str
    op: str | None = None
    args: tuple[Expr, ...] = ()
    width: int = 0

    @property
    def addr(self) -> Expr | None:
        if self.kind in ("LoadMem", "StoreMem", "ArithmeticStore"):
            return self.args[0]
        if self.kind == "ArithmeticLoad":
            load = next(a for a in self.args if isinstance(a, MemSelect))
            return load.addr
        return None

    @property
    def operand(self) -> Expr | None:
        """The non-address operand of the load/store kinds, or the source register."""
        if self.kind in ("MovReg", "StoreMem", "ArithmeticStore"):
            return self.args[-1]
        if self.kind == "ArithmeticLoad":
            return next(a for a in self.args if not isinstance(a, MemSelect))
        return None

    def __str__(self) -> str:
        inner = [self.op] if self.op else []
        inner += [format_expr(a) for a in self.args]
        return f"{self.kind}({', '.join(inner)})" if inner else self.kind

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.op:
            out["op"] = self.op
        if self.args:
            out["args"] = [format_expr(a) for a in self.args]
        if self.width:
            out["width"] = self.width
        return out

    @classmethod
    def from_json(cls, obj: Mapping, regs: Mapping[str, int]) -> SemanticTag:
        kind = obj["kind"]
        if kind not in REG_KINDS and kind not in MEM_KINDS:
            raise ValueError(f"unknown tag kind {kind!r}")
        args = tuple(parse_expr(a, regs) for a in obj.get("args", ()))
        return cls(kind, obj.get("op"), args, int(obj.get("width", 0)))


UNDEFINED = SemanticTag("Undefined")


def _is_operand(e: Expr) -> bool:
    return isinstance(e, (Init, Const))


def _is_initial_load(e: Expr) -> bool:
    return isinstance(e, MemSelect) and e.mem is MemInit


def classify_register(summary: SymbolicSummary, reg: str) -> SemanticTag:
    return classify_equation(reg, summary.reg_out[reg])


def classify_equation(reg: str, e: Expr) -> SemanticTag:
    if isinstance(e, Init):
        if e.name == reg:
            return SemanticTag("NOP")
        return SemanticTag("MovReg", args=(e,))
    if isinstance(e, Const):
        return SemanticTag("LoadReg", args=(e,))
    if _is_initial_load(e):
        return SemanticTag("LoadMem", args=(e.addr,), width=e.width)
    if isinstance(e, BinOp):
        x, y = e.lhs, e.rhs
        if _is_operand(x) and _is_operand(y):
            return SemanticTag("Arithmetic", e.op, (x, y))
        if (_is_initial_load(x) and _is_operand(y)) or (_is_initial_load(y) and _is_operand(x)):
            load = x if isinstance(x, MemSelect) else y
            return SemanticTag("ArithmeticLoad", e.op, (x, y), load.width)
    return UNDEFINED


def peel_stores(mem: Expr) -> list[MemStore]:
    """Store layers of a chain, outermost (latest) first."""
    out = []
    while isinstance(mem, MemStore):
        out.append(mem)
        mem = mem.mem
    return out


def _classify_layer(layer: MemStore) -> SemanticTag:
    v = layer.value
    if isinstance(v, Init):
        return SemanticTag("StoreMem", args=(layer.addr, v), width=layer.size)
    if isinstance(v, BinOp):
        for load, z in ((v.lhs, v.rhs), (v.rhs, v.lhs)):
            if (_is_initial_load(load) and load.addr is layer.addr and load.width == layer.size
                    and _is_operand(z)):
                if load is v.rhs and v.op not in COMMUTATIVE:
                    break
                return SemanticTag("ArithmeticStore", v.op, (layer.addr, z), layer.size)
    return UNDEFINED


def classify_memory_writes(summary: SymbolicSummary) -> list[SemanticTag]:
    return [_classify_layer(layer) for layer in peel_stores(summary.mem_out)]


def classify_summary(summary: SymbolicSummary) -> tuple[dict[str, SemanticTag], list[SemanticTag]]:
    reg_tags = {r: classify_register(summary, r) for r in summary.reg_out}
    return reg_tags, classify_memory_writes(summary)


class ComplexityKey(NamedTuple):
    instr_count: int
    n_mem_writes: int
    n_mem_reads: int
    neg_nop: int


def complexity_key(instr_count: int, n_mem_writes: int, n_mem_reads: int, n_nop: int) -> ComplexityKey:
    return ComplexityKey(instr_count, n_mem_writes, n_mem_reads, -n_nop)


def ranking_key(record) -> tuple:
    """Full sort key for a stored record: complexity first, then a stable tiebreak."""
    return (tuple(record.complexity), record.module, record.start_addr, record.id)


# -- concrete checks used by differential testing ---------------------------


def _value(state: MachineState, e: Expr) -> int:
    from .evaluator import eval_expr

    return eval_expr(state, e)


def tag_holds(tag: SemanticTag, reg: str, before: MachineState, after: int) -> bool:
    """Does a register's concrete final value ``after`` agree with ``tag``?"""
    if tag.kind == "NOP":
        return after == before.reg(reg)
    if tag.kind in ("MovReg", "LoadReg"):
        return after == _value(before, tag.args[0])
    if tag.kind == "LoadMem":
        return after == before.read(_value(before, tag.args[0]), tag.width // 8)
    if tag.kind in ("Arithmetic", "ArithmeticLoad"):
        return after == _value(before, BinOp(tag.op, *tag.args))
    return True


def store_holds(tag: SemanticTag, before: MachineState, write: tuple[int, int, int]) -> bool:
    """Does one concrete write ``(addr, value, size)`` agree with a memory tag?"""
    addr, value, size = write
    if tag.kind == "Undefined":
        return True
    if addr != _value(before, tag.args[0]) or size != tag.width:
        return False
    if tag.kind == "StoreMem":
        return value == _value(before, tag.args[1])
    old = MemSelect(MemInit, tag.args[0], tag.width)
    return value == _value(before, BinOp(tag.op, old, tag.args[1]))


def count_nops(reg_tags: Mapping[str, SemanticTag] | Iterable[SemanticTag]) -> int:
    tags = reg_tags.values() if isinstance(reg_tags, Mapping) else reg_tags
    return sum(1 for t in tags if t.kind == "NOP")
