"""Architecture-neutral CFG model: programs, functions, blocks, instructions."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Mapping

from .arch import Arch
from .errors import MalformedInstruction, ValidationError
from .expr import Expr, Init, walk
from .ir import Assign, Statement, Store

__all__ = [
    "BasicBlock",
    "Edge",
    "Function",
    "InsnClass",
    "Instruction",
    "Program",
    "classify_instruction",
    "predecessors",
    "validate_program",
]


class InsnClass(str, enum.Enum):
    FALL = "FALL"
    JUMP = "JUMP"
    COND = "COND"
    CALL = "CALL"
    ICALL = "ICALL"
    IJUMP = "IJUMP"
    RET = "RET"

    def __str__(self) -> str:
        return self.value


ENDPOINTS = frozenset([InsnClass.ICALL, InsnClass.IJUMP, InsnClass.RET])
CALLS = frozenset([InsnClass.CALL, InsnClass.ICALL])
# Classes that must be the last instruction of their block.
TERMINATORS = frozenset([InsnClass.JUMP, InsnClass.COND, InsnClass.IJUMP, InsnClass.RET])
EDGE_KINDS = ("taken", "fallthrough", "unconditional")


@dataclass(frozen=True)
class Instruction:
    addr: int
    size: int
    asm: str
    cls: InsnClass
    ir: tuple[Statement, ...] = ()
    call_target: str | None = None
    branch_cond: Expr | None = None

    @property
    def next_addr(self) -> int:
        return self.addr + self.size


@dataclass(frozen=True)
class Edge:
    target: int
    kind: str


@dataclass(frozen=True)
class BasicBlock:
    addr: int
    instrs: tuple[Instruction, ...]
    succs: tuple[Edge, ...] = ()

    @property
    def last(self) -> Instruction:
        return self.instrs[-1]

    def successor(self, kind: str) -> int | None:
        for e in self.succs:
            if e.kind == kind:
                return e.target
        return None


@dataclass(frozen=True)
class Function:
    name: str
    entry: int
    blocks: Mapping[int, BasicBlock] = field(hash=False)

    def ordered_blocks(self) -> list[BasicBlock]:
        return [self.blocks[a] for a in sorted(self.blocks)]

    def instructions(self) -> Iterator[tuple[BasicBlock, int, Instruction]]:
        for block in self.ordered_blocks():
            for i, ins in enumerate(block.instrs):
                yield block, i, ins


@dataclass(frozen=True)
class Program:
    arch: Arch
    module_name: str
    functions: tuple[Function, ...]
    fixed_functions: frozenset[str] = frozenset()

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def is_fixed_call(self, ins: Instruction) -> bool:
        return ins.cls is InsnClass.CALL and ins.call_target in self.fixed_functions

    def with_fixed_functions(self, extra) -> Program:
        return Program(self.arch, self.module_name, self.functions,
                       self.fixed_functions | frozenset(extra))


def predecessors(function: Function) -> dict[int, list[int]]:
    """Transpose of the successor relation, ascending and duplicate-free."""
    preds: dict[int, set[int]] = {addr: set() for addr in function.blocks}
    for block in function.blocks.values():
        for edge in block.succs:
            preds.setdefault(edge.target, set()).add(block.addr)
    return {addr: sorted(src) for addr, src in preds.items()}


def _writes_ip(ins: Instruction, ip: str) -> bool:
    return any(isinstance(s, Assign) and s.reg == ip for s in ins.ir)


def classify_instruction(ins: Instruction, arch: Arch) -> InsnClass:
    """Return the declared class after checking it against the instruction's IR."""
    cls = ins.cls
    if cls is InsnClass.CALL and not ins.call_target:
        raise MalformedInstruction(ins.addr, "CALL without a call target")
    if cls is not InsnClass.CALL and ins.call_target is not None:
        raise MalformedInstruction(ins.addr, f"{cls} carries a call target")
    if cls is InsnClass.COND:
        if ins.branch_cond is None:
            raise MalformedInstruction(ins.addr, "COND without a branch condition")
        if ins.branch_cond.width != 1:
            raise MalformedInstruction(ins.addr, "branch condition must have width 1")
    elif ins.branch_cond is not None:
        raise MalformedInstruction(ins.addr, f"{cls} carries a branch condition")
    if cls in ENDPOINTS and not _writes_ip(ins, arch.ip):
        raise MalformedInstruction(ins.addr, f"{cls} whose IR never writes {arch.ip}")
    if ins.size <= 0:
        raise MalformedInstruction(ins.addr, "instruction size must be positive")
    return cls


def _check_expr(expr: Expr, arch: Arch, where: str, problems: list[str]) -> None:
    for node in walk(expr):
        if isinstance(node, Init) and arch.widths.get(node.name) != node.width:
            problems.append(f"{where}: unknown register {node.name}")
        addr = getattr(node, "addr", None)
        if addr is not None and addr.width != arch.bits:
            problems.append(f"{where}: address width {addr.width} != {arch.bits}")


def _check_stmt(stmt: Statement, arch: Arch, where: str, problems: list[str]) -> None:
    if isinstance(stmt, Assign):
        if stmt.reg not in arch.widths:
            problems.append(f"{where}: unknown register {stmt.reg}")
        elif arch.widths[stmt.reg] != stmt.expr.width:
            problems.append(f"{where}: {stmt.reg} assigned a {stmt.expr.width}-bit value")
        _check_expr(stmt.expr, arch, where, problems)
    elif isinstance(stmt, Store):
        if stmt.addr.width != arch.bits:
            problems.append(f"{where}: store address is {stmt.addr.width} bits")
        _check_expr(stmt.addr, arch, where, problems)
        _check_expr(stmt.value, arch, where, problems)


def validate_program(program: Program) -> None:
    """Raise ValidationError listing every invariant violation found."""
    problems: list[str] = []
    arch = program.arch
    entries = [f.entry for f in program.functions]
    if len(set(entries)) != len(entries):
        problems.append("function entry addresses are not unique")
    names = [f.name for f in program.functions]
    if len(set(names)) != len(names):
        problems.append("function names are not unique")
    for sym in program.fixed_functions:
        if not isinstance(sym, str) or not sym:
            problems.append("fixed function names must be non-empty strings")
    for fn in program.functions:
        if fn.entry not in fn.blocks:
            problems.append(f"{fn.name}: entry {fn.entry:#x} is not a block")
        for addr, block in fn.blocks.items():
            where = f"{fn.name}@{addr:#x}"
            if addr != block.addr:
                problems.append(f"{where}: keyed under the wrong address")
            if not block.instrs:
                problems.append(f"{where}: empty block")
                continue
            if block.instrs[0].addr != block.addr:
                problems.append(f"{where}: first instruction is not at the block address")
            for prev, cur in zip(block.instrs, block.instrs[1:]):
                if cur.addr <= prev.addr:
                    problems.append(f"{where}: instruction addresses do not increase")
            for i, ins in enumerate(block.instrs):
                try:
                    classify_instruction(ins, arch)
                except MalformedInstruction as exc:
                    problems.append(str(exc))
                if ins.cls in TERMINATORS and i != len(block.instrs) - 1:
                    problems.append(f"{where}: {ins.cls} at {ins.addr:#x} is not the last instruction")
                for stmt in ins.ir:
                    _check_stmt(stmt, arch, f"{ins.addr:#x}", problems)
                if ins.branch_cond is not None:
                    _check_expr(ins.branch_cond, arch, f"{ins.addr:#x}", problems)
            kinds = [e.kind for e in block.succs]
            for e in block.succs:
                if e.kind not in EDGE_KINDS:
                    problems.append(f"{where}: unknown edge kind {e.kind!r}")
                if e.target not in fn.blocks:
                    problems.append(f"{where}: successor {e.target:#x} outside {fn.name}")
            if block.last.cls is InsnClass.COND:
                if sorted(kinds) != ["fallthrough", "taken"]:
                    problems.append(f"{where}: conditional block needs one taken and one fallthrough edge")
            elif "taken" in kinds:
                problems.append(f"{where}: taken edge without a conditional terminator")
            if block.last.cls is InsnClass.RET and block.succs:
                problems.append(f"{where}: RET block has successors")
    if problems:
        raise ValidationError("; ".join(problems))


def havoc_registers(arch: Arch) -> list[str]:
    """Registers a fixed-function call clobbers: return value plus caller-saved."""
    out = [arch.ret_reg] if arch.ret_reg else []
    out += [r for r in arch.caller_saved if r not in out]
    return out


def fresh_name(reg: str, call_addr: int) -> str:
    return f"{reg}@{call_addr:#x}"
