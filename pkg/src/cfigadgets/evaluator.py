"""Concrete evaluation of micro-IR over a machine state.

Expressions are compiled once into straight-line Python (one local per DAG
node), so shared subterms are evaluated once and repeated evaluation under
many states is cheap.  Memory is total: unmapped bytes read as zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

from .arch import Arch
from .expr import (
    BinOp,
    Const,
    Expr,
    Fresh,
    Init,
    Ite,
    MemInit,
    MemSelect,
    MemStore,
    UnOp,
    mask,
    walk,
)
from .ir import Assign, Statement, Store
from .program import InsnClass

if TYPE_CHECKING:
    from .discovery import GadgetPath
    from .program import Program

__all__ = ["MachineState", "compile_exprs", "eval_expr", "exec_path", "replay_gadget"]


@dataclass
class MachineState:
    """Registers (name -> value) and sparse byte memory (address -> byte).

    Havoc values of fixed-function calls are kept in ``regs`` under their
    ``fresh`` names.  Unmapped bytes read as zero unless ``fill_seed`` is
    set, in which case they read as a fixed pseudo-random function of the
    address (used by differential tests to make loads informative).
    """

    arch: Arch
    regs: dict[str, int] = field(default_factory=dict)
    mem: dict[int, int] = field(default_factory=dict)
    fill_seed: int | None = None

    def copy(self) -> MachineState:
        return MachineState(self.arch, dict(self.regs), dict(self.mem), self.fill_seed)

    def reg(self, name: str) -> int:
        return self.regs.get(name, 0)

    def byte(self, addr: int) -> int:
        b = self.mem.get(addr)
        if b is not None:
            return b
        if self.fill_seed is None:
            return 0
        return fill_byte(self.fill_seed, addr)

    def read(self, addr: int, nbytes: int) -> int:
        am = mask(self.arch.bits)
        data = [self.byte((addr + i) & am) for i in range(nbytes)]
        return int.from_bytes(bytes(data), self.arch.endianness)

    def write(self, addr: int, value: int, nbytes: int) -> None:
        am = mask(self.arch.bits)
        data = (value & mask(8 * nbytes)).to_bytes(nbytes, self.arch.endianness)
        for i, b in enumerate(data):
            self.mem[(addr + i) & am] = b


def fill_byte(seed: int, addr: int) -> int:
    x = (addr * 0x9E3779B97F4A7C15 + seed * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x ^= x >> 31
    x = (x * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (x >> 29) & 0xFF


def _load(reader, addr: int, nbytes: int, am: int, little: bool) -> int:
    value = 0
    if little:
        for i in range(nbytes - 1, -1, -1):
            value = (value << 8) | reader((addr + i) & am)
    else:
        for i in range(nbytes):
            value = (value << 8) | reader((addr + i) & am)
    return value


def _store(reader, addr: int, value: int, nbytes: int, am: int, little: bool):
    data = value.to_bytes(nbytes, "little" if little else "big")

    def read(x: int) -> int:
        d = (x - addr) & am
        return data[d] if d < nbytes else reader(x)

    return read


def _gen(node: Expr, v: Callable[[Expr], str]) -> str:
    if isinstance(node, Const):
        return str(node.value)
    if isinstance(node, (Init, Fresh)):
        # Masked so an oversized value in the state cannot leak past the width.
        return f"regs.get({node.name!r}, 0) & {mask(node.width)}"
    if node is MemInit:
        return "base"
    if isinstance(node, BinOp):
        a, b = v(node.lhs), v(node.rhs)
        w = node.lhs.width
        m = mask(w)
        s = 1 << (w - 1)
        op = node.op
        if op == "add":
            return f"({a} + {b}) & {m}"
        if op == "sub":
            return f"({a} - {b}) & {m}"
        if op == "mul":
            return f"({a} * {b}) & {m}"
        if op == "and":
            return f"{a} & {b}"
        if op == "or":
            return f"{a} | {b}"
        if op == "xor":
            return f"{a} ^ {b}"
        if op == "shl":
            return f"(({a} << {b}) & {m}) if {b} < {w} else 0"
        if op == "lshr":
            return f"({a} >> {b}) if {b} < {w} else 0"
        if op == "ashr":
            return f"((({a} ^ {s}) - {s}) >> ({b} if {b} < {w} else {w - 1})) & {m}"
        if op == "eq":
            return f"int({a} == {b})"
        if op == "ne":
            return f"int({a} != {b})"
        if op == "ult":
            return f"int({a} < {b})"
        if op == "uge":
            return f"int({a} >= {b})"
        if op == "slt":
            return f"int(({a} ^ {s}) < ({b} ^ {s}))"
        if op == "sge":
            return f"int(({a} ^ {s}) >= ({b} ^ {s}))"
    if isinstance(node, UnOp):
        a = v(node.arg)
        if node.op == "not":
            return f"{a} ^ {mask(node.width)}"
        if node.op == "neg":
            return f"(-{a}) & {mask(node.width)}"
        if node.op == "zext":
            return a
        if node.op == "sext":
            s = 1 << (node.arg.width - 1)
            return f"(({a} ^ {s}) - {s}) & {mask(node.width)}"
        if node.op == "extract":
            hi, lo = node.params
            return f"({a} >> {lo}) & {mask(hi - lo + 1)}"
    if isinstance(node, Ite):
        return f"{v(node.then)} if {v(node.cond)} else {v(node.other)}"
    if isinstance(node, MemStore):
        return f"_store({v(node.mem)}, {v(node.addr)}, {v(node.value)}, {node.size // 8}, AM, LITTLE)"
    if isinstance(node, MemSelect):
        return f"_load({v(node.mem)}, {v(node.addr)}, {node.width // 8}, AM, LITTLE)"
    raise TypeError(f"cannot evaluate {type(node).__name__}")


@lru_cache(maxsize=8192)
def _compile(roots: tuple[Expr, ...], bits: int, endianness: str):
    names: dict[int, str] = {}
    lines = ["def _f(state):", "    regs = state.regs", "    _mem = state.mem",
             "    base = (lambda x: _mem.get(x, 0)) if state.fill_seed is None else state.byte"]
    for root in roots:
        for node in walk(root):
            if id(node) in names:
                continue
            if isinstance(node, Const):
                names[id(node)] = str(node.value)
                continue
            name = f"v{len(names)}"
            lines.append(f"    {name} = {_gen(node, lambda e: names[id(e)])}")
            names[id(node)] = name
    lines.append("    return [" + ", ".join(names[id(r)] for r in roots) + "]")
    env = {"_load": _load, "_store": _store, "AM": mask(bits), "LITTLE": endianness == "little"}
    exec(compile("\n".join(lines), "<expr>", "exec"), env)
    return env["_f"]


def compile_exprs(exprs: Sequence[Expr], arch: Arch) -> Callable[[MachineState], list[int]]:
    """Compile several expressions into one function of a state."""
    return _compile(tuple(exprs), arch.bits, arch.endianness)


def eval_expr(state: MachineState, expr: Expr) -> int:
    return _compile((expr,), state.arch.bits, state.arch.endianness)(state)[0]


def exec_stmt(state: MachineState, stmt: Statement, writes: list | None = None) -> None:
    """Apply one statement to ``state`` in place."""
    if isinstance(stmt, Assign):
        state.regs[stmt.reg] = eval_expr(state, stmt.expr)
    elif isinstance(stmt, Store):
        addr, value = _compile((stmt.addr, stmt.value), state.arch.bits, state.arch.endianness)(state)
        state.write(addr, value, stmt.size // 8)
        if writes is not None:
            writes.append((addr, value, stmt.size))
    else:
        raise TypeError(f"not a statement: {stmt!r}")


def exec_path(state: MachineState, stmts: Iterable[Statement]) -> MachineState:
    """Run statements in order on a copy of ``state``."""
    out = state.copy()
    for stmt in stmts:
        exec_stmt(out, stmt)
    return out


@dataclass
class Replay:
    state: MachineState
    writes: list[tuple[int, int, int]]
    # False when some conditional branch went a different way than the path.
    followed: bool


def replay_gadget(program: Program, gadget: GadgetPath, state: MachineState) -> Replay:
    """Execute a gadget's path concretely, statement by statement.

    Fixed-function calls are havoced with the same convention as the
    symbolic engine: each clobbered register takes the value stored in
    ``state.regs`` under ``fresh_name(reg, call_addr)`` (zero if absent).
    """
    from .program import fresh_name, havoc_registers

    fn = program.function(gadget.function)
    cur = state.copy()
    writes: list[tuple[int, int, int]] = []
    followed = True
    segments = gadget.path
    for k, (baddr, lo, hi) in enumerate(segments):
        block = fn.blocks[baddr]
        for i in range(lo, hi + 1):
            ins = block.instrs[i]
            if program.is_fixed_call(ins):
                for reg in havoc_registers(program.arch):
                    cur.regs[reg] = state.regs.get(fresh_name(reg, ins.addr), 0)
                continue
            if ins.cls is InsnClass.COND and i == hi and k + 1 < len(segments):
                taken = eval_expr(cur, ins.branch_cond)
                want = segments[k + 1][0]
                goes = block.successor("taken") if taken else block.successor("fallthrough")
                if goes != want:
                    followed = False
            for stmt in ins.ir:
                exec_stmt(cur, stmt, writes)
    return Replay(cur, writes, followed)
