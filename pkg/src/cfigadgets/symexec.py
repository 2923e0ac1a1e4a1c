"""Symbolic execution of a gadget path into a summary of its effects."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .expr import (
    BinOp,
    Expr,
    Fresh,
    Init,
    Ite,
    MemInit,
    MemSelect,
    MemStore,
    UnOp,
    walk,
)
from .ir import Assign, Store, count_loads
from .program import InsnClass, fresh_name, havoc_registers
from .simplify import negate, simplify

if TYPE_CHECKING:
    from .discovery import GadgetPath
    from .program import Program

__all__ = ["SymbolicSummary", "execute_symbolic", "substitute"]

log = logging.getLogger(__name__)


@dataclass
class SymbolicSummary:
    reg_out: dict[str, Expr]
    final_regs: dict[str, Expr]
    mem_out: Expr
    writes: list[tuple[Expr, Expr, int]]
    constraints: list[Expr]
    n_mem_reads: int
    suffix_target: Expr
    fresh: list[Fresh] = field(default_factory=list)


def substitute(expr: Expr, regs: dict[str, Expr], mem: Expr) -> Expr:
    """Replace Init(r) by ``regs[r]`` and MemInit by ``mem`` throughout ``expr``."""
    done: dict[int, Expr] = {}
    for node in walk(expr):
        done[id(node)] = _subst_node(node, regs, mem, done)
    return done[id(expr)]


def _subst_node(node: Expr, regs, mem, done) -> Expr:
    if isinstance(node, Init):
        return regs.get(node.name, node)
    if node is MemInit:
        return mem
    kids = [done[id(c)] for c in node.children()]
    if all(k is c for k, c in zip(kids, node.children())):
        return node
    if isinstance(node, BinOp):
        return BinOp(node.op, *kids)
    if isinstance(node, UnOp):
        return UnOp(node.op, kids[0], node.params)
    if isinstance(node, Ite):
        return Ite(*kids)
    if isinstance(node, MemStore):
        return MemStore(kids[0], kids[1], kids[2], node.size)
    if isinstance(node, MemSelect):
        return MemSelect(kids[0], kids[1], node.width)
    return node


def execute_symbolic(program: Program, gadget: GadgetPath) -> SymbolicSummary:
    arch = program.arch
    fn = program.function(gadget.function)
    regs: dict[str, Expr] = {}
    mem: Expr = MemInit
    writes: list[tuple[Expr, Expr, int]] = []
    constraints: list[Expr] = []
    fresh: list[Fresh] = []
    n_reads = 0
    segments = gadget.path
    for k, (baddr, lo, hi) in enumerate(segments):
        block = fn.blocks[baddr]
        for i in range(lo, hi + 1):
            ins = block.instrs[i]
            if program.is_fixed_call(ins):
                for reg in havoc_registers(arch):
                    f = Fresh(fresh_name(reg, ins.addr), arch.widths[reg])
                    fresh.append(f)
                    regs[reg] = f
                continue
            if ins.cls is InsnClass.COND and i == hi and k + 1 < len(segments):
                n_reads += count_loads(ins.branch_cond)
                taken = block.successor("taken")
                if taken != block.successor("fallthrough"):
                    cond = simplify(substitute(ins.branch_cond, regs, mem))
                    constraints.append(cond if segments[k + 1][0] == taken else negate(cond))
            for stmt in ins.ir:
                if isinstance(stmt, Assign):
                    n_reads += count_loads(stmt.expr)
                    regs[stmt.reg] = simplify(substitute(stmt.expr, regs, mem))
                elif isinstance(stmt, Store):
                    n_reads += count_loads(stmt.addr) + count_loads(stmt.value)
                    addr = simplify(substitute(stmt.addr, regs, mem))
                    value = simplify(substitute(stmt.value, regs, mem))
                    mem = MemStore(mem, addr, value, stmt.size)
                    writes.append((addr, value, stmt.size))
    final = {name: regs.get(name, Init(name, w)) for name, w in arch.registers}
    reg_out = {r: final[r] for r in arch.ordered_classifiable()}
    return SymbolicSummary(
        reg_out=reg_out,
        final_regs=final,
        mem_out=mem,
        writes=writes,
        constraints=constraints,
        n_mem_reads=n_reads,
        suffix_target=final[arch.ip],
        fresh=fresh,
    )
