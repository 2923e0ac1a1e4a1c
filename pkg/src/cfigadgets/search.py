"""Semantic queries: structural filtering, complexity ranking, verification.

A query file (``.gq``) is a JSON object::

    {
      "prefix": "EP", "suffix": "IC", "content": "ARB",
      "regs": [{"reg": "R0", "tag": "LoadMem", "base": "R0", "offset": "0x1c"}],
      "mem":  [{"tag": "StoreMem", "base": "RSP", "offset": -8, "src": "RBX"}],
      "values": [{"reg": "R0", "equals": "0x122f58"},
                 {"expr": "eq(R1,0x7:32)"}],
      "max_results": 1
    }

Requirement operands by tag: ``src`` (MovReg, StoreMem, ArithmeticStore;
a register name, or an integer for ArithmeticStore), ``value`` (LoadReg),
``base``/``offset`` (every load/store kind), ``op`` (the arithmetic kinds)
and ``registers_only`` (Arithmetic with two register operands).

In ``values``, register names denote the gadget's *final* register values
and loads read the final memory.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from .analysis import derive_seed
from .arch import Arch
from .classify import MEM_KINDS, REG_KINDS, SemanticTag
from .errors import ParseError, UnknownRegister, UnknownSymbol, ValidationError
from .expr import BinOp, Const, Expr, Init, mask
from .frontend.lifted import parse_int
from .ir import IRSyntaxError, UnknownRegisterError, parse_expr
from .simplify import simplify
from .solver import DEFAULT_BUDGET, SatResult, SatStatus, check_satisfiable
from .store import GadgetDB, GadgetRecord
from .symexec import SymbolicSummary, execute_symbolic, substitute

__all__ = [
    "Candidate",
    "GadgetQuery",
    "MemRequirement",
    "RegRequirement",
    "SearchHit",
    "ValueConstraint",
    "load_query",
    "match_address",
    "parse_query",
    "run_query",
    "search",
    "verify_until_satisfiable",
]

log = logging.getLogger(__name__)


def _opt_int(v: Any) -> int | None:
    if v is None:
        return None
    if isinstance(v, bool):
        raise ValueError(f"not an integer: {v!r}")
    return v if isinstance(v, int) else parse_int(str(v))


@dataclass(frozen=True)
class RegRequirement:
    reg: str
    kind: str
    src: str | None = None
    value: int | None = None
    base: str | None = None
    offset: int | None = None
    op: str | None = None
    registers_only: bool = False


@dataclass(frozen=True)
class MemRequirement:
    kind: str
    base: str | None = None
    offset: int | None = None
    src: str | int | None = None
    op: str | None = None


@dataclass(frozen=True)
class ValueConstraint:
    """``reg == equals`` or a free-form width-1 expression ``expr``."""

    reg: str | None = None
    equals: int | None = None
    expr: str | None = None

    def build(self, widths: Mapping[str, int]) -> Expr:
        if self.expr is not None:
            try:
                e = parse_expr(self.expr, widths)
            except UnknownRegisterError as exc:
                raise UnknownRegister(str(exc)) from None
            except IRSyntaxError as exc:
                raise ParseError(0, f"value constraint {self.expr!r}: {exc}") from None
            if e.width != 1:
                raise ValidationError(f"value constraint {self.expr!r} is not boolean")
            return e
        if self.reg not in widths:
            raise UnknownRegister(f"unknown register {self.reg!r}")
        w = widths[self.reg]
        return BinOp("eq", Init(self.reg, w), Const(w, self.equals))


@dataclass
class GadgetQuery:
    prefix: str | None = None
    suffix: str | None = None
    content: str | None = None
    regs: list[RegRequirement] = field(default_factory=list)
    mem: list[MemRequirement] = field(default_factory=list)
    values: list[ValueConstraint] = field(default_factory=list)
    max_results: int = 1

    def validate(self, arch: Arch | None = None) -> None:
        if not (self.prefix or self.suffix or self.content or self.regs or self.mem or self.values):
            raise ValidationError("query has no requirements")
        if self.prefix not in (None, "EP", "CS"):
            raise ValidationError(f"prefix must be EP or CS, not {self.prefix!r}")
        if self.suffix not in (None, "IC", "IJ", "RET"):
            raise ValidationError(f"suffix must be IC, IJ or RET, not {self.suffix!r}")
        c = self.content
        if c is not None and c not in ("ARB", "LOOP", "F") and not (c.startswith("F(") and c.endswith(")")):
            raise ValidationError(f"bad content {c!r}")
        if self.max_results < 1:
            raise ValidationError("max_results must be positive")
        for r in self.regs:
            if r.kind not in REG_KINDS:
                raise ValidationError(f"{r.reg}: {r.kind!r} is not a register tag")
        for m in self.mem:
            if m.kind not in MEM_KINDS:
                raise ValidationError(f"{m.kind!r} is not a memory tag")
        if arch is None:
            return
        names = [r.reg for r in self.regs]
        names += [x for r in self.regs for x in (r.src, r.base) if x is not None]
        names += [x for m in self.mem for x in (m.base, m.src) if isinstance(x, str)]
        names += [v.reg for v in self.values if v.reg is not None]
        for name in names:
            if name not in arch.widths:
                raise UnknownRegister(f"unknown register {name!r} for {arch.name}")
        for r in self.regs:
            if r.reg not in arch.classifiable:
                raise UnknownRegister(f"{r.reg} is not a classifiable register of {arch.name}")


def parse_query(document: str | Mapping) -> GadgetQuery:
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.lineno, exc.msg) from None
    if not isinstance(document, Mapping):
        raise ParseError(0, "query must be an object")
    known = {"prefix", "suffix", "content", "regs", "mem", "values", "max_results"}
    extra = set(document) - known
    if extra:
        raise ParseError(0, f"unknown query keys: {sorted(extra)}")
    try:
        regs = [
            RegRequirement(
                reg=str(r["reg"]), kind=str(r["tag"]), src=r.get("src"), value=_opt_int(r.get("value")),
                base=r.get("base"), offset=_opt_int(r.get("offset")), op=r.get("op"),
                registers_only=bool(r.get("registers_only", False)),
            )
            for r in document.get("regs", [])
        ]
        mem = []
        for m in document.get("mem", []):
            src = m.get("src")
            if isinstance(src, str):
                try:
                    src = parse_int(src)
                except ValueError:
                    pass  # a register name
            elif src is not None:
                src = _opt_int(src)
            mem.append(MemRequirement(kind=str(m["tag"]), base=m.get("base"), offset=_opt_int(m.get("offset")),
                                      src=src, op=m.get("op")))
        values = []
        for v in document.get("values", []):
            if "expr" in v:
                values.append(ValueConstraint(expr=str(v["expr"])))
            else:
                values.append(ValueConstraint(reg=str(v["reg"]), equals=_opt_int(v["equals"])))
        query = GadgetQuery(
            prefix=document.get("prefix"), suffix=document.get("suffix"), content=document.get("content"),
            regs=regs, mem=mem, values=values, max_results=int(document.get("max_results", 1)),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(0, f"malformed query: {exc!r}") from None
    query.validate()
    return query


def load_query(path: str | Path) -> GadgetQuery:
    return parse_query(Path(path).read_text(encoding="utf-8"))


# -- structural matching ------------------------------------------------------


def match_address(addr: Expr, base: str | None, offset: int | None) -> bool:
    """Match ``Init(base) + offset`` against a simplified address expression."""
    if base is None and offset is None:
        return True
    off = 0
    if isinstance(addr, BinOp) and addr.op in ("add", "sub") and isinstance(addr.rhs, Const):
        off = addr.rhs.value if addr.op == "add" else -addr.rhs.value
        addr = addr.lhs
    if not isinstance(addr, Init):
        return False
    if base is not None and addr.name != base:
        return False
    want = 0 if offset is None else offset
    return (off - want) & mask(addr.width) == 0


def _is_reg(e: Expr, name: str | None) -> bool:
    return name is None or (isinstance(e, Init) and e.name == name)


def _reg_predicate(req: RegRequirement):
    def pred(tag: SemanticTag) -> bool:
        if tag.kind != req.kind:
            return False
        if req.op is not None and tag.op != req.op:
            return False
        if req.kind == "MovReg":
            return _is_reg(tag.args[0], req.src)
        if req.kind == "LoadReg":
            return req.value is None or tag.args[0].value == req.value & mask(tag.args[0].width)
        if req.kind in ("LoadMem", "ArithmeticLoad"):
            if not match_address(tag.addr, req.base, req.offset):
                return False
            return req.src is None or _is_reg(tag.operand, req.src)
        if req.kind == "Arithmetic" and req.registers_only:
            return all(isinstance(a, Init) for a in tag.args)
        return True

    return pred


def _mem_predicate(req: MemRequirement):
    def pred(tag: SemanticTag) -> bool:
        if tag.kind != req.kind:
            return False
        if req.op is not None and tag.op != req.op:
            return False
        if req.kind != "Undefined" and not match_address(tag.addr, req.base, req.offset):
            return False
        if req.src is None:
            return True
        if isinstance(req.src, int):
            return isinstance(tag.operand, Const) and tag.operand.value == req.src & mask(tag.operand.width)
        return _is_reg(tag.operand, req.src)

    return pred


@dataclass
class Candidate:
    db: GadgetDB
    record: GadgetRecord


def _check_content(db: GadgetDB, content: str | None) -> None:
    if content is None or not content.startswith("F("):
        return
    symbol = content[2:-1]
    known = set()
    for module in db.modules:
        known |= set(db.program(module).fixed_functions)
    if symbol not in known:
        raise UnknownSymbol(f"{symbol!r} is not a fixed function of {db.path}")


def run_query(dbs: GadgetDB | Sequence[GadgetDB], query: GadgetQuery) -> list[Candidate]:
    """Structurally matching records of the first database that has any."""
    if isinstance(dbs, GadgetDB):
        dbs = [dbs]
    query.validate()
    for db in dbs:
        for module in db.modules:
            query.validate(db.program(module).arch)
        _check_content(db, query.content)
        ids = db.filter(
            prefix=query.prefix,
            suffix=query.suffix,
            content=query.content,
            reg_tags=_combine(query.regs),
            mem_tags=[_mem_predicate(m) for m in query.mem],
        )
        if ids:
            log.info("%s: %d candidates", db.path, len(ids))
            return [Candidate(db, db.get(rid)) for rid in ids]
    return []


def _combine(regs: Sequence[RegRequirement]) -> dict:
    # Several requirements on one register must all hold.
    preds: dict[str, list] = {}
    for r in regs:
        preds.setdefault(r.reg, []).append(_reg_predicate(r))
    return {reg: (lambda tag, ps=ps: all(p(tag) for p in ps)) for reg, ps in preds.items()}


# -- verification -------------------------------------------------------------


@dataclass
class SearchHit:
    candidate: Candidate
    summary: SymbolicSummary
    result: SatResult
    rank: int

    @property
    def record(self) -> GadgetRecord:
        return self.candidate.record

    @property
    def witness(self) -> dict[str, int]:
        return self.result.witness


def value_constraints(summary: SymbolicSummary, values: Sequence[ValueConstraint], widths) -> list[Expr]:
    out = []
    for v in values:
        e = v.build(widths)
        out.append(simplify(substitute(e, summary.final_regs, summary.mem_out)))
    return out


def iter_verified(
    candidates: Sequence[Candidate],
    values: Sequence[ValueConstraint],
    *,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
) -> Iterator[SearchHit]:
    """Satisfiable candidates in rank order; UNSAT and UNKNOWN are skipped."""
    for rank, cand in enumerate(candidates):
        prog = cand.db.program(cand.record.module)
        summary = execute_symbolic(prog, cand.record.to_gadget())
        extra = value_constraints(summary, values, prog.arch.widths)
        result = check_satisfiable(summary.constraints, extra, budget=budget, arch=prog.arch,
                                   seed=derive_seed(seed, cand.record.id))
        if result.status is SatStatus.SAT:
            yield SearchHit(cand, summary, result, rank)
        else:
            log.info("candidate %d at %#x rejected: %s %s", cand.record.id, cand.record.start_addr,
                     result.status, result.reason)


def verify_until_satisfiable(
    candidates: Sequence[Candidate],
    values: Sequence[ValueConstraint],
    *,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
) -> SearchHit | None:
    return next(iter_verified(candidates, values, budget=budget, seed=seed), None)


def search(
    dbs: GadgetDB | Sequence[GadgetDB],
    query: GadgetQuery,
    *,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
) -> list[SearchHit]:
    """Up to ``query.max_results`` verified gadgets, best first."""
    candidates = run_query(dbs, query)
    hits = []
    for hit in iter_verified(candidates, query.values, budget=budget, seed=seed):
        hits.append(hit)
        if len(hits) >= query.max_results:
            break
    return hits
