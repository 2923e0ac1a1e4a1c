"""Points of interest and backward depth-first extraction of gadget paths.

A gadget is a simple path of block segments that ends at an indirect call,
indirect jump or return and starts at a legitimate control-flow target:
a function entry (EP) or the instruction after a call (CS).  Interior
instructions may be anything except plain calls, indirect transfers and
returns; calls to fixed functions are allowed and mark the gadget as F.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .program import CALLS, ENDPOINTS, BasicBlock, Function, InsnClass, Program, predecessors

__all__ = [
    "DEFAULT_MAX_LEN",
    "GadgetPath",
    "PoiIndex",
    "dedup",
    "extract_gadgets",
    "gadget_order_key",
    "load_fixed_functions",
    "scan_points_of_interest",
]

log = logging.getLogger(__name__)

DEFAULT_MAX_LEN = 30
SUFFIX = {InsnClass.ICALL: "IC", InsnClass.IJUMP: "IJ", InsnClass.RET: "RET"}

Segment = tuple[int, int, int]


@dataclass(frozen=True)
class GadgetPath:
    prefix: str
    suffix: str
    content: str
    function: str
    path: tuple[Segment, ...]
    instr_count: int
    module: str
    start_addr: int
    end_addr: int
    opcode_hash: str

    @property
    def is_loop(self) -> bool:
        return self.content == "LOOP"

    @property
    def fixed_symbol(self) -> str | None:
        if self.content.startswith("F(") and self.content.endswith(")"):
            return self.content[2:-1]
        return None


def gadget_order_key(g: GadgetPath):
    # (start, end, length) alone does not separate EP/CS views of one path
    # or different paths between the same two instructions.
    return (g.start_addr, g.end_addr, g.instr_count, g.path, g.prefix, g.content)


@dataclass
class PoiIndex:
    rets: list[tuple[str, int, int]] = field(default_factory=list)
    icalls: list[tuple[str, int, int]] = field(default_factory=list)
    ijumps: list[tuple[str, int, int]] = field(default_factory=list)
    calls: list[tuple[str, int, int]] = field(default_factory=list)
    fixed_calls: list[tuple[str, int, int, str]] = field(default_factory=list)

    def endpoints(self) -> list[tuple[str, int, int]]:
        return [*self.icalls, *self.ijumps, *self.rets]


def load_fixed_functions(path: str | Path) -> set[str]:
    """Read a fixed-function list: one symbol per line, ``#`` starts a comment."""
    out = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        sym = line.split("#", 1)[0].strip()
        if sym:
            out.add(sym)
    return out


def scan_points_of_interest(program: Program) -> PoiIndex:
    poi = PoiIndex()
    located = []
    for fn in program.functions:
        for block, i, ins in fn.instructions():
            located.append((ins.addr, fn.name, block.addr, i, ins))
    located.sort(key=lambda t: t[:2])
    # Phase 1: calls to fixed functions.
    for _, fname, baddr, i, ins in located:
        if program.is_fixed_call(ins):
            poi.fixed_calls.append((fname, baddr, i, ins.call_target))
    # Phase 2: every instruction filed by class.
    lists = {InsnClass.RET: poi.rets, InsnClass.ICALL: poi.icalls,
             InsnClass.IJUMP: poi.ijumps, InsnClass.CALL: poi.calls}
    for _, fname, baddr, i, ins in located:
        target = lists.get(ins.cls)
        if target is not None:
            target.append((fname, baddr, i))
    return poi


def _normalize(asm: str) -> str:
    return " ".join(asm.lower().replace(",", ", ").split())


class _Extractor:
    def __init__(self, program: Program, fn: Function, max_len: int):
        self.program = program
        self.fn = fn
        self.max_len = max_len
        self.preds = predecessors(fn)

    def interior_ok(self, block: BasicBlock, i: int) -> bool:
        ins = block.instrs[i]
        if ins.cls in (InsnClass.FALL, InsnClass.JUMP, InsnClass.COND):
            return True
        return self.program.is_fixed_call(ins)

    def prefixes(self, block: BasicBlock, lo: int) -> list[str]:
        out = []
        if block.addr == self.fn.entry and lo == 0:
            out.append("EP")
        if lo > 0:
            cs = block.instrs[lo - 1].cls in CALLS
        else:
            cs = any(self.fn.blocks[p].last.cls in CALLS for p in self.preds.get(block.addr, ()))
        if cs:
            out.append("CS")
        return out

    def content(self, prefix: str, suffix: str, segs: list[Segment]) -> str:
        first_addr, lo, _ = segs[0]
        last_addr, _, hi = segs[-1]
        last = self.fn.blocks[last_addr]
        if (prefix == "CS" and suffix == "IC" and lo == 0 and hi == len(last.instrs) - 1
                and any(e.target == first_addr for e in last.succs)):
            return "LOOP"
        for baddr, s_lo, s_hi in reversed(segs):
            block = self.fn.blocks[baddr]
            for i in range(s_hi, s_lo - 1, -1):
                ins = block.instrs[i]
                if (baddr, i) != (last_addr, hi) and self.program.is_fixed_call(ins):
                    return f"F({ins.call_target})"
        return "ARB"

    def emit(self, segs: list[Segment], count: int, suffix: str, out: list[GadgetPath]) -> None:
        first = self.fn.blocks[segs[0][0]]
        lo = segs[0][1]
        prefixes = self.prefixes(first, lo)
        if not prefixes:
            return
        asm = []
        for baddr, s_lo, s_hi in segs:
            block = self.fn.blocks[baddr]
            asm.extend(_normalize(block.instrs[i].asm) for i in range(s_lo, s_hi + 1))
        last = self.fn.blocks[segs[-1][0]]
        for prefix in prefixes:
            digest = hashlib.sha1("\n".join([prefix, *asm]).encode()).hexdigest()
            out.append(GadgetPath(
                prefix=prefix,
                suffix=suffix,
                content=self.content(prefix, suffix, segs),
                function=self.fn.name,
                path=tuple(segs),
                instr_count=count,
                module=self.program.module_name,
                start_addr=first.instrs[lo].addr,
                end_addr=last.instrs[segs[-1][2]].addr,
                opcode_hash=digest,
            ))

    def from_endpoint(self, baddr: int, idx: int) -> list[GadgetPath]:
        block = self.fn.blocks[baddr]
        suffix = SUFFIX[block.instrs[idx].cls]
        out: list[GadgetPath] = []
        # Explicit stack of (block addr, hi, tail segments, tail count, on-path set).
        stack = [(baddr, idx, (), 0, frozenset([baddr]))]
        while stack:
            cur, hi, tail, tail_count, on_path = stack.pop()
            blk = self.fn.blocks[cur]
            lo = hi
            while True:
                count = tail_count + hi - lo + 1
                if count > self.max_len:
                    break
                segs = [(cur, lo, hi), *tail]
                self.emit(segs, count, suffix, out)
                if lo == 0:
                    if count < self.max_len:
                        for p in reversed(self.preds.get(cur, ())):
                            pblk = self.fn.blocks[p]
                            if p in on_path or not self.interior_ok(pblk, len(pblk.instrs) - 1):
                                continue
                            stack.append((p, len(pblk.instrs) - 1, tuple(segs), count, on_path | {p}))
                    break
                if not self.interior_ok(blk, lo - 1):
                    break
                lo -= 1
        return out


def _extract_chunk(args) -> list[GadgetPath]:
    program, endpoints, max_len = args
    out: list[GadgetPath] = []
    extractors: dict[str, _Extractor] = {}
    for fname, baddr, idx in endpoints:
        ex = extractors.get(fname)
        if ex is None:
            ex = extractors[fname] = _Extractor(program, program.function(fname), max_len)
        out.extend(ex.from_endpoint(baddr, idx))
    return out


def extract_gadgets(
    program: Program,
    poi: PoiIndex | None = None,
    max_len: int = DEFAULT_MAX_LEN,
    workers: int = 1,
) -> list[GadgetPath]:
    """All gadget paths of ``program``, before deduplication, in merge order."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    if poi is None:
        poi = scan_points_of_interest(program)
    endpoints = poi.endpoints()
    if workers > 1 and len(endpoints) > 1:
        chunks = [endpoints[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_extract_chunk, [(program, c, max_len) for c in chunks if c]))
        found = [g for part in parts for g in part]
    else:
        found = _extract_chunk((program, endpoints, max_len))
    found.sort(key=gadget_order_key)
    log.info("%s: %d gadget paths from %d endpoints", program.module_name, len(found), len(endpoints))
    return found


def dedup(gadgets: Sequence[GadgetPath], keep_duplicates: bool = False) -> list[GadgetPath]:
    """Keep the first gadget (by ascending start address) per opcode hash."""
    if keep_duplicates:
        return list(gadgets)
    winner: dict[str, int] = {}
    for i in sorted(range(len(gadgets)), key=lambda i: (gadgets[i].start_addr, i)):
        winner.setdefault(gadgets[i].opcode_hash, i)
    keep = set(winner.values())
    return [g for i, g in enumerate(gadgets) if i in keep]


def count_categories(gadgets: Iterable[GadgetPath]) -> dict[tuple[str, str, str], int]:
    """Counts per (prefix, content kind, suffix); content kind is ARB, F or LOOP."""
    out: dict[tuple[str, str, str], int] = {}
    for g in gadgets:
        kind = "F" if g.fixed_symbol is not None else g.content
        key = (g.prefix, kind, g.suffix)
        out[key] = out.get(key, 0) + 1
    return out
