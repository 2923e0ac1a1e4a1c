"""The ``.gcfg`` interchange format: a JSON description of a program's CFG.

Top-level keys are ``arch`` (a builtin name or a full register-file
object), ``module``, ``fixed_functions`` and ``functions``.  Addresses are
``0x`` hex strings.  An instruction may omit ``class``, ``ir`` or ``cond``;
the missing parts are then produced by the lifter for the architecture.
Serialization always writes every field explicitly, so a serialized
program re-parses without invoking a lifter.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Iterable

from ..arch import BUILTIN_ARCHES, Arch
from ..errors import MalformedInstruction, ParseError, UnknownRegister, ValidationError
from ..ir import IRSyntaxError, UnknownRegisterError, format_expr, format_stmt, parse_expr, parse_stmt
from ..program import BasicBlock, Edge, Function, InsnClass, Instruction, Program, validate_program
from .dispatch import lift

__all__ = ["load_program", "parse_program", "program_to_document", "serialize_program"]

log = logging.getLogger(__name__)

_FALLS_THROUGH = frozenset([InsnClass.FALL, InsnClass.CALL, InsnClass.ICALL])


class _Reader:
    def __init__(self, raw: str | None):
        self.raw = raw

    def line_of(self, needle: str) -> int:
        """Best-effort line number of ``needle`` in the source text (0 if unknown)."""
        if not self.raw:
            return 0
        i = self.raw.find(needle)
        return self.raw.count("\n", 0, i) + 1 if i >= 0 else 0

    def fail(self, reason: str, needle: str = "") -> ParseError:
        return ParseError(self.line_of(needle) if needle else 0, reason)

    def field(self, obj: Any, key: str, kind, where: str):
        if not isinstance(obj, dict):
            raise self.fail(f"{where}: expected an object")
        if key not in obj:
            raise self.fail(f"{where}: missing key {key!r}")
        value = obj[key]
        if not isinstance(value, kind) or isinstance(value, bool):
            raise self.fail(f"{where}: {key!r} has the wrong type", json.dumps(value) if isinstance(value, str) else "")
        return value

    def addr(self, obj: dict, key: str, where: str) -> int:
        value = obj.get(key)
        if isinstance(value, int) and not isinstance(value, bool) and value >= 0:
            return value
        if isinstance(value, str) and value.lower().startswith("0x"):
            try:
                return int(value, 16)
            except ValueError:
                pass
        raise self.fail(f"{where}: {key!r} must be a 0x-prefixed hex address", str(value))


def _parse_arch(r: _Reader, desc: Any) -> Arch:
    if isinstance(desc, str):
        if desc not in BUILTIN_ARCHES:
            raise r.fail(f"unknown architecture {desc!r}", json.dumps(desc))
        return BUILTIN_ARCHES[desc]
    if not isinstance(desc, dict):
        raise r.fail("arch must be a name or an object")
    if set(desc) <= {"name"} and desc.get("name") in BUILTIN_ARCHES:
        return BUILTIN_ARCHES[desc["name"]]
    try:
        regs = []
        for item in desc["registers"]:
            if isinstance(item, dict):
                regs.append((str(item["name"]), int(item["width"])))
            else:
                name, width = item
                regs.append((str(name), int(width)))
        return Arch(
            name=str(desc["name"]),
            bits=int(desc["bits"]),
            endianness=str(desc["endianness"]),
            registers=tuple(regs),
            sp=str(desc["sp"]),
            ip=str(desc["ip"]),
            classifiable=frozenset(desc["classifiable"]),
            ret_reg=desc.get("ret_reg"),
            caller_saved=tuple(desc.get("caller_saved", ())),
        )
    except (KeyError, TypeError) as exc:
        raise r.fail(f"malformed arch object: {exc}") from None
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _ir_error(r: _Reader, exc: IRSyntaxError, addr: int) -> Exception:
    if isinstance(exc, UnknownRegisterError):
        return UnknownRegister(f"instruction at {addr:#x}: {exc}")
    return r.fail(f"instruction at {addr:#x}: {exc}", exc.text)


def _parse_instruction(r: _Reader, arch: Arch, obj: Any, where: str) -> Instruction:
    addr = r.addr(obj, "addr", where)
    where = f"instruction {addr:#x}"
    size = r.field(obj, "size", int, where)
    asm = r.field(obj, "asm", str, where)
    declared = obj.get("class")
    ir_text = obj.get("ir")
    cond_text = obj.get("cond")
    target = obj.get("call_target")
    cls = None
    if declared is not None:
        try:
            cls = InsnClass(declared)
        except ValueError:
            raise r.fail(f"{where}: unknown class {declared!r}", json.dumps(declared)) from None
    needs_lift = (
        cls is None
        or ir_text is None
        or (cls is InsnClass.COND and cond_text is None)
        or (cls is InsnClass.CALL and target is None)
    )
    lifted = lift(arch, asm, addr, size) if needs_lift else None
    if lifted is not None:
        if cls is not None and lifted.cls is not cls:
            raise MalformedInstruction(addr, f"declared {cls} but {asm!r} is {lifted.cls}")
        cls = lifted.cls
    if ir_text is None:
        ir = lifted.ir
    else:
        if not isinstance(ir_text, list) or not all(isinstance(s, str) for s in ir_text):
            raise r.fail(f"{where}: 'ir' must be a list of strings")
        try:
            ir = tuple(parse_stmt(s, arch.widths) for s in ir_text)
        except IRSyntaxError as exc:
            raise _ir_error(r, exc, addr) from None
    cond = None
    if cls is InsnClass.COND:
        if cond_text is None:
            cond = lifted.branch_cond
        else:
            try:
                cond = parse_expr(str(cond_text), arch.widths)
            except IRSyntaxError as exc:
                raise _ir_error(r, exc, addr) from None
    elif cond_text is not None:
        raise MalformedInstruction(addr, f"{cls} carries a branch condition")
    if cls is InsnClass.CALL and target is None:
        target = lifted.call_target
    if target is not None and not isinstance(target, str):
        raise r.fail(f"{where}: call_target must be a string")
    return Instruction(addr, size, asm, cls, tuple(ir), target, cond)


def _parse_function(r: _Reader, arch: Arch, obj: Any) -> Function:
    name = r.field(obj, "name", str, "function")
    entry = r.addr(obj, "entry", f"function {name}")
    raw_blocks = r.field(obj, "blocks", list, f"function {name}")
    staged = []
    for bobj in raw_blocks:
        baddr = r.addr(bobj, "addr", f"{name}: block")
        where = f"{name}: block {baddr:#x}"
        instrs = tuple(_parse_instruction(r, arch, i, where) for i in r.field(bobj, "instrs", list, where))
        succs = []
        for sobj in bobj.get("succs", []):
            kind = r.field(sobj, "kind", str, f"{where} successor")
            succs.append(Edge(r.addr(sobj, "addr", f"{where} successor"), kind))
        staged.append((baddr, instrs, succs))
    addrs = {b[0] for b in staged}
    if len(addrs) != len(staged):
        raise ValidationError(f"{name}: duplicate block addresses")
    blocks: dict[int, BasicBlock] = {}
    for baddr, instrs, succs in sorted(staged, key=lambda b: b[0]):
        if instrs:
            last = instrs[-1]
            if last.cls is InsnClass.JUMP:
                # A jump leaving the function is a tail call: no intra-function edge.
                dropped = [e for e in succs if e.target not in addrs]
                if dropped:
                    log.info("%s: dropping tail-call edge from %#x", name, baddr)
                succs = [e for e in succs if e.target in addrs]
            if not succs and last.cls in _FALLS_THROUGH and last.next_addr in addrs:
                succs = [Edge(last.next_addr, "fallthrough")]
        blocks[baddr] = BasicBlock(baddr, instrs, tuple(succs))
    return Function(name, entry, blocks)


def parse_program(document: str | bytes | dict, extra_fixed: Iterable[str] = ()) -> Program:
    """Build and validate a Program from interchange text or a decoded object."""
    raw = None
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    if isinstance(document, str):
        raw = document
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.lineno, exc.msg) from None
    r = _Reader(raw)
    if not isinstance(document, dict):
        raise r.fail("document must be an object")
    arch = _parse_arch(r, document.get("arch"))
    module = r.field(document, "module", str, "document")
    fixed = document.get("fixed_functions", [])
    if not isinstance(fixed, list) or not all(isinstance(s, str) for s in fixed):
        raise r.fail("fixed_functions must be a list of strings")
    functions = tuple(_parse_function(r, arch, f) for f in r.field(document, "functions", list, "document"))
    program = Program(arch, module, functions, frozenset(fixed) | frozenset(extra_fixed))
    validate_program(program)
    return program


def load_program(path: str | Path, extra_fixed: Iterable[str] = ()) -> Program:
    return parse_program(Path(path).read_text(encoding="utf-8"), extra_fixed)


def _arch_document(arch: Arch) -> dict:
    return {
        "name": arch.name,
        "bits": arch.bits,
        "endianness": arch.endianness,
        "registers": [[n, w] for n, w in arch.registers],
        "sp": arch.sp,
        "ip": arch.ip,
        "classifiable": arch.ordered_classifiable(),
        "ret_reg": arch.ret_reg,
        "caller_saved": list(arch.caller_saved),
    }


def _instr_document(ins: Instruction) -> dict:
    out: dict[str, Any] = {
        "addr": f"{ins.addr:#x}",
        "size": ins.size,
        "asm": ins.asm,
        "class": ins.cls.value,
        "ir": [format_stmt(s) for s in ins.ir],
    }
    if ins.call_target is not None:
        out["call_target"] = ins.call_target
    if ins.branch_cond is not None:
        out["cond"] = format_expr(ins.branch_cond)
    return out


def program_to_document(program: Program) -> dict:
    return {
        "arch": _arch_document(program.arch),
        "module": program.module_name,
        "fixed_functions": sorted(program.fixed_functions),
        "functions": [
            {
                "name": fn.name,
                "entry": f"{fn.entry:#x}",
                "blocks": [
                    {
                        "addr": f"{b.addr:#x}",
                        "instrs": [_instr_document(i) for i in b.instrs],
                        "succs": [{"addr": f"{e.target:#x}", "kind": e.kind} for e in b.succs],
                    }
                    for b in fn.ordered_blocks()
                ],
            }
            for fn in program.functions
        ],
    }


def serialize_program(program: Program) -> str:
    return json.dumps(program_to_document(program), indent=1) + "\n"
