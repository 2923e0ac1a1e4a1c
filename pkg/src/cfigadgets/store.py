"""Single-file gadget database (``.gdb``).

Layout, all integers little-endian::

    b"GDB1" | u16 version | u32 header length | header JSON
    repeated: u32 record length | record JSON
    u32 record count | count * (u64 id, u64 record offset)      (index)
    u64 index offset | 32-byte sha256 of every preceding byte | b"GDBE"

JSON is written with sorted keys and no whitespace, and nothing
time-dependent is stored, so equal inputs give byte-identical files.
The header embeds the analyzed programs (interchange documents) and the
configuration.  Files are replaced atomically and guarded by
``<db>.lock``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

from filelock import FileLock

from .arch import BUILTIN_ARCHES
from .classify import MEM_KINDS, REG_KINDS, ComplexityKey, SemanticTag, ranking_key
from .discovery import GadgetPath
from .errors import DuplicateId, GadgetError, StoreError
from .expr import Expr
from .ir import IRSyntaxError, format_expr, parse_expr
from .program import Program

__all__ = ["FORMAT_VERSION", "GadgetDB", "GadgetRecord", "TagPredicate", "match_content"]

log = logging.getLogger(__name__)

MAGIC = b"GDB1"
END = b"GDBE"
FORMAT_VERSION = 1
SAT_STATES = ("SAT", "UNSAT", "UNKNOWN")
LOCK_TIMEOUT = 60.0

TagPredicate = Callable[[SemanticTag], bool]


@dataclass
class GadgetRecord:
    id: int
    module: str
    arch: str
    function: str
    prefix: str
    suffix: str
    content: str
    start_addr: int
    end_addr: int
    path: tuple[tuple[int, int, int], ...]
    instr_count: int
    opcode_hash: str
    reg_tags: dict[str, SemanticTag] = field(default_factory=dict)
    mem_tags: list[SemanticTag] = field(default_factory=list)
    n_mem_writes: int = 0
    n_mem_reads: int = 0
    n_nop: int = 0
    constraints: list[Expr] = field(default_factory=list)
    sat_status: str | None = None

    @classmethod
    def from_gadget(cls, gid: int, arch: str, g: GadgetPath) -> GadgetRecord:
        return cls(
            id=gid, module=g.module, arch=arch, function=g.function, prefix=g.prefix,
            suffix=g.suffix, content=g.content, start_addr=g.start_addr, end_addr=g.end_addr,
            path=g.path, instr_count=g.instr_count, opcode_hash=g.opcode_hash,
        )

    def to_gadget(self) -> GadgetPath:
        return GadgetPath(
            prefix=self.prefix, suffix=self.suffix, content=self.content, function=self.function,
            path=tuple(self.path), instr_count=self.instr_count, module=self.module,
            start_addr=self.start_addr, end_addr=self.end_addr, opcode_hash=self.opcode_hash,
        )

    @property
    def analyzed(self) -> bool:
        return self.sat_status is not None

    @property
    def complexity(self) -> ComplexityKey:
        return ComplexityKey(self.instr_count, self.n_mem_writes, self.n_mem_reads, -self.n_nop)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "module": self.module,
            "arch": self.arch,
            "function": self.function,
            "prefix": self.prefix,
            "suffix": self.suffix,
            "content": self.content,
            "start_addr": self.start_addr,
            "end_addr": self.end_addr,
            "path": [list(s) for s in self.path],
            "instr_count": self.instr_count,
            "opcode_hash": self.opcode_hash,
            "reg_tags": {r: t.to_json() for r, t in self.reg_tags.items()},
            "mem_tags": [t.to_json() for t in self.mem_tags],
            "n_mem_writes": self.n_mem_writes,
            "n_mem_reads": self.n_mem_reads,
            "n_nop": self.n_nop,
            "constraints": [format_expr(c) for c in self.constraints],
            "sat_status": self.sat_status,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any], widths: Mapping[str, int] | None = None) -> GadgetRecord:
        """Parse and validate a serialized record; raises StoreError on any defect."""
        try:
            arch = obj["arch"]
            if widths is None:
                if arch not in BUILTIN_ARCHES:
                    raise StoreError(f"record {obj.get('id')}: register widths unknown for arch {arch!r}")
                widths = BUILTIN_ARCHES[arch].widths
            rec = cls(
                id=_int(obj["id"]),
                module=str(obj["module"]),
                arch=str(arch),
                function=str(obj["function"]),
                prefix=obj["prefix"],
                suffix=obj["suffix"],
                content=str(obj["content"]),
                start_addr=_int(obj["start_addr"]),
                end_addr=_int(obj["end_addr"]),
                path=tuple(tuple(_int(v) for v in seg) for seg in obj["path"]),
                instr_count=_int(obj["instr_count"]),
                opcode_hash=str(obj["opcode_hash"]),
                reg_tags={str(r): SemanticTag.from_json(t, widths) for r, t in obj.get("reg_tags", {}).items()},
                mem_tags=[SemanticTag.from_json(t, widths) for t in obj.get("mem_tags", [])],
                n_mem_writes=_int(obj.get("n_mem_writes", 0)),
                n_mem_reads=_int(obj.get("n_mem_reads", 0)),
                n_nop=_int(obj.get("n_nop", 0)),
                constraints=[parse_expr(c, widths) for c in obj.get("constraints", [])],
                sat_status=obj.get("sat_status"),
            )
        except StoreError:
            raise
        except (KeyError, TypeError, ValueError, IRSyntaxError, GadgetError) as exc:
            raise StoreError(f"malformed record {obj.get('id', '?') if isinstance(obj, Mapping) else '?'}: {exc}") from None
        rec.validate(widths)
        return rec

    def validate(self, widths: Mapping[str, int] | None = None) -> None:
        problems = []
        if self.prefix not in ("EP", "CS"):
            problems.append(f"prefix {self.prefix!r}")
        if self.suffix not in ("IC", "IJ", "RET"):
            problems.append(f"suffix {self.suffix!r}")
        if not (self.content in ("ARB", "LOOP") or (self.content.startswith("F(") and self.content.endswith(")"))):
            problems.append(f"content {self.content!r}")
        if self.sat_status is not None and self.sat_status not in SAT_STATES:
            problems.append(f"sat_status {self.sat_status!r}")
        if not self.path or any(len(s) != 3 for s in self.path):
            problems.append("path")
        if self.instr_count < 1 or min(self.n_mem_writes, self.n_mem_reads, self.n_nop) < 0:
            problems.append("negative or zero counts")
        for reg, tag in self.reg_tags.items():
            if widths is not None and reg not in widths:
                problems.append(f"tag for unknown register {reg}")
            if tag.kind not in REG_KINDS:
                problems.append(f"{reg} has memory tag {tag.kind}")
        for tag in self.mem_tags:
            if tag.kind not in MEM_KINDS:
                problems.append(f"memory write has register tag {tag.kind}")
        for c in self.constraints:
            if c.width != 1:
                problems.append(f"constraint {format_expr(c)} is not boolean")
        if problems:
            raise StoreError(f"invalid record {self.id}: " + ", ".join(problems))


def _int(v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError(f"expected an integer, got {v!r}")
    return v


def _dumps(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def match_content(content: str, wanted: str) -> bool:
    """``F`` matches any fixed-call content, ``F(sym)`` only that symbol."""
    if wanted == "F":
        return content.startswith("F(")
    return content == wanted


def _lock(path: Path) -> FileLock:
    return FileLock(str(path) + ".lock", timeout=LOCK_TIMEOUT)


class GadgetDB:
    """In-memory view of a database file; call ``flush`` to persist."""

    def __init__(self, path: str | Path, header: dict | None = None):
        self.path = Path(path)
        self.header: dict = header if header is not None else {
            "analyzed": False, "config": {}, "programs": {},
        }
        self._raw: dict[int, dict] = {}
        self._parsed: dict[int, GadgetRecord] = {}
        self._programs: dict[str, Program] = {}

    # -- construction --------------------------------------------------------

    @classmethod
    def create(cls, path: str | Path, programs: Sequence[Program] = (), config: Mapping | None = None) -> GadgetDB:
        from .frontend import program_to_document

        db = cls(path)
        for p in programs:
            if p.module_name in db.header["programs"]:
                raise StoreError(f"module {p.module_name!r} given twice")
            db.header["programs"][p.module_name] = program_to_document(p)
            db._programs[p.module_name] = p
        db.header["config"] = dict(config or {})
        return db

    @classmethod
    def open(cls, path: str | Path) -> GadgetDB:
        path = Path(path)
        try:
            with _lock(path):
                data = path.read_bytes()
        except OSError as exc:
            raise StoreError(f"cannot read {path}: {exc}") from None
        db = cls(path)
        db._decode(data)
        return db

    def _decode(self, data: bytes) -> None:
        where = str(self.path)
        if len(data) < 4 + 6 + 4 + 8 + 32 + 4 or data[:4] != MAGIC:
            raise StoreError(f"{where}: not a gadget database")
        if data[-4:] != END:
            raise StoreError(f"{where}: truncated file")
        body, digest = data[:-36], data[-36:-4]
        if hashlib.sha256(body).digest() != digest:
            raise StoreError(f"{where}: checksum mismatch (partial or corrupted write)")
        version, hlen = struct.unpack_from("<HI", data, 4)
        if version != FORMAT_VERSION:
            raise StoreError(f"{where}: unsupported version {version}")
        try:
            self.header = json.loads(data[10:10 + hlen])
            (index_off,) = struct.unpack_from("<Q", body, len(body) - 8)
            (count,) = struct.unpack_from("<I", body, index_off)
            for k in range(count):
                rid, off = struct.unpack_from("<QQ", body, index_off + 4 + 16 * k)
                (rlen,) = struct.unpack_from("<I", body, off)
                obj = json.loads(body[off + 4:off + 4 + rlen])
                if obj.get("id") != rid:
                    raise StoreError(f"{where}: index entry {rid} points at record {obj.get('id')}")
                self._raw[rid] = obj
        except (struct.error, ValueError) as exc:
            raise StoreError(f"{where}: corrupt layout: {exc}") from None

    def encode(self) -> bytes:
        header = _dumps(self.header)
        parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(header)), header]
        offset = sum(len(p) for p in parts)
        index = []
        for rid in sorted(self._raw):
            blob = _dumps(self._raw[rid])
            index.append((rid, offset))
            parts += [struct.pack("<I", len(blob)), blob]
            offset += 4 + len(blob)
        parts.append(struct.pack("<I", len(index)))
        parts += [struct.pack("<QQ", rid, off) for rid, off in index]
        parts.append(struct.pack("<Q", offset))
        body = b"".join(parts)
        return body + hashlib.sha256(body).digest() + END

    def flush(self) -> None:
        """Atomically replace the file on disk with the current contents."""
        data = self.encode()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with _lock(self.path):
            fd, tmp = tempfile.mkstemp(prefix=self.path.name + ".", suffix=".tmp", dir=self.path.parent)
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, self.path)
            except OSError as exc:
                Path(tmp).unlink(missing_ok=True)
                raise StoreError(f"cannot write {self.path}: {exc}") from None
        log.debug("wrote %s (%d records, %d bytes)", self.path, len(self._raw), len(data))

    # -- programs --------------------------------------------------------------

    @property
    def modules(self) -> list[str]:
        return sorted(self.header["programs"])

    def program(self, module: str) -> Program:
        prog = self._programs.get(module)
        if prog is None:
            from .frontend import parse_program

            doc = self.header["programs"].get(module)
            if doc is None:
                raise StoreError(f"{self.path}: no program embedded for module {module!r}")
            prog = self._programs[module] = parse_program(doc)
        return prog

    def widths(self, module: str) -> dict[str, int]:
        return self.program(module).arch.widths

    # -- records ---------------------------------------------------------------

    def next_id(self) -> int:
        return max(self._raw, default=-1) + 1

    def put(self, record: GadgetRecord | Mapping[str, Any]) -> int:
        if isinstance(record, Mapping):
            widths = self.widths(record["module"]) if record.get("module") in self.header["programs"] else None
            record = GadgetRecord.from_json(record, widths)
        else:
            record.validate()
        if record.id in self._raw:
            raise DuplicateId(f"record id {record.id} already present")
        self._raw[record.id] = record.to_json()
        self._parsed[record.id] = record
        return record.id

    def replace(self, record: GadgetRecord) -> None:
        """Overwrite an existing record (used by analysis)."""
        record.validate()
        if record.id not in self._raw:
            raise StoreError(f"no record with id {record.id}")
        self._raw[record.id] = record.to_json()
        self._parsed[record.id] = record

    def get(self, rid: int) -> GadgetRecord:
        rec = self._parsed.get(rid)
        if rec is None:
            obj = self._raw.get(rid)
            if obj is None:
                raise KeyError(rid)
            module = obj.get("module")
            widths = self.widths(module) if module in self.header["programs"] else None
            rec = self._parsed[rid] = GadgetRecord.from_json(obj, widths)
        return rec

    def ids(self) -> list[int]:
        return sorted(self._raw)

    def __len__(self) -> int:
        return len(self._raw)

    def __iter__(self) -> Iterator[GadgetRecord]:
        for rid in self.ids():
            yield self.get(rid)

    def raw(self, rid: int) -> dict:
        return self._raw[rid]

    # -- queries ---------------------------------------------------------------

    def filter(
        self,
        prefix: str | None = None,
        suffix: str | None = None,
        content: str | None = None,
        reg_tags: Mapping[str, str | TagPredicate] | None = None,
        mem_tags: Iterable[str | TagPredicate] = (),
        include_unverified: bool = False,
    ) -> list[int]:
        """Ids matching every given predicate, in ranking order.

        A register predicate is a tag kind name or a callable on the tag;
        each memory predicate must match at least one of the record's
        write tags.  UNSAT and UNKNOWN records are skipped unless
        ``include_unverified`` is set.
        """
        reg_preds = {r: _predicate(p) for r, p in (reg_tags or {}).items()}
        mem_preds = [_predicate(p) for p in mem_tags]
        hits = []
        for rid in self.ids():
            obj = self._raw[rid]
            if not include_unverified and obj.get("sat_status") in ("UNSAT", "UNKNOWN"):
                continue
            if prefix is not None and obj["prefix"] != prefix:
                continue
            if suffix is not None and obj["suffix"] != suffix:
                continue
            if content is not None and not match_content(obj["content"], content):
                continue
            if reg_preds or mem_preds:
                rec = self.get(rid)
                if not all(r in rec.reg_tags and p(rec.reg_tags[r]) for r, p in reg_preds.items()):
                    continue
                if not all(any(p(t) for t in rec.mem_tags) for p in mem_preds):
                    continue
            hits.append(rid)
        return self.rank(hits)

    def rank(self, ids: Iterable[int]) -> list[int]:
        return sorted(ids, key=lambda rid: ranking_key(_RankView(rid, self._raw[rid])))


class _RankView:
    """Just enough of a record for ``ranking_key`` without parsing expressions."""

    __slots__ = ("id", "module", "start_addr", "complexity")

    def __init__(self, rid: int, obj: dict):
        self.id = rid
        self.module = obj["module"]
        self.start_addr = obj["start_addr"]
        self.complexity = ComplexityKey(obj["instr_count"], obj.get("n_mem_writes", 0),
                                        obj.get("n_mem_reads", 0), -obj.get("n_nop", 0))


def _predicate(p: str | TagPredicate) -> TagPredicate:
    if callable(p):
        return p
    if p not in REG_KINDS and p not in MEM_KINDS:
        raise ValueError(f"unknown tag kind {p!r}")
    return lambda tag, kind=p: tag.kind == kind
