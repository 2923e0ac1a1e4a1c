"""Pipeline stages: discovery into a fresh database, then per-record analysis."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from .classify import classify_summary, count_nops
from .discovery import DEFAULT_MAX_LEN, dedup, extract_gadgets
from .program import Program
from .solver import DEFAULT_BUDGET, check_satisfiable
from .store import GadgetDB, GadgetRecord
from .symexec import execute_symbolic

__all__ = [
    "DEFAULT_CHUNK",
    "analyze_database",
    "analyze_record",
    "derive_seed",
    "discover_to_database",
    "read_timing",
    "record_timing",
]

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 512


def derive_seed(seed: int, rid: int) -> int:
    """Per-record seed, independent of processing order and worker count."""
    digest = hashlib.blake2b(f"{seed}:{rid}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def discover_to_database(
    programs: Sequence[Program],
    db_path: str | Path,
    *,
    max_len: int = DEFAULT_MAX_LEN,
    keep_duplicates: bool = False,
    workers: int = 1,
    config: dict | None = None,
) -> GadgetDB:
    """Extract and deduplicate gadgets of every program; records are unanalyzed."""
    cfg = {"max_len": max_len, "keep_duplicates": keep_duplicates, **(config or {})}
    db = GadgetDB.create(db_path, programs, cfg)
    rid = 0
    for prog in programs:
        found = extract_gadgets(prog, max_len=max_len, workers=workers)
        kept = dedup(found, keep_duplicates)
        log.info("%s: %d gadgets kept of %d", prog.module_name, len(kept), len(found))
        for g in kept:
            db.put(GadgetRecord.from_gadget(rid, prog.arch.name, g))
            rid += 1
    return db


def analyze_record(program: Program, record: GadgetRecord, budget: int, seed: int) -> GadgetRecord:
    summary = execute_symbolic(program, record.to_gadget())
    reg_tags, mem_tags = classify_summary(summary)
    record.reg_tags = reg_tags
    record.mem_tags = mem_tags
    record.n_mem_writes = len(summary.writes)
    record.n_mem_reads = summary.n_mem_reads
    record.n_nop = count_nops(reg_tags)
    record.constraints = list(summary.constraints)
    result = check_satisfiable(summary.constraints, budget=budget, arch=program.arch,
                               seed=derive_seed(seed, record.id))
    record.sat_status = result.status.value
    return record


_WORKER: dict = {}


def _init_worker(path: str, programs: dict, budget: int, seed: int) -> None:
    from .frontend import parse_program

    _WORKER["db"] = GadgetDB(path, {"programs": programs})
    _WORKER["parse"] = parse_program
    _WORKER["budget"] = budget
    _WORKER["seed"] = seed


def _analyze_chunk(raws: list[dict]) -> list[dict]:
    db: GadgetDB = _WORKER["db"]
    out = []
    for obj in raws:
        prog = db.program(obj["module"])
        rec = GadgetRecord.from_json(obj, prog.arch.widths)
        out.append(analyze_record(prog, rec, _WORKER["budget"], _WORKER["seed"]).to_json())
    return out


def analyze_database(
    db: GadgetDB,
    *,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
) -> GadgetDB:
    """Fill summaries, tags and satisfiability for every record, in place.

    Records are processed in id ranges of ``chunk`` so at most a few ranges
    of summaries are alive at once.  Results do not depend on ``workers``.
    """
    ids = db.ids()
    ranges = [ids[i:i + chunk] for i in range(0, len(ids), chunk)]
    if workers > 1 and len(ranges) > 1:
        args = (str(db.path), db.header["programs"], budget, seed)
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=args) as pool:
            batches = pool.map(_analyze_chunk, [[db.raw(r) for r in rng] for rng in ranges])
            for batch in batches:
                for obj in batch:
                    db.replace(GadgetRecord.from_json(obj, db.widths(obj["module"])))
    else:
        for rng in ranges:
            for rid in rng:
                rec = db.get(rid)
                db.replace(analyze_record(db.program(rec.module), rec, budget, seed))
    db.header["analyzed"] = True
    db.header["config"] = {**db.header.get("config", {}), "budget": budget, "seed": seed}
    return db


def _timing_path(db_path: str | Path) -> Path:
    return Path(str(db_path) + ".timing")


def record_timing(db_path: str | Path, stage: str, seconds: float) -> None:
    """Wall-clock times go to a sidecar file so the database stays byte-stable."""
    path = _timing_path(db_path)
    data = read_timing(db_path)
    data[stage] = round(seconds, 6)
    path.write_text(json.dumps(data, sort_keys=True) + "\n", encoding="utf-8")


def read_timing(db_path: str | Path) -> dict[str, float]:
    path = _timing_path(db_path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return {}


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False
