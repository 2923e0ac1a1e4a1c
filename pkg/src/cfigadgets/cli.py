"""Command-line entry point: ``cfigadgets {discover,analyze,search,stats}``.

Exit codes: 0 success, 1 no result, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .analysis import Stopwatch, analyze_database, discover_to_database, read_timing, record_timing
from .discovery import DEFAULT_MAX_LEN, load_fixed_functions
from .errors import GadgetError
from .solver import DEFAULT_BUDGET
from .store import GadgetDB

__all__ = ["main", "stats_rows"]

log = logging.getLogger("cfigadgets")

EXIT_OK, EXIT_NONE, EXIT_USAGE = 0, 1, 2
STATS_ROWS = ("EP-IC", "EP-IJ", "EP-RET", "CS-IC", "CS-IJ", "CS-RET")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cfigadgets", description="CFI-compatible gadget discovery and semantic search.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("discover", help="extract gadgets from .gcfg programs into a database")
    d.add_argument("inputs", nargs="+", help="program files in the .gcfg interchange format")
    d.add_argument("--db", required=True)
    d.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    d.add_argument("--fixed-funcs", help="file with one fixed-function symbol per line")
    d.add_argument("--keep-duplicates", action="store_true")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--workers", type=int, default=1)

    a = sub.add_parser("analyze", help="summarize, classify and check every gadget")
    a.add_argument("--db", required=True)
    a.add_argument("--budget", type=int, default=None)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("search", help="run a .gq query against one or more databases")
    s.add_argument("--db", required=True, action="append", help="may be repeated; first hit wins")
    s.add_argument("--query", required=True)
    s.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("stats", help="gadget counts by start and end type")
    t.add_argument("--db", required=True)
    return p


def _cmd_discover(args) -> int:
    from .frontend import load_program

    if args.max_len < 1 or args.workers < 1:
        raise _Usage("--max-len and --workers must be positive")
    extra = sorted(load_fixed_functions(args.fixed_funcs)) if args.fixed_funcs else []
    programs = [load_program(path, extra) for path in args.inputs]
    with Stopwatch() as sw:
        db = discover_to_database(
            programs, args.db, max_len=args.max_len, keep_duplicates=args.keep_duplicates,
            workers=args.workers, config={"seed": args.seed, "fixed_functions": extra},
        )
        db.flush()
    record_timing(args.db, "discover", sw.elapsed)
    counts = _counts(db)
    for row in STATS_ROWS:
        print(f"{row}\t{counts[row]}")
    print(f"total\t{len(db)}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    db = GadgetDB.open(args.db)
    cfg = db.header.get("config", {})
    budget = args.budget if args.budget is not None else cfg.get("budget", DEFAULT_BUDGET)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if budget < 1 or args.workers < 1:
        raise _Usage("--budget and --workers must be positive")
    with Stopwatch() as sw:
        analyze_database(db, budget=budget, seed=seed, workers=args.workers)
        db.flush()
    record_timing(args.db, "analyze", sw.elapsed)
    status: dict[str, int] = {}
    for rec in db:
        status[rec.sat_status] = status.get(rec.sat_status, 0) + 1
    for key in ("SAT", "UNSAT", "UNKNOWN"):
        print(f"{key}\t{status.get(key, 0)}")
    return EXIT_OK


def _cmd_search(args) -> int:
    from .search import load_query, search

    query = load_query(args.query)
    dbs = [GadgetDB.open(path) for path in args.db]
    hits = search(dbs, query, budget=args.budget, seed=args.seed)
    if not hits:
        print("no satisfiable gadget found")
        return EXIT_NONE
    for hit in hits:
        rec = hit.record
        print(f"gadget {rec.id} in {hit.candidate.db.path} (rank {hit.rank + 1})")
        print(f"  module   {rec.module}  function {rec.function}")
        print(f"  address  {rec.start_addr:#x} .. {rec.end_addr:#x}  ({rec.instr_count} instructions)")
        print(f"  type     {rec.prefix}-{rec.content}-{rec.suffix}  key {tuple(rec.complexity)}")
        print("  path     " + " -> ".join(f"{b:#x}[{lo}:{hi}]" for b, lo, hi in rec.path))
        for reg, tag in rec.reg_tags.items():
            if tag.kind != "NOP":
                print(f"  {reg:<8} {tag}")
        for k, tag in enumerate(rec.mem_tags):
            print(f"  mem[{k}]   {tag}")
        for name in sorted(hit.witness):
            print(f"  witness  {name} = {hit.witness[name]:#x}")
    return EXIT_OK


def _counts(db: GadgetDB) -> dict[str, int]:
    counts = dict.fromkeys(STATS_ROWS, 0)
    counts["Loops"] = 0
    for rid in db.ids():
        raw = db.raw(rid)
        if raw["content"] == "LOOP":
            counts["Loops"] += 1
        else:
            counts[f"{raw['prefix']}-{raw['suffix']}"] += 1
    return counts


def stats_rows(db: GadgetDB) -> list[tuple[str, str]]:
    """Rows of the stats report; loops are counted apart from CS-IC."""
    counts = _counts(db)
    rows = [(name, str(counts[name])) for name in (*STATS_ROWS, "Loops")]
    timing = read_timing(db.path)
    runtime = sum(timing.values())
    rows.append(("Runtime", f"{runtime:.3f}s" if timing else "n/a"))
    return rows


def _cmd_stats(args) -> int:
    db = GadgetDB.open(args.db)
    for name, value in stats_rows(db):
        print(f"{name}\t{value}")
    return EXIT_OK


class _Usage(Exception):
    pass


COMMANDS = {"discover": _cmd_discover, "analyze": _cmd_analyze, "search": _cmd_search, "stats": _cmd_stats}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _Usage as exc:
        print(f"cfigadgets: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, GadgetError) as exc:
        print(f"cfigadgets: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
