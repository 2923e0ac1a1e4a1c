"""Discovery, symbolic summarization and semantic search of CFI-compatible gadgets."""

from .analysis import analyze_database, discover_to_database
from .arch import ARM, BUILTIN_ARCHES, X86_64, Arch
from .classify import ComplexityKey, SemanticTag, classify_summary, complexity_key
from .discovery import GadgetPath, dedup, extract_gadgets, scan_points_of_interest
from .evaluator import MachineState, eval_expr, replay_gadget
from .frontend import load_program, parse_program, serialize_program
from .search import GadgetQuery, load_query, parse_query, run_query, search, verify_until_satisfiable
from .simplify import simplify
from .solver import SatStatus, check_satisfiable
from .store import GadgetDB, GadgetRecord
from .symexec import SymbolicSummary, execute_symbolic

__version__ = "0.1.0"

__all__ = [
    "ARM",
    "BUILTIN_ARCHES",
    "X86_64",
    "Arch",
    "ComplexityKey",
    "GadgetDB",
    "GadgetPath",
    "GadgetQuery",
    "GadgetRecord",
    "MachineState",
    "SatStatus",
    "SemanticTag",
    "SymbolicSummary",
    "analyze_database",
    "check_satisfiable",
    "classify_summary",
    "complexity_key",
    "dedup",
    "discover_to_database",
    "eval_expr",
    "execute_symbolic",
    "extract_gadgets",
    "load_program",
    "load_query",
    "parse_program",
    "parse_query",
    "replay_gadget",
    "run_query",
    "scan_points_of_interest",
    "search",
    "serialize_program",
    "simplify",
    "verify_until_satisfiable",
]
