"""Reference satisfiability checker for path constraints.

UNSAT is only ever concluded by two syntactic rules on the simplified
conjunction: a conjunct that folds to false, or two equalities pinning the
same term to different constants.  Everything else is a bounded search for
a concrete witness, so budget exhaustion yields UNKNOWN, never UNSAT.

The search assigns values to free terms (initial registers, fresh havoc
values and initial-memory loads) and climbs on the number of satisfied
conjuncts.  Candidate values come from a fixed set of edge values, seeded
random samples, and targets obtained by inverting comparisons against the
current state (``eq(add(x, k), y)`` suggests ``x = y - k``).
"""

from __future__ import annotations

import enum
import logging
import random
import subprocess
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .arch import Arch
from .evaluator import MachineState, compile_exprs
from .expr import (
    COMPARISONS,
    BinOp,
    Const,
    Expr,
    Fresh,
    Init,
    MemInit,
    MemSelect,
    UnOp,
    WidthError,
    mask,
    walk,
)
from .ir import format_expr, parse_expr
from .simplify import simplify

__all__ = [
    "ExternalSolver",
    "SatResult",
    "SatStatus",
    "check_satisfiable",
    "prepare_conjunction",
    "random_state",
    "sample_states",
]

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 4096


class SatStatus(str, enum.Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    UNKNOWN = "UNKNOWN"

    def __str__(self) -> str:
        return self.value


@dataclass
class SatResult:
    status: SatStatus
    witness: dict[str, int] = field(default_factory=dict)
    state: MachineState | None = None
    reason: str = ""
    evaluations: int = 0


def _as_equality(e: Expr) -> tuple[Expr, int] | None:
    if isinstance(e, BinOp) and e.op == "eq" and isinstance(e.rhs, Const):
        return e.lhs, e.rhs.value
    # eq on width-1 terms is normalized away to x / not(x).
    if e.width == 1 and not isinstance(e, (BinOp, Const)):
        if isinstance(e, UnOp) and e.op == "not":
            return e.arg, 0
        return e, 1
    return None


def prepare_conjunction(constraints: Iterable[Expr]) -> list[Expr] | SatResult:
    """Simplify and deduplicate; return an UNSAT result if a rule fires."""
    out: list[Expr] = []
    pinned: dict[Expr, int] = {}
    for c in constraints:
        if c.width != 1:
            raise WidthError(f"constraint {c} has width {c.width}")
        s = simplify(c)
        if isinstance(s, Const):
            if s.value == 0:
                return SatResult(SatStatus.UNSAT, reason=f"{format_expr(c)} is false")
            continue
        if s in out:
            continue
        out.append(s)
        eq = _as_equality(s)
        if eq is not None:
            term, value = eq
            prev = pinned.setdefault(term, value)
            if prev != value:
                return SatResult(
                    SatStatus.UNSAT,
                    reason=f"{format_expr(term)} must equal both {prev:#x} and {value:#x}",
                )
    return out


def _static_candidates(w: int) -> list[int]:
    m = mask(w)
    vals = {0, 1, 2, m}
    for k in range(1, w):
        vals.add(1 << k)
        vals.add((1 << k) - 1)
    return sorted(v & m for v in vals)


def _leaf(node: MemSelect) -> MemSelect:
    return node if node.mem is MemInit else MemSelect(MemInit, node.addr, node.width)


def _free_terms(conj: Sequence[Expr]) -> tuple[list[Expr], list[MemSelect]]:
    regs: dict[Expr, None] = {}
    mems: dict[MemSelect, None] = {}
    for c in conj:
        for node in walk(c):
            if isinstance(node, (Init, Fresh)):
                regs[node] = None
            elif isinstance(node, MemSelect):
                leaf = _leaf(node)
                mems[leaf] = None
                for sub in walk(leaf.addr):
                    if isinstance(sub, (Init, Fresh)):
                        regs[sub] = None
    reg_terms = sorted(regs, key=lambda t: (t.name, t.width))
    mem_terms = sorted(mems, key=lambda t: (t.depth, t.digest))
    return reg_terms, mem_terms


_PASS = ("zext", "sext", "and", "or")


def _peel(e: Expr, steps: tuple = ()):
    """Yield (term, steps) pairs: ways to reach a free term inside ``e``.

    ``steps`` lists inversions to apply, outermost first.
    """
    if isinstance(e, (Init, Fresh)):
        yield e, steps
    elif isinstance(e, MemSelect):
        yield _leaf(e), steps
    elif isinstance(e, BinOp):
        if e.op in ("add", "xor"):
            yield from _peel(e.lhs, steps + ((e.op, e.rhs, e.width),))
            yield from _peel(e.rhs, steps + ((e.op, e.lhs, e.width),))
        elif e.op == "sub":
            yield from _peel(e.lhs, steps + (("add", e.rhs, e.width),))
            yield from _peel(e.rhs, steps + (("rsub", e.lhs, e.width),))
        elif e.op in _PASS:
            yield from _peel(e.lhs, steps)
            yield from _peel(e.rhs, steps)
    elif isinstance(e, UnOp):
        if e.op in ("not", "neg"):
            yield from _peel(e.arg, steps + ((e.op, None, e.width),))
        elif e.op == "extract":
            yield from _peel(e.arg, steps + (("shl", e.params[1], e.arg.width),))
        else:
            yield from _peel(e.arg, steps)


def _invert(target: int, steps, values: dict[Expr, int]) -> int:
    for kind, other, w in steps:
        m = mask(w)
        if kind == "add":
            target = (target - values[other]) & m
        elif kind == "rsub":
            target = (values[other] - target) & m
        elif kind == "xor":
            target = (target ^ values[other]) & m
        elif kind == "not":
            target = ~target & m
        elif kind == "neg":
            target = -target & m
        elif kind == "shl":
            target = (target << other) & m
    return target


class _Search:
    def __init__(self, conj: list[Expr], arch: Arch, budget: int, seed: int, base: MachineState | None):
        self.conj = conj
        self.arch = arch
        self.budget = budget
        self.rng = random.Random(seed)
        self.base = base if base is not None else MachineState(arch)
        self.reg_terms, self.mem_terms = _free_terms(conj)
        self.terms: list[Expr] = [*self.reg_terms, *self.mem_terms]
        self.check = compile_exprs(conj, arch)
        self.addr_fns = [compile_exprs((t.addr,), arch) for t in self.mem_terms]
        self.evaluations = 0
        self._build_hints()

    def _build_hints(self) -> None:
        self.hints: dict[Expr, list] = {t: [] for t in self.terms}
        needed: dict[Expr, None] = {}
        seen = set()
        for c in self.conj:
            for node in walk(c):
                if not (isinstance(node, BinOp) and node.op in COMPARISONS):
                    continue
                for lhs, rhs in ((node.lhs, node.rhs), (node.rhs, node.lhs)):
                    for term, steps in _peel(lhs):
                        key = (term, steps, rhs)
                        if key in seen or term not in self.hints:
                            continue
                        seen.add(key)
                        self.hints[term].append((steps, rhs, lhs.width))
                        needed[rhs] = None
                        for _, other, _ in steps:
                            if isinstance(other, Expr):
                                needed[other] = None
        self.needed = list(needed)
        self.needed_fn = compile_exprs(self.needed, self.arch) if self.needed else None
        self.static = {t: _static_candidates(t.width) for t in self.terms}
        # Terms with an inversion hint usually fix a conjunct in one step.
        self.terms.sort(key=lambda t: not self.hints[t])

    def build(self, assign: dict[Expr, int]) -> MachineState:
        st = self.base.copy()
        for t in self.reg_terms:
            st.regs[t.name] = assign[t]
        for t, fn in zip(self.mem_terms, self.addr_fns):
            st.write(fn(st)[0], assign[t], t.width // 8)
        return st

    def score(self, assign) -> int:
        self.evaluations += 1
        return sum(self.check(self.build(assign)))

    def initial(self) -> dict[Expr, int]:
        st = self.base.copy()
        assign: dict[Expr, int] = {}
        for t in self.reg_terms:
            assign[t] = st.regs.get(t.name, 0) & mask(t.width)
        for t, fn in zip(self.mem_terms, self.addr_fns):
            addr = fn(st)[0]
            assign[t] = st.read(addr, t.width // 8)
        return assign

    def candidates(self, term: Expr, assign) -> list[int]:
        out: dict[int, None] = {}
        if self.hints[term] and self.needed_fn is not None:
            vals = dict(zip(self.needed, self.needed_fn(self.build(assign))))
            m = mask(term.width)
            for steps, rhs, w in self.hints[term]:
                r = vals[rhs]
                for t in (r, r + 1, r - 1):
                    out[_invert(t & mask(w), steps, vals) & m] = None
        for v in self.static[term]:
            out[v] = None
        for _ in range(4):
            out[self.rng.getrandbits(term.width)] = None
        out.pop(assign[term], None)
        return list(out)

    def run(self) -> SatResult:
        n = len(self.conj)
        assign = self.initial()
        best = self.score(assign)
        while best < n and self.evaluations < self.budget:
            improved = False
            for term in self.terms:
                keep = assign[term]
                top, top_val = best, keep
                for v in self.candidates(term, assign):
                    if self.evaluations >= self.budget:
                        break
                    assign[term] = v
                    s = self.score(assign)
                    if s > top:
                        top, top_val = s, v
                        if s == n:
                            break
                assign[term] = top_val
                if top > best:
                    best, improved = top, True
                if best == n or self.evaluations >= self.budget:
                    break
            if best < n and not improved:
                for term in self.terms:
                    assign[term] = self.rng.choice(self.static[term] + [self.rng.getrandbits(term.width)])
                best = self.score(assign)
        self.assign = assign
        if best == n:
            witness = {format_expr(t): assign[t] for t in self.terms}
            return SatResult(SatStatus.SAT, witness, self.build(assign), evaluations=self.evaluations)
        return SatResult(SatStatus.UNKNOWN, reason="budget exhausted", evaluations=self.evaluations)


class ExternalSolver:
    """Delegate satisfiability to an external program.

    The conjunction is written to the program's stdin, one constraint per
    line in the IR expression grammar.  The first output line must be
    ``sat``, ``unsat`` or ``unknown``; for ``sat`` the following
    ``name=value`` lines give the witness (register names, fresh havoc
    names, or ``load<w>(...)`` terms).
    """

    def __init__(self, command: Sequence[str], timeout: float = 60.0):
        self.command = list(command)
        self.timeout = timeout

    def check(self, conj: Sequence[Expr], arch: Arch, base: MachineState | None = None) -> SatResult:
        text = "".join(format_expr(c) + "\n" for c in conj)
        try:
            proc = subprocess.run(self.command, input=text, capture_output=True, text=True,
                                  timeout=self.timeout, check=False)
        except (OSError, subprocess.TimeoutExpired) as exc:
            log.warning("external solver failed: %s", exc)
            return SatResult(SatStatus.UNKNOWN, reason=str(exc))
        lines = [ln.strip() for ln in proc.stdout.splitlines() if ln.strip()]
        verdict = lines[0].lower() if lines else ""
        if verdict == "unsat":
            return SatResult(SatStatus.UNSAT, reason="external solver")
        if verdict != "sat":
            return SatResult(SatStatus.UNKNOWN, reason=f"external solver said {verdict or 'nothing'!r}")
        state = base.copy() if base is not None else MachineState(arch)
        witness: dict[str, int] = {}
        loads = []
        for ln in lines[1:]:
            name, _, value = ln.partition("=")
            name, val = name.strip(), int(value.strip(), 0)
            witness[name] = val
            if name.startswith("load"):
                loads.append((parse_expr(name, arch.widths), val))
            else:
                state.regs[name] = val
        for term, val in sorted(loads, key=lambda p: p[0].depth):
            addr = compile_exprs((term.addr,), arch)(state)[0]
            state.write(addr, val, term.width // 8)
        return SatResult(SatStatus.SAT, witness, state)


def check_satisfiable(
    constraints: Iterable[Expr],
    extra: Iterable[Expr] = (),
    budget: int = DEFAULT_BUDGET,
    *,
    arch: Arch,
    seed: int = 0,
    base: MachineState | None = None,
    backend: ExternalSolver | None = None,
) -> SatResult:
    """Decide the conjunction of ``constraints`` and ``extra``.

    ``base`` supplies values for everything the witness search does not
    assign; the returned SAT state is ``base`` updated with the witness.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    conj = prepare_conjunction([*constraints, *extra])
    if isinstance(conj, SatResult):
        return conj
    if backend is not None:
        return backend.check(conj, arch, base)
    if not conj:
        state = base.copy() if base is not None else MachineState(arch)
        return SatResult(SatStatus.SAT, {}, state)
    return _Search(conj, arch, budget, seed, base).run()


_SMALL = (0, 1, 2, 3, 4, 7, 8, 0x10, 0xFF)


def random_value(rng: random.Random, width: int) -> int:
    if width > 1 and rng.random() < 0.25:
        return rng.choice(_SMALL) & mask(width)
    return rng.getrandbits(width)


def random_state(arch: Arch, rng: random.Random, names: Iterable[tuple[str, int]] = (),
                 fill: bool = True) -> MachineState:
    """A random register file plus pseudo-random memory contents."""
    regs = {name: random_value(rng, w) for name, w in arch.registers}
    for name, w in names:
        regs[name] = random_value(rng, w)
    return MachineState(arch, regs, {}, rng.getrandbits(32) if fill else None)


def sample_states(
    constraints: Sequence[Expr],
    arch: Arch,
    n: int,
    *,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
    names: Iterable[tuple[str, int]] = (),
) -> list[MachineState]:
    """Up to ``n`` random states that satisfy every constraint.

    The first witness gets the full budget; later samples get a short
    search from a fresh random state and, failing that, the first witness
    transplanted onto that state (kept only if it still satisfies).
    Returns an empty list when no witness is found at all.
    """
    rng = random.Random(seed)
    names = list(names)
    if not constraints:
        return [random_state(arch, rng, names) for _ in range(n)]
    conj = prepare_conjunction(constraints)
    if isinstance(conj, SatResult):
        return []
    if not conj:
        return [random_state(arch, rng, names) for _ in range(n)]
    out: list[MachineState] = []
    known: dict[Expr, int] | None = None
    misses = 0
    while len(out) < n and misses <= n:
        base = random_state(arch, rng, names)
        search = _Search(conj, arch, budget if known is None else min(budget, 64), rng.getrandbits(32), base)
        res = search.run()
        if res.status is SatStatus.SAT:
            out.append(res.state)
            if known is None:
                known = dict(search.assign)
            continue
        if known is None:
            break
        st = search.build(known)
        if all(search.check(st)):
            out.append(st)
        else:
            misses += 1
    return out
