"""Normalizing rewriter for symbolic expressions.

Rules, applied bottom-up to a fixpoint: constant folding, identity and
self-cancellation elimination, reassociation of constant offsets into a
canonical ``add(x, c)`` / ``sub(x, c)`` form, equality tests solved for
constant offsets, known-bits folding of ``extract`` and ``eq``/``ne``
against constants, canonical operand order for commutative operators
(constants last), collapse of constant-condition ``ite``, and partial
store-forwarding for loads over store chains.
Store layers are never removed, so every write stays visible.
"""

from __future__ import annotations

from .expr import (
    COMMUTATIVE,
    BinOp,
    Const,
    Expr,
    Ite,
    MemSelect,
    MemStore,
    UnOp,
    mask,
)

__all__ = ["fold_binop", "fold_unop", "known_bits", "negate", "simplify", "split_offset"]

_CACHE: dict[Expr, Expr] = {}
_CACHE_LIMIT = 500_000

_NEGATED = {"eq": "ne", "ne": "eq", "ult": "uge", "uge": "ult", "slt": "sge", "sge": "slt"}
_REASSOC = {"and", "or", "xor", "mul"}


def _signed(x: int, w: int) -> int:
    return x - (1 << w) if x >> (w - 1) else x


def fold_binop(op: str, w: int, x: int, y: int) -> int:
    m = mask(w)
    if op == "add":
        return (x + y) & m
    if op == "sub":
        return (x - y) & m
    if op == "mul":
        return (x * y) & m
    if op == "and":
        return x & y
    if op == "or":
        return x | y
    if op == "xor":
        return x ^ y
    if op == "shl":
        return (x << y) & m if y < w else 0
    if op == "lshr":
        return x >> y if y < w else 0
    if op == "ashr":
        return (_signed(x, w) >> min(y, w - 1)) & m
    if op == "eq":
        return int(x == y)
    if op == "ne":
        return int(x != y)
    if op == "ult":
        return int(x < y)
    if op == "uge":
        return int(x >= y)
    if op == "slt":
        return int(_signed(x, w) < _signed(y, w))
    if op == "sge":
        return int(_signed(x, w) >= _signed(y, w))
    raise ValueError(op)


def fold_unop(op: str, params: tuple[int, ...], w: int, x: int) -> int:
    if op == "not":
        return x ^ mask(w)
    if op == "neg":
        return -x & mask(w)
    if op == "zext":
        return x
    if op == "sext":
        return _signed(x, w) & mask(params[0])
    if op == "extract":
        hi, lo = params
        return (x >> lo) & mask(hi - lo + 1)
    raise ValueError(op)


def _order_key(e: Expr) -> tuple[int, int]:
    return (1 if isinstance(e, Const) else 0, e.digest)


def split_offset(e: Expr) -> tuple[Expr | None, int]:
    """Decompose ``e`` as base + constant offset (base None for constants)."""
    if isinstance(e, Const):
        return None, e.value
    if isinstance(e, BinOp) and isinstance(e.rhs, Const):
        if e.op == "add":
            return e.lhs, e.rhs.value
        if e.op == "sub":
            return e.lhs, -e.rhs.value & mask(e.width)
    return e, 0


def _with_offset(base: Expr, d: int) -> Expr:
    w = base.width
    d &= mask(w)
    if d == 0:
        return base
    if d < 1 << (w - 1):
        return BinOp("add", base, Const(w, d))
    return BinOp("sub", base, Const(w, (1 << w) - d))


def _disjoint(a1: Expr, n1: int, a2: Expr, n2: int) -> bool:
    b1, o1 = split_offset(a1)
    b2, o2 = split_offset(a2)
    if b1 is not b2:
        return False
    m = mask(a1.width)
    return ((o2 - o1) & m) >= n1 and ((o1 - o2) & m) >= n2


def known_bits(e: Expr, depth: int = 4) -> tuple[int, int]:
    """Bits of ``e`` that are provably 0 and provably 1, as two masks."""
    w = e.width
    m = mask(w)
    if isinstance(e, Const):
        return ~e.value & m, e.value
    if depth == 0:
        return 0, 0
    if isinstance(e, BinOp):
        if e.op in ("and", "or"):
            za, oa = known_bits(e.lhs, depth - 1)
            zb, ob = known_bits(e.rhs, depth - 1)
            if e.op == "and":
                return za | zb, oa & ob
            return za & zb, oa | ob
        if e.op in ("shl", "lshr") and isinstance(e.rhs, Const) and e.rhs.value < w:
            k = e.rhs.value
            z, o = known_bits(e.lhs, depth - 1)
            if e.op == "shl":
                return ((z << k) | mask(k)) & m, (o << k) & m
            return (z >> k) | (m ^ (m >> k)), o >> k
    if isinstance(e, UnOp):
        if e.op == "zext":
            z, o = known_bits(e.arg, depth - 1)
            return z | (m ^ mask(e.arg.width)), o
        if e.op == "extract":
            z, o = known_bits(e.arg, depth - 1)
            lo = e.params[1]
            return (z >> lo) & m, (o >> lo) & m
    return 0, 0


def _rule_binop(e: BinOp) -> Expr:
    op, a, b, w = e.op, e.lhs, e.rhs, e.lhs.width
    ca, cb = isinstance(a, Const), isinstance(b, Const)
    if ca and cb:
        return Const(e.width, fold_binop(op, w, a.value, b.value))
    if op in COMMUTATIVE and _order_key(a) > _order_key(b):
        return BinOp(op, b, a)
    m = mask(w)
    if a is b:
        if op in ("xor", "sub"):
            return Const(w, 0)
        if op in ("and", "or"):
            return a
        if op in ("eq", "uge", "sge"):
            return Const(1, 1)
        if op in ("ne", "ult", "slt"):
            return Const(1, 0)
    if cb:
        c = b.value
        if op in ("add", "sub"):
            base, d = split_offset(a)
            if base is not None:
                total = d + (c if op == "add" else -c)
                out = _with_offset(base, total)
                if out is not e:
                    return out
            return e
        if c == 0:
            if op in ("or", "xor", "shl", "lshr", "ashr"):
                return a
            if op in ("and", "mul"):
                return Const(w, 0)
            if op == "uge":
                return Const(1, 1)
            if op == "ult":
                return Const(1, 0)
        if op in ("shl", "lshr") and c >= w:
            return Const(w, 0)
        if op == "and" and c == m:
            return a
        if op == "or" and c == m:
            return Const(w, m)
        if op == "mul" and c == 1:
            return a
        if op in _REASSOC and isinstance(a, BinOp) and a.op == op and isinstance(a.rhs, Const):
            return BinOp(op, a.lhs, Const(w, fold_binop(op, w, a.rhs.value, c)))
        if op in ("eq", "ne"):
            zeros, ones = known_bits(a)
            if (c & zeros) or (~c & ones & m):
                return Const(1, 0 if op == "eq" else 1)
            if w == 1:
                if (op == "eq") == (c == 1):
                    return a
                return UnOp("not", a)
            if c == 0 and isinstance(a, BinOp) and a.op in ("sub", "xor"):
                return BinOp(op, a.lhs, a.rhs)
            if isinstance(a, BinOp) and isinstance(a.rhs, Const) and a.op in ("add", "sub", "xor"):
                k = a.rhs.value
                inv = {"add": (c - k) & m, "sub": (c + k) & m, "xor": c ^ k}[a.op]
                return BinOp(op, a.lhs, Const(w, inv))
    return e


def _rule_unop(e: UnOp) -> Expr:
    a = e.arg
    if isinstance(a, Const):
        return Const(e.width, fold_unop(e.op, e.params, a.width, a.value))
    if e.op in ("not", "neg") and isinstance(a, UnOp) and a.op == e.op:
        return a.arg
    if e.op == "not" and e.width == 1 and isinstance(a, BinOp) and a.op in _NEGATED:
        return BinOp(_NEGATED[a.op], a.lhs, a.rhs)
    if e.op in ("zext", "sext"):
        if e.width == a.width:
            return a
        if isinstance(a, UnOp) and a.op == e.op:
            return UnOp(e.op, a.arg, e.params)
    if e.op == "extract":
        hi, lo = e.params
        if lo == 0 and hi == a.width - 1:
            return a
        zeros, ones = known_bits(e)
        if (zeros | ones) == mask(e.width):
            return Const(e.width, ones)
        if isinstance(a, UnOp) and a.op == "extract":
            return UnOp("extract", a.arg, (hi + a.params[1], lo + a.params[1]))
        if isinstance(a, UnOp) and a.op == "zext" and hi < a.arg.width:
            return UnOp("extract", a.arg, e.params)
    return e


def _rule_ite(e: Ite) -> Expr:
    if isinstance(e.cond, Const):
        return e.then if e.cond.value else e.other
    if e.then is e.other:
        return e.then
    if isinstance(e.cond, UnOp) and e.cond.op == "not":
        return Ite(e.cond.arg, e.other, e.then)
    return e


def _rule_select(e: MemSelect) -> Expr:
    mem = e.mem
    if isinstance(mem, MemStore):
        if mem.addr is e.addr and mem.size == e.width:
            return mem.value
        if _disjoint(e.addr, e.width // 8, mem.addr, mem.size // 8):
            return MemSelect(mem.mem, e.addr, e.width)
    return e


def _rebuild(e: Expr, kids: list[Expr]) -> Expr:
    if all(k is c for k, c in zip(kids, e.children())):
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, kids[0], kids[1])
    if isinstance(e, UnOp):
        return UnOp(e.op, kids[0], e.params)
    if isinstance(e, Ite):
        return Ite(kids[0], kids[1], kids[2])
    if isinstance(e, MemStore):
        return MemStore(kids[0], kids[1], kids[2], e.size)
    if isinstance(e, MemSelect):
        return MemSelect(kids[0], kids[1], e.width)
    return e


def _rule(e: Expr) -> Expr:
    if isinstance(e, BinOp):
        return _rule_binop(e)
    if isinstance(e, UnOp):
        return _rule_unop(e)
    if isinstance(e, Ite):
        return _rule_ite(e)
    if isinstance(e, MemSelect):
        return _rule_select(e)
    return e


def simplify(e: Expr) -> Expr:
    """Return the normal form of ``e``; idempotent and semantics-preserving."""
    hit = _CACHE.get(e)
    if hit is not None:
        return hit
    if len(_CACHE) > _CACHE_LIMIT:
        _CACHE.clear()
    kids = [simplify(c) for c in e.children()]
    node = _rebuild(e, kids)
    out = _rule(node)
    if out is not node:
        out = simplify(out)
    _CACHE[e] = out
    _CACHE[out] = out
    return out


def negate(cond: Expr) -> Expr:
    return simplify(UnOp("not", cond))
