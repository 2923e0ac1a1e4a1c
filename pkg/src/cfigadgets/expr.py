"""Bitvector expression trees shared by the micro-IR and the symbolic engine.

One node family serves both worlds.  In a micro-IR statement, ``Init(r)``
reads register ``r`` of the state the statement runs against and
``MemSelect(MemInit, a, w)`` is a plain load.  In a symbolic summary the same
nodes denote the *initial* register/memory values of the gadget.  Symbolic
execution is therefore just substitution of the current state into the
statement's expression.

Nodes are hash-consed: building the same tree twice yields the same object,
so structural equality is identity and hashing is O(1).  Every node carries a
``digest`` that is stable across processes (unlike ``hash(str)``), used for
canonical argument ordering and for deterministic output.
"""

from __future__ import annotations

import hashlib
import weakref

__all__ = [
    "BINOPS",
    "COMMUTATIVE",
    "COMPARISONS",
    "UNOPS",
    "BinOp",
    "Const",
    "Expr",
    "Fresh",
    "Init",
    "Ite",
    "MemInit",
    "MemSelect",
    "MemStore",
    "UnOp",
    "WidthError",
    "mask",
    "walk",
]

BINOPS = frozenset(
    ["add", "sub", "mul", "and", "or", "xor", "shl", "lshr", "ashr",
     "eq", "ne", "ult", "slt", "uge", "sge"]
)
COMPARISONS = frozenset(["eq", "ne", "ult", "slt", "uge", "sge"])
COMMUTATIVE = frozenset(["add", "mul", "and", "or", "xor", "eq", "ne"])
UNOPS = frozenset(["not", "neg", "zext", "sext", "extract"])
MEM_WIDTHS = (8, 16, 32, 64)

# Width of memory-sorted terms (MemInit / MemStore).
MEMORY = 0


class WidthError(ValueError):
    """Raised when an expression is not width-consistent."""


def mask(width: int) -> int:
    return (1 << width) - 1


def _digest(*parts: object) -> int:
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big")


class Expr:
    """Base class.  Do not instantiate directly."""

    __slots__ = ("width", "digest", "depth", "__weakref__")
    _table: weakref.WeakValueDictionary = weakref.WeakValueDictionary()

    width: int
    digest: int
    depth: int

    def __eq__(self, other: object) -> bool:
        return self is other

    def __ne__(self, other: object) -> bool:
        return self is not other

    def __hash__(self) -> int:
        return self.digest

    def __reduce__(self):
        return (type(self), self._args())

    def _args(self) -> tuple:
        raise NotImplementedError

    def children(self) -> tuple[Expr, ...]:
        return ()

    @property
    def is_memory(self) -> bool:
        return self.width == MEMORY

    def __repr__(self) -> str:
        from .ir import format_expr

        return f"<{type(self).__name__} {format_expr(self)}>"

    def __str__(self) -> str:
        from .ir import format_expr

        return format_expr(self)

    @classmethod
    def _interned(cls, key: tuple, build):
        table = Expr._table
        node = table.get(key)
        if node is None:
            node = object.__new__(cls)
            build(node)
            table[key] = node
        return node


class Const(Expr):
    __slots__ = ("value",)
    value: int

    def __new__(cls, width: int, value: int) -> Const:
        if width < 1:
            raise WidthError(f"constant width must be positive, got {width}")
        value &= mask(width)

        def build(n):
            n.width, n.value, n.depth = width, value, 0
            n.digest = _digest("c", width, value)

        return cls._interned(("c", width, value), build)

    def _args(self):
        return (self.width, self.value)


class Init(Expr):
    """Value of a register in the state the expression is evaluated against."""

    __slots__ = ("name",)
    name: str

    def __new__(cls, name: str, width: int) -> Init:
        if width < 1:
            raise WidthError(f"register {name} has width {width}")

        def build(n):
            n.name, n.width, n.depth = name, width, 0
            n.digest = _digest("r", name, width)

        return cls._interned(("r", name, width), build)

    def _args(self):
        return (self.name, self.width)


class Fresh(Expr):
    """Unconstrained value produced by a havoced fixed-function call."""

    __slots__ = ("name",)
    name: str

    def __new__(cls, name: str, width: int) -> Fresh:
        def build(n):
            n.name, n.width, n.depth = name, width, 0
            n.digest = _digest("f", name, width)

        return cls._interned(("f", name, width), build)

    def _args(self):
        return (self.name, self.width)


class BinOp(Expr):
    __slots__ = ("op", "lhs", "rhs")
    op: str
    lhs: Expr
    rhs: Expr

    def __new__(cls, op: str, lhs: Expr, rhs: Expr) -> BinOp:
        if op not in BINOPS:
            raise WidthError(f"unknown binary operator {op!r}")
        if lhs.is_memory or rhs.is_memory:
            raise WidthError(f"{op}: memory term used as a value")
        if lhs.width != rhs.width:
            raise WidthError(f"{op}: operand widths differ ({lhs.width} vs {rhs.width})")
        width = 1 if op in COMPARISONS else lhs.width

        def build(n):
            n.op, n.lhs, n.rhs, n.width = op, lhs, rhs, width
            n.depth = 1 + max(lhs.depth, rhs.depth)
            n.digest = _digest("b", op, lhs.digest, rhs.digest)

        return cls._interned(("b", op, lhs, rhs), build)

    def _args(self):
        return (self.op, self.lhs, self.rhs)

    def children(self):
        return (self.lhs, self.rhs)


class UnOp(Expr):
    """``not``, ``neg``, ``zext``/``sext`` (params=(w,)), ``extract`` (params=(hi, lo))."""

    __slots__ = ("op", "arg", "params")
    op: str
    arg: Expr
    params: tuple[int, ...]

    def __new__(cls, op: str, arg: Expr, params: tuple[int, ...] = ()) -> UnOp:
        params = tuple(params)
        if arg.is_memory:
            raise WidthError(f"{op}: memory term used as a value")
        if op in ("not", "neg"):
            if params:
                raise WidthError(f"{op} takes no parameters")
            width = arg.width
        elif op in ("zext", "sext"):
            if len(params) != 1 or params[0] < arg.width:
                raise WidthError(f"{op}{params}: cannot extend width {arg.width}")
            width = params[0]
        elif op == "extract":
            if len(params) != 2 or not (arg.width > params[0] >= params[1] >= 0):
                raise WidthError(f"extract{params} out of range for width {arg.width}")
            width = params[0] - params[1] + 1
        else:
            raise WidthError(f"unknown unary operator {op!r}")

        def build(n):
            n.op, n.arg, n.params, n.width = op, arg, params, width
            n.depth = 1 + arg.depth
            n.digest = _digest("u", op, params, arg.digest)

        return cls._interned(("u", op, params, arg), build)

    def _args(self):
        return (self.op, self.arg, self.params)

    def children(self):
        return (self.arg,)


class Ite(Expr):
    __slots__ = ("cond", "then", "other")
    cond: Expr
    then: Expr
    other: Expr

    def __new__(cls, cond: Expr, then: Expr, other: Expr) -> Ite:
        if cond.width != 1:
            raise WidthError(f"ite condition must have width 1, got {cond.width}")
        if then.width != other.width:
            raise WidthError(f"ite arms differ in width ({then.width} vs {other.width})")
        if then.is_memory:
            raise WidthError("ite over memory terms is not supported")

        def build(n):
            n.cond, n.then, n.other, n.width = cond, then, other, then.width
            n.depth = 1 + max(cond.depth, then.depth, other.depth)
            n.digest = _digest("i", cond.digest, then.digest, other.digest)

        return cls._interned(("i", cond, then, other), build)

    def _args(self):
        return (self.cond, self.then, self.other)

    def children(self):
        return (self.cond, self.then, self.other)


class _MemInit(Expr):
    __slots__ = ()

    def __new__(cls) -> _MemInit:
        def build(n):
            n.width, n.depth = MEMORY, 0
            n.digest = _digest("m")

        return cls._interned(("m",), build)

    def _args(self):
        return ()


class MemStore(Expr):
    __slots__ = ("mem", "addr", "value", "size")
    mem: Expr
    addr: Expr
    value: Expr
    size: int

    def __new__(cls, mem: Expr, addr: Expr, value: Expr, size: int) -> MemStore:
        if not mem.is_memory:
            raise WidthError("store: first argument must be a memory term")
        if size not in MEM_WIDTHS or value.width != size:
            raise WidthError(f"store{size}: value has width {value.width}")
        if addr.is_memory:
            raise WidthError("store: address is a memory term")

        def build(n):
            n.mem, n.addr, n.value, n.size, n.width = mem, addr, value, size, MEMORY
            n.depth = 1 + max(mem.depth, addr.depth, value.depth)
            n.digest = _digest("s", size, mem.digest, addr.digest, value.digest)

        return cls._interned(("s", size, mem, addr, value), build)

    def _args(self):
        return (self.mem, self.addr, self.value, self.size)

    def children(self):
        return (self.mem, self.addr, self.value)


class MemSelect(Expr):
    __slots__ = ("mem", "addr")
    mem: Expr
    addr: Expr

    def __new__(cls, mem: Expr, addr: Expr, width: int) -> MemSelect:
        if not mem.is_memory:
            raise WidthError("select: first argument must be a memory term")
        if width not in MEM_WIDTHS:
            raise WidthError(f"load width {width} not in {MEM_WIDTHS}")
        if addr.is_memory:
            raise WidthError("select: address is a memory term")

        def build(n):
            n.mem, n.addr, n.width = mem, addr, width
            n.depth = 1 + max(mem.depth, addr.depth)
            n.digest = _digest("l", width, mem.digest, addr.digest)

        return cls._interned(("l", width, mem, addr), build)

    def _args(self):
        return (self.mem, self.addr, self.width)

    def children(self):
        return (self.mem, self.addr)


MemInit = _MemInit()


def walk(expr: Expr):
    """Yield every distinct node of the DAG rooted at ``expr``, children first."""
    seen: set[int] = set()
    stack: list[tuple[Expr, bool]] = [(expr, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            yield node
            continue
        stack.append((node, True))
        for child in reversed(node.children()):
            if id(child) not in seen:
                stack.append((child, False))
