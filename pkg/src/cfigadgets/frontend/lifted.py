from __future__ import annotations

from dataclasses import dataclass

from ..expr import Expr
from ..ir import Statement
from ..program import InsnClass


@dataclass(frozen=True)
class Lifted:
    """Lifter output for one instruction.

    Direct transfers (JUMP, COND, CALL) carry no write of the instruction
    pointer for their static target; the CFG edges convey it.
    """

    cls: InsnClass
    ir: tuple[Statement, ...]
    branch_cond: Expr | None = None
    call_target: str | None = None


def parse_int(text: str) -> int:
    text = text.strip().lower()
    neg = text.startswith("-")
    if neg or text.startswith("+"):
        text = text[1:].strip()
    value = int(text, 16) if text.startswith("0x") else int(text, 10)
    return -value if neg else value
