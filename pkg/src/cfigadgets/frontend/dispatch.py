from __future__ import annotations

from ..arch import Arch
from ..errors import LiftError
from ..ir import Statement
from .arm import lift_arm
from .lifted import Lifted
from .x86 import lift_x86

_LIFTERS = {"x86_64": lift_x86, "arm": lift_arm}


def lift(arch: Arch | str, asm: str, addr: int, size: int | None = None) -> Lifted:
    """Lift one instruction into class, IR and branch metadata."""
    name = arch if isinstance(arch, str) else arch.name
    lifter = _LIFTERS.get(name)
    if lifter is None:
        raise LiftError(addr, asm.split()[0] if asm.split() else "", f"no lifter for architecture {name!r}")
    return lifter(asm, addr, size)


def lift_instruction(arch: Arch | str, asm: str, addr: int, size: int | None = None) -> list[Statement]:
    return list(lift(arch, asm, addr, size).ir)
