from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["ARM", "Arch", "BUILTIN_ARCHES", "X86_64"]

REGISTER_WIDTHS = frozenset([1, 8, 16, 32, 64])


@dataclass(frozen=True)
class Arch:
    """Register file and conventions of one instruction set.

    ``classifiable`` are the registers whose final values get a semantic tag.
    ``ret_reg`` and ``caller_saved`` describe what a havoced fixed-function
    call clobbers; flags are ordinary width-1 registers.
    """

    name: str
    bits: int
    endianness: str
    registers: tuple[tuple[str, int], ...]
    sp: str
    ip: str
    classifiable: frozenset[str]
    ret_reg: str | None = None
    caller_saved: tuple[str, ...] = ()
    widths: dict[str, int] = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "widths", dict(self.registers))
        errors = self.problems()
        if errors:
            raise ValueError(f"invalid arch {self.name!r}: " + "; ".join(errors))

    def problems(self) -> list[str]:
        out = []
        names = [n for n, _ in self.registers]
        if len(set(names)) != len(names):
            out.append("duplicate register names")
        if self.bits not in (32, 64):
            out.append(f"unsupported word width {self.bits}")
        if self.endianness not in ("little", "big"):
            out.append(f"endianness must be little or big, not {self.endianness!r}")
        for reg in (self.sp, self.ip):
            if reg not in self.widths:
                out.append(f"{reg} is not a register")
            elif self.widths[reg] != self.bits:
                out.append(f"{reg} must be {self.bits} bits wide")
        missing = set(self.classifiable) - set(names)
        if missing:
            out.append(f"classifiable registers not in register file: {sorted(missing)}")
        if self.ip not in self.classifiable:
            out.append("the instruction pointer must be classifiable")
        for name, width in self.registers:
            if width not in REGISTER_WIDTHS:
                out.append(f"register {name} has unsupported width {width}")
        if self.ret_reg is not None and self.ret_reg not in self.widths:
            out.append(f"return register {self.ret_reg} is not a register")
        for reg in self.caller_saved:
            if reg not in self.widths:
                out.append(f"caller-saved register {reg} is not a register")
        return out

    @property
    def byteorder(self) -> str:
        return self.endianness

    def ordered_classifiable(self) -> list[str]:
        return [n for n, _ in self.registers if n in self.classifiable]

    @property
    def flags(self) -> list[str]:
        return [n for n, w in self.registers if w == 1]


_X86_GPRS = ["RAX", "RBX", "RCX", "RDX", "RSI", "RDI", "RBP", "RSP",
             "R8", "R9", "R10", "R11", "R12", "R13", "R14", "R15"]

X86_64 = Arch(
    name="x86_64",
    bits=64,
    endianness="little",
    registers=tuple((r, 64) for r in _X86_GPRS) + (("RIP", 64), ("ZF", 1), ("SF", 1), ("CF", 1)),
    sp="RSP",
    ip="RIP",
    # Stack and frame pointer are left out: 14 GPRs plus RIP.
    classifiable=frozenset(set(_X86_GPRS) - {"RSP", "RBP"} | {"RIP"}),
    ret_reg="RAX",
    caller_saved=("RAX", "RCX", "RDX", "RSI", "RDI", "R8", "R9", "R10", "R11", "ZF", "SF", "CF"),
)

_ARM_GPRS = [f"R{i}" for i in range(13)]

ARM = Arch(
    name="arm",
    bits=32,
    endianness="little",
    registers=tuple((r, 32) for r in _ARM_GPRS + ["SP", "LR", "PC"]) + (("Z", 1), ("N", 1), ("C", 1)),
    sp="SP",
    ip="PC",
    classifiable=frozenset(_ARM_GPRS + ["LR", "PC"]),
    ret_reg="R0",
    caller_saved=("R0", "R1", "R2", "R3", "R12", "LR", "Z", "N", "C"),
)

BUILTIN_ARCHES = {a.name: a for a in (X86_64, ARM)}
