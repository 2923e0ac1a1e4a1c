class GadgetError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(GadgetError):
    """A program, record or query violates a structural invariant."""


class MalformedInstruction(ValidationError):
    def __init__(self, addr: int, reason: str):
        super().__init__(f"instruction at {addr:#x}: {reason}")
        self.addr = addr
        self.reason = reason


class ParseError(GadgetError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class LiftError(GadgetError):
    def __init__(self, addr: int, mnemonic: str, reason: str = "unsupported instruction"):
        super().__init__(f"{addr:#x}: cannot lift {mnemonic!r}: {reason}")
        self.addr = addr
        self.mnemonic = mnemonic


class UnknownRegister(ValidationError):
    pass


class UnknownSymbol(ValidationError):
    pass


class StoreError(GadgetError):
    """The gadget database file is unreadable, corrupt or inconsistent."""


class DuplicateId(StoreError):
    pass
