import pytest

from cfigadgets.arch import ARM, X86_64, Arch
from cfigadgets.errors import MalformedInstruction, ValidationError
from cfigadgets.expr import Const, Init
from cfigadgets.ir import Assign
from cfigadgets.program import (
    BasicBlock,
    Edge,
    Function,
    InsnClass,
    Instruction,
    Program,
    classify_instruction,
    fresh_name,
    havoc_registers,
    predecessors,
    validate_program,
)

RET = Instruction(0x10, 1, "ret", InsnClass.RET, (Assign("RIP", Init("RSP", 64)),))


def program(blocks, entry=0x10, fixed=()):
    return Program(X86_64, "m", (Function("f", entry, {b.addr: b for b in blocks}),), frozenset(fixed))


class TestArch:
    def test_builtin_classifiable(self):
        assert len(X86_64.classifiable) == 15
        assert "RSP" not in X86_64.classifiable and "RIP" in X86_64.classifiable
        assert ARM.ordered_classifiable()[0] == "R0"

    def test_flags_are_width_one(self):
        assert X86_64.widths["ZF"] == 1
        assert set(ARM.flags) == {"Z", "N", "C"}

    def test_invalid_arch(self):
        with pytest.raises(ValueError):
            Arch("bad", 64, "little", (("A", 64),), sp="A", ip="B", classifiable=frozenset(["A"]))
        with pytest.raises(ValueError):
            Arch("bad", 64, "middle", (("A", 64), ("B", 64)), sp="A", ip="B", classifiable=frozenset(["B"]))
        with pytest.raises(ValueError):
            Arch("bad", 64, "little", (("A", 64), ("B", 64)), sp="A", ip="B", classifiable=frozenset(["A"]))


class TestClassifyInstruction:
    def test_endpoint_must_write_ip(self):
        bad = Instruction(0x10, 1, "ret", InsnClass.RET, ())
        with pytest.raises(MalformedInstruction):
            classify_instruction(bad, X86_64)
        assert classify_instruction(RET, X86_64) is InsnClass.RET

    def test_call_needs_target(self):
        with pytest.raises(MalformedInstruction):
            classify_instruction(Instruction(0x10, 5, "call x", InsnClass.CALL, ()), X86_64)

    def test_cond_needs_boolean_condition(self):
        with pytest.raises(MalformedInstruction):
            classify_instruction(Instruction(0x10, 2, "jne", InsnClass.COND, (), None, None), X86_64)
        with pytest.raises(MalformedInstruction):
            classify_instruction(Instruction(0x10, 2, "jne", InsnClass.COND, (), None, Init("RAX", 64)), X86_64)

    def test_fall_with_condition_rejected(self):
        with pytest.raises(MalformedInstruction):
            classify_instruction(Instruction(0x10, 2, "x", InsnClass.FALL, (), None, Init("ZF", 1)), X86_64)


class TestValidate:
    def test_ok(self):
        validate_program(program([BasicBlock(0x10, (RET,))]))

    def test_entry_must_be_block(self):
        with pytest.raises(ValidationError):
            validate_program(program([BasicBlock(0x10, (RET,))], entry=0x20))

    def test_ret_without_successors(self):
        with pytest.raises(ValidationError):
            validate_program(program([BasicBlock(0x10, (RET,), (Edge(0x10, "unconditional"),))]))

    def test_terminator_last(self):
        nop = Instruction(0x11, 1, "nop", InsnClass.FALL, ())
        with pytest.raises(ValidationError):
            validate_program(program([BasicBlock(0x10, (RET, nop))]))

    def test_width_mismatch_in_ir(self):
        bad = Instruction(0x10, 1, "x", InsnClass.FALL, (Assign("RAX", Const(32, 1)),))
        with pytest.raises(ValidationError):
            validate_program(program([BasicBlock(0x10, (bad, ))]))

    def test_edge_outside_function(self):
        nop = Instruction(0x10, 1, "nop", InsnClass.FALL, ())
        with pytest.raises(ValidationError):
            validate_program(program([BasicBlock(0x10, (nop,), (Edge(0x99, "fallthrough"),))]))


def test_predecessors_sorted_unique():
    nop = Instruction(0x10, 1, "nop", InsnClass.FALL, ())
    b1 = BasicBlock(0x10, (nop,), (Edge(0x20, "fallthrough"),))
    ret = Instruction(0x20, 1, "ret", InsnClass.RET, (Assign("RIP", Init("RSP", 64)),))
    b2 = BasicBlock(0x20, (ret,))
    fn = Function("f", 0x10, {0x10: b1, 0x20: b2})
    assert predecessors(fn) == {0x10: [], 0x20: [0x10]}


def test_havoc_convention():
    regs = havoc_registers(X86_64)
    assert regs[0] == "RAX" and "RBX" not in regs and "ZF" in regs
    assert fresh_name("RAX", 0x401000) == "RAX@0x401000"
