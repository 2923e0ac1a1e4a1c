import random

from cfigadgets.arch import ARM, X86_64
from cfigadgets.evaluator import MachineState, eval_expr, exec_path, exec_stmt, fill_byte
from cfigadgets.ir import parse_expr, parse_stmt


def test_little_endian_memory():
    st = MachineState(X86_64)
    st.write(0x1000, 0x1122334455667788, 8)
    assert st.mem[0x1000] == 0x88
    assert st.read(0x1000, 2) == 0x7788
    assert eval_expr(st, parse_expr("load32(0x1004:64)", X86_64.widths)) == 0x11223344


def test_unmapped_memory_reads_zero_by_default():
    st = MachineState(ARM)
    assert st.read(0x5000, 4) == 0


def test_fill_seed_memory_is_deterministic():
    a = MachineState(X86_64, fill_seed=7)
    b = MachineState(X86_64, fill_seed=7)
    assert a.read(0x1234, 8) == b.read(0x1234, 8)
    assert a.byte(0x10) == fill_byte(7, 0x10)
    c = a.copy()
    assert c.fill_seed == 7


def test_address_wraps_at_word_width():
    st = MachineState(ARM)
    st.write(0xFFFFFFFE, 0xAABBCCDD, 4)
    assert st.mem[0x0] == 0xBB and st.mem[0x1] == 0xAA


def test_statements_read_pre_state():
    w = X86_64.widths
    st = MachineState(X86_64, {"RAX": 5, "RSP": 0x100, "RIP": 0})
    ret = [parse_stmt("RIP := load64(RSP)", w), parse_stmt("RSP := add(RSP,0x8:64)", w)]
    st.write(0x100, 0xDEAD, 8)
    out = exec_path(st, ret)
    assert out.regs["RIP"] == 0xDEAD and out.regs["RSP"] == 0x108
    assert st.regs["RSP"] == 0x100


def test_store_statement_records_write():
    w = X86_64.widths
    st = MachineState(X86_64, {"RSP": 0x200, "RBX": 0x77})
    writes = []
    exec_stmt(st, parse_stmt("store64(sub(RSP,0x8:64), RBX)", w), writes)
    assert writes == [(0x1F8, 0x77, 64)]
    assert st.read(0x1F8, 8) == 0x77


def test_register_reads_are_masked():
    st = MachineState(X86_64, {"ZF": 3})
    assert eval_expr(st, parse_expr("ZF", X86_64.widths)) == 1


def test_signed_ops():
    w = X86_64.widths
    st = MachineState(X86_64, {"RAX": 2**64 - 1, "RBX": 1})
    assert eval_expr(st, parse_expr("slt(RAX,RBX)", w)) == 1
    assert eval_expr(st, parse_expr("ult(RAX,RBX)", w)) == 0
    assert eval_expr(st, parse_expr("ashr(RAX,0x3f:64)", w)) == 2**64 - 1
    assert eval_expr(st, parse_expr("sext64(extract7:0(RAX))", w)) == 2**64 - 1


def test_select_through_stores():
    w = X86_64.widths
    st = MachineState(X86_64, {"RSP": 0x100, "RBX": 0x1122334455667788}, fill_seed=3)
    e = parse_expr("select32(store64(mem,RSP,RBX),add(RSP,0x4:64))", w)
    assert eval_expr(st, e) == 0x11223344
    e2 = parse_expr("select64(store8(mem,RSP,0xaa:8),RSP)", w)
    assert eval_expr(st, e2) & 0xFF == 0xAA
    assert eval_expr(st, e2) >> 8 == st.read(0x101, 7)


def test_compiled_matches_across_many_states():
    w = X86_64.widths
    e = parse_expr("ite(ult(RAX,RBX),add(RAX,load64(RCX)),xor(RBX,0xff:64))", w)
    rng = random.Random(1)
    for _ in range(50):
        st = MachineState(X86_64, {r: rng.getrandbits(64) for r in ("RAX", "RBX", "RCX")}, fill_seed=rng.getrandbits(16))
        a, b, c = st.regs["RAX"], st.regs["RBX"], st.regs["RCX"]
        want = (a + st.read(c, 8)) % 2**64 if a < b else b ^ 0xFF
        assert eval_expr(st, e) == want
