import sys

import pytest

from cfigadgets.arch import X86_64
from cfigadgets.evaluator import eval_expr
from cfigadgets.expr import Const, Init, UnOp, WidthError
from cfigadgets.ir import parse_expr
from cfigadgets.solver import (
    ExternalSolver,
    SatStatus,
    check_satisfiable,
    prepare_conjunction,
    sample_states,
)

W = X86_64.widths
HARD = "eq(mul(xor(RAX,lshr(RAX,0x21:64)),0x9e3779b97f4a7c15:64),0x123456789abcdef:64)"


def P(text):
    return parse_expr(text, W)


class TestUnsatRules:
    def test_false_conjunct(self):
        res = check_satisfiable([P("ne(RAX,RAX)")], arch=X86_64)
        assert res.status is SatStatus.UNSAT and "false" in res.reason

    def test_conflicting_equalities(self):
        cs = [P("eq(load64(add(RDI,0x8:64)),0x0:64)"), P("eq(load64(add(RDI,0x8:64)),0x5:64)")]
        res = check_satisfiable(cs, arch=X86_64)
        assert res.status is SatStatus.UNSAT
        assert "must equal both 0x0 and 0x5" in res.reason

    def test_boolean_and_its_negation(self):
        zf = Init("ZF", 1)
        assert check_satisfiable([zf, UnOp("not", zf)], arch=X86_64).status is SatStatus.UNSAT

    def test_known_bits_conflict(self):
        assert check_satisfiable([P("eq(or(RDI,0x40:64),0x0:64)")], arch=X86_64).status is SatStatus.UNSAT

    def test_constraints_must_be_boolean(self):
        with pytest.raises(WidthError):
            prepare_conjunction([Init("RAX", 64)])


class TestSearch:
    def test_witness_satisfies(self):
        cs = [P("eq(add(RAX,0x10:64),0x30:64)"), P("ult(RBX,0x8:64)"), P("eq(load32(RDI),0x1:32)")]
        res = check_satisfiable(cs, arch=X86_64, seed=3)
        assert res.status is SatStatus.SAT
        assert all(eval_expr(res.state, c) == 1 for c in cs)
        assert res.witness["RAX"] == 0x20

    def test_empty_is_sat(self):
        assert check_satisfiable([], arch=X86_64).status is SatStatus.SAT

    def test_small_budget_is_unknown_not_unsat(self):
        res = check_satisfiable([P(HARD)], arch=X86_64, budget=20)
        assert res.status is SatStatus.UNKNOWN

    def test_budget_must_be_positive(self):
        with pytest.raises(ValueError):
            check_satisfiable([P("eq(RAX,0x1:64)")], arch=X86_64, budget=0)

    def test_deterministic(self):
        cs = [P("uge(RAX,0x1000:64)"), P("eq(and(RAX,0xf:64),0x3:64)")]
        a = check_satisfiable(cs, arch=X86_64, seed=11)
        b = check_satisfiable(cs, arch=X86_64, seed=11)
        assert a.status is SatStatus.SAT and a.witness == b.witness


class TestSampling:
    def test_samples_satisfy(self):
        cs = [P("ne(and(load32(RDI),0x1:32),0x0:32)"), P("ult(RCX,0x100:64)")]
        states = sample_states(cs, X86_64, 50, seed=1)
        assert len(states) == 50
        assert all(eval_expr(st, c) == 1 for st in states for c in cs)
        assert len({st.regs["RCX"] for st in states}) > 1

    def test_unsat_gives_no_samples(self):
        assert sample_states([Const(1, 0)], X86_64, 10) == []

    def test_unconstrained(self):
        assert len(sample_states([], X86_64, 7, seed=2)) == 7


SCRIPT = """
import sys
sys.stdin.read()
print("sat")
print("RAX=0x20")
print("load32(RDI)=0x7")
"""


class TestExternal:
    def test_sat_output_is_parsed(self, tmp_path):
        script = tmp_path / "solver.py"
        script.write_text(SCRIPT)
        backend = ExternalSolver([sys.executable, str(script)])
        cs = [P("eq(add(RAX,0x10:64),0x30:64)"), P("eq(load32(RDI),0x7:32)")]
        res = check_satisfiable(cs, arch=X86_64, backend=backend)
        assert res.status is SatStatus.SAT and res.witness["RAX"] == 0x20
        assert all(eval_expr(res.state, c) == 1 for c in cs)

    def test_failure_is_unknown(self):
        backend = ExternalSolver(["/nonexistent/solver"])
        res = check_satisfiable([P("eq(RAX,0x1:64)")], arch=X86_64, backend=backend)
        assert res.status is SatStatus.UNKNOWN

    def test_rules_run_before_backend(self):
        backend = ExternalSolver(["/nonexistent/solver"])
        res = check_satisfiable([P("ne(RAX,RAX)")], arch=X86_64, backend=backend)
        assert res.status is SatStatus.UNSAT
