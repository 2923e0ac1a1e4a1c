import pytest

from cfigadgets.analysis import analyze_database, discover_to_database
from cfigadgets.classify import ComplexityKey
from cfigadgets.errors import ParseError, UnknownRegister, UnknownSymbol, ValidationError
from cfigadgets.evaluator import replay_gadget
from cfigadgets.expr import BinOp, Const, Init
from cfigadgets.search import load_query, match_address, parse_query, run_query, search
from cfigadgets.store import GadgetDB

from corpora import layout, load_doc


def build_db(path, program, budget=512):
    db = discover_to_database([program], path)
    analyze_database(db, budget=budget)
    db.flush()
    return GadgetDB.open(path)


@pytest.fixture(scope="module")
def arm_db(tmp_path_factory, arm_program):
    return build_db(tmp_path_factory.mktemp("arm") / "arm.gdb", arm_program)


@pytest.fixture(scope="module")
def guard_db(tmp_path_factory, null_guard_program):
    return build_db(tmp_path_factory.mktemp("ng") / "ng.gdb", null_guard_program)


@pytest.fixture(scope="module")
def categories_db(tmp_path_factory, categories_program):
    return build_db(tmp_path_factory.mktemp("t1") / "t1.gdb", categories_program)


class TestParsing:
    def test_fixture(self, fixtures_dir):
        q = load_query(fixtures_dir / "arm_dispatch.gq")
        assert (q.prefix, q.suffix) == ("EP", "IC")
        assert q.regs[0].offset == 0x1C and q.regs[1].offset == 0xA4
        assert q.values[0].equals == 0x122F58

    def test_unknown_key(self):
        with pytest.raises(ParseError):
            parse_query({"prefix": "EP", "colour": "red"})

    def test_not_json(self):
        with pytest.raises(ParseError):
            parse_query("{nope")

    def test_empty_query(self):
        with pytest.raises(ValidationError):
            parse_query({})

    def test_bad_tag(self):
        with pytest.raises(ValidationError):
            parse_query({"regs": [{"reg": "RAX", "tag": "StoreMem"}]})

    def test_signed_offsets(self):
        q = parse_query({"mem": [{"tag": "StoreMem", "base": "RSP", "offset": "-0x8", "src": "RBX"}]})
        assert q.mem[0].offset == -8 and q.mem[0].src == "RBX"
        q = parse_query({"mem": [{"tag": "ArithmeticStore", "src": "-8"}]})
        assert q.mem[0].src == -8

    def test_unknown_register(self, arm_db):
        q = parse_query({"regs": [{"reg": "RAX", "tag": "NOP"}]})
        with pytest.raises(UnknownRegister):
            run_query(arm_db, q)

    def test_unclassifiable_register(self, categories_db):
        q = parse_query({"regs": [{"reg": "RSP", "tag": "NOP"}]})
        with pytest.raises(UnknownRegister):
            run_query(categories_db, q)

    def test_unknown_symbol(self, categories_db):
        with pytest.raises(UnknownSymbol):
            run_query(categories_db, parse_query({"content": "F(system)"}))


class TestMatchAddress:
    def test_forms(self):
        r0 = Init("R0", 32)
        assert match_address(BinOp("add", r0, Const(32, 0x1C)), "R0", 0x1C)
        assert not match_address(BinOp("add", r0, Const(32, 0x1C)), "R0", 0x20)
        assert match_address(r0, "R0", None) and match_address(r0, "R0", 0)
        assert match_address(BinOp("sub", r0, Const(32, 8)), "R0", -8)
        assert match_address(BinOp("add", r0, Const(32, 0xFFFFFFF8)), "R0", -8)
        assert not match_address(BinOp("add", r0, Const(32, 4)), "R1", 4)


def test_ranking_examples():
    keys = [ComplexityKey(3, 0, 1, -13), ComplexityKey(2, 1, 0, -14), ComplexityKey(2, 0, 2, -13)]
    assert sorted(keys)[0] == (2, 0, 2, -13)


class TestArmDispatch:
    def test_hit_and_witness(self, arm_db, arm_program, fixtures_dir):
        (hit,) = search(arm_db, load_query(fixtures_dir / "arm_dispatch.gq"))
        assert hit.record.start_addr == 0x71704 and hit.rank == 0
        state = hit.result.state
        buf = state.regs["R0"]
        assert state.read(buf, 4) & 1
        rep = replay_gadget(arm_program, hit.record.to_gadget(), state)
        assert rep.followed
        assert rep.state.reg("R0") == state.read(buf + 0x1C, 4) == 0x122F58
        assert rep.state.reg("PC") == rep.state.reg("R12") == 0x3B190
        assert arm_program.functions[0].blocks[0x71710].last.cls.name == "ICALL"


class TestNullGuard:
    def test_first_candidate_rejected(self, guard_db, null_guard_program, fixtures_dir):
        query = load_query(fixtures_dir / "null_guard.gq")
        cands = run_query(guard_db, query)
        assert len(cands) >= 2
        assert cands[0].record.function == "guarded"
        (hit,) = search(guard_db, query)
        assert hit.record.function == "plain" and hit.rank >= 1
        again = search(guard_db, query)[0]
        assert (again.record.id, again.witness) == (hit.record.id, hit.witness)

    def test_without_values_first_wins(self, guard_db):
        (hit,) = search(guard_db, parse_query({"prefix": "EP", "suffix": "RET",
                                                "regs": [{"reg": "RBX", "tag": "LoadMem"}]}))
        assert hit.rank == 0


def test_unconstrained_candidate_accepted(tmp_path):
    prog = load_doc(layout("x86_64", "u", [("f", [("A", ["mov rax, rbx", "ret"], [])])]))
    db = build_db(tmp_path / "u.gdb", prog)
    (hit,) = search(db, parse_query({"regs": [{"reg": "RAX", "tag": "MovReg", "src": "RBX"}]}))
    assert hit.summary.constraints == []


def test_first_database_with_candidates_wins(arm_db, categories_db):
    q = parse_query({"suffix": "RET"})
    cands = run_query([categories_db, arm_db], q)
    assert {c.db.path for c in cands} == {categories_db.path}


def test_max_results(categories_db):
    hits = search(categories_db, parse_query({"suffix": "RET", "max_results": 3}))
    assert len(hits) == 3
    keys = [tuple(h.record.complexity) for h in hits]
    assert keys == sorted(keys)


def test_no_match_is_empty(categories_db):
    assert search(categories_db, parse_query({"regs": [{"reg": "RAX", "tag": "LoadReg", "value": 7}]})) == []
