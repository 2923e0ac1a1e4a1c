import struct
import threading
import time

import pytest
from filelock import FileLock, Timeout

from cfigadgets.analysis import analyze_database, discover_to_database
from cfigadgets.classify import SemanticTag
from cfigadgets.errors import DuplicateId, StoreError
from cfigadgets.store import GadgetDB, GadgetRecord, match_content


def record(rid, **kw):
    base = dict(id=rid, module="m", arch="x86_64", function="f", prefix="EP", suffix="RET",
                content="ARB", start_addr=0x1000 + rid, end_addr=0x1001 + rid,
                path=((0x1000 + rid, 0, 1),), instr_count=2, opcode_hash=f"{rid:040x}")
    base.update(kw)
    return GadgetRecord(**base)


@pytest.fixture(scope="module")
def categories_db(tmp_path_factory, categories_program):
    path = tmp_path_factory.mktemp("db") / "t1.gdb"
    db = discover_to_database([categories_program], path)
    analyze_database(db, budget=512)
    db.flush()
    return GadgetDB.open(path)


class TestRecords:
    def test_round_trip(self, tmp_path):
        db = GadgetDB(tmp_path / "a.gdb")
        rec = record(0, reg_tags={"RAX": SemanticTag("NOP")}, sat_status="SAT")
        db.put(rec)
        db.flush()
        back = GadgetDB.open(tmp_path / "a.gdb").get(0)
        assert back == rec

    def test_duplicate_id(self, tmp_path):
        db = GadgetDB(tmp_path / "a.gdb")
        db.put(record(3))
        with pytest.raises(DuplicateId):
            db.put(record(3))
        assert db.next_id() == 4

    def test_malformed_expression_rejected(self, tmp_path):
        obj = record(0).to_json()
        obj["constraints"] = ["eq(RAX,"]
        with pytest.raises(StoreError):
            GadgetDB(tmp_path / "a.gdb").put(obj)

    @pytest.mark.parametrize("field,value", [("prefix", "XX"), ("content", "F(x"), ("sat_status", "MAYBE"),
                                             ("instr_count", "2"), ("path", [])])
    def test_invalid_fields(self, field, value):
        obj = record(0).to_json()
        obj[field] = value
        with pytest.raises(StoreError):
            GadgetRecord.from_json(obj)

    def test_many_records(self, tmp_path):
        db = GadgetDB(tmp_path / "big.gdb")
        for rid in range(100_000):
            db.put(record(rid))
        db.flush()
        again = GadgetDB.open(tmp_path / "big.gdb")
        assert len(again) == 100_000
        assert sum(1 for _ in again) == 100_000


class TestFileIntegrity:
    def write(self, tmp_path):
        db = GadgetDB(tmp_path / "a.gdb")
        for rid in range(5):
            db.put(record(rid))
        db.flush()
        return tmp_path / "a.gdb"

    def test_flipped_byte(self, tmp_path):
        path = self.write(tmp_path)
        data = bytearray(path.read_bytes())
        data[40] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(StoreError, match="checksum"):
            GadgetDB.open(path)

    def test_truncated(self, tmp_path):
        path = self.write(tmp_path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(StoreError):
            GadgetDB.open(path)

    def test_not_a_database(self, tmp_path):
        path = tmp_path / "x.gdb"
        path.write_bytes(b"hello")
        with pytest.raises(StoreError):
            GadgetDB.open(path)

    def test_missing(self, tmp_path):
        with pytest.raises(StoreError):
            GadgetDB.open(tmp_path / "none.gdb")

    def test_no_temp_files_left(self, tmp_path):
        self.write(tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir() if not p.name.endswith(".lock")) == ["a.gdb"]

    def test_byte_identical(self, tmp_path):
        a = GadgetDB(tmp_path / "a.gdb")
        b = GadgetDB(tmp_path / "b.gdb")
        for rid in (2, 0, 1):
            a.put(record(rid))
        for rid in (0, 1, 2):
            b.put(record(rid))
        assert a.encode() == b.encode()

    def test_layout_header(self, tmp_path):
        data = self.write(tmp_path).read_bytes()
        assert data[:4] == b"GDB1" and data[-4:] == b"GDBE"
        assert struct.unpack_from("<H", data, 4) == (1,)

    def test_writer_waits_for_lock(self, tmp_path):
        path = self.write(tmp_path)
        lock = FileLock(str(path) + ".lock")
        lock.acquire()
        done = []
        t = threading.Thread(target=lambda: done.append(GadgetDB.open(path)))
        t.start()
        time.sleep(0.3)
        assert not done
        lock.release()
        t.join(5)
        assert len(done[0]) == 5

    def test_lock_is_exclusive(self, tmp_path):
        path = self.write(tmp_path)
        with FileLock(str(path) + ".lock"):
            with pytest.raises(Timeout):
                FileLock(str(path) + ".lock", timeout=0.1).acquire()


class TestFilter:
    def test_cs_ret(self, categories_db):
        assert len(categories_db.filter(prefix="CS", suffix="RET")) == 4

    def test_fixed_content(self, categories_db):
        hits = categories_db.filter(content="F(VirtualProtect)")
        assert hits and all(categories_db.get(r).content == "F(VirtualProtect)" for r in hits)
        assert hits == categories_db.filter(content="F")
        assert categories_db.filter(content="F(mprotect)") == []

    def test_register_tag(self, categories_db):
        hits = categories_db.filter(reg_tags={"RAX": "LoadMem"})
        assert hits
        assert all(categories_db.get(r).reg_tags["RAX"].kind == "LoadMem" for r in hits)
        wide = categories_db.filter(reg_tags={"RAX": lambda t: t.kind == "LoadMem" and t.width == 64})
        assert wide == hits

    def test_results_are_ranked(self, categories_db):
        hits = categories_db.filter()
        keys = [tuple(categories_db.get(r).complexity) for r in hits]
        assert keys == sorted(keys)

    def test_unsat_excluded_by_default(self, tmp_path):
        db = GadgetDB(tmp_path / "a.gdb")
        db.put(record(0, sat_status="UNSAT"))
        db.put(record(1, sat_status="SAT"))
        db.put(record(2, sat_status="UNKNOWN"))
        db.put(record(3))
        assert db.filter() == [1, 3]
        assert db.filter(include_unverified=True) == [0, 1, 2, 3]

    def test_unknown_kind(self, categories_db):
        with pytest.raises(ValueError):
            categories_db.filter(reg_tags={"RAX": "Bogus"})


def test_match_content():
    assert match_content("F(mprotect)", "F")
    assert not match_content("ARB", "F")
    assert match_content("LOOP", "LOOP")


def test_embedded_program(categories_db, categories_program):
    assert categories_db.modules == [categories_program.module_name]
    assert categories_db.program(categories_program.module_name).arch == categories_program.arch
