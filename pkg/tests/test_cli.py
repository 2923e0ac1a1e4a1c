import json

import pytest

from cfigadgets.cli import main
from cfigadgets.store import GadgetDB

from corpora import layout


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return dict(line.split("\t") for line in text.strip().splitlines())


def write_doc(tmp_path, name, doc):
    path = tmp_path / f"{name}.gcfg"
    path.write_text(json.dumps(doc))
    return path


class TestExitCodes:
    def test_bad_usage(self, capsys):
        assert run(capsys, "frobnicate")[0] == 2
        assert run(capsys, "discover")[0] == 2

    def test_missing_input(self, tmp_path, capsys):
        code, _, err = run(capsys, "discover", tmp_path / "none.gcfg", "--db", tmp_path / "x.gdb")
        assert code == 2 and err

    def test_missing_db(self, tmp_path, capsys):
        assert run(capsys, "stats", "--db", tmp_path / "none.gdb")[0] == 2

    def test_bad_max_len(self, tmp_path, capsys, fixtures_dir):
        code, *_ = run(capsys, "discover", fixtures_dir / "categories.gcfg", "--db", tmp_path / "x.gdb", "--max-len", 0)
        assert code == 2

    def test_no_hit(self, tmp_path, capsys, fixtures_dir):
        db = tmp_path / "t.gdb"
        run(capsys, "discover", fixtures_dir / "categories.gcfg", "--db", db)
        run(capsys, "analyze", "--db", db, "--budget", 256)
        q = tmp_path / "q.gq"
        q.write_text(json.dumps({"regs": [{"reg": "RAX", "tag": "LoadReg", "value": 7}]}))
        code, out, _ = run(capsys, "search", "--db", db, "--query", q)
        assert code == 1 and "no satisfiable gadget" in out

    def test_bad_query(self, tmp_path, capsys, fixtures_dir):
        db = tmp_path / "t.gdb"
        run(capsys, "discover", fixtures_dir / "categories.gcfg", "--db", db)
        q = tmp_path / "q.gq"
        q.write_text(json.dumps({"regs": [{"reg": "XYZ", "tag": "NOP"}]}))
        assert run(capsys, "search", "--db", db, "--query", q)[0] == 2


def test_empty_program(tmp_path, capsys):
    doc = {"arch": "x86_64", "module": "empty", "fixed_functions": [], "functions": []}
    db = tmp_path / "e.gdb"
    code, out, _ = run(capsys, "discover", write_doc(tmp_path, "empty", doc), "--db", db)
    assert code == 0 and rows(out)["total"] == "0"
    assert run(capsys, "analyze", "--db", db)[0] == 0
    code, out, _ = run(capsys, "stats", "--db", db)
    stats = rows(out)
    assert code == 0
    assert all(stats[k] == "0" for k in ("EP-IC", "EP-IJ", "EP-RET", "CS-IC", "CS-IJ", "CS-RET", "Loops"))


def test_categories_pipeline(tmp_path, capsys, fixtures_dir):
    db = tmp_path / "t.gdb"
    code, out, _ = run(capsys, "discover", fixtures_dir / "categories.gcfg", "--db", db)
    counts = rows(out)
    assert code == 0 and all(int(counts[k]) > 0 for k in ("EP-IC", "EP-IJ", "EP-RET", "CS-IC", "CS-IJ", "CS-RET"))
    code, out, _ = run(capsys, "stats", "--db", db)
    stats = rows(out)
    assert int(stats["Loops"]) == 1 and stats["Runtime"].endswith("s")
    assert stats["CS-IC"] == counts["CS-IC"]


def test_analyze_is_reproducible(tmp_path, capsys, fixtures_dir):
    outputs = []
    for name in ("a", "b"):
        db = tmp_path / f"{name}.gdb"
        run(capsys, "discover", fixtures_dir / "categories.gcfg", "--db", db)
        assert run(capsys, "analyze", "--db", db, "--budget", 256)[0] == 0
        outputs.append(db.read_bytes())
    assert outputs[0] == outputs[1]


def test_impossible_branch_marked_unsat(tmp_path, capsys):
    doc = layout("x86_64", "imp", [("f", [
        ("A", ["cmp rax, rax", "jne B"], [("B", "taken"), ("C", "fallthrough")]),
        ("C", ["ret"], []),
        ("B", ["mov rbx, rcx", "ret"], []),
    ])])
    db = tmp_path / "imp.gdb"
    run(capsys, "discover", write_doc(tmp_path, "imp", doc), "--db", db)
    code, out, _ = run(capsys, "analyze", "--db", db)
    assert code == 0 and int(rows(out)["UNSAT"]) == 1
    rec = next(r for r in GadgetDB.open(db) if r.sat_status == "UNSAT")
    assert {s[0] for s in rec.path} >= {0x401000}


def test_arm_search_prints_witness(tmp_path, capsys, fixtures_dir):
    db = tmp_path / "arm.gdb"
    run(capsys, "discover", fixtures_dir / "arm_dispatch.gcfg", "--db", db)
    run(capsys, "analyze", "--db", db)
    code, out, _ = run(capsys, "search", "--db", db, "--query", fixtures_dir / "arm_dispatch.gq")
    assert code == 0
    assert "0x71704" in out and "witness" in out and "0x122f58" in out
