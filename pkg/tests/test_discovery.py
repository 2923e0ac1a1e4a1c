import pytest

from cfigadgets.discovery import (
    count_categories,
    dedup,
    extract_gadgets,
    load_fixed_functions,
    scan_points_of_interest,
)

from corpora import CATEGORY_COUNTS, OracleGadget, layout, load_doc, oracle_gadgets, random_program


def as_oracle(gadgets):
    return [OracleGadget(g.prefix, g.content, g.suffix, g.path, g.instr_count) for g in gadgets]


@pytest.mark.parametrize("arch", ["x86_64", "arm"])
@pytest.mark.parametrize("seed", range(10))
def test_matches_exhaustive_enumeration(arch, seed):
    prog = random_program(seed, arch)
    found = as_oracle(extract_gadgets(prog))
    assert len(found) == len(set(found))
    assert set(found) == oracle_gadgets(prog)


def test_categories_counts(categories_program):
    found = extract_gadgets(categories_program)
    assert count_categories(found) == CATEGORY_COUNTS
    assert len(CATEGORY_COUNTS) == 13


def test_entry_after_call_gets_both_prefixes():
    # The entry block is also the return site of a call in a later block.
    doc = layout("x86_64", "m", [("f", [
        ("A", ["mov rax, rbx", "jmp rax"], []),
        ("C", ["call helper"], [("A", "unconditional")]),
    ])])
    prog = load_doc(doc)
    starts = {(g.prefix, g.start_addr) for g in extract_gadgets(prog)}
    entry = prog.functions[0].entry
    assert ("EP", entry) in starts and ("CS", entry) in starts


def test_loop_content(categories_program):
    loops = [g for g in extract_gadgets(categories_program) if g.is_loop]
    assert loops and all(g.prefix == "CS" and g.suffix == "IC" for g in loops)


@pytest.mark.parametrize("max_len", [2, 3, 5, 8])
def test_max_len_bounds(categories_program, max_len):
    found = extract_gadgets(categories_program, max_len=max_len)
    assert found and all(g.instr_count <= max_len for g in found)
    assert set(as_oracle(found)) == oracle_gadgets(categories_program, max_len=max_len)


def test_max_len_must_be_positive(categories_program):
    with pytest.raises(ValueError):
        extract_gadgets(categories_program, max_len=0)


def test_worker_count_does_not_change_output():
    prog = random_program(7, "x86_64", n_functions=3)
    assert extract_gadgets(prog, workers=2) == extract_gadgets(prog, workers=1)


def test_dedup_keeps_lowest_address():
    doc = layout("x86_64", "m", [
        ("f", [("A", ["mov rax, rbx", "ret"], [])]),
        ("g", [("A", ["mov rax, rbx", "ret"], [])]),
    ])
    found = extract_gadgets(load_doc(doc))
    kept = dedup(found)
    assert len(kept) < len(found)
    by_hash = {}
    for g in found:
        by_hash.setdefault(g.opcode_hash, []).append(g.start_addr)
    assert sorted(g.start_addr for g in kept) == sorted(min(v) for v in by_hash.values())
    assert dedup(found, keep_duplicates=True) == found


def test_fixed_function_file(tmp_path):
    path = tmp_path / "fixed.txt"
    path.write_text("# header\nVirtualProtect\n\n  mprotect  # trailing\n")
    assert load_fixed_functions(path) == {"VirtualProtect", "mprotect"}


def test_scan_finds_fixed_calls(categories_program):
    poi = scan_points_of_interest(categories_program)
    assert {sym for *_, sym in poi.fixed_calls} == {"VirtualProtect"}
    assert poi.rets and poi.icalls and poi.ijumps
    assert len(poi.calls) >= len(poi.fixed_calls)
