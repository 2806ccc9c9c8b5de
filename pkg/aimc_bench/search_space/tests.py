import numpy as np
import pytest

from aimc_bench.errors import ArchIndexRangeError, CellParseError
from aimc_bench.search_space import (
    EDGES,
    SPACE_SIZE,
    MacroConfig,
    OpKind,
    build_cell_graph,
    decode,
    encode,
    enumerate_space,
    extract_paths,
    from_nb201_string,
    hamming,
    mutate,
    parse_cell,
    read_arch_list,
    sample_space,
    to_nb201_string,
    write_arch_list,
)


def test_enumerate_space_is_exhaustive_and_ordered():
    encodings = list(enumerate_space())
    assert len(encodings) == 15625
    assert len(set(encodings)) == 15625
    assert encodings[0] == (0, 0, 0, 0, 0, 0)
    assert encodings[-1] == (4, 4, 4, 4, 4, 4)
    assert [decode(enc) for enc in encodings] == list(range(SPACE_SIZE))


def test_encode_examples():
    assert encode(0) == (0, 0, 0, 0, 0, 0)
    assert encode(15624) == (4, 4, 4, 4, 4, 4)
    assert encode(7) == (2, 1, 0, 0, 0, 0)


def test_encode_out_of_range():
    with pytest.raises(ArchIndexRangeError):
        encode(15625)
    with pytest.raises(ArchIndexRangeError):
        encode(-1)
    with pytest.raises(ArchIndexRangeError):
        decode((0, 0, 0, 0, 0, 5))


def test_nb201_string_all_skip():
    expected = "|skip_connect~0|+|skip_connect~0|skip_connect~1|+|skip_connect~0|skip_connect~1|skip_connect~2|"
    assert to_nb201_string((0, 0, 0, 0, 0, 0)) == expected
    assert from_nb201_string(expected) == (0, 0, 0, 0, 0, 0)


def test_nb201_string_round_trip_full_space():
    for enc in enumerate_space():
        assert from_nb201_string(to_nb201_string(enc)) == enc


def test_nb201_string_edge_order():
    # one op per edge, distinguishable by position
    enc = (2, 3, 4, 0, 1, 2)
    text = to_nb201_string(enc)
    assert text == ("|nor_conv_3x3~0|+|nor_conv_1x1~0|avg_pool_3x3~1|"
                    "+|skip_connect~0|none~1|nor_conv_3x3~2|")


def test_nb201_string_typo_names_segment():
    bad = "|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_cnv_1x1~1|+|none~0|none~1|none~2|"
    with pytest.raises(CellParseError) as excinfo:
        from_nb201_string(bad)
    assert excinfo.value.segment == "nor_cnv_1x1~1"


def test_nb201_string_wrong_group_count():
    with pytest.raises(CellParseError):
        from_nb201_string("|none~0|+|none~0|none~1|")


def test_parse_cell_accepts_all_forms():
    assert parse_cell("7") == (2, 1, 0, 0, 0, 0)
    assert parse_cell("(2,3,0,2,4,4)") == (2, 3, 0, 2, 4, 4)
    assert parse_cell(to_nb201_string((1, 2, 3, 4, 0, 1))) == (1, 2, 3, 4, 0, 1)
    with pytest.raises(CellParseError):
        parse_cell("seven")


def test_build_cell_graph():
    graph = build_cell_graph((2, 2, 2, 2, 2, 2))
    assert all(edge.op == OpKind.CONV3X3 for edge in graph.edges)
    assert graph.in_degree(3) == 3
    assert graph.out_degree(0) == 3
    assert [(e.source, e.target) for e in graph.edges] == list(EDGES)
    assert all(e.source < e.target for e in graph.edges)

    zero = build_cell_graph((1, 1, 1, 1, 1, 1))
    assert all(edge.op == OpKind.ZEROIZE for edge in zero.edges)
    assert extract_paths((1, 1, 1, 1, 1, 1)) == []


def test_extract_paths_examples():
    assert extract_paths((2, 2, 2, 2, 2, 2)) == [(2,), (2, 2), (2, 2), (2, 2, 2)]
    paths = extract_paths((2, 2, 2, 1, 2, 2))
    assert len(paths) == 3
    assert all(len(p) > 1 for p in paths)


def _dfs_paths(enc):
    """Independent oracle: depth-first search over the labeled DAG."""
    adjacency = {}
    for (source, target), op in zip(EDGES, enc):
        if op != OpKind.ZEROIZE:
            adjacency.setdefault(source, []).append((target, op))
    found = []

    def walk(node, ops):
        if node == 3:
            found.append(tuple(ops))
            return
        for target, op in adjacency.get(node, []):
            walk(target, ops + [op])

    walk(0, [])
    return sorted(found)


def test_extract_paths_matches_dfs_oracle_on_full_space():
    for enc in enumerate_space():
        paths = extract_paths(enc)
        assert sorted(paths) == _dfs_paths(enc)
        assert len(paths) <= 4


def test_four_paths_iff_no_zeroize():
    for enc in enumerate_space():
        assert (len(extract_paths(enc)) == 4) == (OpKind.ZEROIZE not in enc)


def test_mutate_is_hamming_one():
    rng = np.random.default_rng(0)
    enc = (0, 1, 2, 3, 4, 0)
    for _ in range(200):
        child = mutate(enc, rng)
        assert hamming(enc, child) == 1
    child = mutate(enc, rng, edge=2)
    assert child[2] != enc[2]
    assert child[:2] == enc[:2] and child[3:] == enc[3:]


def test_sample_space_distinct_and_deterministic():
    a = sample_space(125, seed=3)
    assert a == sample_space(125, seed=3)
    assert len(set(a)) == 125
    assert a == sorted(a)


def test_arch_list_round_trip(tmp_path):
    path = tmp_path / "archs.txt"
    encodings = [encode(i) for i in (0, 7, 15624)]
    write_arch_list(path, encodings)
    assert read_arch_list(path) == encodings
    mixed = tmp_path / "mixed.txt"
    mixed.write_text("# comment\n7\n\n" + to_nb201_string((4, 4, 4, 4, 4, 4)) + "\n", encoding="utf-8")
    assert read_arch_list(mixed) == [encode(7), (4, 4, 4, 4, 4, 4)]


def test_macro_config_validation():
    macro = MacroConfig(stem_channels=16, cells_per_stage=5, input_hw=32)
    assert macro.stage_channels() == [16, 32, 64]
    with pytest.raises(ValueError):
        MacroConfig(stem_channels=0)
    with pytest.raises(ValueError):
        MacroConfig(num_stages=4)
