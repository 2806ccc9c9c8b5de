import json

import numpy as np
import pytest
from pydantic import ValidationError

from aimc_bench.analog_sim import DRIFT_LABELS, HardwareConfig, HwtConfig
from aimc_bench.bench_store import (
    STAGES,
    AccuracyStat,
    BenchmarkRecord,
    BenchmarkTable,
    Provenance,
    TableMetadata,
    export_csv,
    load,
    merge,
    metric_names,
    new_table,
    query,
    resolve_scope,
    run_full_pipeline,
    save,
)
from aimc_bench.bench_store import pipeline as pipeline_module
from aimc_bench.config import get_run_config
from aimc_bench.errors import (
    MergeConflictError,
    MetadataMismatchError,
    PipelineStageError,
    RecordNotFoundError,
    RecordValidationError,
    SchemaVersionError,
)
from aimc_bench.models import ScopeSpec
from aimc_bench.nnet_engine import QatConfig, SynthSpec, TrainConfig, synth_dataset
from aimc_bench.search_space import SPACE_SIZE, MacroConfig, decode, encode, format_encoding, to_nb201_string
from aimc_bench.utils import read_csv

DIGEST = "a" * 64
TINY = MacroConfig(stem_channels=4, cells_per_stage=1, input_hw=8, num_classes=2)


def make_metadata(digest: str = DIGEST) -> TableMetadata:
    return TableMetadata(dataset={}, macro={}, train={}, qat={}, quant={}, hardware={}, hwt={},
                         config_digest=digest)


def make_record(index: int, rng: np.random.Generator, digest: str = DIGEST, **overrides) -> BenchmarkRecord:
    """A structurally valid record with random accuracies."""
    enc = encode(index)

    def stat():
        return AccuracyStat(mean=float(rng.uniform(0, 100)), std=float(rng.uniform(0, 3)))

    fields = dict(
        arch_index=index,
        arch=list(enc),
        nb201=to_nb201_string(enc),
        baseline_acc=float(rng.uniform(0, 100)),
        ptq_acc=float(rng.uniform(0, 100)),
        qat_acc=float(rng.uniform(0, 100)),
        noisy_acc=stat(),
        analog_acc=stat(),
        noisy_drift=[stat() for _ in DRIFT_LABELS],
        analog_drift=[stat() for _ in DRIFT_LABELS],
        param_count=int(rng.integers(1000, 100000)),
        provenance=Provenance(seed=0, stage_seeds={"init": 1}, config_digest=digest, notes=["note"]),
    )
    fields.update(overrides)
    return BenchmarkRecord(**fields)


def make_table(indices, seed: int = 0, digest: str = DIGEST) -> BenchmarkTable:
    rng = np.random.default_rng(seed)
    return BenchmarkTable(metadata=make_metadata(digest),
                          records={i: make_record(i, rng, digest) for i in indices})


def test_record_rejects_out_of_range_accuracy_and_short_drift():
    rng = np.random.default_rng(0)
    with pytest.raises(ValidationError):
        make_record(5, rng, baseline_acc=101.0)
    with pytest.raises(ValidationError):
        make_record(5, rng, noisy_drift=[AccuracyStat(mean=50, std=0)] * 3)
    with pytest.raises(ValidationError):
        make_record(5, rng, arch_index=6)


def test_metric_names_resolve():
    record = make_record(100, np.random.default_rng(1))
    for name in metric_names():
        assert isinstance(record.metric(name), float)
    assert record.metric("analog_drift_1d") == record.analog_drift[2].mean
    assert record.metric("avm") == record.analog_drift[0].mean - record.analog_drift[3].mean
    with pytest.raises(KeyError):
        record.metric("noisy_drift_2h")


def test_empty_table_is_one_line(tmp_path):
    path = tmp_path / "empty.jsonl"
    save(make_table([]), path)
    assert len(path.read_text(encoding="utf-8").splitlines()) == 1
    assert load(path) == make_table([])


def test_round_trip_sixty_records(tmp_path):
    indices = [int(i) for i in np.random.default_rng(3).choice(SPACE_SIZE, 60, replace=False)]
    table = make_table(indices)
    path = tmp_path / "t.jsonl"
    save(table, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 61
    assert [json.loads(line)["arch_index"] for line in lines[1:]] == sorted(indices)
    assert list(json.loads(lines[1]))[:3] == ["schema_version", "arch_index", "arch"]
    assert load(path) == table


def test_load_reports_field_and_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    save(make_table([1, 2, 3]), path)
    lines = path.read_text(encoding="utf-8").splitlines()
    record = json.loads(lines[2])
    record["baseline_acc"] = 101
    lines[2] = json.dumps(record)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(RecordValidationError) as info:
        load(path)
    assert info.value.line == 3
    assert info.value.field == "baseline_acc"


def test_load_reports_malformed_line(tmp_path):
    path = tmp_path / "broken.jsonl"
    save(make_table([1, 2]), path)
    with open(path, "a", encoding="utf-8") as f:
        f.write("{not json\n")
    with pytest.raises(RecordValidationError) as info:
        load(path)
    assert info.value.line == 4


def test_load_rejects_other_schema_version(tmp_path):
    path = tmp_path / "v2.jsonl"
    metadata = make_metadata().model_dump(mode="json")
    metadata["schema_version"] = 2
    path.write_text(json.dumps(metadata) + "\n", encoding="utf-8")
    with pytest.raises(SchemaVersionError) as info:
        load(path)
    assert info.value.found == 2


def test_merge_identity_halves_and_order():
    table = make_table(range(20))
    assert merge([table, make_table([])]) == table
    a = BenchmarkTable(metadata=table.metadata, records={i: table.records[i] for i in range(7)})
    b = BenchmarkTable(metadata=table.metadata, records={i: table.records[i] for i in range(7, 14)})
    c = BenchmarkTable(metadata=table.metadata, records={i: table.records[i] for i in range(14, 20)})
    assert merge([a, b, c]).records == table.records
    assert merge([c, a, b]).records == table.records
    assert merge([merge([a, b]), c]).records == merge([a, merge([b, c])]).records
    assert merge([a, a]).records == a.records


def test_merge_conflict_lists_index():
    a = make_table([1, 2, 3], seed=0)
    b = BenchmarkTable(metadata=a.metadata, records=dict(a.records))
    b.records[2] = make_record(2, np.random.default_rng(99))
    with pytest.raises(MergeConflictError) as info:
        merge([a, b])
    assert info.value.indices == [2]


def test_merge_rejects_other_config():
    with pytest.raises(MetadataMismatchError):
        merge([make_table([1]), make_table([2], digest="b" * 64)])


def test_query_by_every_key_form():
    table = make_table([0, 42, 15624])
    record = table.records[42]
    enc = encode(42)
    assert query(table, 42) is record
    assert query(table, enc) is record
    assert query(table, to_nb201_string(enc)) is record
    assert query(table, format_encoding(enc)) is record
    with pytest.raises(RecordNotFoundError) as info:
        query(table, 43)
    assert isinstance(info.value, KeyError)
    assert info.value.index == 43


def test_export_csv_subset(tmp_path):
    table = make_table([5, 1])
    path = tmp_path / "out.csv"
    export_csv(table, ["arch_index", "nb201", "baseline", "analog_std", "avm"], path)
    assert path.read_text(encoding="utf-8").startswith(f"# config_digest: {DIGEST}\n")
    rows = read_csv(path)
    assert rows[0] == ["arch_index", "nb201", "baseline", "analog_std", "avm"]
    assert [row[0] for row in rows[1:]] == ["1", "5"]
    assert float(rows[1][2]) == table.records[1].baseline_acc


def test_resolve_scope_kinds(tmp_path):
    sample = resolve_scope(ScopeSpec(kind="sample", count=125, seed=0))
    assert len(set(sample)) == 125
    assert sample == resolve_scope(ScopeSpec(kind="sample", count=125, seed=0))
    arch_file = tmp_path / "archs.txt"
    arch_file.write_text(f"# picked\n{to_nb201_string(encode(7))}\n(0,0,0,0,0,0)\n", encoding="utf-8")
    listed = resolve_scope(ScopeSpec(kind="list", arch_file=str(arch_file), indices=[7, 9]))
    assert listed == [encode(7), (0, 0, 0, 0, 0, 0), encode(9)]
    assert len(resolve_scope(ScopeSpec(kind="full"))) == SPACE_SIZE


def test_new_table_carries_run_config_digest():
    config = get_run_config("desk")
    table = new_table(config)
    assert table.metadata.config_digest == config.digest()
    assert table.metadata.scope["kind"] == "sample"


@pytest.fixture(scope="module")
def tiny_run():
    splits = synth_dataset(SynthSpec(num_classes=2, image_side=8, train_size=128, test_size=200,
                                     margin=0.9, max_shift=0))
    train = TrainConfig(epochs=4, batch_size=16, base_lr=0.05)
    qat = QatConfig(epochs=1, batch_size=16)
    hwt = HwtConfig(epochs=2)
    return splits, train, qat, hwt


def _run(enc, tiny_run, hw, seed=0):
    splits, train, qat, hwt = tiny_run
    return run_full_pipeline(enc, splits, TINY, train, hw, seed, qat_cfg=qat, hwt_cfg=hwt)


def test_pipeline_is_deterministic_and_complete(tiny_run):
    hw = HardwareConfig(eval_repeats=2)
    first = _run((2, 3, 4, 0, 2, 3), tiny_run, hw)
    second = _run((2, 3, 4, 0, 2, 3), tiny_run, hw)
    assert first == second
    assert first.arch_index == decode((2, 3, 4, 0, 2, 3))
    assert len(first.noisy_drift) == len(first.analog_drift) == 4
    assert set(first.provenance.stage_seeds) >= {"init", "train", "program_digital", "hwt"}
    assert any("not recalibrated" in note for note in first.provenance.notes)


def test_conv_cell_beats_zeroize_cell(tiny_run):
    hw = HardwareConfig(eval_repeats=2)
    conv = _run((2, 2, 2, 2, 2, 2), tiny_run, hw)
    zero = _run((1, 1, 1, 1, 1, 1), tiny_run, hw)
    assert conv.baseline_acc > zero.baseline_acc


def test_noiseless_pipeline_tracks_baseline_with_flat_drift(tiny_run):
    record = _run((2, 3, 4, 0, 2, 3), tiny_run, HardwareConfig.noiseless(eval_repeats=1))
    assert abs(record.noisy_acc.mean - record.baseline_acc) <= 2.0
    assert all(stat.mean == record.noisy_acc.mean for stat in record.noisy_drift)
    assert all(stat.mean == record.analog_acc.mean for stat in record.analog_drift)
    assert record.avm == 0.0


def test_stage_failure_names_the_stage(tiny_run, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("crossbar offline")

    monkeypatch.setattr(pipeline_module, "program_network", broken)
    with pytest.raises(PipelineStageError) as info:
        _run((2, 3, 4, 0, 2, 3), tiny_run, HardwareConfig(eval_repeats=1))
    assert info.value.stage == "program_digital"
    assert info.value.stage in STAGES


def test_weight_save_failure_names_its_stage(tiny_run, tmp_path, monkeypatch):
    def unwritable(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr(pipeline_module, "save_weights", unwritable)
    splits, train, qat, hwt = tiny_run
    with pytest.raises(PipelineStageError) as info:
        run_full_pipeline((2, 3, 4, 0, 2, 3), splits, TINY, train, HardwareConfig(eval_repeats=1), 0,
                          qat_cfg=qat, hwt_cfg=hwt, weights_dir=str(tmp_path / "weights"))
    assert info.value.stage == "save_weights"
    assert isinstance(info.value.__cause__, OSError)
