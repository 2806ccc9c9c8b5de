import json
import logging

import numpy as np
import pytest

from aimc_bench import BenchmarkBuilder, build_benchmark, init_worker
from aimc_bench.__main__ import main
from aimc_bench.analog_sim import DRIFT_LABELS
from aimc_bench.analysis import kendall_tau_b
from aimc_bench.bench_store import load, save
from aimc_bench.bench_store.tests import make_table
from aimc_bench.config import CONFIG_ENV, deep_merge, get_run_config, load_run_config, run_presets
from aimc_bench.errors import ConfigError
from aimc_bench.nas_search import PipelineObjective, SearchBudget, random_search
from aimc_bench.utils import read_csv

TINY_OVERRIDES = {
    "dataset": {"synthetic": {"num_classes": 2, "image_side": 8, "train_size": 64, "test_size": 64,
                              "margin": 0.9, "max_shift": 0}},
    "macro": {"stem_channels": 4, "cells_per_stage": 1, "input_hw": 8, "num_classes": 2},
    "train": {"epochs": 1, "batch_size": 16, "base_lr": 0.05},
    "qat": {"epochs": 1, "batch_size": 16},
    "hwt": {"epochs": 1},
    "hardware": {"eval_repeats": 2},
    "scope": {"kind": "list", "indices": [7, 1000]},
}


def test_presets_validate():
    for name in run_presets:
        config = get_run_config(name)
        assert config.preset == name
        assert len(config.digest()) == 64
    assert get_run_config("noiseless").hardware.drift_enabled is False
    assert get_run_config("desk").digest() != get_run_config("noiseless").digest()


def test_unknown_preset_and_bad_override():
    with pytest.raises(ConfigError):
        get_run_config("nope")
    with pytest.raises(ConfigError, match="input_hw"):
        get_run_config("desk", {"macro": {"input_hw": 32}})


def test_deep_merge_keeps_siblings():
    merged = deep_merge({"a": {"b": 1, "c": 2}, "d": 3}, {"a": {"b": 5}})
    assert merged == {"a": {"b": 5, "c": 2}, "d": 3}


def test_dataset_source_override_replaces_synthetic():
    config = get_run_config("desk", {"dataset": {"cifar10_dir": "/data/cifar"},
                                     "macro": {"input_hw": 32}})
    assert config.dataset.cifar10_dir == "/data/cifar"
    assert config.dataset.synthetic is None


def test_load_run_config_from_file_and_env(tmp_path, monkeypatch):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"preset": "noiseless", "seed": 3}), encoding="utf-8")
    config = load_run_config(str(path))
    assert config.preset == "noiseless" and config.seed == 3
    monkeypatch.setenv(CONFIG_ENV, str(path))
    assert load_run_config().digest() == config.digest()
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_run_config(str(bad))


def test_cli_space_commands(capsys):
    assert main(["encode", "0"]) == 0
    assert capsys.readouterr().out.strip() == "(0,0,0,0,0,0)"
    assert main(["enumerate", "--count"]) == 0
    assert capsys.readouterr().out.strip() == "15625"
    assert main(["decode", "(4,4,4,4,4,4)"]) == 0
    assert capsys.readouterr().out.strip() == "15624"
    assert main(["paths", "15624", "--json"]) == 0
    paths = json.loads(capsys.readouterr().out)["paths"]
    assert sorted(len(p) for p in paths) == [1, 2, 2, 3]
    assert main(["enumerate", "--start", "5", "--limit", "3"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 3


def test_cli_enumerate_sample_is_seeded(capsys):
    outputs = []
    for _ in range(2):
        assert main(["enumerate", "--sample", "5"]) == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
    assert len(outputs[0].strip().splitlines()) == 5
    assert main(["enumerate", "--sample", "5", "--seed", "3"]) == 0
    assert capsys.readouterr().out != outputs[0]


def test_cli_build_bench_resolves_paper_preset(tmp_path, monkeypatch):
    seen = {}

    def fake_build(config, workers=1, keep_going=False):
        seen["config"] = config
        return make_table([])

    monkeypatch.setattr("aimc_bench.__main__.build_benchmark", fake_build)
    assert main(["build-bench", "--preset", "paper", "--output", str(tmp_path / "empty.jsonl")]) == 0
    config = seen["config"]
    assert config.preset == "paper" and config.scope.kind == "full"
    assert config.dataset.cifar10_dir is not None and config.macro.input_hw == 32
    assert main(["build-bench", "--preset", "nope"]) == 1


def test_cli_argument_errors(capsys):
    assert main(["encode", "15625"]) == 2
    assert main(["decode", "(9,9)"]) == 2
    assert main(["decode", "nonsense"]) == 2
    with pytest.raises(SystemExit) as e:
        main(["search", "t.jsonl", "--method", "gradient"])
    assert e.value.code == 2


@pytest.fixture
def table_file(tmp_path):
    path = tmp_path / "bench.jsonl"
    save(make_table(range(40)), path)
    return path


def test_cli_query(table_file, capsys):
    assert main(["query", str(table_file), "3", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["arch_index"] == 3
    assert main(["query", str(table_file), "12000"]) == 1
    assert main(["query", str(table_file.with_name("missing.jsonl")), "3"]) == 1


def test_cli_analyze_writes_five_by_five_matrix(table_file, tmp_path):
    out = tmp_path / "analysis"
    assert main(["analyze", str(table_file), "--out", str(out)]) == 0
    rows = read_csv(out / "kendall.csv")
    assert len(rows) == 6 and all(len(row) == 6 for row in rows)
    assert rows[0][1:] == ["baseline", "noisy", "analog", "ptq", "qat"]
    assert (out / "summaries.csv").exists()
    assert (out / "paths.csv").exists()
    assert main(["analyze", str(table_file), "--out", str(out), "--kendall", "baseline,bogus"]) == 2


def test_cli_search_reruns_are_identical(table_file, tmp_path):
    outputs = []
    for run in ("a", "b"):
        out, traj = tmp_path / f"{run}.json", tmp_path / f"{run}.jsonl"
        assert main(["search", str(table_file), "--method", "random", "--budget", "15", "--seed", "4",
                     "--out", str(out), "--trajectory", str(traj)]) == 0
        outputs.append((out.read_bytes(), traj.read_bytes()))
    assert outputs[0] == outputs[1]
    payload = json.loads(outputs[0][0])
    assert payload["result"]["queries_used"] == 15
    assert len(outputs[0][1].splitlines()) == 16


def test_cli_exhaustive_on_incomplete_table(tmp_path):
    table = make_table(range(10))
    table.metadata = table.metadata.model_copy(update={"scope": {"kind": "list", "indices": list(range(12))}})
    path = tmp_path / "partial.jsonl"
    save(table, path)
    assert main(["search", str(path), "--method", "exhaustive"]) == 1


def test_cli_aimc_search_infeasible(table_file):
    assert main(["search", str(table_file), "--method", "analognas", "--budget", "30",
                 "--avm-max", "-1000"]) == 1


def test_cli_export_and_compare(table_file, tmp_path):
    out = tmp_path / "export.csv"
    assert main(["export", str(table_file), "--fields", "arch_index,nb201,avm", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["arch_index", "nb201", "avm"] and len(rows) == 41
    assert main(["export", str(table_file), "--fields", "arch_index,bogus", "--out", str(out)]) == 2
    comparison = tmp_path / "comparison.csv"
    assert main(["compare", str(table_file), "--methods", "exhaustive,random,evolution", "--budget", "25",
                 "--seeds", "0,1", "--out", str(comparison)]) == 0
    rows = read_csv(comparison)
    assert [row[0] for row in rows[1:]] == ["exhaustive", "random", "evolution"]
    assert rows[1][1] == "1" and rows[2][1] == "2"


def test_build_bench_is_byte_identical(tmp_path):
    config_path = tmp_path / "tiny.json"
    config_path.write_text(json.dumps({"preset": "desk", **TINY_OVERRIDES}), encoding="utf-8")
    first, second = tmp_path / "first.jsonl", tmp_path / "second.jsonl"
    assert main(["build-bench", "--config", str(config_path), "--output", str(first)]) == 0
    assert main(["build-bench", "--config", str(config_path), "--output", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    table = load(first)
    assert sorted(table.records) == [7, 1000]
    assert table.metadata.config_digest == load_run_config(str(config_path)).digest()


def test_parallel_build_matches_serial(tmp_path):
    config = get_run_config("desk", TINY_OVERRIDES)
    serial, parallel = tmp_path / "serial.jsonl", tmp_path / "parallel.jsonl"
    save(build_benchmark(config, workers=1), serial)
    builder = BenchmarkBuilder(config, workers=2)
    assert [len(share) for share in builder.partitions([(0,) * 6, (1,) * 6, (2,) * 6])] == [2, 1]
    save(builder.generate(), parallel)
    assert serial.read_bytes() == parallel.read_bytes()
    assert builder.skipped == []


def test_init_worker_configures_root_logging(monkeypatch):
    root = logging.getLogger()
    monkeypatch.setattr(root, "handlers", [])
    level = root.level
    try:
        init_worker(logging.DEBUG)
        assert root.level == logging.DEBUG
        assert [h.formatter._fmt for h in root.handlers] == ["%(message)s"]
    finally:
        root.setLevel(level)


def test_pipeline_objective_trains_each_queried_cell_once():
    objective = PipelineObjective(get_run_config("desk", TINY_OVERRIDES), domain=[7, 1000])
    result = random_search(objective, SearchBudget(max_queries=2, seed=0))
    assert result.queries_used == 2 and sorted(objective.records) == [7, 1000]
    best = objective.records[result.best_index]
    assert result.best_value == best.metric("analog_drift_1d")
    assert objective.evaluate(best.arch).avm == best.metric("avm")
    assert objective.param_count(best.arch) == best.param_count


@pytest.mark.slow
def test_micro_benchmark_directions():
    table = build_benchmark(get_run_config("desk"))
    assert len(table) == 125
    records = table.sorted_records()
    degraded = sum(r.noisy_acc.mean <= r.baseline_acc for r in records)
    assert degraded >= 0.9 * len(records)
    assert np.mean(table.values("analog")) > np.mean(table.values("noisy"))
    assert sum(r.analog_acc.mean > r.noisy_acc.mean for r in records) >= 0.7 * len(records)
    for branch in ("noisy", "analog"):
        means = [np.mean(table.values(f"{branch}_drift_{label}")) for label in DRIFT_LABELS]
        rises = [b - a for a, b in zip(means, means[1:]) if b > a]
        assert len(rises) <= 1 and all(rise <= 0.5 for rise in rises)
    baseline = table.values("baseline")
    assert kendall_tau_b(baseline, table.values("ptq")) > kendall_tau_b(baseline, table.values("noisy"))
