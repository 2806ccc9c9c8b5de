import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import kendalltau

from aimc_bench.analysis import (
    UNREACHABLE,
    DriftThresholds,
    classify_drift_robustness,
    classify_noise_robustness,
    drift_drop_summary,
    feature_correlations,
    frequent_paths,
    graf_features,
    hwt_categories,
    kendall_tau_b,
    kendall_tau_b_reference,
    op_statistics,
    rank_correlation_matrix,
    rank_features,
    summarize,
    write_feature_ranking,
    write_summaries,
)
from aimc_bench.bench_store import AccuracyStat, BenchmarkTable
from aimc_bench.bench_store.tests import make_metadata, make_record
from aimc_bench.errors import EmptyDatasetError
from aimc_bench.search_space import encode, enumerate_space, extract_paths, op_counts
from aimc_bench.utils import read_csv


def _stat(mean):
    return AccuracyStat(mean=mean, std=0.0)


def _record(index, baseline=95.0, noisy=90.0, analog=92.0, noisy_drift=None, analog_drift=None):
    rng = np.random.default_rng(index)
    return make_record(index, rng, baseline_acc=baseline, noisy_acc=_stat(noisy), analog_acc=_stat(analog),
                       noisy_drift=[_stat(v) for v in (noisy_drift or [noisy] * 4)],
                       analog_drift=[_stat(v) for v in (analog_drift or [analog] * 4)])


def _table(records):
    return BenchmarkTable(metadata=make_metadata(), records={r.arch_index: r for r in records})


def test_kendall_trivial_cases():
    assert kendall_tau_b([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert kendall_tau_b([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert kendall_tau_b([1, 1, 1], [1, 2, 3]) is None
    with pytest.raises(ValueError):
        kendall_tau_b([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        kendall_tau_b([1], [1])


def test_kendall_with_ties_matches_pair_count():
    # C=3, D=1, x ties 1, y ties 1 -> (3-1)/sqrt(5*5)
    assert kendall_tau_b_reference([1, 1, 2, 3], [1, 2, 1, 3]) == pytest.approx(0.4, abs=1e-15)
    assert kendall_tau_b([1, 1, 2, 3], [1, 2, 1, 3]) == pytest.approx(0.4, abs=1e-15)


def test_kendall_fast_matches_reference_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 65))
        levels = int(rng.integers(1, 8))
        x = rng.integers(0, levels, size=n) if rng.random() < 0.5 else rng.normal(size=n)
        y = rng.integers(0, int(rng.integers(1, 8)), size=n)
        fast, slow = kendall_tau_b(x, y), kendall_tau_b_reference(x, y)
        if slow is None:
            assert fast is None
        else:
            assert abs(fast - slow) <= 1e-12


def test_kendall_agrees_with_scipy():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 5, size=200)
    y = x + rng.integers(0, 3, size=200)
    assert kendall_tau_b(x, y) == pytest.approx(kendalltau(x, y)[0], abs=1e-12)


def test_summarize_rules():
    single = summarize([10])
    assert (single.mean, single.std, single.min, single.q25, single.median, single.max) == (10, 0, 10, 10, 10, 10)
    four = summarize([1, 2, 3, 4])
    assert (four.q25, four.median, four.q75) == (1.75, 2.5, 3.25)
    assert four.std == pytest.approx(np.sqrt(1.25))
    constant = summarize([7.5] * 9)
    assert constant.std == 0 and constant.min == constant.max
    with pytest.raises(EmptyDatasetError):
        summarize([])


def test_noise_robustness_quantile_rule():
    records = [_record(i, baseline=96.0, noisy=96.0 - d) for i, d in zip((3, 1, 4, 2), (16, 4, 12, 8))]
    records.append(_record(9, baseline=50.0, noisy=40.0))
    result = classify_noise_robustness(_table(records))
    assert result.threshold == pytest.approx(summarize([4, 8, 12, 16]).q25)
    assert result.indices("robust") == [1]
    assert result.indices("excluded") == [9]
    assert result.indices("non_robust") == [2, 3, 4]
    fixed = classify_noise_robustness(_table(records), threshold=12.75)
    assert fixed.indices("robust") == [1, 2, 4]


def test_noise_robustness_equal_drops_all_robust():
    result = classify_noise_robustness(_table([_record(i, noisy=85.0) for i in range(5)]))
    assert result.threshold == pytest.approx(10.0)
    assert result.indices("robust") == list(range(5))


def test_noise_robustness_empty_filter_raises():
    with pytest.raises(EmptyDatasetError):
        classify_noise_robustness(_table([_record(0, baseline=60.0)]))


def test_drift_robustness_thresholds():
    flat = _record(0)
    noisy_drop = _record(1, baseline=95.0, noisy=90.0, noisy_drift=[90.0, 88.0, 80.0, 65.0])
    analog_drop = _record(2, analog=92.0, analog_drift=[90.0, 89.0, 88.0, 85.0])
    table = _table([flat, noisy_drop, analog_drop])
    noisy = classify_drift_robustness(table, "noisy")
    assert noisy.indices("30d", "robust") == [0, 2]
    assert noisy.drops["30d"][1] == pytest.approx(30.0)
    assert noisy.labels["30d"][1].tag == "non_robust"
    analog = classify_drift_robustness(table, "analog")
    assert analog.drops["60s"][2] == pytest.approx(2.0)
    assert analog.labels["60s"][2].tag == "robust"
    assert analog.labels["30d"][2].tag == "robust"
    assert analog.labels["30d"][2].criterion.threshold == 7.0
    again = classify_drift_robustness(table, "analog")
    assert again == analog


def test_drift_thresholds_validation():
    with pytest.raises(ValidationError):
        DriftThresholds(noisy=(5.0, 4.0, 16.0, 25.0))
    with pytest.raises(ValidationError):
        DriftThresholds(analog=(0.0, 3.5, 4.5, 7.0))


def test_drift_drop_summary_reference_override():
    table = _table([_record(0, baseline=95.0, noisy=90.0, noisy_drift=[89.0, 88.0, 87.0, 86.0])])
    from_baseline = drift_drop_summary(table, "noisy")
    from_noisy = drift_drop_summary(table, "noisy", reference="noisy")
    assert from_baseline["60s"].mean == pytest.approx(6.0)
    assert from_noisy["60s"].mean == pytest.approx(1.0)


def test_hwt_categories():
    table = _table([_record(0, noisy=75.0, analog=78.0), _record(1, noisy=10.0, analog=60.0),
                    _record(2, noisy=50.0, analog=85.0), _record(3, noisy=0.0, analog=30.0)])
    result = hwt_categories(table)
    assert result.assignment == {0: "naturally_robust", 1: "non_robust", 2: "moderate", 3: "non_robust"}
    assert result.improvement[1] == pytest.approx(500.0)
    assert result.improvement[3] is None
    assert result.high_performing[2] and not result.high_performing[0]
    assert result.groups["non_robust"].mean_improvement == pytest.approx(500.0)
    assert result.groups["moderate"].high_performing_share == 1.0


def test_op_statistics_single_and_exhaustive():
    single = op_statistics([(2, 2, 2, 2, 2, 2)])
    assert single.mean_share["conv3x3"] == 100.0
    assert sum(single.mean_share.values()) == 100.0
    everything = op_statistics(list(enumerate_space()))
    for share in everything.mean_share.values():
        assert share == pytest.approx(20.0)


def test_op_statistics_robust_share_marks_missing_counts():
    group = [(2, 2, 2, 2, 2, 2), (0, 2, 2, 2, 2, 2)]
    stats = op_statistics(group, robust=[True, False])
    assert stats.robust_share_by_count["conv3x3"][6] == 1.0
    assert stats.robust_share_by_count["conv3x3"][5] == 0.0
    assert stats.robust_share_by_count["conv3x3"][3] is None


def test_frequent_paths():
    two = frequent_paths([(2, 2, 2, 2, 2, 2)], 2)
    assert [(p.path, p.count) for p in two] == [((2, 2), 2)]
    zero = (1, 1, 1, 1, 1, 1)
    assert all(frequent_paths([zero], length) == [] for length in (1, 2, 3))
    assert len(frequent_paths([(2, 3, 4, 0, 2, 3)], 2, top_k=50)) == 2


def test_frequent_paths_match_brute_force():
    group = [encode(int(i)) for i in np.random.default_rng(5).choice(15625, 125, replace=False)]
    for length in (1, 2, 3):
        expected = {}
        for enc in group:
            for path in extract_paths(enc):
                if len(path) == length:
                    expected[path] = expected.get(path, 0) + 1
        got = {p.path: p.count for p in frequent_paths(group, length)}
        assert got == expected


def test_graf_features_examples():
    conv = graf_features((2, 2, 2, 2, 2, 2)).subsets["conv3x3"]
    assert (conv.min_path_len, conv.max_op_on_path, conv.input_out_degree) == (1, 3, 3)
    assert graf_features((2, 3, 4, 0, 2, 3)).subsets["zeroize"].min_path_len == UNREACHABLE
    skip = graf_features((0, 0, 0, 0, 0, 0)).subsets["skip"]
    assert skip.min_path_len == 1
    assert (skip.input_out_degree, skip.output_in_degree, skip.intermediate_degree) == (3, 3, 3.0)
    everything = graf_features((0, 2, 1, 1, 3, 4)).subsets["all"]
    assert everything.min_path_len == 2
    assert graf_features((0, 2, 1, 4, 3, 4)).subsets["all"].min_path_len == 1
    assert sum(graf_features((0, 2, 1, 4, 3, 4)).op_counts) == 6


def test_rank_features_identity_and_constant():
    target = {i: float(i) for i in range(12)}
    features = {i: {"same": float(i), "flat": 1.0, "noise": float((i * 7) % 5)} for i in range(12)}
    ranking = rank_features(features, target)
    assert ranking.ranked[0].feature == "same"
    assert ranking.ranked[0].tau == 1.0
    assert ranking.skipped == ["flat"]


def test_conv_count_ranks_high_against_synthetic_target():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        indices = rng.choice(15625, 60, replace=False)
        records = []
        for i in indices:
            conv = op_counts(encode(int(i)))[2]
            records.append(_record(int(i), baseline=95.0, noisy=float(np.clip(90 - 5 * conv + rng.normal(0, 1), 0, 100))))
        ranking = feature_correlations(_table(records), "noisy_drop", top_k=3)
        hits += any(fc.feature == "op_count_conv3x3" for fc in ranking.ranked)
    assert hits == 10


def test_rank_correlation_matrix_is_symmetric():
    table = _table([_record(i, baseline=50.0 + i, noisy=40.0 + i, analog=80.0 - i) for i in range(6)])
    matrix = rank_correlation_matrix(table, ["baseline", "noisy", "analog"])
    assert matrix["baseline"]["noisy"] == 1.0
    assert matrix["analog"]["baseline"] == matrix["baseline"]["analog"] == -1.0


def test_csv_exports(tmp_path):
    path = tmp_path / "summary.csv"
    write_summaries({"baseline": summarize([1, 2, 3, 4])}, path, digest="abc")
    rows = read_csv(path)
    assert rows[0][:4] == ["metric", "mean", "std", "min"]
    assert rows[1][0] == "baseline" and float(rows[1][5]) == 2.5
    ranking = rank_features({i: {"f": float(i)} for i in range(10)}, {i: float(-i) for i in range(10)}, "t")
    write_feature_ranking(ranking, tmp_path / "rank.csv")
    assert read_csv(tmp_path / "rank.csv")[1] == ["1", "f", "-1.0"]
