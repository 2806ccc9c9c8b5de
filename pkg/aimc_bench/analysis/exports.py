"""CSV writers for analysis results; every file starts with the table's config digest."""
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

from aimc_bench.analog_sim import DRIFT_LABELS
from aimc_bench.analysis.stats import DriftRobustness, HwtCategories, NoiseRobustness, SummaryStats
from aimc_bench.analysis.structure import FeatureRanking, OpStatistics, PathFrequency
from aimc_bench.search_space import NUM_EDGES
from aimc_bench.utils import write_csv

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SUMMARY_FIELDS = ["mean", "std", "min", "q25", "median", "q75", "max", "count"]


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_correlation_matrix(matrix: Mapping[str, Mapping[str, Optional[float]]], path: PathLike,
                             digest: str = "") -> None:
    names = list(matrix)
    rows = [[a] + [_cell(matrix[a][b]) for b in names] for a in names]
    write_csv(path, ["metric"] + names, rows, digest)


def write_summaries(summaries: Mapping[str, SummaryStats], path: PathLike, digest: str = "",
                    key: str = "metric") -> None:
    rows = [[name] + [getattr(stats, f) for f in SUMMARY_FIELDS] for name, stats in summaries.items()]
    write_csv(path, [key] + SUMMARY_FIELDS, rows, digest)


def write_noise_robustness(result: NoiseRobustness, path: PathLike, digest: str = "") -> None:
    rows = [[index, _cell(result.drops.get(index)), label.tag, result.threshold]
            for index, label in sorted(result.labels.items())]
    write_csv(path, ["arch_index", "noisy_drop", "tag", "threshold"], rows, digest)


def write_drift_robustness(result: DriftRobustness, path: PathLike, digest: str = "") -> None:
    header = ["arch_index"] + [f"drop_{h}" for h in DRIFT_LABELS] + [f"tag_{h}" for h in DRIFT_LABELS]
    indices = sorted(result.labels[DRIFT_LABELS[0]])
    rows = []
    for index in indices:
        drops = [_cell(result.drops[h].get(index)) for h in DRIFT_LABELS]
        tags = [result.labels[h][index].tag for h in DRIFT_LABELS]
        rows.append([index] + drops + tags)
    write_csv(path, header, rows, digest)


def write_hwt_categories(result: HwtCategories, path: PathLike, digest: str = "") -> None:
    header = ["group", "count", "analog_mean", "analog_q25", "analog_median", "analog_q75", "mean_improvement",
              "high_performing_share", "above_85_share", "improved_share"]
    rows = []
    for name, group in result.groups.items():
        a = group.analog
        rows.append([name, len(group.members), _cell(a and a.mean), _cell(a and a.q25), _cell(a and a.median),
                     _cell(a and a.q75), _cell(group.mean_improvement), _cell(group.high_performing_share),
                     _cell(group.above_85_share), _cell(group.improved_share)])
    write_csv(path, header, rows, digest)


def write_op_statistics(stats: OpStatistics, path: PathLike, digest: str = "") -> None:
    counts = list(range(NUM_EDGES + 1))
    header = ["op", "mean_share"] + [f"n_{c}" for c in counts]
    if stats.robust_share_by_count is not None:
        header += [f"robust_share_{c}" for c in counts]
    rows = []
    for op, share in stats.mean_share.items():
        row: List = [op, share] + stats.count_histogram[op]
        if stats.robust_share_by_count is not None:
            row += [_cell(v) for v in stats.robust_share_by_count[op]]
        rows.append(row)
    write_csv(path, header, rows, digest)


def write_paths(paths: Dict[int, List[PathFrequency]], path: PathLike, digest: str = "") -> None:
    rows = [[length, freq.label, freq.count] for length, entries in sorted(paths.items()) for freq in entries]
    write_csv(path, ["length", "path", "count"], rows, digest)


def write_feature_ranking(ranking: FeatureRanking, path: PathLike, digest: str = "") -> None:
    rows = [[rank + 1, fc.feature, fc.tau] for rank, fc in enumerate(ranking.ranked)]
    write_csv(path, ["rank", "feature", f"tau_{ranking.target}"], rows, digest)
    logger.info(f"Wrote {len(rows)} feature correlations to {path} ({len(ranking.skipped)} skipped)")
