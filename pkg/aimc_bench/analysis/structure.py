"""
Operation, path and graph-feature statistics of cells.

Path features only follow edges that carry signal: a zeroize edge severs
every route through it, whatever subset is asked for. Degree features count
the edges whose op lies in the subset, zeroize included.
"""
import logging
from collections import Counter
from typing import Dict, FrozenSet, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from aimc_bench.analog_sim import DRIFT_LABELS
from aimc_bench.analysis.kendall import kendall_tau_b
from aimc_bench.analysis.stats import drift_drops, hwt_categories
from aimc_bench.bench_store import BenchmarkTable
from aimc_bench.search_space import (
    EDGES,
    NUM_EDGES,
    NUM_OPS,
    OP_LABELS,
    ROUTES,
    OpKind,
    OpPath,
    extract_paths,
    op_counts,
    validate_encoding,
)

logger = logging.getLogger(__name__)

# min_path_len when no route survives; one past the longest route
UNREACHABLE = max(len(route) for route in ROUTES) + 1

DEFAULT_SUBSETS: Dict[str, FrozenSet[int]] = {
    **{OP_LABELS[op]: frozenset({int(op)}) for op in OpKind},
    "conv": frozenset({int(OpKind.CONV3X3), int(OpKind.CONV1X1)}),
    "skip_conv3x3": frozenset({int(OpKind.SKIP), int(OpKind.CONV3X3)}),
    "transform": frozenset({int(OpKind.CONV3X3), int(OpKind.CONV1X1), int(OpKind.AVGPOOL3X3)}),
    "all": frozenset(int(op) for op in OpKind),
}


class OpStatistics(BaseModel):
    """Per-op share of the group's edges and count histograms (index = count 0..6)."""

    mean_share: Dict[str, float]
    count_histogram: Dict[str, List[int]]
    robust_share_by_count: Optional[Dict[str, List[Optional[float]]]] = None


def op_statistics(group: Sequence[Sequence[int]], robust: Optional[Sequence[bool]] = None) -> OpStatistics:
    """
    :param robust: per-architecture robustness flags aligned with ``group``;
        when given, also reports for each op and count the robust fraction
        (None where no architecture has that count).
    """
    if not group:
        raise ValueError("op_statistics needs a non-empty group")
    counts = np.array([op_counts(enc) for enc in group])
    shares = counts.mean(axis=0) / NUM_EDGES * 100.0
    names = [OP_LABELS[OpKind(op)] for op in range(NUM_OPS)]
    histogram = {name: np.bincount(counts[:, op], minlength=NUM_EDGES + 1).tolist() for op, name in enumerate(names)}
    result = OpStatistics(mean_share={name: float(shares[op]) for op, name in enumerate(names)},
                          count_histogram=histogram)
    if robust is not None:
        if len(robust) != len(group):
            raise ValueError("robust flags must align with the group")
        flags = np.asarray(robust, dtype=bool)
        curves = {}
        for op, name in enumerate(names):
            curve: List[Optional[float]] = []
            for c in range(NUM_EDGES + 1):
                mask = counts[:, op] == c
                curve.append(float(flags[mask].mean()) if mask.any() else None)
            curves[name] = curve
        result.robust_share_by_count = curves
    return result


class PathFrequency(BaseModel):
    path: OpPath
    count: int

    @property
    def label(self) -> str:
        return "-".join(OP_LABELS[OpKind(op)] for op in self.path)


def frequent_paths(group: Sequence[Sequence[int]], length: int, top_k: Optional[int] = None) -> List[PathFrequency]:
    """Intact input-to-output paths of ``length`` edges, most frequent first, ties in path order."""
    if length not in (1, 2, 3):
        raise ValueError("path length must be 1, 2 or 3")
    counter: Counter = Counter()
    for enc in group:
        counter.update(path for path in extract_paths(enc) if len(path) == length)
    ranked = sorted(counter.items(), key=lambda item: (-item[1], item[0]))
    if top_k is not None:
        ranked = ranked[:top_k]
    return [PathFrequency(path=path, count=count) for path, count in ranked]


class SubsetFeatures(BaseModel):
    min_path_len: int
    max_op_on_path: int
    input_out_degree: int
    output_in_degree: int
    intermediate_degree: float


class GrafFeatureVector(BaseModel):
    op_counts: List[int]
    subsets: Dict[str, SubsetFeatures]

    def flat(self) -> Dict[str, float]:
        """Named scalar features, the form used for correlations."""
        features = {f"op_count_{OP_LABELS[OpKind(op)]}": float(c) for op, c in enumerate(self.op_counts)}
        for name, sub in self.subsets.items():
            for field, value in sub.model_dump().items():
                features[f"{field}_{name}"] = float(value)
        return features


def _subset_features(ops: Tuple[int, ...], subset: FrozenSet[int], degree: str) -> SubsetFeatures:
    in_subset = [op in subset for op in ops]
    carries = [op in subset and op != OpKind.ZEROIZE for op in ops]
    lengths = [len(route) for route in ROUTES if all(carries[p] for p in route)]
    intact = [route for route in ROUTES if all(ops[p] != OpKind.ZEROIZE for p in route)]
    out_degree = [0, 0, 0, 0]
    in_degree = [0, 0, 0, 0]
    for position, (source, target) in enumerate(EDGES):
        if in_subset[position]:
            out_degree[source] += 1
            in_degree[target] += 1
    intermediate = [in_degree[node] + out_degree[node] for node in (1, 2)]
    return SubsetFeatures(
        min_path_len=min(lengths) if lengths else UNREACHABLE,
        max_op_on_path=max((sum(in_subset[p] for p in route) for route in intact), default=0),
        input_out_degree=out_degree[0],
        output_in_degree=in_degree[3],
        intermediate_degree=float(np.mean(intermediate) if degree == "mean" else np.max(intermediate)),
    )


def graf_features(enc: Sequence[int], subset_family: Optional[Mapping[str, FrozenSet[int]]] = None,
                  degree: Literal["mean", "max"] = "mean") -> GrafFeatureVector:
    ops = validate_encoding(enc)
    family = DEFAULT_SUBSETS if subset_family is None else subset_family
    return GrafFeatureVector(op_counts=op_counts(ops),
                             subsets={name: _subset_features(ops, frozenset(s), degree) for name, s in family.items()})


class FeatureCorrelation(BaseModel):
    feature: str
    tau: float


class FeatureRanking(BaseModel):
    target: str
    ranked: List[FeatureCorrelation]
    skipped: List[str]


def rank_features(features: Mapping[int, Mapping[str, float]], target: Mapping[int, float],
                  target_name: str = "target", top_k: Optional[int] = None) -> FeatureRanking:
    """
    Kendall tau-b of every feature against the target, strongest |tau| first.

    Features whose tau is undefined (all tied) are skipped and listed.
    """
    indices = sorted(set(features) & set(target))
    if len(indices) < 10:
        raise ValueError(f"feature correlations need at least 10 records, got {len(indices)}")
    y = [target[i] for i in indices]
    names = list(features[indices[0]])
    ranked, skipped = [], []
    for name in names:
        tau = kendall_tau_b([features[i][name] for i in indices], y)
        if tau is None:
            skipped.append(name)
        else:
            ranked.append(FeatureCorrelation(feature=name, tau=tau))
    if skipped:
        logger.warning(f"Skipped {len(skipped)} all-tied features against {target_name}")
    ranked.sort(key=lambda fc: (-abs(fc.tau), fc.feature))
    if top_k is not None:
        ranked = ranked[:top_k]
    return FeatureRanking(target=target_name, ranked=ranked, skipped=skipped)


def table_features(table: BenchmarkTable, subset_family: Optional[Mapping[str, FrozenSet[int]]] = None,
                   degree: Literal["mean", "max"] = "mean") -> Dict[int, Dict[str, float]]:
    return {r.arch_index: graf_features(r.arch, subset_family, degree).flat() for r in table.sorted_records()}


def robustness_targets(table: BenchmarkTable) -> Dict[str, Dict[int, float]]:
    """Noisy drop, HWT improvement (where defined) and both branches' drift drops, keyed by ArchIndex."""
    records = table.sorted_records()
    categories = hwt_categories(table)
    targets: Dict[str, Dict[int, float]] = {
        "noisy_drop": {r.arch_index: r.baseline_acc - r.noisy_acc.mean for r in records},
        "hwt_improvement": {i: v for i, v in categories.improvement.items() if v is not None},
    }
    for branch in ("noisy", "analog"):
        drops = {r.arch_index: drift_drops(r, branch) for r in records}
        for k, label in enumerate(DRIFT_LABELS):
            targets[f"{branch}_drift_drop_{label}"] = {i: d[k] for i, d in drops.items()}
    return targets


def feature_correlations(table: BenchmarkTable, target: str = "noisy_drop", features: Optional[Sequence[str]] = None,
                         top_k: Optional[int] = 20, subset_family: Optional[Mapping[str, FrozenSet[int]]] = None,
                         degree: Literal["mean", "max"] = "mean") -> FeatureRanking:
    """Graph features of every record ranked by |tau| against a robustness target."""
    targets = robustness_targets(table)
    if target not in targets:
        raise KeyError(f"Unknown target '{target}' (expected one of {sorted(targets)})")
    values = table_features(table, subset_family, degree)
    if features is not None:
        values = {i: {name: row[name] for name in features} for i, row in values.items()}
    return rank_features(values, targets[target], target, top_k)
