"""
Distribution summaries and robustness classification over a benchmark table.

Quartiles use linear interpolation between closest ranks (numpy's
``linear`` method); standard deviations are population deviations.
Robustness uses an inclusive rule: a drop equal to the threshold is robust.
"""
import logging
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, field_validator, model_validator

from aimc_bench.analog_sim import DRIFT_LABELS
from aimc_bench.analysis.kendall import correlation_matrix
from aimc_bench.bench_store import BenchmarkRecord, BenchmarkTable
from aimc_bench.errors import EmptyDatasetError

logger = logging.getLogger(__name__)

Tag = Literal["robust", "non_robust", "excluded"]
Branch = Literal["noisy", "analog"]
Reference = Literal["baseline", "noisy", "analog"]


class SummaryStats(BaseModel):
    mean: float
    std: float
    min: float
    q25: float
    median: float
    q75: float
    max: float
    count: int

    @model_validator(mode="after")
    def _ordered(self) -> "SummaryStats":
        if not self.min <= self.q25 <= self.median <= self.q75 <= self.max:
            raise ValueError("quantiles out of order")
        return self


def summarize(values: Sequence[float]) -> SummaryStats:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyDatasetError("summarize needs at least one value")
    q25, median, q75 = np.quantile(values, [0.25, 0.5, 0.75], method="linear")
    return SummaryStats(mean=float(values.mean()), std=float(values.std()), min=float(values.min()),
                        q25=float(q25), median=float(median), q75=float(q75), max=float(values.max()),
                        count=int(values.size))


class Criterion(BaseModel):
    metric: str
    threshold: float
    filters: Dict[str, float] = {}


class RobustnessLabel(BaseModel):
    tag: Tag
    criterion: Criterion


class NoiseRobustness(BaseModel):
    """Labels for every record of the table; records failing the pre-filter are ``excluded``."""

    threshold: float
    drops: Dict[int, float]
    labels: Dict[int, RobustnessLabel]

    def indices(self, tag: Tag) -> List[int]:
        return sorted(i for i, label in self.labels.items() if label.tag == tag)


class DriftThresholds(BaseModel):
    """Per-horizon drop thresholds, ordered like ``DRIFT_LABELS``."""

    noisy: Tuple[float, float, float, float] = (5.0, 10.0, 16.0, 25.0)
    analog: Tuple[float, float, float, float] = (2.5, 3.5, 4.5, 7.0)

    @field_validator("noisy", "analog")
    @classmethod
    def _positive_non_decreasing(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(v <= 0 for v in value):
            raise ValueError("thresholds must be positive")
        if any(b < a for a, b in zip(value, value[1:])):
            raise ValueError("thresholds must not decrease with horizon")
        return value


class DriftRobustness(BaseModel):
    branch: Branch
    reference: Reference
    drops: Dict[str, Dict[int, float]]
    labels: Dict[str, Dict[int, RobustnessLabel]]

    def indices(self, horizon: str, tag: Tag) -> List[int]:
        return sorted(i for i, label in self.labels[horizon].items() if label.tag == tag)


def _require(records: List[BenchmarkRecord], what: str) -> None:
    if not records:
        raise EmptyDatasetError(f"No records left for {what} after filtering")


def classify_noise_robustness(table: BenchmarkTable, baseline_min: float = 90.0, quantile: float = 0.25,
                              threshold: Optional[float] = None) -> NoiseRobustness:
    """
    Splits high-baseline records by their noisy drop (baseline - noisy).

    The threshold is the ``quantile`` of the drop distribution over the
    filtered records unless a fixed ``threshold`` is given.
    """
    kept = [r for r in table.sorted_records() if r.baseline_acc > baseline_min]
    _require(kept, "noise robustness")
    drops = {r.arch_index: r.baseline_acc - r.noisy_acc.mean for r in kept}
    if threshold is None:
        threshold = float(np.quantile(list(drops.values()), quantile, method="linear"))
    criterion = Criterion(metric="noisy_drop", threshold=threshold, filters={"baseline_min": baseline_min})
    labels = {}
    for record in table.sorted_records():
        index = record.arch_index
        if index not in drops:
            tag = "excluded"
        else:
            tag = "robust" if drops[index] <= threshold else "non_robust"
        labels[index] = RobustnessLabel(tag=tag, criterion=criterion)
    logger.info(f"Noise robustness: threshold {threshold:.2f}, {len(kept)} of {len(table)} records kept")
    return NoiseRobustness(threshold=threshold, drops=drops, labels=labels)


def default_reference(branch: Branch) -> Reference:
    return "baseline" if branch == "noisy" else "analog"


def drift_drops(record: BenchmarkRecord, branch: Branch, reference: Optional[Reference] = None) -> List[float]:
    """Accuracy drop at every drift horizon, measured from the branch's reference accuracy."""
    reference = reference or default_reference(branch)
    start = record.metric(reference)
    return [start - stat.mean for stat in getattr(record, f"{branch}_drift")]


def classify_drift_robustness(table: BenchmarkTable, branch: Branch, thresholds: Optional[DriftThresholds] = None,
                              baseline_min: float = 80.0, noisy_min: float = 70.0,
                              reference: Optional[Reference] = None) -> DriftRobustness:
    thresholds = thresholds or DriftThresholds()
    reference = reference or default_reference(branch)
    kept = {r.arch_index: r for r in table.sorted_records()
            if r.baseline_acc > baseline_min and r.noisy_acc.mean > noisy_min}
    _require(list(kept.values()), f"{branch} drift robustness")
    filters = {"baseline_min": baseline_min, "noisy_min": noisy_min}
    limits = getattr(thresholds, branch)
    drops: Dict[str, Dict[int, float]] = {h: {} for h in DRIFT_LABELS}
    labels: Dict[str, Dict[int, RobustnessLabel]] = {h: {} for h in DRIFT_LABELS}
    for index, record in kept.items():
        for k, drop in enumerate(drift_drops(record, branch, reference)):
            drops[DRIFT_LABELS[k]][index] = drop
    for k, horizon in enumerate(DRIFT_LABELS):
        criterion = Criterion(metric=f"{branch}_drift_drop_{horizon}", threshold=limits[k], filters=filters)
        for record in table.sorted_records():
            index = record.arch_index
            if index not in kept:
                tag = "excluded"
            else:
                tag = "robust" if drops[horizon][index] <= limits[k] else "non_robust"
            labels[horizon][index] = RobustnessLabel(tag=tag, criterion=criterion)
    return DriftRobustness(branch=branch, reference=reference, drops=drops, labels=labels)


class HwtGroup(BaseModel):
    members: List[int]
    analog: Optional[SummaryStats] = None
    mean_improvement: Optional[float] = None
    high_performing_share: Optional[float] = None
    above_85_share: Optional[float] = None
    improved_share: Optional[float] = None


class HwtCategories(BaseModel):
    assignment: Dict[int, str]
    improvement: Dict[int, Optional[float]]
    high_performing: Dict[int, bool]
    groups: Dict[str, HwtGroup]


def hwt_group(noisy: float, robust_min: float = 70.0, non_robust_max: float = 20.0) -> str:
    if noisy > robust_min:
        return "naturally_robust"
    if noisy < non_robust_max:
        return "non_robust"
    return "moderate"


def hwt_categories(table: BenchmarkTable, robust_min: float = 70.0, non_robust_max: float = 20.0,
                   high_performing_min: float = 80.0) -> HwtCategories:
    """
    Groups records by noisy accuracy and reports what hardware-aware training did for each group.

    Improvement is ``100 * (analog - noisy) / noisy`` and undefined (None)
    when the noisy accuracy is zero; undefined improvements are left out of
    the group means.
    """
    assignment, improvement, high = {}, {}, {}
    for record in table.sorted_records():
        noisy, analog = record.noisy_acc.mean, record.analog_acc.mean
        index = record.arch_index
        assignment[index] = hwt_group(noisy, robust_min, non_robust_max)
        improvement[index] = None if noisy == 0 else 100.0 * (analog - noisy) / noisy
        high[index] = analog > high_performing_min
    groups = {}
    for name in ("naturally_robust", "moderate", "non_robust"):
        members = sorted(i for i, g in assignment.items() if g == name)
        group = HwtGroup(members=members)
        if members:
            analog = [table.records[i].analog_acc.mean for i in members]
            defined = [improvement[i] for i in members if improvement[i] is not None]
            group.analog = summarize(analog)
            group.mean_improvement = float(np.mean(defined)) if defined else None
            group.high_performing_share = float(np.mean([high[i] for i in members]))
            group.above_85_share = float(np.mean([a > 85.0 for a in analog]))
            group.improved_share = float(np.mean([table.records[i].analog_acc.mean > table.records[i].noisy_acc.mean
                                                  for i in members]))
        groups[name] = group
    return HwtCategories(assignment=assignment, improvement=improvement, high_performing=high, groups=groups)


def accuracy_distribution(table: BenchmarkTable, metrics: Sequence[str]) -> Dict[str, SummaryStats]:
    return {metric: summarize(table.values(metric)) for metric in metrics}


def drift_drop_summary(table: BenchmarkTable, branch: Branch,
                       reference: Optional[Reference] = None) -> Dict[str, SummaryStats]:
    records = table.sorted_records()
    _require(records, f"{branch} drift summary")
    per_record = np.array([drift_drops(r, branch, reference) for r in records])
    return {h: summarize(per_record[:, k]) for k, h in enumerate(DRIFT_LABELS)}


def rank_correlation_matrix(table: BenchmarkTable, metrics: Sequence[str]) -> Dict[str, Dict[str, Optional[float]]]:
    return correlation_matrix({metric: table.values(metric) for metric in metrics})
