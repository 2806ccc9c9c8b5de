from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from aimc_bench.analog_sim import DRIFT_LABELS
from aimc_bench.search_space import SPACE_SIZE, decode, to_nb201_string, validate_encoding

SCHEMA_VERSION = 1
CODE_VERSION = "0.1.0"


class AccuracyStat(BaseModel):
    """Mean and population std over evaluation repeats, in percent."""

    mean: float = Field(ge=0.0, le=100.0)
    std: float = Field(ge=0.0, le=100.0)


class Provenance(BaseModel):
    seed: int
    stage_seeds: Dict[str, int]
    config_digest: str = Field(min_length=1)
    weights_digest: Optional[str] = None
    notes: List[str] = []


class BenchmarkRecord(BaseModel):
    """
    Everything measured for one architecture.

    Accuracies are percentages. The drift series are ordered by
    ``DRIFT_LABELS`` (60s, 1h, 1d, 30d). The noisy family is the digitally
    trained network programmed as is; the analog family is the same cell
    after hardware-aware training.
    """

    schema_version: int = SCHEMA_VERSION
    arch_index: int = Field(ge=0, lt=SPACE_SIZE)
    arch: List[int]
    nb201: str
    baseline_acc: float = Field(ge=0.0, le=100.0)
    ptq_acc: float = Field(ge=0.0, le=100.0)
    qat_acc: float = Field(ge=0.0, le=100.0)
    noisy_acc: AccuracyStat
    analog_acc: AccuracyStat
    noisy_drift: List[AccuracyStat]
    analog_drift: List[AccuracyStat]
    param_count: int = Field(ge=0)
    provenance: Provenance

    @field_validator("arch")
    @classmethod
    def _valid_arch(cls, value: List[int]) -> List[int]:
        return list(validate_encoding(value))

    @field_validator("noisy_drift", "analog_drift")
    @classmethod
    def _four_horizons(cls, value: List[AccuracyStat]) -> List[AccuracyStat]:
        if len(value) != len(DRIFT_LABELS):
            raise ValueError(f"drift series must have {len(DRIFT_LABELS)} entries, got {len(value)}")
        return value

    @model_validator(mode="after")
    def _consistent_keys(self) -> "BenchmarkRecord":
        if decode(self.arch) != self.arch_index:
            raise ValueError(f"arch_index {self.arch_index} does not match arch {self.arch}")
        if to_nb201_string(self.arch) != self.nb201:
            raise ValueError("nb201 string does not match arch")
        return self

    @property
    def avm(self) -> float:
        """Accuracy variation over one month: analog accuracy at 60 s minus at 30 d."""
        return self.analog_drift[0].mean - self.analog_drift[-1].mean

    @property
    def avm_t0(self) -> float:
        return self.analog_acc.mean - self.analog_drift[-1].mean

    def metric(self, name: str) -> float:
        """Resolves a metric name used by analyses and searches."""
        if name in ("baseline", "ptq", "qat"):
            return getattr(self, f"{name}_acc")
        if name in ("noisy", "analog"):
            return getattr(self, f"{name}_acc").mean
        if name in ("avm", "avm_t0"):
            return getattr(self, name)
        if name == "param_count":
            return float(self.param_count)
        for branch in ("noisy", "analog"):
            prefix = f"{branch}_drift_"
            if name.startswith(prefix):
                label = name[len(prefix):]
                if label not in DRIFT_LABELS:
                    raise KeyError(f"Unknown drift horizon '{label}' (expected one of {DRIFT_LABELS})")
                return getattr(self, f"{branch}_drift")[DRIFT_LABELS.index(label)].mean
        raise KeyError(f"Unknown metric '{name}' (expected one of {metric_names()})")


def metric_names() -> List[str]:
    names = ["baseline", "ptq", "qat", "noisy", "analog"]
    names += [f"noisy_drift_{h}" for h in DRIFT_LABELS]
    names += [f"analog_drift_{h}" for h in DRIFT_LABELS]
    return names + ["avm", "avm_t0", "param_count"]


class TableMetadata(BaseModel):
    """First line of a benchmark file; two tables merge only when their config digests agree."""

    schema_version: int = SCHEMA_VERSION
    code_version: str = CODE_VERSION
    dataset: Dict[str, Any]
    macro: Dict[str, Any]
    train: Dict[str, Any]
    qat: Dict[str, Any]
    quant: Dict[str, Any]
    hardware: Dict[str, Any]
    hwt: Dict[str, Any]
    seed: int = 0
    scope: Optional[Dict[str, Any]] = None
    config_digest: str = Field(min_length=1)


class BenchmarkTable(BaseModel):
    """Records keyed by ArchIndex plus the metadata they were produced under."""

    metadata: TableMetadata
    records: Dict[int, BenchmarkRecord] = {}

    @model_validator(mode="after")
    def _digests_agree(self) -> "BenchmarkTable":
        for index, record in self.records.items():
            if record.arch_index != index:
                raise ValueError(f"record keyed {index} has arch_index {record.arch_index}")
            if record.provenance.config_digest != self.metadata.config_digest:
                raise ValueError(f"record {index} was produced under another config digest")
        return self

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, index: int) -> bool:
        return index in self.records

    def sorted_records(self) -> List[BenchmarkRecord]:
        return [self.records[i] for i in sorted(self.records)]

    def put(self, record: BenchmarkRecord) -> None:
        if record.provenance.config_digest != self.metadata.config_digest:
            raise ValueError(f"record {record.arch_index} was produced under another config digest")
        self.records[record.arch_index] = record

    def values(self, metric: str) -> List[float]:
        """Metric values in ArchIndex order."""
        return [record.metric(metric) for record in self.sorted_records()]
