from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from aimc_bench.analog_sim import HardwareConfig, HwtConfig
from aimc_bench.nnet_engine import QatConfig, QuantScheme, SynthSpec, TrainConfig
from aimc_bench.search_space import MacroConfig
from aimc_bench.utils import config_digest


class DatasetSpec(BaseModel):
    """Exactly one of ``synthetic`` or ``cifar10_dir``."""

    synthetic: Optional[SynthSpec] = None
    cifar10_dir: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self) -> "DatasetSpec":
        if (self.synthetic is None) == (self.cifar10_dir is None):
            raise ValueError("exactly one dataset source (synthetic or cifar10_dir) must be set")
        return self

    @property
    def image_side(self) -> int:
        return self.synthetic.image_side if self.synthetic else 32

    @property
    def channels(self) -> int:
        return self.synthetic.channels if self.synthetic else 3

    @property
    def num_classes(self) -> int:
        return self.synthetic.num_classes if self.synthetic else 10


class ScopeSpec(BaseModel):
    """Which architectures a run covers: an explicit list, a seeded sample or the full space."""

    kind: Literal["list", "sample", "full"] = "sample"
    indices: Optional[List[int]] = None
    arch_file: Optional[str] = None
    count: Optional[int] = Field(None, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _complete(self) -> "ScopeSpec":
        if self.kind == "list" and self.indices is None and self.arch_file is None:
            raise ValueError("a list scope needs indices or arch_file")
        if self.kind == "sample" and self.count is None:
            raise ValueError("a sample scope needs count")
        return self


class OutputSpec(BaseModel):
    table: str = "benchmark.jsonl"
    weights_dir: Optional[str] = None


class RunConfig(BaseModel):
    preset: str = "desk"
    dataset: DatasetSpec
    macro: MacroConfig = MacroConfig()
    train: TrainConfig = TrainConfig()
    qat: QatConfig = QatConfig()
    quant: QuantScheme = QuantScheme()
    hardware: HardwareConfig = HardwareConfig()
    hwt: HwtConfig = HwtConfig()
    scope: ScopeSpec = ScopeSpec(count=125)
    output: OutputSpec = OutputSpec()
    seed: int = 0
    remote_log_enabled: bool = False
    remote_log_endpoint: Optional[str] = None
    remote_log_api_key: Optional[str] = None

    @model_validator(mode="after")
    def _shapes_agree(self) -> "RunConfig":
        if self.dataset.image_side != self.macro.input_hw:
            raise ValueError(f"dataset images are {self.dataset.image_side}px but macro.input_hw is "
                             f"{self.macro.input_hw}")
        if self.dataset.channels != self.macro.input_channels:
            raise ValueError("dataset channels and macro.input_channels differ")
        if self.dataset.num_classes != self.macro.num_classes:
            raise ValueError("dataset classes and macro.num_classes differ")
        return self

    def pipeline_fields(self) -> dict:
        """Everything that determines a record; scope, outputs and logging are excluded."""
        return self.model_dump(mode="json", include={"dataset", "macro", "train", "qat", "quant",
                                                     "hardware", "hwt", "seed"})

    def digest(self) -> str:
        return config_digest(self.pipeline_fields())
