from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, PositiveFloat, field_validator, model_validator

DRIFT_TIMES: Tuple[float, ...] = (60.0, 3600.0, 86400.0, 2592000.0)
DRIFT_LABELS: Tuple[str, ...] = ("60s", "1h", "1d", "30d")

AdcBound = Union[Literal["calibrated", "worst_case"], PositiveFloat]


class HardwareConfig(BaseModel):
    """Crossbar, converter, noise and drift parameters. Noise scales are dimensionless multipliers."""

    dac_bits: int = 8
    adc_bits: int = 8
    output_noise_sigma: float = Field(0.04, ge=0.0)
    g_max: float = Field(25.0, gt=0.0)
    prog_noise_scale: float = Field(1.0, ge=0.0)
    read_noise_scale: float = Field(1.0, ge=0.0)
    prog_noise_a0: float = Field(0.01, ge=0.0)
    prog_noise_a1: float = Field(0.03, ge=0.0)
    read_noise_b0: float = Field(0.01, ge=0.0)
    drift_enabled: bool = True
    drift_nu_mean: float = Field(0.06, ge=0.0)
    drift_nu_std: float = Field(0.02, ge=0.0)
    drift_t0_seconds: float = Field(20.0, gt=0.0)
    global_drift_compensation: bool = True
    eval_repeats: int = Field(25, ge=1)
    adc_bound: AdcBound = "calibrated"
    calibration_batches: int = Field(4, ge=1)
    batch_size: int = Field(256, ge=1)

    @field_validator("dac_bits", "adc_bits")
    @classmethod
    def _bits(cls, value: int) -> int:
        if not 2 <= value <= 16:
            raise ValueError("bits must lie in [2, 16]")
        return value

    @classmethod
    def noiseless(cls, **overrides) -> "HardwareConfig":
        base = dict(dac_bits=16, adc_bits=16, output_noise_sigma=0.0, prog_noise_scale=0.0,
                    read_noise_scale=0.0, drift_enabled=False)
        base.update(overrides)
        return cls(**base)


class HwtConfig(BaseModel):
    eta: float = Field(0.1, ge=0.0)
    output_noise: Optional[float] = Field(None, ge=0.0)
    epochs: Optional[int] = Field(None, ge=1)
    from_pretrained: bool = True


class AnalogStats(BaseModel):
    """Converter saturation counters."""

    dac_clips: int = 0
    dac_samples: int = 0
    adc_clips: int = 0
    adc_samples: int = 0

    def merge(self, other: "AnalogStats") -> "AnalogStats":
        return AnalogStats(**{k: getattr(self, k) + getattr(other, k) for k in type(self).model_fields})


class AnalogAccuracy(BaseModel):
    """Accuracy over evaluation repeats, as fractions."""

    mean: float
    std: float
    repeats: List[float]
    t: float
    stats: AnalogStats = AnalogStats()


class DriftTimes(BaseModel):
    times: Tuple[float, ...] = DRIFT_TIMES
    t0: float = 20.0

    @model_validator(mode="after")
    def _ordered(self) -> "DriftTimes":
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("drift times must be strictly increasing")
        if self.times and self.times[0] < self.t0:
            raise ValueError(f"first drift time {self.times[0]} precedes t0 {self.t0}")
        return self
