"""
One crossbar per conv/affine layer.

Inputs are normalized by the layer's DAC bound, outputs are expressed in
normalized units ``y_n = x_n @ ((G+ - G-) / g_max).T`` where the ADC bound
lives, and the result is rescaled to weight units by ``in_bound * w_max``.
Biases (including folded batch-norm shifts) are added digitally.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from aimc_bench.analog_sim.devices import apply_drift, reconstruct_weights
from aimc_bench.analog_sim.models import AnalogStats, HardwareConfig

logger = logging.getLogger(__name__)


@dataclass
class ProgrammedLayer:
    name: str
    g_plus: np.ndarray
    g_minus: np.ndarray
    nu_plus: np.ndarray
    nu_minus: np.ndarray
    w_max: float
    g_max: float
    t0: float
    bias: np.ndarray
    in_bound: float
    out_bound: float
    kernel: Optional[Tuple[int, int, int]] = None  # (kernel_size, stride, padding) for conv layers
    folded_bn: bool = False
    reference_readout: float = 0.0
    compensation_enabled: bool = True
    notes: List[str] = field(default_factory=list)

    @property
    def fan_in(self) -> int:
        return self.g_plus.shape[1]

    @property
    def out_features(self) -> int:
        return self.g_plus.shape[0]

    def conductances(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        return (apply_drift(self.g_plus, self.nu_plus, t, self.t0),
                apply_drift(self.g_minus, self.nu_minus, t, self.t0))

    def weights(self, t: Optional[float] = None) -> np.ndarray:
        g_plus, g_minus = self.conductances(self.t0 if t is None else t)
        return reconstruct_weights(g_plus, g_minus, self.w_max, self.g_max)


def quantize_symmetric(x: np.ndarray, bits: int) -> np.ndarray:
    """Uniform quantization of values in [-1, 1]."""
    levels = 2 ** (bits - 1) - 1
    return np.round(x * levels) / levels


def ideal_readout(layer: ProgrammedLayer, x_n: np.ndarray, t: float) -> np.ndarray:
    """Noiseless normalized MVM through the drifted array."""
    g_plus, g_minus = layer.conductances(t)
    return x_n @ ((g_plus - g_minus) / layer.g_max).T


def reference_readout(layer: ProgrammedLayer, t: float) -> float:
    ones = np.ones((1, layer.fan_in))
    return float(np.sum(np.abs(ideal_readout(layer, ones, t))))


def compensation_factor(layer: ProgrammedLayer, hw: HardwareConfig, t: float) -> float:
    """
    Global drift compensation: reference all-ones readout at t0 over the same readout at t.

    Always positive. It only grows monotonically with t for one-sided weights; with
    mixed signs, drift can also shrink the cancellation inside a row sum.
    """
    if not hw.global_drift_compensation or not layer.compensation_enabled or layer.reference_readout == 0.0:
        return 1.0
    readout = reference_readout(layer, t)
    if readout == 0.0:
        return 1.0
    return layer.reference_readout / readout


def analog_matvec(layer: ProgrammedLayer, x: np.ndarray, hw: HardwareConfig, t: float,
                  rng: np.random.Generator, stats: Optional[AnalogStats] = None) -> np.ndarray:
    """(batch, fan_in) inputs -> (batch, out_features) outputs in weight units."""
    x = np.asarray(x, dtype=np.float64)
    xb = layer.in_bound
    x_c = np.clip(x, -xb, xb)
    x_n = quantize_symmetric(x_c / xb, hw.dac_bits)

    g_plus, g_minus = layer.conductances(t)
    if hw.read_noise_scale > 0:
        sigma = hw.read_noise_scale * hw.read_noise_b0 * hw.g_max
        g_plus = np.where(layer.g_plus > 0, g_plus + rng.normal(size=g_plus.shape) * sigma, 0.0)
        g_minus = np.where(layer.g_minus > 0, g_minus + rng.normal(size=g_minus.shape) * sigma, 0.0)
        g_plus = np.clip(g_plus, 0.0, hw.g_max)
        g_minus = np.clip(g_minus, 0.0, hw.g_max)

    y_n = x_n @ ((g_plus - g_minus) / hw.g_max).T
    ob = layer.out_bound
    if hw.output_noise_sigma > 0:
        y_n = y_n + rng.normal(size=y_n.shape) * (hw.output_noise_sigma * ob)
    y_c = np.clip(y_n, -ob, ob)
    y_q = quantize_symmetric(y_c / ob, hw.adc_bits) * ob

    if stats is not None:
        stats.dac_clips += int(np.count_nonzero(x != x_c))
        stats.dac_samples += x.size
        stats.adc_clips += int(np.count_nonzero(y_n != y_c))
        stats.adc_samples += y_n.size

    y = y_q * compensation_factor(layer, hw, t)
    return y * (xb * layer.w_max) + layer.bias
