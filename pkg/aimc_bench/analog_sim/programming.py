"""
Programming a trained network onto crossbars and evaluating it.

Only the conv/affine MVMs run on the simulated arrays; pooling, ReLU, skip
edges and node sums execute digitally on the network copy held by the
ProgrammedNetwork. Batch norm is folded into the preceding convolution and
is not recalibrated after programming.
"""
import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from aimc_bench.analog_sim.crossbar import ProgrammedLayer, analog_matvec, reference_readout
from aimc_bench.analog_sim.devices import program_weights, sample_drift_exponents
from aimc_bench.analog_sim.models import AnalogAccuracy, AnalogStats, HardwareConfig
from aimc_bench.errors import UnsupportedLayerError
from aimc_bench.nnet_engine import (
    Conv2d,
    ConvUnit,
    Dataset,
    ExecutionHooks,
    Linear,
    LinearUnit,
    Network,
)
from aimc_bench.nnet_engine.layers import im2col
from aimc_bench.nnet_engine.training import accuracy_from_predictions

logger = logging.getLogger(__name__)

NOTE_BN_NOT_RECALIBRATED = "batch norm folded before programming, statistics not recalibrated"


@dataclass
class FoldedUnit:
    weights: np.ndarray  # (out_features, fan_in)
    bias: np.ndarray
    kernel: Optional[Tuple[int, int, int]]
    folded_bn: bool


def fold_unit(unit) -> FoldedUnit:
    """Folds inference-mode batch norm into the unit's weight matrix and bias."""
    layer = getattr(unit, "weight_layer", None)
    if isinstance(unit, ConvUnit) and isinstance(layer, Conv2d):
        w = layer.weight.value.astype(np.float64).reshape(layer.out_channels, -1)
        bias = np.zeros(layer.out_channels) if layer.bias is None else layer.bias.value.astype(np.float64)
        if unit.bn is not None:
            scale, shift = (a.astype(np.float64) for a in unit.bn.folded_scale_shift())
            w = w * scale[:, None]
            bias = bias * scale + shift
        return FoldedUnit(w, bias, (layer.kernel_size, layer.stride, layer.padding), unit.bn is not None)
    if isinstance(unit, LinearUnit) and isinstance(layer, Linear):
        bias = np.zeros(layer.out_features) if layer.bias is None else layer.bias.value.astype(np.float64)
        return FoldedUnit(layer.weight.value.astype(np.float64), bias, None, False)
    raise UnsupportedLayerError(f"Cannot map unit {getattr(unit, 'name', unit)!r} of type "
                                f"{type(unit).__name__} onto a crossbar")


def unit_matvec(kernel: Optional[Tuple[int, int, int]], h: np.ndarray,
                matvec: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Applies a row-wise matvec to a unit input, unrolling convolutions into patches."""
    if kernel is None:
        return matvec(h)
    k, stride, padding = kernel
    n = h.shape[0]
    cols, ho, wo = im2col(h, k, stride, padding)
    out = matvec(cols)
    return np.ascontiguousarray(out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2))


class FoldedHooks(ExecutionHooks):
    """Digital execution with folded weights; records DAC and ADC calibration ranges."""

    def __init__(self, folded: Dict[str, FoldedUnit]):
        self.folded = folded
        self.input_peak: Dict[str, float] = {}
        self.output_peak: Dict[str, float] = {}

    def unit(self, unit, h):
        f = self.folded[unit.name]

        def matvec(rows):
            raw = rows @ f.weights.T
            self.output_peak[unit.name] = max(self.output_peak.get(unit.name, 0.0), float(np.max(np.abs(raw))))
            return raw + f.bias

        self.input_peak[unit.name] = max(self.input_peak.get(unit.name, 0.0), float(np.max(np.abs(h))))
        return unit_matvec(f.kernel, h, matvec)


class AnalogHooks(ExecutionHooks):
    def __init__(self, layers: Dict[str, ProgrammedLayer], hw: HardwareConfig, t: float,
                 rng: np.random.Generator, stats: Optional[AnalogStats] = None):
        self.layers = layers
        self.hw = hw
        self.t = t
        self.rng = rng
        self.stats = stats

    def unit(self, unit, h):
        layer = self.layers[unit.name]
        return unit_matvec(layer.kernel, h, lambda rows: analog_matvec(layer, rows, self.hw, self.t,
                                                                      self.rng, self.stats))


@dataclass
class ProgrammedNetwork:
    network: Network
    layers: Dict[str, ProgrammedLayer]
    hw: HardwareConfig
    seed: int
    notes: List[str] = field(default_factory=list)

    @property
    def t0(self) -> float:
        return self.hw.drift_t0_seconds

    def logits(self, images: np.ndarray, t: Optional[float] = None, rng: Optional[np.random.Generator] = None,
               hw: Optional[HardwareConfig] = None, stats: Optional[AnalogStats] = None,
               batch_size: Optional[int] = None) -> np.ndarray:
        hw = hw or self.hw
        hooks = AnalogHooks(self.layers, hw, self.t0 if t is None else t,
                            rng or np.random.default_rng(self.seed), stats)
        return self.network.logits(images, hooks=hooks, batch_size=batch_size or hw.batch_size)

    def folded_logits(self, images: np.ndarray) -> np.ndarray:
        """Noiseless digital reference through the same folded weights."""
        folded = {name: FoldedUnit(layer.weights(), layer.bias, layer.kernel, layer.folded_bn)
                  for name, layer in self.layers.items()}
        return self.network.logits(images, hooks=FoldedHooks(folded), batch_size=self.hw.batch_size)


def _output_bound(hw: HardwareConfig, peak: float, in_bound: float, w_max: float, fan_in: int) -> float:
    if hw.adc_bound == "worst_case":
        return float(fan_in)
    if hw.adc_bound == "calibrated":
        bound = peak / (in_bound * w_max)
        return bound if bound > 0 else 1.0
    return float(hw.adc_bound)


def program_network(net: Network, hw: HardwareConfig, seed: int, calib: Dataset) -> ProgrammedNetwork:
    """Folds, calibrates and programs every conv/affine unit of ``net``; ``net`` is not modified."""
    calib.require_nonempty()
    model = copy.deepcopy(net)
    units = model.units()
    folded = {unit.name: fold_unit(unit) for unit in units}

    calibration = FoldedHooks(folded)
    for i, (images, _) in enumerate(calib.batches(hw.batch_size)):
        if i >= hw.calibration_batches:
            break
        model.logits(images, hooks=calibration, batch_size=hw.batch_size)

    rng = np.random.default_rng(seed)
    t0 = hw.drift_t0_seconds
    layers: Dict[str, ProgrammedLayer] = {}
    notes = [NOTE_BN_NOT_RECALIBRATED]
    for unit in units:
        f = folded[unit.name]
        in_bound = calibration.input_peak.get(unit.name, 0.0) or 1.0
        g_plus, g_minus, w_max = program_weights(f.weights, hw, rng)
        layer = ProgrammedLayer(
            name=unit.name,
            g_plus=g_plus,
            g_minus=g_minus,
            nu_plus=sample_drift_exponents(g_plus.shape, hw, rng),
            nu_minus=sample_drift_exponents(g_minus.shape, hw, rng),
            w_max=w_max,
            g_max=hw.g_max,
            t0=t0,
            bias=f.bias,
            in_bound=in_bound,
            out_bound=_output_bound(hw, calibration.output_peak.get(unit.name, 0.0), in_bound, w_max,
                                    f.weights.shape[1]),
            kernel=f.kernel,
            folded_bn=f.folded_bn,
        )
        layer.reference_readout = reference_readout(layer, t0)
        if layer.reference_readout == 0.0:
            layer.compensation_enabled = False
            layer.notes.append("drift compensation disabled: zero reference readout")
            notes.append(f"drift compensation disabled on {unit.name}")
            logger.warning(f"Zero reference readout on {unit.name}; drift compensation disabled for this layer")
        layers[unit.name] = layer
    logger.info(f"Programmed {len(layers)} layers (seed {seed}, g_max {hw.g_max}, "
                f"prog noise x{hw.prog_noise_scale})")
    return ProgrammedNetwork(model, layers, hw, seed, notes)


def analog_evaluate(pnet: ProgrammedNetwork, test: Dataset, hw: Optional[HardwareConfig] = None,
                    t: Optional[float] = None, seed: int = 0) -> AnalogAccuracy:
    """Mean and population std of accuracy over ``eval_repeats`` fresh read/output noise draws."""
    test.require_nonempty()
    hw = hw or pnet.hw
    t = pnet.t0 if t is None else t
    stats = AnalogStats()
    accuracies = []
    for repeat in range(hw.eval_repeats):
        rng = np.random.default_rng([seed, repeat])
        logits = pnet.logits(test.images, t=t, rng=rng, hw=hw, stats=stats)
        accuracies.append(accuracy_from_predictions(logits.argmax(axis=1), test.labels))
    values = np.array(accuracies)
    return AnalogAccuracy(mean=float(values.mean()), std=float(values.std()), repeats=accuracies, t=t, stats=stats)
