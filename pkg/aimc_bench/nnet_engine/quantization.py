"""
Post-training quantization and quantization-aware training.

Weights use per-tensor symmetric quantization (scale = max|w| / (2^(b-1) - 1)).
Activations entering every conv/affine layer use per-tensor affine quantization
with min/max calibration. The forward path is fake-quantized (quantize then
dequantize); the backward pass uses the straight-through estimator, which
passes gradients inside the clip range and zeroes them outside.
"""
import copy
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from aimc_bench.nnet_engine.datasets import Dataset
from aimc_bench.nnet_engine.layers import ExecutionHooks
from aimc_bench.nnet_engine.network import Network
from aimc_bench.nnet_engine.optim import Adam, ReduceLROnPlateau
from aimc_bench.nnet_engine.training import EpochStats, train_epoch

logger = logging.getLogger(__name__)

ActivationRange = Tuple[float, int]  # (scale, zero point)


class QuantScheme(BaseModel):
    weight_bits: int = 8
    activation_bits: int = 8
    calibration_batches: int = Field(4, ge=1)
    batch_size: int = Field(128, ge=1)

    @field_validator("weight_bits", "activation_bits")
    @classmethod
    def _bits(cls, value: int) -> int:
        if not 2 <= value <= 16:
            raise ValueError("bits must lie in [2, 16]")
        return value


class QatConfig(BaseModel):
    epochs: int = Field(3, ge=0)
    lr: float = Field(1e-3, gt=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    plateau_factor: float = Field(0.1, gt=0.0, lt=1.0)
    plateau_patience: int = Field(2, ge=0)
    batch_size: int = Field(64, ge=1)
    seed: int = 0


def weight_scale(w: np.ndarray, bits: int = 8) -> float:
    qmax = 2 ** (bits - 1) - 1
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    return peak / qmax if peak > 0 else 1.0


def quantize_weight(w: np.ndarray, bits: int = 8) -> np.ndarray:
    qmax = 2 ** (bits - 1) - 1
    scale = weight_scale(w, bits)
    return (np.clip(np.round(w / scale), -qmax, qmax) * scale).astype(w.dtype, copy=False)


def activation_qparams(lo: float, hi: float, bits: int = 8) -> ActivationRange:
    """Affine parameters for a calibrated [lo, hi] range; the range always contains 0."""
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    levels = 2 ** bits - 1
    scale = (hi - lo) / levels if hi > lo else 1.0
    zero_point = int(np.clip(np.round(-lo / scale), 0, levels))
    return scale, zero_point


def fake_quant_activation(x: np.ndarray, scale: float, zero_point: int,
                          bits: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    """Fake-quantized x and the straight-through gradient mask."""
    levels = 2 ** bits - 1
    q = np.clip(np.round(x / scale) + zero_point, 0, levels)
    lo = (0 - zero_point) * scale
    hi = (levels - zero_point) * scale
    mask = ((x >= lo) & (x <= hi)).astype(x.dtype)
    return ((q - zero_point) * scale).astype(x.dtype, copy=False), mask


class CalibrationHooks(ExecutionHooks):
    """Records min/max of every weight-layer input."""

    def __init__(self):
        self.ranges: Dict[str, Tuple[float, float]] = {}

    def activation(self, layer, x):
        lo, hi = float(x.min()), float(x.max())
        if layer.name in self.ranges:
            old_lo, old_hi = self.ranges[layer.name]
            lo, hi = min(lo, old_lo), max(hi, old_hi)
        self.ranges[layer.name] = (lo, hi)
        return x, None


class QuantHooks(ExecutionHooks):
    def __init__(self, scheme: QuantScheme, activation_ranges: Dict[str, ActivationRange]):
        self.scheme = scheme
        self.activation_ranges = activation_ranges

    def weight(self, layer, w):
        return quantize_weight(w, self.scheme.weight_bits)

    def activation(self, layer, x):
        scale, zero_point = self.activation_ranges[layer.name]
        return fake_quant_activation(x, scale, zero_point, self.scheme.activation_bits)


def calibrate_ranges(net: Network, calib: Dataset, scheme: QuantScheme) -> Dict[str, ActivationRange]:
    calib.require_nonempty()
    hooks = CalibrationHooks()
    for i, (images, _) in enumerate(calib.batches(scheme.batch_size)):
        if i >= scheme.calibration_batches:
            break
        net.logits(images, hooks=hooks, batch_size=scheme.batch_size)
    return {name: activation_qparams(lo, hi, scheme.activation_bits) for name, (lo, hi) in hooks.ranges.items()}


class QuantizedNetwork:
    """Fake-quantized view over a private copy of a network."""

    def __init__(self, network: Network, scheme: QuantScheme, activation_ranges: Dict[str, ActivationRange]):
        self.network = network
        self.scheme = scheme
        self.activation_ranges = activation_ranges
        self.hooks = QuantHooks(scheme, activation_ranges)
        self.curve: List[EpochStats] = []

    def logits(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return self.network.logits(images, hooks=self.hooks, batch_size=batch_size)

    def materialize(self) -> Network:
        """Plain network whose weights lie on the integer grid."""
        net = copy.deepcopy(self.network)
        for unit in net.units():
            layer = unit.weight_layer
            layer.weight.value[...] = quantize_weight(layer.weight.value, self.scheme.weight_bits)
        return net


def ptq_int8(net: Network, calib: Dataset, scheme: Optional[QuantScheme] = None) -> QuantizedNetwork:
    """Calibrates activation ranges and returns a quantized view; ``net`` is not modified."""
    scheme = scheme or QuantScheme()
    model = copy.deepcopy(net)
    ranges = calibrate_ranges(model, calib, scheme)
    logger.info(f"PTQ calibrated {len(ranges)} activation ranges "
                f"({scheme.weight_bits}-bit weights, {scheme.activation_bits}-bit activations)")
    return QuantizedNetwork(model, scheme, ranges)


def qat_train(net: Network, train: Dataset, cfg: Optional[QatConfig] = None,
              scheme: Optional[QuantScheme] = None) -> QuantizedNetwork:
    """Fine-tunes a copy of ``net`` through fake-quantization with Adam and plateau lr reduction."""
    cfg = cfg or QatConfig()
    qnet = ptq_int8(net, train, scheme)
    if cfg.epochs == 0:
        return qnet
    model = qnet.network
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    plateau = ReduceLROnPlateau(cfg.lr, cfg.plateau_factor, cfg.plateau_patience)
    curve = []
    for epoch in range(cfg.epochs):
        lr = plateau.lr
        loss, acc = train_epoch(model, train, cfg.batch_size, rng, lambda: optimizer.step(lr), epoch,
                                qnet.hooks)
        curve.append(EpochStats(epoch=epoch, loss=loss, accuracy=acc, lr=lr))
        plateau.step(loss)
        logger.info(f"QAT epoch {epoch + 1}/{cfg.epochs} lr {lr:.2e} loss {loss:.4f} acc {acc:.4f}")
    qnet.curve = curve
    return qnet

