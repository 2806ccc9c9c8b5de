import copy
import logging
from typing import Optional

import numpy as np

from aimc_bench.analog_sim.models import HardwareConfig, HwtConfig
from aimc_bench.nnet_engine import Dataset, ExecutionHooks, Network, TrainConfig, TrainResult, build_network, sgd_train

logger = logging.getLogger(__name__)


class HwtHooks(ExecutionHooks):
    """Additive Gaussian weight noise (eta * max|w|) and unit output noise (sigma * max|y|).

    Noise is drawn afresh on every training forward pass and treated as a
    constant by the backward pass.
    """

    def __init__(self, eta: float, output_sigma: float, rng: np.random.Generator):
        self.eta = eta
        self.output_sigma = output_sigma
        self.rng = rng

    def weight(self, layer, w):
        if self.eta <= 0:
            return w
        std = self.eta * float(np.max(np.abs(w)))
        return w + (self.rng.normal(size=w.shape) * std).astype(w.dtype)

    def output(self, unit, y):
        if self.output_sigma <= 0:
            return y
        std = self.output_sigma * float(np.max(np.abs(y)))
        return y + (self.rng.normal(size=y.shape) * std).astype(y.dtype)


def hwt_train(net: Network, train: Dataset, hw: HardwareConfig, hwt_cfg: Optional[HwtConfig] = None,
              train_cfg: Optional[TrainConfig] = None, seed: int = 0) -> TrainResult:
    """Hardware-aware training of a copy of ``net`` (or of a fresh network with its cell)."""
    hwt_cfg = hwt_cfg or HwtConfig()
    train_cfg = train_cfg or TrainConfig()
    if hwt_cfg.epochs is not None:
        train_cfg = train_cfg.model_copy(update={"epochs": hwt_cfg.epochs})
    if hwt_cfg.from_pretrained:
        model = copy.deepcopy(net)
    else:
        model = build_network(net.encoding, net.macro, seed=net.seed, dtype=net.dtype)
    output_sigma = hw.output_noise_sigma if hwt_cfg.output_noise is None else hwt_cfg.output_noise
    hooks = HwtHooks(hwt_cfg.eta, output_sigma, np.random.default_rng([seed, 1]))
    logger.info(f"HWT: eta {hwt_cfg.eta}, output noise {output_sigma}, {train_cfg.epochs} epochs, "
                f"{'pretrained' if hwt_cfg.from_pretrained else 'fresh'} start")
    return sgd_train(model, train, train_cfg, hooks=hooks)
