import logging
from typing import Callable, List, Literal, Optional, Protocol, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from aimc_bench.errors import DivergenceError
from aimc_bench.nnet_engine.datasets import Dataset
from aimc_bench.nnet_engine.layers import ExecutionHooks, ForwardContext, Module, softmax_cross_entropy
from aimc_bench.nnet_engine.optim import SGD, cosine_lr

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    epochs: int = Field(10, ge=1)
    base_lr: float = Field(0.1, gt=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    nesterov: bool = True
    weight_decay: float = Field(5e-4, ge=0.0)
    batch_size: int = Field(64, ge=1)
    lr_schedule: Literal["cosine", "constant"] = "cosine"
    hflip_p: float = Field(0.0, ge=0.0, le=1.0)
    pad_crop: int = Field(0, ge=0)
    normalize: bool = False
    seed: int = 0


class EpochStats(BaseModel):
    epoch: int
    loss: float
    accuracy: float
    lr: float


class TrainResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    network: Module
    curve: List[EpochStats]


class Classifier(Protocol):
    def logits(self, images: np.ndarray) -> np.ndarray:
        ...


def augment(images: np.ndarray, hflip_p: float, pad_crop: int, rng: np.random.Generator) -> np.ndarray:
    if not hflip_p and not pad_crop:
        return images
    out = images.copy()
    if hflip_p:
        flip = rng.random(len(out)) < hflip_p
        out[flip] = out[flip, :, :, ::-1]
    if pad_crop:
        p = pad_crop
        h, w = out.shape[2:]
        padded = np.pad(out, ((0, 0), (0, 0), (p, p), (p, p)))
        offsets = rng.integers(0, 2 * p + 1, size=(len(out), 2))
        for i, (dy, dx) in enumerate(offsets):
            out[i] = padded[i, :, dy:dy + h, dx:dx + w]
    return out


def _non_finite_state(net: Module) -> Optional[str]:
    """Name of the first parameter or buffer holding NaN/Inf, if any."""
    for p in net.parameters():
        if not np.all(np.isfinite(p.value)):
            return p.name or "a parameter"
    for module in net.modules():
        for name, buf in module.own_buffers().items():
            if not np.all(np.isfinite(buf)):
                return name
    return None


def train_epoch(net: Module, data: Dataset, batch_size: int, rng: np.random.Generator,
                step: Callable[[], None], epoch: int, hooks: Optional[ExecutionHooks] = None,
                hflip_p: float = 0.0, pad_crop: int = 0) -> Tuple[float, float]:
    """One pass over ``data`` in a seeded order; returns (mean loss, accuracy)."""
    ctx = ForwardContext(train=True, hooks=hooks or ExecutionHooks())
    order = rng.permutation(len(data))
    total_loss = 0.0
    correct = 0
    for images, labels in data.batches(batch_size, order):
        images = augment(images, hflip_p, pad_crop, rng)
        logits = net.forward(images, ctx)
        loss, dlogits = softmax_cross_entropy(logits, labels)
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        net.zero_grad()
        net.backward(dlogits.astype(logits.dtype, copy=False))
        step()
        bad = _non_finite_state(net)
        if bad is not None:
            raise DivergenceError(epoch, f"non-finite values in {bad}")
        total_loss += loss * len(labels)
        correct += int((logits.argmax(axis=1) == labels).sum())
    return total_loss / len(data), correct / len(data)


def sgd_train(net: Module, train: Dataset, cfg: TrainConfig,
              hooks: Optional[ExecutionHooks] = None) -> TrainResult:
    """Trains ``net`` in place with Nesterov SGD and a per-epoch cosine schedule."""
    train.require_nonempty()
    rng = np.random.default_rng(cfg.seed)
    optimizer = SGD(net.parameters(), cfg.momentum, cfg.nesterov, cfg.weight_decay)
    curve = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr) if cfg.lr_schedule == "cosine" else cfg.base_lr
        loss, acc = train_epoch(net, train, cfg.batch_size, rng, lambda: optimizer.step(lr), epoch,
                                hooks, cfg.hflip_p, cfg.pad_crop)
        curve.append(EpochStats(epoch=epoch, loss=loss, accuracy=acc, lr=lr))
        logger.info(f"epoch {epoch + 1}/{cfg.epochs} lr {lr:.4f} loss {loss:.4f} acc {acc:.4f}")
    return TrainResult(network=net, curve=curve)


def accuracy_from_predictions(predictions: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predictions == labels))


def evaluate_accuracy(model: Classifier, test: Dataset) -> float:
    """Top-1 accuracy as a fraction; ``model`` is anything exposing ``logits(images)``."""
    test.require_nonempty()
    return accuracy_from_predictions(model.logits(test.images).argmax(axis=1), test.labels)
