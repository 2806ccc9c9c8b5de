"""
Datasets: seeded synthetic class-conditional patterns and CIFAR-10 binary batches.
"""
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from aimc_bench.errors import DatasetFormatError, EmptyDatasetError

logger = logging.getLogger(__name__)

CIFAR_RECORD_BYTES = 3073
CIFAR_SIDE = 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"Labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def require_nonempty(self) -> None:
        if len(self) == 0:
            raise EmptyDatasetError(f"The {self.split} split is empty")

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices], self.num_classes, self.split)

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield self.images[idx], self.labels[idx]


class DatasetSplits(NamedTuple):
    train: Dataset
    test: Dataset


class SynthSpec(BaseModel):
    num_classes: int = Field(10, ge=2)
    image_side: int = Field(16, ge=4)
    channels: int = Field(3, ge=1)
    train_size: int = Field(1000, ge=1)
    test_size: int = Field(500, ge=1)
    margin: float = Field(0.5, ge=0.0, le=1.0)
    max_shift: int = Field(2, ge=0)
    smoothing: int = Field(2, ge=0)
    seed: int = 0


def _smooth(fields: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        fields = (fields
                  + np.roll(fields, 1, axis=-1) + np.roll(fields, -1, axis=-1)
                  + np.roll(fields, 1, axis=-2) + np.roll(fields, -1, axis=-2)) / 5.0
    return fields


def _draw_split(spec: SynthSpec, prototypes: np.ndarray, size: int, rng: np.random.Generator,
                split: str) -> Dataset:
    labels = rng.permutation(np.arange(size) % spec.num_classes)
    noise = rng.normal(size=(size, spec.channels, spec.image_side, spec.image_side))
    images = spec.margin * prototypes[labels] + (1.0 - spec.margin) * noise
    if spec.max_shift:
        shifts = rng.integers(-spec.max_shift, spec.max_shift + 1, size=(size, 2))
        for i, (dy, dx) in enumerate(shifts):
            images[i] = np.roll(images[i], (int(dy), int(dx)), axis=(1, 2))
    return Dataset(images.astype(np.float32), labels.astype(np.int64), spec.num_classes, split)


def synth_dataset(spec: SynthSpec, seed: Optional[int] = None) -> DatasetSplits:
    """Class prototypes are smoothed Gaussian fields; samples mix prototype and noise by ``margin``."""
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    shape = (spec.num_classes, spec.channels, spec.image_side, spec.image_side)
    prototypes = _smooth(rng.normal(size=shape), spec.smoothing)
    prototypes /= prototypes.reshape(spec.num_classes, -1).std(axis=1)[:, None, None, None]
    train = _draw_split(spec, prototypes, spec.train_size, rng, "train")
    test = _draw_split(spec, prototypes, spec.test_size, rng, "test")
    logger.info(f"Synthetic dataset: {len(train)} train / {len(test)} test, "
                f"{spec.num_classes} classes, margin {spec.margin}, seed {seed}")
    return DatasetSplits(train, test)


def load_cifar10_binary(path: Union[str, Path], split: str = "train") -> Dataset:
    data = Path(path).read_bytes()
    usable = len(data) - len(data) % CIFAR_RECORD_BYTES
    if usable != len(data):
        raise DatasetFormatError(str(path), usable,
                                 f"truncated record ({len(data) - usable} of {CIFAR_RECORD_BYTES} bytes)")
    if not data:
        raise DatasetFormatError(str(path), 0, "file holds no records")
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= 10)
    if bad.size:
        raise DatasetFormatError(str(path), int(bad[0]) * CIFAR_RECORD_BYTES,
                                 f"label byte {labels[bad[0]]} outside [0, 10)")
    images = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.float32) / 255.0
    logger.info(f"Loaded {len(labels)} CIFAR-10 records from {path}")
    return Dataset(images, labels, 10, split)


def load_cifar10(directory: Union[str, Path]) -> DatasetSplits:
    parts = [load_cifar10_binary(os.path.join(directory, name), "train") for name in CIFAR_TRAIN_FILES]
    train = Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]), 10, "train")
    test = load_cifar10_binary(os.path.join(directory, CIFAR_TEST_FILE), "test")
    return DatasetSplits(train, test)


def normalize_splits(splits: DatasetSplits) -> DatasetSplits:
    """Per-channel standardization with statistics of the train split."""
    mean = splits.train.images.mean(axis=(0, 2, 3), keepdims=True)
    std = splits.train.images.std(axis=(0, 2, 3), keepdims=True)
    std = np.where(std > 0, std, 1.0)

    def apply(ds: Dataset) -> Dataset:
        return Dataset(((ds.images - mean) / std).astype(np.float32), ds.labels, ds.num_classes, ds.split)

    return DatasetSplits(apply(splits.train), apply(splits.test))
