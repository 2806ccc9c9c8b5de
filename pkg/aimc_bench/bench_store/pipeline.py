"""
The per-architecture benchmark pipeline.

Stages run in a fixed order and each one draws its randomness from a seed
derived from (seed, ArchIndex), so the same inputs always give the same
record. A failure in any stage aborts the architecture; partial records are
never returned.
"""
import logging
import os
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from aimc_bench.analog_sim import (
    DRIFT_TIMES,
    AnalogAccuracy,
    HardwareConfig,
    HwtConfig,
    ProgrammedNetwork,
    analog_evaluate,
    hwt_train,
    program_network,
)
from aimc_bench.bench_store.models import AccuracyStat, BenchmarkRecord, Provenance
from aimc_bench.errors import PipelineStageError
from aimc_bench.models import DatasetSpec, RunConfig
from aimc_bench.nnet_engine import (
    Dataset,
    DatasetSplits,
    QatConfig,
    QuantScheme,
    TrainConfig,
    build_network,
    evaluate_accuracy,
    load_cifar10,
    normalize_splits,
    parameter_count,
    ptq_int8,
    qat_train,
    save_weights,
    sgd_train,
    synth_dataset,
)
from aimc_bench.search_space import MacroConfig, decode, format_encoding, to_nb201_string, validate_encoding
from aimc_bench.utils import config_digest

logger = logging.getLogger(__name__)

STAGES = ("digital_train", "save_weights", "ptq", "qat", "program_digital", "noisy_eval", "noisy_drift",
          "hwt_train", "program_hwt", "analog_eval", "analog_drift")

# seeds drawn per record; evaluation stages use one seed per horizon offset from their base
SEED_NAMES = ("init", "train", "qat", "program_digital", "noisy_eval", "hwt", "program_hwt", "analog_eval")

NOTE_QUANTIZED_ENDS = "stem and classifier are quantized like every other conv/affine layer"
NOTE_ONE_PROGRAMMING = "one programming instance per branch reused for t0 and every drift time"


def stage_seeds(seed: int, arch_index: int) -> Dict[str, int]:
    state = np.random.SeedSequence([seed, arch_index]).generate_state(len(SEED_NAMES))
    return {name: int(value) for name, value in zip(SEED_NAMES, state)}


@contextmanager
def _stage(name: str, enc: Sequence[int]) -> Iterator[None]:
    logger.debug(f"[{format_encoding(enc)}] {name}")
    try:
        yield
    except Exception as e:
        logger.warning(f"[{format_encoding(enc)}] stage {name} failed: {e}")
        raise PipelineStageError(name, e) from e


def _percent(fraction: float) -> float:
    return min(100.0, max(0.0, 100.0 * fraction))


def _stat(acc: AnalogAccuracy) -> AccuracyStat:
    return AccuracyStat(mean=_percent(acc.mean), std=min(100.0, 100.0 * acc.std))


def _drift_series(pnet: ProgrammedNetwork, test: Dataset, base_seed: int) -> List[AccuracyStat]:
    return [_stat(analog_evaluate(pnet, test, t=t, seed=base_seed + k + 1)) for k, t in enumerate(DRIFT_TIMES)]


def load_splits(spec: DatasetSpec, normalize: bool = False) -> DatasetSplits:
    """Materializes the dataset a run config names."""
    if spec.synthetic is not None:
        splits = synth_dataset(spec.synthetic)
    else:
        splits = load_cifar10(spec.cifar10_dir)
    return normalize_splits(splits) if normalize else splits


def run_full_pipeline(enc: Sequence[int], dataset: DatasetSplits, macro: MacroConfig, train_cfg: TrainConfig,
                      hw: HardwareConfig, seed: int, qat_cfg: Optional[QatConfig] = None,
                      quant: Optional[QuantScheme] = None, hwt_cfg: Optional[HwtConfig] = None,
                      digest: Optional[str] = None, weights_dir: Optional[str] = None) -> BenchmarkRecord:
    """
    Trains, quantizes, programs and evaluates one cell.

    Order: digital training (baseline), PTQ, QAT, programming of the digital
    network (noisy accuracy at t0 and at every drift time), hardware-aware
    training, programming of the HWT network (analog accuracy at t0 and at
    every drift time).

    :param digest: config digest stored in provenance; computed from the given
        configs when omitted.
    :param weights_dir: when set, digital weights are saved there and their
        digest recorded.
    :raises PipelineStageError: naming the first stage that failed.
    """
    enc = validate_encoding(enc)
    index = decode(enc)
    qat_cfg = qat_cfg or QatConfig()
    quant = quant or QuantScheme()
    hwt_cfg = hwt_cfg or HwtConfig()
    seeds = stage_seeds(seed, index)
    if digest is None:
        digest = config_digest({
            "macro": macro.model_dump(mode="json"), "train": train_cfg.model_dump(mode="json"),
            "qat": qat_cfg.model_dump(mode="json"), "quant": quant.model_dump(mode="json"),
            "hardware": hw.model_dump(mode="json"), "hwt": hwt_cfg.model_dump(mode="json"), "seed": seed,
        })
    train, test = dataset
    train_cfg = train_cfg.model_copy(update={"seed": seeds["train"]})
    logger.info(f"[{format_encoding(enc)}] pipeline start (index {index}, seed {seed})")

    with _stage("digital_train", enc):
        net = build_network(enc, macro, seed=seeds["init"])
        sgd_train(net, train, train_cfg)
        baseline = _percent(evaluate_accuracy(net, test))
    weights_digest = None
    if weights_dir:
        with _stage("save_weights", enc):
            os.makedirs(weights_dir, exist_ok=True)
            weights_digest = save_weights(net, os.path.join(weights_dir, f"{index:05d}.npz"))

    with _stage("ptq", enc):
        ptq_acc = _percent(evaluate_accuracy(ptq_int8(net, train, quant), test))
    with _stage("qat", enc):
        qnet = qat_train(net, train, qat_cfg.model_copy(update={"seed": seeds["qat"]}), quant)
        qat_acc = _percent(evaluate_accuracy(qnet, test))

    with _stage("program_digital", enc):
        pnet = program_network(net, hw, seeds["program_digital"], train)
    with _stage("noisy_eval", enc):
        noisy = _stat(analog_evaluate(pnet, test, t=pnet.t0, seed=seeds["noisy_eval"]))
    with _stage("noisy_drift", enc):
        noisy_drift = _drift_series(pnet, test, seeds["noisy_eval"])

    with _stage("hwt_train", enc):
        hwt_net = hwt_train(net, train, hw, hwt_cfg, train_cfg, seed=seeds["hwt"]).network
    with _stage("program_hwt", enc):
        hwt_pnet = program_network(hwt_net, hw, seeds["program_hwt"], train)
    with _stage("analog_eval", enc):
        analog = _stat(analog_evaluate(hwt_pnet, test, t=hwt_pnet.t0, seed=seeds["analog_eval"]))
    with _stage("analog_drift", enc):
        analog_drift = _drift_series(hwt_pnet, test, seeds["analog_eval"])

    notes = [NOTE_QUANTIZED_ENDS, NOTE_ONE_PROGRAMMING] + pnet.notes
    notes += [f"hwt: {note}" for note in hwt_pnet.notes if note not in pnet.notes]
    record = BenchmarkRecord(
        arch_index=index,
        arch=list(enc),
        nb201=to_nb201_string(enc),
        baseline_acc=baseline,
        ptq_acc=ptq_acc,
        qat_acc=qat_acc,
        noisy_acc=noisy,
        analog_acc=analog,
        noisy_drift=noisy_drift,
        analog_drift=analog_drift,
        param_count=parameter_count(net),
        provenance=Provenance(seed=seed, stage_seeds=seeds, config_digest=digest,
                              weights_digest=weights_digest, notes=notes),
    )
    logger.info(f"[{format_encoding(enc)}] baseline {baseline:.2f} ptq {ptq_acc:.2f} qat {qat_acc:.2f} "
                f"noisy {noisy.mean:.2f} analog {analog.mean:.2f} avm {record.avm:.2f}")
    return record


def run_pipeline_for_config(enc: Sequence[int], config: RunConfig,
                            splits: Optional[DatasetSplits] = None) -> BenchmarkRecord:
    """``run_full_pipeline`` with every setting taken from a run config."""
    splits = splits or load_splits(config.dataset, config.train.normalize)
    return run_full_pipeline(enc, splits, config.macro, config.train, config.hardware, config.seed,
                             qat_cfg=config.qat, quant=config.quant, hwt_cfg=config.hwt, digest=config.digest(),
                             weights_dir=config.output.weights_dir)
