"""
Run presets, keyed by name.

``desk`` is the minutes-scale synthetic setup, ``paper`` the complete NB201
macro on CIFAR-10 with the standard recipe and the default PCM hardware, and
``noiseless`` is ``desk`` with every analog noise source and drift switched
off and 16-bit converters.
"""
import copy
import json
import logging
import os
from typing import Any, Dict, Optional

from munch import Munch, munchify
from pydantic import ValidationError

from aimc_bench.errors import ConfigError
from aimc_bench.models import RunConfig

logger = logging.getLogger(__name__)

CONFIG_ENV = "AIMC_BENCH_CONFIG"
REMOTE_LOG_ENV = "AIMC_BENCH_REMOTE_LOG"

run_presets: Munch = munchify(
    {
        "desk": {
            "dataset": {
                "synthetic": {
                    "num_classes": 10,
                    "image_side": 16,
                    "channels": 3,
                    "train_size": 1000,
                    "test_size": 500,
                    "margin": 0.5,
                    "max_shift": 2,
                    "seed": 0,
                },
            },
            "macro": {"stem_channels": 8, "cells_per_stage": 1, "input_hw": 16, "num_classes": 10},
            "train": {
                "epochs": 10,
                "base_lr": 0.1,
                "momentum": 0.9,
                "weight_decay": 5e-4,
                "batch_size": 64,
                # augmentation is for natural images only
                "hflip_p": 0.0,
                "pad_crop": 0,
                "normalize": False,
            },
            "qat": {"epochs": 3, "lr": 1e-3, "weight_decay": 1e-4},
            "hardware": {"eval_repeats": 25},
            "hwt": {"eta": 0.1, "from_pretrained": True},
            "scope": {"kind": "sample", "count": 125, "seed": 0},
            "output": {"table": "benchmark.jsonl"},
            "seed": 0,
        },

        "paper": {
            "dataset": {"cifar10_dir": "data/cifar-10-batches-bin"},
            "macro": {"stem_channels": 16, "cells_per_stage": 5, "input_hw": 32, "num_classes": 10},
            "train": {
                "epochs": 200,
                "base_lr": 0.1,
                "momentum": 0.9,
                "weight_decay": 5e-4,
                "batch_size": 256,
                "hflip_p": 0.5,
                "pad_crop": 4,
                "normalize": True,
            },
            "qat": {"epochs": 10, "lr": 1e-3, "weight_decay": 1e-4},
            "hardware": {
                "dac_bits": 8,
                "adc_bits": 8,
                "output_noise_sigma": 0.04,
                "prog_noise_scale": 1.0,
                "read_noise_scale": 1.0,
                "global_drift_compensation": True,
                "eval_repeats": 25,
            },
            "hwt": {"eta": 0.1, "from_pretrained": True},
            "scope": {"kind": "full"},
            "output": {"table": "benchmark_full.jsonl"},
            "seed": 0,
        },
    }
)

run_presets.noiseless = munchify(copy.deepcopy(run_presets.desk.toDict()))
run_presets.noiseless.hardware = munchify({
    "dac_bits": 16,
    "adc_bits": 16,
    "output_noise_sigma": 0.0,
    "prog_noise_scale": 0.0,
    "read_noise_scale": 0.0,
    "drift_enabled": False,
    "eval_repeats": 1,
})


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def get_run_config(preset: str = "desk", overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    if preset not in run_presets:
        raise ConfigError(f"Unknown preset '{preset}', expected one of {sorted(run_presets)}")
    raw = deep_merge(run_presets[preset].toDict(), overrides or {})
    if "cifar10_dir" in (overrides or {}).get("dataset", {}):
        raw["dataset"].pop("synthetic", None)
    elif "synthetic" in (overrides or {}).get("dataset", {}):
        raw["dataset"].pop("cifar10_dir", None)
    raw["preset"] = preset
    if os.environ.get(REMOTE_LOG_ENV):
        raw.setdefault("remote_log_enabled", True)
    try:
        return RunConfig(**raw)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"Invalid run config (preset '{preset}'): {problems}") from e


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """Reads a JSON config file ``{"preset": ..., <overrides>}``; the path may come from the environment."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        logger.info("No config file given, using the desk preset")
        return get_run_config("desk")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    preset = raw.pop("preset", "desk")
    config = get_run_config(preset, raw)
    logger.info(f"Using config {path} (preset {preset}, digest {config.digest()[:12]})")
    return config
