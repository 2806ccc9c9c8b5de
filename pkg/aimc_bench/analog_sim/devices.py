"""
Device-level models: differential conductance mapping, programming noise and
power-law drift of phase-change devices.
"""
from typing import Tuple

import numpy as np
from scipy.stats import truncnorm

from aimc_bench.analog_sim.models import HardwareConfig
from aimc_bench.errors import DriftTimeError


def weight_range(w: np.ndarray) -> float:
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    return peak if peak > 0 else 1.0


def map_to_conductances(w: np.ndarray, w_max: float, g_max: float) -> Tuple[np.ndarray, np.ndarray]:
    """One-sided differential mapping: positive weights on G+, negative on G-."""
    g_plus = g_max * np.maximum(w, 0.0) / w_max
    g_minus = g_max * np.maximum(-w, 0.0) / w_max
    return g_plus, g_minus


def program_conductances(target: np.ndarray, hw: HardwareConfig, rng: np.random.Generator) -> np.ndarray:
    """Additive programming noise, affine in the target conductance, on non-zero targets only."""
    programmed = target.copy()
    if hw.prog_noise_scale > 0:
        sigma = hw.prog_noise_scale * hw.g_max * (hw.prog_noise_a0 + hw.prog_noise_a1 * target / hw.g_max)
        noise = rng.normal(size=target.shape) * sigma
        programmed = np.where(target > 0, target + noise, 0.0)
    return np.clip(programmed, 0.0, hw.g_max)


def program_weights(w: np.ndarray, hw: HardwareConfig,
                    rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, float]:
    w_max = weight_range(w)
    g_plus, g_minus = map_to_conductances(w.astype(np.float64), w_max, hw.g_max)
    return program_conductances(g_plus, hw, rng), program_conductances(g_minus, hw, rng), w_max


def reconstruct_weights(g_plus: np.ndarray, g_minus: np.ndarray, w_max: float, g_max: float) -> np.ndarray:
    return (g_plus - g_minus) * (w_max / g_max)


def sample_drift_exponents(shape, hw: HardwareConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-device nu ~ Normal(mean, std) truncated at 0."""
    if not hw.drift_enabled:
        return np.zeros(shape)
    if hw.drift_nu_std == 0:
        return np.full(shape, hw.drift_nu_mean)
    lower = (0.0 - hw.drift_nu_mean) / hw.drift_nu_std
    return truncnorm.rvs(lower, np.inf, loc=hw.drift_nu_mean, scale=hw.drift_nu_std,
                         size=shape, random_state=rng)


def apply_drift(g: np.ndarray, nu: np.ndarray, t: float, t0: float) -> np.ndarray:
    """G(t) = G(t0) * (t / t0) ** (-nu)."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < t0):
        raise DriftTimeError(f"Drift time {np.min(t)} s precedes the programming time t0 = {t0} s")
    return np.asarray(g, dtype=np.float64) * np.power(t / t0, -np.asarray(nu, dtype=np.float64))
