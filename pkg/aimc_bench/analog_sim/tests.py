import math

import numpy as np
import pytest

from aimc_bench.analog_sim import (
    DRIFT_TIMES,
    AnalogStats,
    DriftTimes,
    HardwareConfig,
    HwtConfig,
    ProgrammedLayer,
    analog_evaluate,
    analog_matvec,
    apply_drift,
    compensation_factor,
    fold_unit,
    hwt_train,
    ideal_readout,
    program_network,
    program_weights,
    reconstruct_weights,
    sample_drift_exponents,
)
from aimc_bench.errors import DriftTimeError, UnsupportedLayerError
from aimc_bench.nnet_engine import ReLU, SynthSpec, TrainConfig, build_network, evaluate_accuracy, sgd_train, synth_dataset
from aimc_bench.search_space import MacroConfig

TINY = MacroConfig(stem_channels=4, cells_per_stage=1, input_hw=8)


def _layer(w, hw, rng, in_bound=1.0, out_bound=None, bias=None):
    g_plus, g_minus, w_max = program_weights(w, hw, rng)
    layer = ProgrammedLayer(
        name="layer",
        g_plus=g_plus,
        g_minus=g_minus,
        nu_plus=sample_drift_exponents(g_plus.shape, hw, rng),
        nu_minus=sample_drift_exponents(g_minus.shape, hw, rng),
        w_max=w_max,
        g_max=hw.g_max,
        t0=hw.drift_t0_seconds,
        bias=np.zeros(w.shape[0]) if bias is None else bias,
        in_bound=in_bound,
        out_bound=float(w.shape[1]) if out_bound is None else out_bound,
    )
    layer.reference_readout = float(np.sum(np.abs(ideal_readout(layer, np.ones((1, layer.fan_in)), layer.t0))))
    return layer


@pytest.fixture(scope="module")
def trained():
    splits = synth_dataset(SynthSpec(num_classes=2, image_side=8, train_size=128, test_size=300,
                                     margin=0.9, max_shift=0))
    net = build_network((2, 3, 4, 0, 2, 3), TINY, seed=0)
    sgd_train(net, splits.train, TrainConfig(epochs=6, batch_size=16, base_lr=0.05))
    return net, splits


def test_apply_drift_closed_form():
    rng = np.random.default_rng(0)
    g = rng.uniform(0, 25, 10_000)
    nu = rng.uniform(0, 0.2, 10_000)
    t = rng.uniform(20, 3e6, 10_000)
    drifted = apply_drift(g, nu, t, 20.0)
    expected = np.array([gi * math.pow(ti / 20.0, -ni) for gi, ni, ti in zip(g, nu, t)])
    assert np.max(np.abs(drifted - expected) / np.maximum(expected, 1e-300)) <= 1e-12
    value = apply_drift(np.array([10.0]), np.array([0.06]), 2000.0, 20.0)[0]
    assert abs(value - 10.0 * math.exp(-0.06 * math.log(100.0))) / value <= 1e-12
    assert value == pytest.approx(7.5858, abs=1e-4)


def test_apply_drift_identities_and_range():
    g = np.array([0.0, 1.0, 25.0])
    assert np.array_equal(apply_drift(g, np.full(3, 0.06), 20.0, 20.0), g)
    assert np.array_equal(apply_drift(g, np.zeros(3), 2592000.0, 20.0), g)
    with pytest.raises(DriftTimeError):
        apply_drift(g, np.zeros(3), 10.0, 20.0)


def test_drift_exponents_are_nonnegative():
    nu = sample_drift_exponents((100, 100), HardwareConfig(), np.random.default_rng(1))
    assert nu.min() >= 0.0
    assert abs(nu.mean() - 0.06) < 0.01
    assert np.array_equal(sample_drift_exponents((3,), HardwareConfig(drift_enabled=False), None), np.zeros(3))


def test_noiseless_programming_reconstructs_weights():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(8, 12))
    g_plus, g_minus, w_max = program_weights(w, HardwareConfig.noiseless(), rng)
    assert np.all(g_plus * g_minus == 0)
    assert np.allclose(reconstruct_weights(g_plus, g_minus, w_max, 25.0), w, rtol=0, atol=1e-12)


def test_programming_keeps_zero_weights_and_clamps():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(20, 20))
    w[::2] = 0.0
    hw = HardwareConfig(prog_noise_scale=50.0)
    g_plus, g_minus, _ = program_weights(w, hw, rng)
    assert np.all(g_plus[::2] == 0) and np.all(g_minus[::2] == 0)
    assert np.all(g_plus * g_minus == 0)
    for g in (g_plus, g_minus):
        assert g.min() >= 0.0 and g.max() <= hw.g_max


def test_programming_error_grows_with_noise_scale():
    errors = []
    for scale in (0.0, 0.5, 1.0, 2.0):
        hw = HardwareConfig(prog_noise_scale=scale)
        total = 0.0
        for seed in range(32):
            rng = np.random.default_rng(seed)
            w = rng.normal(size=(100, 100))
            g_plus, g_minus, w_max = program_weights(w, hw, rng)
            total += np.mean(np.abs(reconstruct_weights(g_plus, g_minus, w_max, hw.g_max) - w))
        errors.append(total / 32)
    assert errors[0] == pytest.approx(0.0, abs=1e-12)
    assert errors == sorted(errors) and len(set(errors)) == 4


def test_noiseless_limit_matches_digital_mvm():
    rng = np.random.default_rng(4)
    hw = HardwareConfig.noiseless(adc_bound="worst_case")
    for _ in range(50):
        out_features, fan_in = rng.integers(1, 40, size=2)
        w = rng.normal(size=(out_features, fan_in))
        x = rng.normal(size=(16, fan_in))
        in_bound = float(np.max(np.abs(x)))
        layer = _layer(w, hw, rng, in_bound=in_bound)
        analog = analog_matvec(layer, x, hw, hw.drift_t0_seconds, rng)
        full_range = layer.out_bound * in_bound * layer.w_max
        assert np.max(np.abs(analog - x @ w.T)) <= full_range * 2 ** -15


def test_zero_input_gives_zero_output_without_output_noise():
    rng = np.random.default_rng(5)
    hw = HardwareConfig(output_noise_sigma=0.0)
    layer = _layer(rng.normal(size=(6, 10)), hw, rng)
    out = analog_matvec(layer, np.zeros((3, 10)), hw, 3600.0, rng)
    assert np.array_equal(out, np.zeros((3, 6)))


def test_output_variance_scales_with_sigma_squared():
    rng = np.random.default_rng(6)
    base = HardwareConfig.noiseless()
    layer = _layer(rng.normal(size=(4, 10)), base, rng)
    x = np.repeat(rng.normal(size=(1, 10)), 4000, axis=0)
    layer.in_bound = float(np.max(np.abs(x)))
    sigmas = np.array([0.01, 0.02, 0.03, 0.04, 0.05])
    variances = []
    for sigma in sigmas:
        hw = base.model_copy(update={"output_noise_sigma": float(sigma)})
        out = analog_matvec(layer, x, hw, hw.drift_t0_seconds, rng)
        variances.append(out.var(axis=0).mean())
    slope, intercept = np.polyfit(sigmas ** 2, variances, 1)
    predicted = slope * sigmas ** 2 + intercept
    r2 = 1 - np.sum((variances - predicted) ** 2) / np.sum((variances - np.mean(variances)) ** 2)
    assert r2 >= 0.99


def test_compensation_is_one_at_t0():
    rng = np.random.default_rng(7)
    hw = HardwareConfig()
    layer = _layer(rng.normal(size=(5, 9)), hw, rng)
    assert compensation_factor(layer, hw, hw.drift_t0_seconds) == 1.0


def test_homogeneous_drift_is_exactly_compensated():
    rng = np.random.default_rng(8)
    hw = HardwareConfig(drift_nu_std=0.0, prog_noise_scale=0.0)
    layer = _layer(rng.normal(size=(7, 11)), hw, rng)
    x = rng.normal(size=(5, 11))
    undrifted = ideal_readout(layer, x, layer.t0)
    for t in DRIFT_TIMES:
        alpha = compensation_factor(layer, hw, t)
        assert abs(alpha - (t / layer.t0) ** 0.06) <= 1e-10
        assert np.allclose(ideal_readout(layer, x, t) * alpha, undrifted, rtol=0, atol=1e-10)


def test_compensation_non_decreasing_for_one_sided_weights():
    rng = np.random.default_rng(9)
    hw = HardwareConfig()
    layer = _layer(np.abs(rng.normal(size=(6, 10))), hw, rng)
    alphas = [compensation_factor(layer, hw, t) for t in (hw.drift_t0_seconds,) + DRIFT_TIMES]
    assert alphas == sorted(alphas)
    assert compensation_factor(layer, hw.model_copy(update={"global_drift_compensation": False}), 86400.0) == 1.0


def test_conductances_stay_in_range_after_drift():
    rng = np.random.default_rng(10)
    hw = HardwareConfig(prog_noise_scale=5.0)
    layer = _layer(rng.normal(size=(10, 10)), hw, rng)
    for t in DRIFT_TIMES:
        for g in layer.conductances(t):
            assert g.min() >= 0.0 and g.max() <= hw.g_max


def test_dac_saturation_is_counted():
    rng = np.random.default_rng(11)
    hw = HardwareConfig.noiseless()
    layer = _layer(rng.normal(size=(3, 4)), hw, rng, in_bound=0.5)
    stats = AnalogStats()
    analog_matvec(layer, np.full((2, 4), 2.0), hw, hw.drift_t0_seconds, rng, stats)
    assert stats.dac_clips == 8 and stats.dac_samples == 8


def test_unsupported_unit_is_rejected():
    with pytest.raises(UnsupportedLayerError):
        fold_unit(ReLU("relu"))


def test_program_network_is_deterministic_and_leaves_net_untouched(trained):
    net, splits = trained
    before = net.state_dict()
    a = program_network(net, HardwareConfig(), seed=3, calib=splits.train)
    b = program_network(net, HardwareConfig(), seed=3, calib=splits.train)
    assert a.layers.keys() == b.layers.keys()
    for name in a.layers:
        assert np.array_equal(a.layers[name].g_plus, b.layers[name].g_plus)
        assert np.array_equal(a.layers[name].nu_minus, b.layers[name].nu_minus)
    assert all(np.array_equal(before[k], v) for k, v in net.state_dict().items())
    assert [u.name for u in net.units()] == list(a.layers)


def test_analog_evaluate_same_seed_is_identical(trained):
    net, splits = trained
    hw = HardwareConfig(eval_repeats=3)
    pnet = program_network(net, hw, seed=0, calib=splits.train)
    first = analog_evaluate(pnet, splits.test, hw, t=3600.0, seed=5)
    second = analog_evaluate(pnet, splits.test, hw, t=3600.0, seed=5)
    assert (first.mean, first.std) == (second.mean, second.std)
    assert 0.0 <= first.mean <= 1.0 and len(first.repeats) == 3


def test_noiseless_evaluation_matches_digital(trained):
    net, splits = trained
    hw = HardwareConfig.noiseless(eval_repeats=3)
    pnet = program_network(net, hw, seed=0, calib=splits.train)
    result = analog_evaluate(pnet, splits.test, hw, seed=0)
    assert result.std == 0.0
    assert abs(result.mean - evaluate_accuracy(net, splits.test)) <= 0.02


def test_eight_bit_converters_preserve_decisions(trained):
    net, splits = trained
    hw = HardwareConfig.noiseless(dac_bits=8, adc_bits=8)
    pnet = program_network(net, hw, seed=0, calib=splits.train)
    analog = pnet.logits(splits.test.images).argmax(axis=1)
    digital = pnet.folded_logits(splits.test.images).argmax(axis=1)
    assert np.mean(analog == digital) >= 0.99


def test_hwt_without_noise_matches_sgd_train():
    splits = synth_dataset(SynthSpec(image_side=8, train_size=48, test_size=8))
    cfg = TrainConfig(epochs=2, batch_size=16)
    start = build_network((2, 3, 4, 0, 2, 3), TINY, seed=2)
    reference = build_network((2, 3, 4, 0, 2, 3), TINY, seed=2)
    plain = sgd_train(reference, splits.train, cfg)
    hwt = hwt_train(start, splits.train, HardwareConfig(), HwtConfig(eta=0.0, output_noise=0.0), cfg, seed=9)
    assert [e.loss for e in plain.curve] == [e.loss for e in hwt.curve]
    hwt_state = hwt.network.state_dict()
    assert all(np.array_equal(v, hwt_state[k]) for k, v in reference.state_dict().items())


def test_hwt_with_noise_is_seeded_and_leaves_input_untouched():
    splits = synth_dataset(SynthSpec(image_side=8, train_size=48, test_size=8))
    cfg = TrainConfig(epochs=1, batch_size=16)
    net = build_network((2, 3, 4, 0, 2, 3), TINY, seed=2)
    before = net.state_dict()
    a = hwt_train(net, splits.train, HardwareConfig(), HwtConfig(), cfg, seed=1).network.state_dict()
    b = hwt_train(net, splits.train, HardwareConfig(), HwtConfig(), cfg, seed=1).network.state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert all(np.array_equal(before[k], v) for k, v in net.state_dict().items())


def test_drift_times_validation():
    assert DriftTimes().times == DRIFT_TIMES
    with pytest.raises(ValueError):
        DriftTimes(times=(60.0, 30.0))
    with pytest.raises(ValueError):
        DriftTimes(times=(10.0, 60.0), t0=20.0)


def test_compensation_factor_stays_positive_for_mixed_signs():
    rng = np.random.default_rng(12)
    hw = HardwareConfig()
    layer = _layer(rng.normal(size=(6, 10)), hw, rng)
    for t in DRIFT_TIMES + (1e6,):
        assert compensation_factor(layer, hw, t) > 0.0


def test_compensation_recovers_accuracy_under_spread_drift(trained):
    net, splits = trained
    hw = HardwareConfig(prog_noise_scale=0.0, read_noise_scale=0.0, output_noise_sigma=0.0,
                        drift_nu_mean=0.1, drift_nu_std=0.02, eval_repeats=1)
    pnet = program_network(net, hw, seed=4, calib=splits.train)
    off = hw.model_copy(update={"global_drift_compensation": False})
    compensated = analog_evaluate(pnet, splits.test, hw, t=1e6, seed=0)
    uncompensated = analog_evaluate(pnet, splits.test, off, t=1e6, seed=0)
    assert compensated.mean >= uncompensated.mean
