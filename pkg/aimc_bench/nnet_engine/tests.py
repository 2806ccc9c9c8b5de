import numpy as np
import pytest

from aimc_bench.errors import DatasetFormatError, DivergenceError, EmptyDatasetError
from aimc_bench.nnet_engine import (
    Adam,
    AvgPool2d,
    BatchNorm2d,
    Cell,
    Conv2d,
    Dataset,
    ForwardContext,
    GlobalAvgPool,
    Identity,
    Linear,
    ReduceLROnPlateau,
    ReLU,
    ResidualBlock,
    SynthSpec,
    TrainConfig,
    Zero,
    build_network,
    closed_form_parameter_count,
    cosine_lr,
    evaluate_accuracy,
    fake_quant_activation,
    load_cifar10_binary,
    load_weights,
    parameter_count,
    ptq_int8,
    qat_train,
    QatConfig,
    quantize_weight,
    save_weights,
    sgd_train,
    softmax_cross_entropy,
    synth_dataset,
    train_epoch,
    weight_scale,
)
from aimc_bench.search_space import MacroConfig, encode

TINY = MacroConfig(stem_channels=4, cells_per_stage=1, input_hw=8)


def _close(analytic: float, numeric: float) -> bool:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-3) <= 1e-4


def _check_gradients(module, x, rng, train=True, coords=12):
    """Compare analytic input and parameter gradients against central differences."""
    ctx = ForwardContext(train=train, backprop=True)
    y = module.forward(x, ctx)
    upstream = rng.normal(size=y.shape)
    module.zero_grad()
    dx = module.backward(upstream)
    analytic_params = [p.grad.copy() for p in module.parameters()]

    def objective():
        return float(np.sum(module.forward(x, ForwardContext(train=train, backprop=True)) * upstream))

    eps = 1e-6
    targets = [(x, dx)] + [(p.value, g) for p, g in zip(module.parameters(), analytic_params)]
    for array, grad in targets:
        flat = array.reshape(-1)
        for i in rng.choice(flat.size, size=min(coords, flat.size), replace=False):
            saved = flat[i]
            flat[i] = saved + eps
            plus = objective()
            flat[i] = saved - eps
            minus = objective()
            flat[i] = saved
            numeric = (plus - minus) / (2 * eps)
            assert _close(grad.reshape(-1)[i], numeric), (type(module).__name__, i, grad.reshape(-1)[i], numeric)


@pytest.mark.parametrize("kernel,stride,padding", [(3, 1, 1), (3, 2, 1), (1, 1, 0)])
def test_conv2d_gradients(kernel, stride, padding):
    rng = np.random.default_rng(0)
    for _ in range(5):
        conv = Conv2d(3, 4, kernel, stride, padding, bias=True, rng=rng, dtype=np.float64)
        _check_gradients(conv, rng.normal(size=(2, 3, 6, 6)), rng)


@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradients(train):
    rng = np.random.default_rng(1)
    for _ in range(5):
        bn = BatchNorm2d(3, dtype=np.float64)
        bn.gamma.value[...] = rng.normal(size=3)
        bn.beta.value[...] = rng.normal(size=3)
        bn.running_mean[...] = rng.normal(size=3)
        bn.running_var[...] = rng.uniform(0.5, 2.0, size=3)
        _check_gradients(bn, rng.normal(size=(4, 3, 3, 3)), rng, train=train)


@pytest.mark.parametrize("make", [
    lambda rng: ReLU(),
    lambda rng: AvgPool2d(3, 1, 1),
    lambda rng: AvgPool2d(2, 2, 0),
    lambda rng: GlobalAvgPool(),
    lambda rng: Identity(),
    lambda rng: Zero(),
])
def test_parameter_free_layer_gradients(make):
    rng = np.random.default_rng(2)
    for _ in range(10):
        _check_gradients(make(rng), rng.normal(size=(2, 3, 6, 6)), rng)


def test_linear_gradients():
    rng = np.random.default_rng(3)
    for _ in range(10):
        _check_gradients(Linear(5, 4, rng=rng, dtype=np.float64), rng.normal(size=(3, 5)), rng)


def test_cell_and_residual_block_gradients():
    rng = np.random.default_rng(4)
    for enc in [(2, 3, 4, 0, 2, 3), (0, 2, 2, 4, 1, 3), (3, 3, 3, 3, 3, 3)]:
        cell = Cell(enc, 3, rng, np.float64, "cell")
        _check_gradients(cell, rng.normal(size=(2, 3, 4, 4)), rng)
    block = ResidualBlock(3, 6, rng, np.float64, "reduce")
    _check_gradients(block, rng.normal(size=(2, 3, 4, 4)), rng)


def test_network_gradients():
    rng = np.random.default_rng(5)
    net = build_network((2, 3, 4, 0, 2, 3), TINY, seed=0, dtype=np.float64)
    _check_gradients(net, rng.normal(size=(4, 3, 8, 8)), rng, coords=6)


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(5, 4))
    labels = rng.integers(0, 4, size=5)
    _, grad = softmax_cross_entropy(logits.copy(), labels)
    eps = 1e-6
    for i in range(5):
        for j in range(4):
            plus, minus = logits.copy(), logits.copy()
            plus[i, j] += eps
            minus[i, j] -= eps
            numeric = (softmax_cross_entropy(plus, labels)[0] - softmax_cross_entropy(minus, labels)[0]) / (2 * eps)
            assert _close(grad[i, j], numeric)


def test_avgpool_excludes_padding():
    x = np.ones((1, 2, 5, 5))
    y = AvgPool2d(3, 1, 1).forward(x, ForwardContext())
    assert np.allclose(y, 1.0)


def test_all_zeroize_cell_outputs_zero():
    rng = np.random.default_rng(7)
    cell = Cell((1, 1, 1, 1, 1, 1), 3, rng, np.float64, "cell")
    assert np.array_equal(cell.forward(rng.normal(size=(2, 3, 4, 4)), ForwardContext()), np.zeros((2, 3, 4, 4)))


def test_all_skip_cell_is_four_times_input():
    rng = np.random.default_rng(8)
    cell = Cell((0, 0, 0, 0, 0, 0), 3, rng, np.float64, "cell")
    x = rng.normal(size=(2, 3, 4, 4))
    assert np.allclose(cell.forward(x, ForwardContext()), 4 * x)


def test_batchnorm_inference_independent_of_batch():
    data = synth_dataset(SynthSpec(image_side=8, train_size=64, test_size=16)).train
    net = build_network((2, 3, 4, 0, 2, 3), TINY, seed=1)
    sgd_train(net, data, TrainConfig(epochs=1, batch_size=16))
    alone = net.logits(data.images[:1])
    batched = net.logits(data.images[:32])
    assert np.allclose(alone[0], batched[0], atol=1e-5)


def test_build_network_is_deterministic():
    a = build_network((2, 2, 3, 4, 0, 1), TINY, seed=3).state_dict()
    b = build_network((2, 2, 3, 4, 0, 1), TINY, seed=3).state_dict()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_parameter_count_closed_form_matches_network():
    macros = [TINY, MacroConfig(), MacroConfig(stem_channels=6, cells_per_stage=2, num_classes=5)]
    for index in (0, 7, 1234, 5000, 15624):
        for macro in macros:
            enc = encode(index)
            assert parameter_count(build_network(enc, macro)) == closed_form_parameter_count(enc, macro)


def test_parameter_count_full_macro_order_of_magnitude():
    macro = MacroConfig(stem_channels=16, cells_per_stage=5, input_hw=32)
    count = closed_form_parameter_count((2, 2, 2, 2, 2, 2), macro)
    # all-conv3x3 is the largest cell: about 1.5M parameters
    assert 1_000_000 <= count < 2_000_000
    assert 100_000 <= closed_form_parameter_count((2, 3, 0, 2, 4, 4), macro) < 1_000_000


def test_cosine_lr_endpoints():
    assert cosine_lr(0, 10, 0.1) == 0.1
    assert cosine_lr(10, 10, 0.1) == 0.0
    assert cosine_lr(5, 10, 0.1) == pytest.approx(0.05)


def test_zero_learning_rate_only_updates_running_stats():
    data = synth_dataset(SynthSpec(image_side=8, train_size=32, test_size=8)).train
    net = build_network((2, 3, 4, 0, 2, 3), TINY, seed=0)
    before = net.state_dict()
    cfg = TrainConfig.model_construct(**{**TrainConfig().model_dump(), "epochs": 1, "base_lr": 0.0})
    sgd_train(net, data, cfg)
    after = net.state_dict()
    for name in before:
        if name.endswith(("running_mean", "running_var")):
            continue
        assert np.array_equal(before[name], after[name]), name
    assert not np.array_equal(before["stem.bn.running_mean"], after["stem.bn.running_mean"])


def test_sgd_train_reaches_separable_optimum():
    splits = synth_dataset(SynthSpec(num_classes=2, image_side=8, train_size=128, test_size=32,
                                     margin=0.9, max_shift=0))
    net = build_network((2, 3, 4, 0, 2, 3), TINY, seed=0)
    result = sgd_train(net, splits.train, TrainConfig(epochs=10, batch_size=16, base_lr=0.05))
    assert len(result.curve) == 10
    assert evaluate_accuracy(net, splits.train) >= 0.99


def test_sgd_train_is_deterministic():
    data = synth_dataset(SynthSpec(image_side=8, train_size=48, test_size=8)).train
    cfg = TrainConfig(epochs=2, batch_size=16, hflip_p=0.5, pad_crop=1)
    states = []
    for _ in range(2):
        net = build_network((2, 3, 4, 0, 2, 3), TINY, seed=4)
        sgd_train(net, data, cfg)
        states.append(net.state_dict())
    assert all(np.array_equal(states[0][k], states[1][k]) for k in states[0])


def test_sgd_train_reports_divergence_epoch():
    data = synth_dataset(SynthSpec(image_side=8, train_size=16, test_size=8)).train
    data.images[:] = np.nan
    with pytest.raises(DivergenceError) as excinfo:
        sgd_train(build_network((2, 2, 2, 2, 2, 2), TINY), data, TrainConfig(epochs=1))
    assert excinfo.value.epoch == 0


def test_train_epoch_stops_on_non_finite_weights():
    data = synth_dataset(SynthSpec(image_side=8, train_size=16, test_size=8)).train
    net = build_network((2, 2, 2, 2, 2, 2), TINY)
    first = net.parameters()[0]

    def corrupt():
        first.value[...] = np.inf

    with pytest.raises(DivergenceError, match="non-finite values") as excinfo:
        train_epoch(net, data, 16, np.random.default_rng(0), corrupt, epoch=3)
    assert excinfo.value.epoch == 3


def test_train_epoch_stops_on_non_finite_batchnorm_stats():
    data = synth_dataset(SynthSpec(image_side=8, train_size=16, test_size=8)).train
    net = build_network((2, 2, 2, 2, 2, 2), TINY)
    bn = next(m for m in net.modules() if isinstance(m, BatchNorm2d))

    def corrupt():
        bn.running_var[...] = np.nan

    with pytest.raises(DivergenceError, match="running_var"):
        train_epoch(net, data, 16, np.random.default_rng(0), corrupt, epoch=0)


class _Fixed:
    def __init__(self, predictions, num_classes=10):
        self.predictions = predictions
        self.num_classes = num_classes

    def logits(self, images):
        return np.eye(self.num_classes)[self.predictions]


def test_evaluate_accuracy_edge_cases():
    labels = np.arange(20) % 10
    data = Dataset(np.zeros((20, 3, 4, 4), dtype=np.float32), labels, 10, "test")
    assert evaluate_accuracy(_Fixed(labels), data) == 1.0
    assert evaluate_accuracy(_Fixed((labels + 1) % 10), data) == 0.0
    empty = Dataset(np.zeros((0, 3, 4, 4), dtype=np.float32), np.zeros(0, dtype=np.int64), 10, "test")
    with pytest.raises(EmptyDatasetError):
        evaluate_accuracy(_Fixed(labels), empty)


def test_all_zeroize_network_is_class_blind():
    splits = synth_dataset(SynthSpec(image_side=8, train_size=32, test_size=500))
    for seed in range(3):
        net = build_network((1, 1, 1, 1, 1, 1), TINY, seed=seed)
        assert abs(evaluate_accuracy(net, splits.test) - 0.1) <= 0.05


def test_weight_quantization_rounding_bound():
    rng = np.random.default_rng(9)
    w = rng.normal(size=1000)
    q = quantize_weight(w)
    assert np.max(np.abs(q - w)) <= weight_scale(w) / 2 + 1e-12


def test_weight_quantization_exact_on_grid():
    w = np.arange(-127, 128, dtype=np.float64) / 128.0
    assert np.array_equal(quantize_weight(w), w)


def test_all_zero_weights_use_unit_scale():
    assert weight_scale(np.zeros(10)) == 1.0
    assert np.array_equal(quantize_weight(np.zeros(10)), np.zeros(10))


def test_fake_quant_straight_through_mask():
    x = np.array([-2.0, -0.5, 0.0, 0.7, 0.99, 3.0])
    _, mask = fake_quant_activation(x, scale=1.0 / 256, zero_point=0)
    assert list(mask) == [0, 0, 1, 1, 1, 0]


def _trained_tiny(seed=0):
    splits = synth_dataset(SynthSpec(image_side=8, train_size=64, test_size=32))
    net = build_network((2, 3, 4, 0, 2, 3), TINY, seed=seed)
    sgd_train(net, splits.train, TrainConfig(epochs=1, batch_size=16))
    return net, splits


def test_ptq_does_not_modify_network_and_is_idempotent():
    net, splits = _trained_tiny()
    before = net.state_dict()
    qnet = ptq_int8(net, splits.train)
    assert all(np.array_equal(before[k], v) for k, v in net.state_dict().items())
    materialized = qnet.materialize()
    again = ptq_int8(materialized, splits.train).materialize()
    for unit_a, unit_b in zip(materialized.units(), again.units()):
        a, b = unit_a.weight_layer.weight.value, unit_b.weight_layer.weight.value
        assert np.allclose(a, b, rtol=1e-6, atol=0)


def test_qat_with_zero_epochs_equals_ptq():
    net, splits = _trained_tiny()
    ptq = ptq_int8(net, splits.train)
    qat = qat_train(net, splits.train, QatConfig(epochs=0))
    assert np.array_equal(ptq.logits(splits.test.images), qat.logits(splits.test.images))


def test_qat_trains_through_fake_quantization():
    net, splits = _trained_tiny()
    qat = qat_train(net, splits.train, QatConfig(epochs=2, batch_size=16))
    assert len(qat.curve) == 2
    assert not np.array_equal(qat.network.stem.conv.weight.value, net.stem.conv.weight.value)


def _cifar_bytes(records, rng):
    labels = rng.integers(0, 10, size=(records, 1), dtype=np.uint8)
    pixels = rng.integers(0, 256, size=(records, 3072), dtype=np.uint8)
    return np.concatenate([labels, pixels], axis=1).tobytes()


def test_cifar_loader_reads_full_batch(tmp_path):
    rng = np.random.default_rng(10)
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(_cifar_bytes(10_000, rng))
    data = load_cifar10_binary(path)
    assert len(data) == 10_000
    assert data.images.shape == (10_000, 3, 32, 32)
    assert 0 <= data.labels.min() and data.labels.max() < 10
    assert 0.0 <= data.images.min() and data.images.max() <= 1.0


def test_cifar_loader_reports_truncation_offset(tmp_path):
    rng = np.random.default_rng(11)
    path = tmp_path / "broken.bin"
    path.write_bytes(_cifar_bytes(3, rng)[:-100])
    with pytest.raises(DatasetFormatError) as excinfo:
        load_cifar10_binary(path)
    assert excinfo.value.offset == 2 * 3073


def test_cifar_loader_rejects_bad_label(tmp_path):
    raw = bytearray(_cifar_bytes(2, np.random.default_rng(12)))
    raw[3073] = 42
    path = tmp_path / "bad_label.bin"
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError) as excinfo:
        load_cifar10_binary(path)
    assert excinfo.value.offset == 3073


def test_synth_dataset_is_deterministic():
    spec = SynthSpec(image_side=8, train_size=50, test_size=20)
    a, b = synth_dataset(spec, seed=3), synth_dataset(spec, seed=3)
    assert np.array_equal(a.train.images, b.train.images)
    assert np.array_equal(a.test.labels, b.test.labels)
    assert not np.array_equal(a.train.images, synth_dataset(spec, seed=4).train.images)


def test_synth_dataset_max_margin_is_linearly_separable():
    spec = SynthSpec(image_side=8, train_size=200, test_size=100, margin=1.0, max_shift=0)
    splits = synth_dataset(spec)
    features = spec.channels * spec.image_side ** 2
    head = Linear(features, spec.num_classes, rng=np.random.default_rng(0))
    optimizer = Adam(head.parameters(), lr=0.01)
    x = splits.train.images.reshape(len(splits.train), -1)
    ctx = ForwardContext(train=True)
    for _ in range(200):
        _, grad = softmax_cross_entropy(head.forward(x, ctx), splits.train.labels)
        head.zero_grad()
        head.backward(grad)
        optimizer.step()
    logits = head.forward(splits.test.images.reshape(len(splits.test), -1), ForwardContext())
    assert np.mean(logits.argmax(axis=1) == splits.test.labels) >= 0.99


def test_weights_round_trip(tmp_path):
    net, _ = _trained_tiny()
    path = tmp_path / "weights.npz"
    digest = save_weights(net, path)
    fresh = build_network(net.encoding, TINY, seed=99)
    assert load_weights(fresh, path) == digest
    assert all(np.array_equal(v, fresh.state_dict()[k]) for k, v in net.state_dict().items())


def test_plateau_cuts_lr_after_patience():
    plateau = ReduceLROnPlateau(1.0, factor=0.1, patience=2)
    assert [plateau.step(1.0) for _ in range(4)] == [1.0, 1.0, 1.0, 0.1]
    assert plateau.step(0.5) == 0.1
    assert plateau.best == 0.5 and plateau.bad_epochs == 0
