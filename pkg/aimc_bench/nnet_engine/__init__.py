from aimc_bench.nnet_engine.datasets import (
    Dataset,
    DatasetSplits,
    SynthSpec,
    load_cifar10,
    load_cifar10_binary,
    normalize_splits,
    synth_dataset,
)
from aimc_bench.nnet_engine.layers import (
    DIGITAL,
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    ConvUnit,
    ExecutionHooks,
    ForwardContext,
    GlobalAvgPool,
    Identity,
    Linear,
    LinearUnit,
    Module,
    Parameter,
    ReLU,
    Sequential,
    Zero,
    softmax_cross_entropy,
)
from aimc_bench.nnet_engine.network import (
    Cell,
    Network,
    ResidualBlock,
    build_network,
    closed_form_parameter_count,
    parameter_count,
)
from aimc_bench.nnet_engine.optim import SGD, Adam, ReduceLROnPlateau, cosine_lr
from aimc_bench.nnet_engine.quantization import (
    QatConfig,
    QuantizedNetwork,
    QuantScheme,
    fake_quant_activation,
    ptq_int8,
    qat_train,
    quantize_weight,
    weight_scale,
)
from aimc_bench.nnet_engine.serialization import load_weights, save_weights
from aimc_bench.nnet_engine.training import (
    EpochStats,
    TrainConfig,
    TrainResult,
    evaluate_accuracy,
    sgd_train,
    train_epoch,
)
