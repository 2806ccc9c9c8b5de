"""
NB201 macro network: stem, three stages of stacked cells separated by two
residual reduction blocks, and a ReLU -> global-pool -> affine head.
"""
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from aimc_bench.search_space import EDGES, CellEncoding, MacroConfig, OpKind, validate_encoding
from aimc_bench.nnet_engine.layers import (
    AvgPool2d,
    ConvUnit,
    ExecutionHooks,
    ForwardContext,
    GlobalAvgPool,
    Identity,
    LinearUnit,
    Module,
    ReLU,
    Sequential,
    Zero,
)

WeightUnit = Union[ConvUnit, LinearUnit]


def make_edge_op(op: int, channels: int, rng: np.random.Generator, dtype, name: str) -> Module:
    if op == OpKind.SKIP:
        return Identity(name)
    if op == OpKind.ZEROIZE:
        return Zero(name)
    if op == OpKind.CONV3X3:
        return ConvUnit(channels, channels, 3, 1, 1, rng=rng, dtype=dtype, name=name)
    if op == OpKind.CONV1X1:
        return ConvUnit(channels, channels, 1, 1, 0, rng=rng, dtype=dtype, name=name)
    if op == OpKind.AVGPOOL3X3:
        return AvgPool2d(3, 1, 1, name=name)
    raise ValueError(f"Unknown op code {op}")


class Cell(Module):
    """Node j is the sum of its incoming edge outputs; node 3 is the cell output."""

    def __init__(self, enc: CellEncoding, channels: int, rng: np.random.Generator, dtype, name: str):
        super().__init__(name)
        self.encoding = validate_encoding(enc)
        self.edges = [
            make_edge_op(op, channels, rng, dtype, f"{name}.edge_{s}_{t}")
            for (s, t), op in zip(EDGES, self.encoding)
        ]

    def children(self):
        return list(self.edges)

    def forward(self, x, ctx):
        nodes = [x]
        for target in range(1, 4):
            acc = None
            for position, (source, t) in enumerate(EDGES):
                if t != target:
                    continue
                out = self.edges[position].forward(nodes[source], ctx)
                acc = out if acc is None else acc + out
            nodes.append(acc)
        return nodes[3]

    def backward(self, grad):
        grads: List[Optional[np.ndarray]] = [None, None, None, grad]
        for position in reversed(range(len(EDGES))):
            source, target = EDGES[position]
            g = self.edges[position].backward(grads[target])
            grads[source] = g if grads[source] is None else grads[source] + g
        return grads[0]


class ResidualBlock(Module):
    """Stride-2 basic block doubling the channel count."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype, name: str):
        super().__init__(name)
        self.conv_a = ConvUnit(in_channels, out_channels, 3, 2, 1, rng=rng, dtype=dtype, name=f"{name}.conv_a")
        self.conv_b = ConvUnit(out_channels, out_channels, 3, 1, 1, rng=rng, dtype=dtype, name=f"{name}.conv_b")
        self.shortcut = Sequential([
            AvgPool2d(2, 2, 0, name=f"{name}.shortcut.pool"),
            ConvUnit(in_channels, out_channels, 1, 1, 0, pre_relu=False, batch_norm=False,
                     rng=rng, dtype=dtype, name=f"{name}.shortcut.proj"),
        ], name=f"{name}.shortcut")

    def children(self):
        return [self.conv_a, self.conv_b, self.shortcut]

    def forward(self, x, ctx):
        return self.conv_b.forward(self.conv_a.forward(x, ctx), ctx) + self.shortcut.forward(x, ctx)

    def backward(self, grad):
        return self.conv_a.backward(self.conv_b.backward(grad)) + self.shortcut.backward(grad)


class Network(Module):
    def __init__(self, enc: CellEncoding, macro: MacroConfig, seed: int = 0, dtype=np.float32):
        super().__init__("net")
        self.encoding = validate_encoding(enc)
        self.macro = macro
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        channels = macro.stage_channels()
        self.stem = ConvUnit(macro.input_channels, channels[0], 3, 1, 1, pre_relu=False,
                             rng=rng, dtype=dtype, name="stem")
        body: List[Module] = []
        for stage, c in enumerate(channels):
            if stage > 0:
                body.append(ResidualBlock(channels[stage - 1], c, rng, dtype, f"reduce{stage}"))
            for i in range(macro.cells_per_stage):
                body.append(Cell(self.encoding, c, rng, dtype, f"stage{stage}.cell{i}"))
        self.body = body
        self.head_relu = ReLU("head.relu")
        self.pool = GlobalAvgPool("head.pool")
        self.classifier = LinearUnit(channels[-1], macro.num_classes, rng=rng, dtype=dtype, name="classifier")

    def children(self):
        return [self.stem] + self.body + [self.head_relu, self.pool, self.classifier]

    def forward(self, x, ctx):
        h = self.stem.forward(x.astype(self.dtype, copy=False), ctx)
        for block in self.body:
            h = block.forward(h, ctx)
        h = self.pool.forward(self.head_relu.forward(h, ctx), ctx)
        return self.classifier.forward(h, ctx)

    def backward(self, grad):
        grad = self.pool.backward(self.classifier.backward(grad))
        grad = self.head_relu.backward(grad)
        for block in reversed(self.body):
            grad = block.backward(grad)
        return self.stem.backward(grad)

    def logits(self, images: np.ndarray, hooks: Optional[ExecutionHooks] = None,
               batch_size: int = 256) -> np.ndarray:
        """Inference-mode logits, computed in batches."""
        ctx = ForwardContext(train=False, hooks=hooks or ExecutionHooks())
        out = [self.forward(images[i:i + batch_size], ctx) for i in range(0, len(images), batch_size)]
        return np.concatenate(out, axis=0)

    def units(self) -> List[WeightUnit]:
        return [m for m in self.modules() if isinstance(m, (ConvUnit, LinearUnit))]

    def state_dict(self) -> Dict[str, np.ndarray]:
        state: Dict[str, np.ndarray] = OrderedDict()
        for m in self.modules():
            for p in m.own_parameters():
                state[p.name] = p.value.copy()
            for name, buf in m.own_buffers().items():
                state[name] = buf.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for m in self.modules():
            for p in m.own_parameters():
                p.value[...] = state[p.name]
            for name, buf in m.own_buffers().items():
                buf[...] = state[name]


def build_network(enc: Sequence[int], macro: Optional[MacroConfig] = None, seed: int = 0,
                  dtype=np.float32) -> Network:
    return Network(validate_encoding(enc), macro or MacroConfig(), seed=seed, dtype=dtype)


def parameter_count(net: Module) -> int:
    return int(sum(p.value.size for p in net.parameters()))


def closed_form_parameter_count(enc: Sequence[int], macro: Optional[MacroConfig] = None) -> int:
    """Parameter count derived from the encoding alone, without building the network."""
    macro = macro or MacroConfig()
    ops = validate_encoding(enc)
    channels = macro.stage_channels()
    c0 = channels[0]
    total = macro.input_channels * c0 * 9 + 2 * c0
    for stage, c in enumerate(channels):
        if stage > 0:
            prev = channels[stage - 1]
            total += prev * c * 9 + 2 * c + c * c * 9 + 2 * c + prev * c
        per_cell = 0
        for op in ops:
            if op == OpKind.CONV3X3:
                per_cell += c * c * 9 + 2 * c
            elif op == OpKind.CONV1X1:
                per_cell += c * c + 2 * c
        total += per_cell * macro.cells_per_stage
    return total + channels[-1] * macro.num_classes + macro.num_classes
