"""
The NAS-Bench-201 cell search space.

A cell is a 4-node DAG (node 0 = input, node 3 = output) whose six edges each
carry one of five operations. An architecture is fully described by the
6-tuple of edge operations in canonical edge order

    e(0->1), e(0->2), e(1->2), e(0->3), e(1->3), e(2->3)

which is also the order edges appear in the NB201 string form
``|op~0|+|op~0|op~1|+|op~0|op~1|op~2|``. ArchIndex is the little-endian
base-5 number whose least-significant digit is the first canonical edge.
"""
import logging
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from aimc_bench.errors import ArchIndexRangeError, CellParseError

logger = logging.getLogger(__name__)


class OpKind(IntEnum):
    SKIP = 0
    ZEROIZE = 1
    CONV3X3 = 2
    CONV1X1 = 3
    AVGPOOL3X3 = 4


NUM_OPS = 5
NUM_EDGES = 6
SPACE_SIZE = NUM_OPS ** NUM_EDGES  # 15,625

OP_NAMES = {
    OpKind.SKIP: "skip_connect",
    OpKind.ZEROIZE: "none",
    OpKind.CONV3X3: "nor_conv_3x3",
    OpKind.CONV1X1: "nor_conv_1x1",
    OpKind.AVGPOOL3X3: "avg_pool_3x3",
}
OP_BY_NAME = {name: op for op, name in OP_NAMES.items()}
OP_LABELS = {
    OpKind.SKIP: "skip",
    OpKind.ZEROIZE: "zeroize",
    OpKind.CONV3X3: "conv3x3",
    OpKind.CONV1X1: "conv1x1",
    OpKind.AVGPOOL3X3: "avgpool3x3",
}

# (source, target) per canonical edge position
EDGES: Tuple[Tuple[int, int], ...] = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))

# The four input->output routes as canonical edge positions:
# 0->3, 0->1->3, 0->2->3, 0->1->2->3
ROUTES: Tuple[Tuple[int, ...], ...] = ((3,), (0, 4), (1, 5), (0, 2, 5))

CellEncoding = Tuple[int, ...]
OpPath = Tuple[int, ...]


class CellEdge(BaseModel):
    model_config = ConfigDict(frozen=True)

    source: int
    target: int
    op: OpKind


class CellGraph(BaseModel):
    """Labeled cell DAG; edges are listed in canonical order."""
    model_config = ConfigDict(frozen=True)

    nodes: Tuple[int, int, int, int] = (0, 1, 2, 3)
    edges: Tuple[CellEdge, ...]

    def in_degree(self, node: int) -> int:
        return sum(1 for e in self.edges if e.target == node)

    def out_degree(self, node: int) -> int:
        return sum(1 for e in self.edges if e.source == node)


class MacroConfig(BaseModel):
    """Fixed macro skeleton the cell is stacked into (3 stages, 2 reductions)."""
    model_config = ConfigDict(frozen=True)

    stem_channels: int = 8
    cells_per_stage: int = 1
    num_stages: int = 3
    num_classes: int = 10
    input_hw: int = 16
    input_channels: int = 3

    @field_validator("stem_channels", "cells_per_stage", "num_classes", "input_hw", "input_channels")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("num_stages")
    @classmethod
    def _three_stages(cls, value: int) -> int:
        if value != 3:
            raise ValueError("the NB201 macro has exactly 3 stages")
        return value

    def stage_channels(self) -> List[int]:
        return [self.stem_channels * 2 ** s for s in range(self.num_stages)]


def validate_encoding(enc: Sequence[int]) -> CellEncoding:
    ops = tuple(int(op) for op in enc)
    if len(ops) != NUM_EDGES:
        raise ArchIndexRangeError(f"A cell encoding has {NUM_EDGES} edges, got {len(ops)}")
    for op in ops:
        if not 0 <= op < NUM_OPS:
            raise ArchIndexRangeError(f"Invalid op code {op} in {ops}")
    return ops


def encode(index: int) -> CellEncoding:
    """ArchIndex -> CellEncoding."""
    if not 0 <= index < SPACE_SIZE:
        raise ArchIndexRangeError(f"ArchIndex {index} outside [0, {SPACE_SIZE - 1}]")
    ops = []
    for _ in range(NUM_EDGES):
        index, digit = divmod(index, NUM_OPS)
        ops.append(digit)
    return tuple(ops)


def decode(enc: Sequence[int]) -> int:
    """CellEncoding -> ArchIndex."""
    ops = validate_encoding(enc)
    return sum(op * NUM_OPS ** position for position, op in enumerate(ops))


def enumerate_space() -> Iterator[CellEncoding]:
    for index in range(SPACE_SIZE):
        yield encode(index)


def to_nb201_string(enc: Sequence[int]) -> str:
    ops = validate_encoding(enc)
    groups = []
    position = 0
    for target in range(1, 4):
        parts = []
        for source in range(target):
            parts.append(f"{OP_NAMES[OpKind(ops[position])]}~{source}")
            position += 1
        groups.append("|" + "|".join(parts) + "|")
    return "+".join(groups)


def from_nb201_string(text: str) -> CellEncoding:
    text = text.strip()
    groups = text.split("+")
    if len(groups) != 3:
        raise CellParseError(text, f"expected 3 '+'-separated node groups, found {len(groups)}")
    ops: List[int] = []
    for target, group in enumerate(groups, start=1):
        if not (group.startswith("|") and group.endswith("|")):
            raise CellParseError(group, "node group must be enclosed in '|'")
        entries = [entry for entry in group.split("|") if entry]
        if len(entries) != target:
            raise CellParseError(group, f"node {target} needs {target} incoming edges, found {len(entries)}")
        for source, entry in enumerate(entries):
            name, sep, src = entry.partition("~")
            if not sep:
                raise CellParseError(entry, "missing '~<source>'")
            if name not in OP_BY_NAME:
                raise CellParseError(entry, f"unknown operation '{name}'")
            if src != str(source):
                raise CellParseError(entry, f"expected source node {source}, found '{src}'")
            ops.append(int(OP_BY_NAME[name]))
    return tuple(ops)


def parse_cell(text: str) -> CellEncoding:
    """Accept an ArchIndex, a tuple like ``(2,3,0,2,4,4)``/``2,3,0,2,4,4`` or an NB201 string."""
    text = text.strip()
    if text.startswith("|"):
        return from_nb201_string(text)
    stripped = text.strip("()[] ")
    if "," in stripped:
        try:
            return validate_encoding([int(part) for part in stripped.split(",")])
        except ValueError as e:
            if isinstance(e, ArchIndexRangeError):
                raise
            raise CellParseError(text, "tuple entries must be integers") from e
    try:
        return encode(int(stripped))
    except ValueError as e:
        if isinstance(e, ArchIndexRangeError):
            raise
        raise CellParseError(text, "not an ArchIndex, op tuple or NB201 string") from e


def format_encoding(enc: Sequence[int]) -> str:
    return "(" + ",".join(str(op) for op in enc) + ")"


def build_cell_graph(enc: Sequence[int]) -> CellGraph:
    ops = validate_encoding(enc)
    edges = tuple(
        CellEdge(source=source, target=target, op=OpKind(op))
        for (source, target), op in zip(EDGES, ops)
    )
    return CellGraph(edges=edges)


def extract_paths(enc: Sequence[int]) -> List[OpPath]:
    """Op sequences of the routes not severed by a zeroize edge, in ROUTES order."""
    ops = validate_encoding(enc)
    paths = []
    for route in ROUTES:
        path = tuple(ops[position] for position in route)
        if OpKind.ZEROIZE not in path:
            paths.append(path)
    return paths


def op_counts(enc: Sequence[int]) -> List[int]:
    ops = validate_encoding(enc)
    return [ops.count(op) for op in range(NUM_OPS)]


def hamming(a: Sequence[int], b: Sequence[int]) -> int:
    return sum(1 for x, y in zip(a, b) if x != y)


def mutate(enc: Sequence[int], rng: np.random.Generator, edge: Optional[int] = None) -> CellEncoding:
    """Re-assign one edge (uniform, or the given one) a uniformly chosen different op."""
    ops = list(validate_encoding(enc))
    position = int(rng.integers(NUM_EDGES)) if edge is None else edge
    choices = [op for op in range(NUM_OPS) if op != ops[position]]
    ops[position] = choices[int(rng.integers(len(choices)))]
    return tuple(ops)


def sample_space(count: int, seed: int) -> List[int]:
    if not 0 < count <= SPACE_SIZE:
        raise ArchIndexRangeError(f"Sample count {count} outside [1, {SPACE_SIZE}]")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(SPACE_SIZE, size=count, replace=False))


def read_arch_list(path: Union[str, Path]) -> List[CellEncoding]:
    encodings = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            encodings.append(parse_cell(line))
    logger.info(f"Read {len(encodings)} architectures from {path}")
    return encodings


def write_arch_list(path: Union[str, Path], encodings: Iterable[Sequence[int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for enc in encodings:
            f.write(to_nb201_string(enc) + "\n")
