"""
Gradient-boosted regression trees under squared loss.

Every round fits a depth-limited least-squares tree to the current
residuals and adds it scaled by the shrinkage rate, so a prediction is the
base value (the target mean) plus the shrunken sum of tree outputs. Leaf
values are residual means, which makes the training loss non-increasing
over rounds.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from aimc_bench.search_space import NUM_EDGES, NUM_OPS, validate_encoding

logger = logging.getLogger(__name__)

ONE_HOT_DIM = NUM_EDGES * NUM_OPS


class GbtConfig(BaseModel):
    rounds: int = Field(100, ge=1)
    max_depth: int = Field(3, ge=1)
    learning_rate: float = Field(0.1, gt=0, le=1)
    min_samples_leaf: int = Field(1, ge=1)
    feature_fraction: float = Field(1.0, gt=0, le=1)
    train_size: int = Field(900, ge=2)
    seed: int = 0


def one_hot(enc: Sequence[int]) -> np.ndarray:
    x = np.zeros(ONE_HOT_DIM)
    for edge, op in enumerate(validate_encoding(enc)):
        x[edge * NUM_OPS + op] = 1.0
    return x


def one_hot_matrix(encodings: Sequence[Sequence[int]]) -> np.ndarray:
    if not encodings:
        return np.zeros((0, ONE_HOT_DIM))
    return np.stack([one_hot(enc) for enc in encodings])


@dataclass
class RegressionTree:
    """Array-backed binary tree; ``feature`` is -1 at leaves."""

    feature: List[int] = field(default_factory=list)
    threshold: List[float] = field(default_factory=list)
    left: List[int] = field(default_factory=list)
    right: List[int] = field(default_factory=list)
    value: List[float] = field(default_factory=list)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    def _add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            rows = np.nonzero(feature[node] >= 0)[0]
            if rows.size == 0:
                break
            at = node[rows]
            go_left = X[rows, feature[at]] <= threshold[at]
            node[rows] = np.where(go_left, left[at], right[at])
        return np.asarray(self.value)[node]


def _best_split(X: np.ndarray, r: np.ndarray, features: np.ndarray,
                min_leaf: int) -> Optional[Tuple[int, float]]:
    """Feature and threshold with the largest squared-error reduction; ties go to the lower feature."""
    n = len(r)
    Xf = X[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    csum = np.cumsum(r[order], axis=0)[:-1]
    left_n = np.arange(1, n)[:, None]
    valid = (xs[1:] != xs[:-1]) & (left_n >= min_leaf) & (n - left_n >= min_leaf)
    if not valid.any():
        return None
    total = r.sum()
    score = np.where(valid, csum * csum / left_n + (total - csum) ** 2 / (n - left_n), -np.inf)
    gains = score.max(axis=0) - total * total / n
    f = int(np.argmax(gains))
    if gains[f] <= 1e-12 * max(1.0, float(np.abs(r).max()) ** 2):
        return None
    k = int(np.argmax(score[:, f]))
    return int(features[f]), float((xs[k, f] + xs[k + 1, f]) / 2)


def fit_tree(X: np.ndarray, r: np.ndarray, max_depth: int, min_leaf: int = 1,
             features: Optional[np.ndarray] = None) -> RegressionTree:
    features = np.arange(X.shape[1]) if features is None else features
    tree = RegressionTree()

    def grow(rows: np.ndarray, depth: int) -> int:
        node = tree._add(float(r[rows].mean()))
        if depth >= max_depth or len(rows) < 2 * min_leaf:
            return node
        split = _best_split(X[rows], r[rows], features, min_leaf)
        if split is None:
            return node
        f, t = split
        mask = X[rows, f] <= t
        tree.feature[node], tree.threshold[node] = f, t
        tree.left[node] = grow(rows[mask], depth + 1)
        tree.right[node] = grow(rows[~mask], depth + 1)
        return node

    grow(np.arange(len(r)), 0)
    return tree


@dataclass
class GbtSurrogate:
    base: float
    shrinkage: float
    rounds: int
    train_size: int
    trees: List[RegressionTree] = field(default_factory=list)
    train_rmse: List[float] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.full(len(X), self.base)
        for tree in self.trees:
            out += self.shrinkage * tree.predict(X)
        return out


def fit_arrays(X: np.ndarray, y: np.ndarray, cfg: Optional[GbtConfig] = None) -> GbtSurrogate:
    """Boosting on a plain feature matrix."""
    cfg = cfg or GbtConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 2:
        raise ValueError(f"fit_gbt needs at least 2 training points, got {len(y)}")
    rng = np.random.default_rng(cfg.seed)
    model = GbtSurrogate(base=float(y.mean()), shrinkage=cfg.learning_rate, rounds=cfg.rounds, train_size=len(y))
    if np.ptp(y) == 0:
        model.base = float(y[0])
        logger.debug("Constant targets, fitted a constant model")
        return model
    pred = np.full(len(y), model.base)
    n_features = max(1, int(round(cfg.feature_fraction * X.shape[1])))
    for _ in range(cfg.rounds):
        residual = y - pred
        features = np.arange(X.shape[1])
        if n_features < X.shape[1]:
            features = np.sort(rng.choice(X.shape[1], size=n_features, replace=False))
        tree = fit_tree(X, residual, cfg.max_depth, cfg.min_samples_leaf, features)
        if tree.n_leaves == 1:
            break
        model.trees.append(tree)
        pred = pred + cfg.learning_rate * tree.predict(X)
        model.train_rmse.append(float(np.sqrt(np.mean((y - pred) ** 2))))
    return model


def fit_gbt(train: Sequence[Tuple[Sequence[int], float]], cfg: Optional[GbtConfig] = None) -> GbtSurrogate:
    """
    :param train: (encoding, value) pairs; more than ``cfg.train_size`` are
        subsampled with the config seed.
    """
    cfg = cfg or GbtConfig()
    train = list(train)
    if len(train) > cfg.train_size:
        keep = np.sort(np.random.default_rng(cfg.seed).choice(len(train), size=cfg.train_size, replace=False))
        train = [train[k] for k in keep]
    X = one_hot_matrix([enc for enc, _ in train])
    return fit_arrays(X, [value for _, value in train], cfg)


def predict(surrogate: GbtSurrogate, enc: Sequence[int]) -> float:
    return float(surrogate.predict(one_hot(enc)[None, :])[0])


def predict_many(surrogate: GbtSurrogate, encodings: Sequence[Sequence[int]]) -> np.ndarray:
    return surrogate.predict(one_hot_matrix(encodings))
