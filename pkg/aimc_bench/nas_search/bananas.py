"""
Predictor-ensemble search on path encodings.

An architecture is described by which zeroize-free op paths of length
1..3 its cell contains. An ensemble of small MLPs learns accuracy from
that encoding; each round mutates the best architectures found so far and
queries the candidate that wins an independent Thompson draw (every
candidate is scored by one randomly chosen ensemble member).
"""
import itertools
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from aimc_bench.nas_search.objective import (
    Objective,
    QueryTracker,
    SearchBudget,
    SearchResult,
    best_candidate,
)
from aimc_bench.nnet_engine import Adam, ForwardContext, Linear, ReLU, Sequential
from aimc_bench.search_space import CellEncoding, OpKind, OpPath, decode, extract_paths

logger = logging.getLogger(__name__)

PATH_OPS = tuple(int(op) for op in OpKind if op != OpKind.ZEROIZE)
PATH_VOCAB: List[OpPath] = [p for length in (1, 2, 3) for p in itertools.product(PATH_OPS, repeat=length)]
PATH_INDEX: Dict[OpPath, int] = {p: k for k, p in enumerate(PATH_VOCAB)}


def path_encoding(enc: Sequence[int]) -> np.ndarray:
    """One binary indicator per possible path, ``len(PATH_VOCAB)`` (84) entries."""
    x = np.zeros(len(PATH_VOCAB))
    for path in extract_paths(enc):
        x[PATH_INDEX[path]] = 1.0
    return x


class BananasConfig(BaseModel):
    initial: int = Field(10, ge=1)
    ensemble: int = Field(5, ge=1)
    hidden: int = Field(20, ge=1)
    hidden_layers: int = Field(2, ge=1)
    epochs: int = Field(100, ge=1)
    lr: float = Field(1e-2, gt=0)
    batch_size: int = Field(32, ge=1)
    candidates: int = Field(100, ge=1)
    parents: int = Field(10, ge=1)


class MlpRegressor:
    def __init__(self, in_features: int, cfg: BananasConfig, rng: np.random.Generator):
        layers = []
        width = in_features
        for k in range(cfg.hidden_layers):
            layers += [Linear(width, cfg.hidden, rng=rng, dtype=np.float64, name=f"fc{k}"), ReLU()]
            width = cfg.hidden
        layers.append(Linear(width, 1, rng=rng, dtype=np.float64, name="out"))
        self.net = Sequential(layers)
        self.cfg = cfg

    def fit(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> float:
        opt = Adam(self.net.parameters(), lr=self.cfg.lr)
        ctx = ForwardContext(train=True)
        loss = 0.0
        for _ in range(self.cfg.epochs):
            order = rng.permutation(len(y))
            total = 0.0
            for start in range(0, len(y), self.cfg.batch_size):
                rows = order[start:start + self.cfg.batch_size]
                out = self.net.forward(X[rows], ctx)[:, 0]
                err = out - y[rows]
                total += float(np.sum(err * err))
                self.net.zero_grad()
                self.net.backward((2.0 * err / len(rows))[:, None])
                opt.step()
            loss = total / len(y)
        return loss

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.net.forward(X, ForwardContext())[:, 0]


class MlpEnsemble:
    """Members share the data and differ in initialization and batch order; targets are standardized."""

    def __init__(self, cfg: BananasConfig):
        self.cfg = cfg
        self.members: List[MlpRegressor] = []
        self._mean, self._scale = 0.0, 1.0

    def fit(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> "MlpEnsemble":
        y = np.asarray(y, dtype=np.float64)
        self._mean = float(y.mean())
        self._scale = float(y.std()) or 1.0
        target = (y - self._mean) / self._scale
        self.members = []
        for _ in range(self.cfg.ensemble):
            member_rng = np.random.default_rng(int(rng.integers(2 ** 32)))
            member = MlpRegressor(X.shape[1], self.cfg, member_rng)
            member.fit(X, target, member_rng)
            self.members.append(member)
        return self

    def predict_members(self, X: np.ndarray) -> np.ndarray:
        """(members, rows) predictions in target units."""
        return np.stack([m.predict(X) * self._scale + self._mean for m in self.members])


def thompson_scores(predictions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Ensemble-member Thompson sampling: every candidate is scored by its own randomly drawn ensemble member."""
    members = rng.integers(predictions.shape[0], size=predictions.shape[1])
    return predictions[members, np.arange(predictions.shape[1])]


def _mutation_candidates(tracker: QueryTracker, domain, cfg: BananasConfig,
                         rng: np.random.Generator) -> List[CellEncoding]:
    archive = sorted(tracker.seen.items(), key=lambda item: (-item[1].primary, decode(item[0])))
    parents = [enc for enc, _ in archive[:cfg.parents]]
    per_parent = max(1, cfg.candidates // len(parents))
    candidates: Dict[CellEncoding, None] = {}
    for parent in parents:
        for _ in range(per_parent):
            child = domain.mutate(parent, rng)
            if child not in tracker:
                candidates[child] = None
    if not candidates:
        return domain.sample(rng, cfg.candidates, exclude=set(tracker.seen))
    return list(candidates)


def bananas_style_search(objective: Objective, budget: SearchBudget,
                         cfg: Optional[BananasConfig] = None) -> SearchResult:
    cfg = cfg or BananasConfig()
    if budget.max_queries <= cfg.initial:
        raise ValueError(f"budget {budget.max_queries} must exceed the initial design of {cfg.initial}")
    rng = np.random.default_rng(budget.seed)
    domain = objective.domain
    tracker = QueryTracker(objective, budget, "bananas")
    with tracker.running():
        for enc in domain.sample(rng, cfg.initial):
            tracker.query(enc)
        while not tracker.exhausted:
            encodings, evaluations = tracker.history()
            X = np.stack([path_encoding(enc) for enc in encodings])
            ensemble = MlpEnsemble(cfg).fit(X, np.array([e.primary for e in evaluations]), rng)
            candidates = _mutation_candidates(tracker, domain, cfg, rng)
            if not candidates:
                break
            preds = ensemble.predict_members(np.stack([path_encoding(enc) for enc in candidates]))
            tracker.query(best_candidate(candidates, thompson_scores(preds, rng)))
    return tracker.result()
