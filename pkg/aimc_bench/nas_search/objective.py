"""
Objectives, search domains and the query bookkeeping shared by every strategy.

A strategy only ever sees an objective through a ``QueryTracker``: the
tracker memoizes evaluations, stops the search once the query budget (or
the optional wall-clock cap) is spent and turns the evaluations into a
``SearchResult``. Re-querying a seen encoding costs nothing.
"""
import logging
import time
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, Iterator, List, Literal, Optional, Protocol, Sequence, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from aimc_bench.bench_store import BenchmarkRecord, BenchmarkTable, load_splits, metric_names, run_pipeline_for_config
from aimc_bench.errors import EmptyDatasetError, RecordNotFoundError
from aimc_bench.models import RunConfig
from aimc_bench.nnet_engine import DatasetSplits, closed_form_parameter_count
from aimc_bench.search_space import SPACE_SIZE, CellEncoding, decode, encode, hamming, mutate, validate_encoding

logger = logging.getLogger(__name__)

LOG_EVERY = 25


class ObjectiveSpec(BaseModel):
    """Maximize ``primary``; ``avm`` names the accuracy-variation metric that constraints read."""

    primary: str = "analog_drift_1d"
    avm: Literal["avm", "avm_t0"] = "avm"
    source: Literal["table", "pipeline"] = "table"

    @field_validator("primary")
    @classmethod
    def _known_metric(cls, value: str) -> str:
        if value not in metric_names():
            raise ValueError(f"Unknown metric '{value}' (expected one of {metric_names()})")
        return value


class Evaluation(BaseModel):
    primary: float
    avm: Optional[float] = None
    param_count: Optional[int] = None


class SearchDomain:
    """
    The encodings a search may visit: the full space, or a fixed member set
    such as the records of a sampled table.
    """

    def __init__(self, encodings: Optional[Iterable[Sequence[int]]] = None):
        if encodings is None:
            self._members: Optional[List[CellEncoding]] = None
            self._lookup: Set[CellEncoding] = set()
            return
        unique = {validate_encoding(enc) for enc in encodings}
        if not unique:
            raise EmptyDatasetError("A search domain needs at least one encoding")
        self._members = sorted(unique, key=decode)
        self._lookup = unique

    @property
    def is_full(self) -> bool:
        return self._members is None

    def __len__(self) -> int:
        return SPACE_SIZE if self._members is None else len(self._members)

    def __contains__(self, enc: Sequence[int]) -> bool:
        return self._members is None or tuple(enc) in self._lookup

    def __iter__(self) -> Iterator[CellEncoding]:
        if self._members is None:
            return (encode(i) for i in range(SPACE_SIZE))
        return iter(self._members)

    def sample(self, rng: np.random.Generator, count: int,
               exclude: Optional[Set[CellEncoding]] = None) -> List[CellEncoding]:
        """Up to ``count`` distinct members outside ``exclude``, uniformly without replacement."""
        exclude = exclude or set()
        order = rng.permutation(len(self))
        picked: List[CellEncoding] = []
        for k in order:
            enc = encode(int(k)) if self._members is None else self._members[int(k)]
            if enc in exclude:
                continue
            picked.append(enc)
            if len(picked) == count:
                break
        return picked

    def mutate(self, enc: Sequence[int], rng: np.random.Generator) -> CellEncoding:
        """
        A uniformly chosen Hamming-1 neighbour. On a member set the neighbour
        must be a member; without one, a nearest other member is returned.
        """
        enc = validate_encoding(enc)
        if self._members is None:
            return mutate(enc, rng)
        distances = np.array([hamming(enc, m) for m in self._members])
        distances[distances == 0] = len(enc) + 1
        nearest = int(distances.min())
        if nearest > len(enc):
            return enc
        choices = np.nonzero(distances == nearest)[0]
        return self._members[int(choices[int(rng.integers(len(choices)))])]


class Objective(Protocol):
    spec: ObjectiveSpec
    domain: SearchDomain

    def evaluate(self, enc: Sequence[int]) -> Evaluation:
        ...

    def param_count(self, enc: Sequence[int]) -> Optional[int]:
        ...


def _from_record(record: BenchmarkRecord, spec: ObjectiveSpec) -> Evaluation:
    return Evaluation(primary=record.metric(spec.primary), avm=record.metric(spec.avm),
                      param_count=record.param_count)


class TableObjective:
    """Lookups in a frozen benchmark table; the domain is the table's records."""

    def __init__(self, table: BenchmarkTable, spec: Optional[ObjectiveSpec] = None):
        self.table = table
        self.spec = spec or ObjectiveSpec()
        self.domain = SearchDomain(r.arch for r in table.sorted_records())
        self._cache: Dict[int, Evaluation] = {}

    def record(self, enc: Sequence[int]) -> BenchmarkRecord:
        index = decode(enc)
        if index not in self.table:
            raise RecordNotFoundError(index)
        return self.table.records[index]

    def evaluate(self, enc: Sequence[int]) -> Evaluation:
        index = decode(enc)
        if index not in self._cache:
            self._cache[index] = _from_record(self.record(enc), self.spec)
        return self._cache[index]

    def param_count(self, enc: Sequence[int]) -> Optional[int]:
        return self.record(enc).param_count


class FunctionObjective:
    """
    Wraps a callable returning either a plain score or an ``Evaluation``.

    :param domain: index list to search; the full space when omitted.
    :param param_fn: parameter count per encoding, for parameter caps.
    """

    def __init__(self, fn: Callable[[CellEncoding], Union[float, Evaluation]],
                 domain: Optional[Sequence[int]] = None,
                 param_fn: Optional[Callable[[CellEncoding], int]] = None,
                 spec: Optional[ObjectiveSpec] = None):
        self.fn = fn
        self.param_fn = param_fn
        self.spec = spec or ObjectiveSpec()
        self.domain = SearchDomain(None if domain is None else [encode(i) for i in domain])

    def evaluate(self, enc: Sequence[int]) -> Evaluation:
        enc = validate_encoding(enc)
        value = self.fn(enc)
        if isinstance(value, Evaluation):
            return value
        return Evaluation(primary=float(value), param_count=self.param_count(enc))

    def param_count(self, enc: Sequence[int]) -> Optional[int]:
        return None if self.param_fn is None else int(self.param_fn(validate_encoding(enc)))


class PipelineObjective:
    """Trains and evaluates every queried architecture with the live pipeline."""

    def __init__(self, config: RunConfig, spec: Optional[ObjectiveSpec] = None,
                 splits: Optional[DatasetSplits] = None, domain: Optional[Sequence[int]] = None):
        self.config = config
        self.spec = spec or ObjectiveSpec(source="pipeline")
        self.splits = splits
        self.domain = SearchDomain(None if domain is None else [encode(i) for i in domain])
        self.records: Dict[int, BenchmarkRecord] = {}

    def evaluate(self, enc: Sequence[int]) -> Evaluation:
        index = decode(enc)
        if index not in self.records:
            if self.splits is None:
                self.splits = load_splits(self.config.dataset, self.config.train.normalize)
            self.records[index] = run_pipeline_for_config(enc, self.config, self.splits)
        return _from_record(self.records[index], self.spec)

    def param_count(self, enc: Sequence[int]) -> Optional[int]:
        return closed_form_parameter_count(enc, self.config.macro)


class SearchBudget(BaseModel):
    max_queries: int = Field(..., ge=1)
    seed: int = 0
    time_limit: Optional[float] = Field(None, gt=0)


class TrajectoryStep(BaseModel):
    step: int
    encoding: List[int]
    arch_index: int
    value: float
    feasible: bool = True
    best: Optional[float] = None


class SearchResult(BaseModel):
    method: str
    seed: int
    budget: int
    best_encoding: List[int]
    best_index: int
    best_value: float
    best_evaluation: Evaluation
    trajectory: List[TrajectoryStep]
    queries_used: int
    elapsed_seconds: float

    @model_validator(mode="after")
    def _consistent(self) -> "SearchResult":
        if self.queries_used != len(self.trajectory) or self.queries_used > self.budget:
            raise ValueError(f"{self.queries_used} queries recorded against a budget of {self.budget}")
        feasible = [s.value for s in self.trajectory if s.feasible]
        if not feasible or self.best_value != max(feasible):
            raise ValueError("best value must be the maximum over the feasible trajectory")
        return self


class BudgetExhausted(Exception):
    pass


class QueryTracker:
    """
    Budgeted, memoized access to an objective for one search run.

    The best architecture is the highest primary value among feasible
    evaluations, ties going to the lowest ArchIndex.
    """

    def __init__(self, objective: Objective, budget: SearchBudget, method: str,
                 feasible: Optional[Callable[[Evaluation], bool]] = None):
        self.objective = objective
        self.budget = budget
        self.method = method
        self.feasible = feasible or (lambda evaluation: True)
        self.seen: Dict[CellEncoding, Evaluation] = {}
        self.trajectory: List[TrajectoryStep] = []
        self._best: Optional[Tuple[float, int, CellEncoding]] = None
        self._started = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self._started

    @property
    def exhausted(self) -> bool:
        if len(self.trajectory) >= self.budget.max_queries or len(self.seen) >= len(self.objective.domain):
            return True
        return self.budget.time_limit is not None and self.elapsed >= self.budget.time_limit

    def __contains__(self, enc: Sequence[int]) -> bool:
        return tuple(enc) in self.seen

    def query(self, enc: Sequence[int]) -> float:
        enc = validate_encoding(enc)
        if enc in self.seen:
            return self.seen[enc].primary
        if self.exhausted:
            raise BudgetExhausted()
        evaluation = self.objective.evaluate(enc)
        self.seen[enc] = evaluation
        index = decode(enc)
        ok = bool(self.feasible(evaluation))
        if ok and (self._best is None or (evaluation.primary, -index) > (self._best[0], -self._best[1])):
            self._best = (evaluation.primary, index, enc)
        self.trajectory.append(TrajectoryStep(step=len(self.trajectory) + 1, encoding=list(enc), arch_index=index,
                                              value=evaluation.primary, feasible=ok,
                                              best=None if self._best is None else self._best[0]))
        if len(self.trajectory) % LOG_EVERY == 0:
            best = "none feasible" if self._best is None else f"{self._best[0]:.2f}"
            logger.info(f"{self.method}: {len(self.trajectory)} queries, best {best}")
        return evaluation.primary

    @contextmanager
    def running(self) -> Iterator["QueryTracker"]:
        """Runs a strategy body until it returns or the budget runs out."""
        try:
            yield self
        except BudgetExhausted:
            logger.debug(f"{self.method}: budget exhausted")

    def history(self) -> Tuple[List[CellEncoding], List[Evaluation]]:
        encodings = [tuple(step.encoding) for step in self.trajectory]
        return encodings, [self.seen[enc] for enc in encodings]

    @property
    def has_feasible(self) -> bool:
        return self._best is not None

    def result(self) -> SearchResult:
        if self._best is None:
            raise EmptyDatasetError(f"{self.method} evaluated no feasible architecture")
        value, index, enc = self._best
        result = SearchResult(method=self.method, seed=self.budget.seed, budget=self.budget.max_queries,
                              best_encoding=list(enc), best_index=index, best_value=value,
                              best_evaluation=self.seen[enc], trajectory=self.trajectory,
                              queries_used=len(self.trajectory), elapsed_seconds=self.elapsed)
        logger.info(f"{self.method} finished: best {value:.2f} at ArchIndex {index} after "
                    f"{result.queries_used} queries in {result.elapsed_seconds:.2f}s")
        return result


def best_candidate(candidates: Sequence[CellEncoding], scores: Sequence[float]) -> CellEncoding:
    """Highest score, ties to the lowest ArchIndex."""
    ranked = min(zip(candidates, scores), key=lambda pair: (-float(pair[1]), decode(pair[0])))
    return ranked[0]
