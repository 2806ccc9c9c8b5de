"""
Search strategies over an objective.

Every strategy draws all of its randomness from ``np.random.default_rng(budget.seed)``,
so a result's trajectory replays exactly from its logged seed.
"""
import logging
from collections import deque
from typing import Callable, Deque, List, Optional, Sequence, Tuple

import numpy as np
from munch import Munch, munchify
from pydantic import BaseModel, Field

from aimc_bench.bench_store import BenchmarkTable, resolve_scope
from aimc_bench.errors import IncompleteTableError, InfeasibleConstraintError
from aimc_bench.models import ScopeSpec
from aimc_bench.nas_search.gbt import GbtConfig, fit_gbt, predict_many
from aimc_bench.nas_search.objective import (
    Evaluation,
    Objective,
    QueryTracker,
    SearchBudget,
    SearchDomain,
    SearchResult,
    best_candidate,
)
from aimc_bench.search_space import CellEncoding, decode

logger = logging.getLogger(__name__)

# fitted on (encodings, evaluations); returns per-candidate (mean, spread) arrays
Predictor = Callable[[Sequence[CellEncoding]], Tuple[np.ndarray, np.ndarray]]
PredictorFactory = Callable[[List[CellEncoding], List[Evaluation], np.random.Generator], Predictor]

STALL_LIMIT = 1000


def _declared_space(table: BenchmarkTable) -> List[CellEncoding]:
    if table.metadata.scope:
        return resolve_scope(ScopeSpec(**table.metadata.scope))
    return [r.arch for r in table.sorted_records()]


def exhaustive_search(objective: Objective, table: BenchmarkTable,
                      space: Optional[Sequence[Sequence[int]]] = None) -> SearchResult:
    """
    Evaluates every architecture of ``space`` (by default the scope the
    table was built for) in ArchIndex order.
    """
    space = _declared_space(table) if space is None else space
    indices = sorted({decode(enc) for enc in space})
    missing = [i for i in indices if i not in table]
    if missing:
        raise IncompleteTableError(missing)
    tracker = QueryTracker(objective, SearchBudget(max_queries=len(indices)), "exhaustive")
    with tracker.running():
        for index in indices:
            tracker.query(table.records[index].arch)
    return tracker.result()


def random_search(objective: Objective, budget: SearchBudget) -> SearchResult:
    rng = np.random.default_rng(budget.seed)
    tracker = QueryTracker(objective, budget, "random")
    with tracker.running():
        for enc in objective.domain.sample(rng, budget.max_queries):
            tracker.query(enc)
    return tracker.result()


def _tournament(population: Deque[Tuple[CellEncoding, float]], k: int,
                rng: np.random.Generator) -> CellEncoding:
    picks = rng.choice(len(population), size=min(k, len(population)), replace=False)
    contenders = [population[int(p)] for p in picks]
    return best_candidate([enc for enc, _ in contenders], [value for _, value in contenders])


def _check_population(budget: SearchBudget, pop_size: int, tournament_k: int) -> None:
    if pop_size > budget.max_queries:
        raise ValueError(f"population {pop_size} exceeds the budget of {budget.max_queries} queries")
    if not 1 <= tournament_k <= pop_size:
        raise ValueError(f"tournament size must be in [1, {pop_size}], got {tournament_k}")


def evolutionary_search(objective: Objective, budget: SearchBudget, pop_size: int = 20, tournament_k: int = 5,
                        mutate_rate: float = 1.0) -> SearchResult:
    """
    Regularized evolution: the tournament winner's child replaces the
    oldest member. With probability ``1 - mutate_rate`` the child is a fresh
    random architecture instead of a mutation.
    """
    _check_population(budget, pop_size, tournament_k)
    rng = np.random.default_rng(budget.seed)
    domain = objective.domain
    tracker = QueryTracker(objective, budget, "evolution")
    population: Deque[Tuple[CellEncoding, float]] = deque()
    with tracker.running():
        for enc in domain.sample(rng, pop_size):
            population.append((enc, tracker.query(enc)))
        stalled = 0
        while not tracker.exhausted and stalled < STALL_LIMIT:
            parent = _tournament(population, tournament_k, rng)
            if rng.random() < mutate_rate:
                child = domain.mutate(parent, rng)
            else:
                child = domain.sample(rng, 1)[0]
            stalled = stalled + 1 if child in tracker else 0
            population.append((child, tracker.query(child)))
            population.popleft()
        if stalled >= STALL_LIMIT:
            logger.warning(f"evolution: no unseen child in {STALL_LIMIT} steps, stopping early")
    return tracker.result()


class BayesConfig(BaseModel):
    initial: int = Field(10, ge=1)
    ensemble: int = Field(5, ge=1)
    kappa: float = Field(1.0, ge=0)
    pool_size: Optional[int] = Field(200, ge=1)
    gbt: GbtConfig = GbtConfig(rounds=50, max_depth=3)


def gbt_ensemble(cfg: BayesConfig) -> PredictorFactory:
    """Bootstrap replicates of the GBT surrogate; spread is the ensemble's standard deviation."""

    def factory(encodings, evaluations, rng):
        values = [e.primary for e in evaluations]
        members = []
        for _ in range(cfg.ensemble):
            rows = rng.integers(len(values), size=len(values))
            gbt = cfg.gbt.model_copy(update={"seed": int(rng.integers(2 ** 31))})
            members.append(fit_gbt([(encodings[r], values[r]) for r in rows], gbt))

        def predict(candidates):
            preds = np.stack([predict_many(m, candidates) for m in members])
            return preds.mean(axis=0), preds.std(axis=0)

        return predict

    return factory


def bayesian_search(objective: Objective, budget: SearchBudget, surrogate_cfg: Optional[BayesConfig] = None,
                    predictor: Optional[PredictorFactory] = None) -> SearchResult:
    """
    Initial random design, then repeatedly queries the pool candidate with
    the highest ``mean + kappa * spread``. ``pool_size=None`` scores every
    unseen architecture.
    """
    cfg = surrogate_cfg or BayesConfig()
    if budget.max_queries <= cfg.initial:
        raise ValueError(f"budget {budget.max_queries} must exceed the initial design of {cfg.initial}")
    factory = predictor or gbt_ensemble(cfg)
    rng = np.random.default_rng(budget.seed)
    domain = objective.domain
    tracker = QueryTracker(objective, budget, "bayesian")
    with tracker.running():
        for enc in domain.sample(rng, cfg.initial):
            tracker.query(enc)
        while not tracker.exhausted:
            predict = factory(*tracker.history(), rng)
            pool = domain.sample(rng, cfg.pool_size or len(domain), exclude=set(tracker.seen))
            if not pool:
                break
            mean, spread = predict(pool)
            tracker.query(best_candidate(pool, mean + cfg.kappa * spread))
    return tracker.result()


class AimcConstraints(BaseModel):
    avm_max: float = float("inf")
    param_max: Optional[int] = Field(None, ge=1)

    def admits(self, evaluation: Evaluation) -> bool:
        if np.isfinite(self.avm_max):
            if evaluation.avm is None:
                raise ValueError("an AVM bound needs an objective that reports AVM")
            if evaluation.avm > self.avm_max:
                return False
        if self.param_max is not None and evaluation.param_count is not None:
            return evaluation.param_count <= self.param_max
        return True


class AimcSearchConfig(BaseModel):
    pop_size: int = Field(20, ge=1)
    tournament_k: int = Field(5, ge=1)
    candidates_per_round: int = Field(50, ge=1)
    evaluations_per_round: int = Field(2, ge=1)
    refit_every: int = Field(1, ge=1)
    gbt: GbtConfig = GbtConfig(rounds=50, max_depth=3)


AIMC_PRESETS: Munch = munchify(
    {
        "analognas": {
            "pop_size": 20,
            "tournament_k": 5,
            "candidates_per_round": 50,
            "evaluations_per_round": 2,
            "refit_every": 1,
        },
        "ga_imc": {
            "pop_size": 30,
            "tournament_k": 3,
            "candidates_per_round": 30,
            "evaluations_per_round": 3,
            "refit_every": 2,
        },
    }
)


def aimc_config(preset: str = "analognas", **overrides) -> AimcSearchConfig:
    if preset not in AIMC_PRESETS:
        raise KeyError(f"Unknown AIMC search preset '{preset}' (expected one of {sorted(AIMC_PRESETS)})")
    return AimcSearchConfig(**{**AIMC_PRESETS[preset], **overrides})


def gbt_analog_predictor(cfg: AimcSearchConfig) -> PredictorFactory:
    """One surrogate for the primary metric and one for AVM; without AVM values the spread slot is zero."""

    def factory(encodings, evaluations, rng):
        primary = fit_gbt(list(zip(encodings, [e.primary for e in evaluations])), cfg.gbt)
        avm = None
        if all(e.avm is not None for e in evaluations):
            avm = fit_gbt(list(zip(encodings, [e.avm for e in evaluations])), cfg.gbt)

        def predict(candidates):
            return (predict_many(primary, candidates),
                    np.zeros(len(candidates)) if avm is None else predict_many(avm, candidates))

        return predict

    return factory


def _feasible_domain(objective: Objective, param_max: Optional[int]) -> SearchDomain:
    if param_max is None:
        return objective.domain
    kept = []
    for enc in objective.domain:
        count = objective.param_count(enc)
        if count is None:
            raise ValueError("a parameter cap needs an objective that reports parameter counts")
        if count <= param_max:
            kept.append(enc)
    if not kept:
        raise InfeasibleConstraintError(f"No architecture has at most {param_max} parameters")
    return SearchDomain(kept)


def aimc_evolutionary_search(objective: Objective, budget: SearchBudget,
                             constraints: Optional[AimcConstraints] = None,
                             cfg: Optional[AimcSearchConfig] = None,
                             predictor: Optional[PredictorFactory] = None,
                             method: str = "analognas") -> SearchResult:
    """
    Surrogate-ranked evolution for analog deployment.

    Each round mutates tournament winners into a candidate set, ranks the
    candidates by predicted primary value with predicted-AVM violators
    last, and spends real queries on the top ``evaluations_per_round``.
    Candidates over the parameter cap are never generated. The result is the
    best evaluated architecture whose measured AVM and size satisfy the
    constraints.

    :param predictor: factory returning ``(primary, avm)`` predictions; GBT
        surrogates by default.
    """
    constraints = constraints or AimcConstraints()
    cfg = cfg or aimc_config(method if method in AIMC_PRESETS else "analognas")
    _check_population(budget, cfg.pop_size, cfg.tournament_k)
    domain = _feasible_domain(objective, constraints.param_max)
    factory = predictor or gbt_analog_predictor(cfg)
    rng = np.random.default_rng(budget.seed)
    tracker = QueryTracker(objective, budget, method, feasible=constraints.admits)
    population: Deque[Tuple[CellEncoding, float]] = deque()
    with tracker.running():
        for enc in domain.sample(rng, cfg.pop_size):
            population.append((enc, tracker.query(enc)))
        rounds = 0
        predict: Optional[Predictor] = None
        while not tracker.exhausted:
            if predict is None or rounds % cfg.refit_every == 0:
                predict = factory(*tracker.history(), rng)
            candidates = {}
            for _ in range(cfg.candidates_per_round):
                child = domain.mutate(_tournament(population, cfg.tournament_k, rng), rng)
                if child not in tracker:
                    candidates[child] = None
            pool = list(candidates) or domain.sample(rng, cfg.candidates_per_round, exclude=set(tracker.seen))
            if not pool:
                break
            primary, avm = predict(pool)
            ranked = sorted(range(len(pool)), key=lambda k: (bool(avm[k] > constraints.avm_max), -float(primary[k]),
                                                           decode(pool[k])))
            for k in ranked[:cfg.evaluations_per_round]:
                population.append((pool[k], tracker.query(pool[k])))
                population.popleft()
            rounds += 1
    if not tracker.has_feasible:
        raise InfeasibleConstraintError(
            f"{method}: none of {len(tracker.trajectory)} evaluated architectures meets AVM <= "
            f"{constraints.avm_max} and the parameter cap")
    return tracker.result()
