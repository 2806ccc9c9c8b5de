"""Side-by-side runs of several strategies on one frozen table, and their CSV / JSON-lines outputs."""
import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from aimc_bench.nas_search.bananas import BananasConfig, bananas_style_search
from aimc_bench.nas_search.objective import SearchBudget, SearchResult, TableObjective
from aimc_bench.nas_search.strategies import (
    AIMC_PRESETS,
    BayesConfig,
    aimc_config,
    aimc_evolutionary_search,
    bayesian_search,
    evolutionary_search,
    exhaustive_search,
    random_search,
)
from aimc_bench.utils import write_csv

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Strategy = Callable[[TableObjective, SearchBudget], SearchResult]

STRATEGIES: Dict[str, Strategy] = {
    "exhaustive": lambda objective, budget: exhaustive_search(objective, objective.table),
    "random": random_search,
    "evolution": evolutionary_search,
    "bayesian": lambda objective, budget: bayesian_search(objective, budget, BayesConfig()),
    "bananas": lambda objective, budget: bananas_style_search(objective, budget, BananasConfig()),
    **{name: (lambda objective, budget, name=name: aimc_evolutionary_search(objective, budget, cfg=aimc_config(name),
                                                                           method=name))
       for name in AIMC_PRESETS},
}

COMPARISON_HEADER = ["method", "runs", "baseline_mean", "baseline_std", "noisy_mean", "noisy_std", "drift_1d_mean",
                     "drift_1d_std", "avm_mean", "avm_std", "param_count", "search_time_s", "queries"]


class ComparisonRow(BaseModel):
    """Mean and population std over seeds of the found architectures' stored record values."""

    method: str
    runs: int
    baseline_mean: float
    baseline_std: float
    noisy_mean: float
    noisy_std: float
    drift_1d_mean: float
    drift_1d_std: float
    avm_mean: float
    avm_std: float
    param_count: float
    search_time_s: float
    queries: float

    def cells(self) -> List:
        return [getattr(self, name) for name in COMPARISON_HEADER]


def _row(method: str, objective: TableObjective, results: Sequence[SearchResult]) -> ComparisonRow:
    records = [objective.table.records[r.best_index] for r in results]

    def stat(metric):
        values = np.array([r.metric(metric) for r in records])
        return float(values.mean()), float(values.std())

    baseline, noisy, drift, avm = stat("baseline"), stat("noisy"), stat("analog_drift_1d"), stat("avm")
    return ComparisonRow(method=method, runs=len(results), baseline_mean=baseline[0], baseline_std=baseline[1],
                         noisy_mean=noisy[0], noisy_std=noisy[1], drift_1d_mean=drift[0], drift_1d_std=drift[1],
                         avm_mean=avm[0], avm_std=avm[1],
                         param_count=float(np.mean([r.param_count for r in records])),
                         search_time_s=float(np.mean([r.elapsed_seconds for r in results])),
                         queries=float(np.mean([r.queries_used for r in results])))


def compare_methods(methods: Sequence[str], objective: TableObjective, budgets: Union[int, Mapping[str, int]],
                    seeds: Sequence[int] = (0,),
                    results_out: Optional[Dict[str, List[SearchResult]]] = None) -> List[ComparisonRow]:
    """
    One row per method; the exhaustive method runs once whatever the seeds.

    :param budgets: one query budget for all methods, or one per method.
    :param results_out: receives every run's ``SearchResult`` per method.
    """
    unknown = [m for m in methods if m not in STRATEGIES]
    if unknown:
        raise KeyError(f"Unknown search method(s) {unknown} (expected some of {sorted(STRATEGIES)})")
    rows = []
    for method in methods:
        budget = budgets if isinstance(budgets, int) else budgets[method]
        runs = [0] if method == "exhaustive" else list(seeds)
        results = [STRATEGIES[method](objective, SearchBudget(max_queries=budget, seed=seed)) for seed in runs]
        if results_out is not None:
            results_out[method] = results
        rows.append(_row(method, objective, results))
        logger.info(f"{method}: 1-day {rows[-1].drift_1d_mean:.2f} +- {rows[-1].drift_1d_std:.2f} "
                    f"over {len(results)} run(s)")
    return rows


def write_comparison_csv(rows: Sequence[ComparisonRow], path: PathLike, digest: str = "") -> None:
    write_csv(path, COMPARISON_HEADER, [row.cells() for row in rows], digest)


def write_trajectory(result: SearchResult, path: PathLike, digest: str = "") -> None:
    """
    One JSON object per query: step, encoding, arch_index, value, feasible,
    cumulative best. With a digest, a leading header object names the run.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if digest:
            header = {"method": result.method, "seed": result.seed, "budget": result.budget, "config_digest": digest}
            f.write(json.dumps(header, separators=(",", ":")) + "\n")
        for step in result.trajectory:
            f.write(json.dumps(step.model_dump(), separators=(",", ":")) + "\n")
    logger.info(f"Wrote {len(result.trajectory)} trajectory steps to {path}")
