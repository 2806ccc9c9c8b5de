import json

import numpy as np
import pytest
from pydantic import ValidationError

from aimc_bench.analysis import kendall_tau_b
from aimc_bench.bench_store import AccuracyStat, BenchmarkTable
from aimc_bench.bench_store.tests import make_metadata, make_record
from aimc_bench.errors import IncompleteTableError, InfeasibleConstraintError
from aimc_bench.nas_search import (
    PATH_VOCAB,
    AimcConstraints,
    BananasConfig,
    BayesConfig,
    FunctionObjective,
    GbtConfig,
    ObjectiveSpec,
    QueryTracker,
    SearchBudget,
    SearchDomain,
    TableObjective,
    aimc_config,
    aimc_evolutionary_search,
    bananas_style_search,
    bayesian_search,
    compare_methods,
    evolutionary_search,
    exhaustive_search,
    fit_arrays,
    fit_gbt,
    path_encoding,
    predict,
    predict_many,
    random_search,
    thompson_scores,
    write_comparison_csv,
    write_trajectory,
)
from aimc_bench.nas_search.bananas import PATH_INDEX
from aimc_bench.search_space import SPACE_SIZE, encode, hamming, mutate, sample_space
from aimc_bench.utils import read_csv

EDGE_SCORES = np.random.default_rng(7).uniform(0, 1, size=(6, 5))
OPTIMUM = float(EDGE_SCORES.max(axis=1).sum())
WEIGHTS = np.random.default_rng(123).uniform(0, 5, size=(6, 5))


def separable(enc):
    return float(sum(EDGE_SCORES[e, op] for e, op in enumerate(enc)))


def structured_table(seed: int = 0, count: int = 125) -> BenchmarkTable:
    """Records whose 1-day analog accuracy is an additive function of the cell plus a little noise."""
    rng = np.random.default_rng(seed)
    records = {}
    for index in sample_space(count, seed):
        enc = encode(index)
        day = 60.0 + sum(WEIGHTS[e, op] for e, op in enumerate(enc)) + rng.normal(0, 0.5)
        early, late = day + rng.uniform(0, 3), day - rng.uniform(0, 4)
        drift = [AccuracyStat(mean=m, std=0.1) for m in (early, (early + day) / 2, day, late)]
        records[index] = make_record(index, rng, analog_drift=drift)
    return BenchmarkTable(metadata=make_metadata(), records=records)


def top_share(table: BenchmarkTable, share: float = 0.05):
    ranked = sorted(table.sorted_records(), key=lambda r: (-r.metric("analog_drift_1d"), r.arch_index))
    return {r.arch_index for r in ranked[:int(np.ceil(share * len(ranked)))]}


@pytest.fixture(scope="module")
def micro():
    return structured_table()


def test_objective_spec_rejects_unknown_metric():
    with pytest.raises(ValidationError):
        ObjectiveSpec(primary="analog_drift_2d")
    assert ObjectiveSpec().primary == "analog_drift_1d"


def test_tracker_memoizes_and_respects_budget():
    calls = []

    def fn(enc):
        calls.append(enc)
        return separable(enc)

    tracker = QueryTracker(FunctionObjective(fn), SearchBudget(max_queries=2), "unit")
    with tracker.running():
        tracker.query(encode(0))
        tracker.query(encode(0))
        tracker.query(encode(1))
        tracker.query(encode(2))
    assert len(calls) == 2
    assert [s.arch_index for s in tracker.trajectory] == [0, 1]
    assert tracker.result().queries_used == 2


def test_exhaustive_matches_max_scan(micro):
    result = exhaustive_search(TableObjective(micro), micro)
    oracle = max(micro.sorted_records(), key=lambda r: (r.metric("analog_drift_1d"), -r.arch_index))
    assert result.best_index == oracle.arch_index
    assert result.queries_used == len(micro)
    assert result.best_evaluation.avm == pytest.approx(oracle.avm)


def test_exhaustive_tie_goes_to_lowest_index():
    rng = np.random.default_rng(0)
    same = [AccuracyStat(mean=80.0, std=0.0)] * 4
    records = {i: make_record(i, rng, analog_drift=same) for i in (40, 7, 300)}
    records[300] = make_record(300, rng, analog_drift=[AccuracyStat(mean=70.0, std=0.0)] * 4)
    table = BenchmarkTable(metadata=make_metadata(), records=records)
    result = exhaustive_search(TableObjective(table), table)
    assert result.best_index == 7
    assert result.best_value == 80.0


def test_exhaustive_reports_missing_indices(micro):
    outside = next(i for i in range(SPACE_SIZE) if i not in micro)
    space = [r.arch for r in micro.sorted_records()] + [encode(outside)]
    with pytest.raises(IncompleteTableError) as info:
        exhaustive_search(TableObjective(micro), micro, space)
    assert info.value.missing == [outside]


def test_random_search(micro):
    objective = TableObjective(micro)
    full = random_search(objective, SearchBudget(max_queries=500, seed=3))
    assert full.best_index == exhaustive_search(objective, micro).best_index
    assert full.queries_used == len(micro)
    single = random_search(objective, SearchBudget(max_queries=1, seed=3))
    assert single.queries_used == 1
    assert single.best_index == single.trajectory[0].arch_index
    again = random_search(objective, SearchBudget(max_queries=30, seed=9))
    assert again.trajectory == random_search(objective, SearchBudget(max_queries=30, seed=9)).trajectory
    assert len({s.arch_index for s in again.trajectory}) == 30


def test_mutation_is_one_edge_away():
    rng = np.random.default_rng(0)
    for _ in range(200):
        enc = encode(int(rng.integers(SPACE_SIZE)))
        edge = int(rng.integers(6))
        child = mutate(enc, rng, edge=edge)
        assert hamming(enc, child) == 1 and child[edge] != enc[edge]
        assert hamming(enc, SearchDomain().mutate(enc, rng)) == 1


def test_restricted_domain_mutation_stays_inside(micro):
    domain = TableObjective(micro).domain
    rng = np.random.default_rng(1)
    members = list(domain)
    for enc in members[:40]:
        child = domain.mutate(enc, rng)
        assert child in domain and child != enc
        nearest = min(hamming(enc, m) for m in members if m != enc)
        assert hamming(enc, child) == nearest


def test_evolution_with_budget_equal_to_population(micro):
    objective = TableObjective(micro)
    evolved = evolutionary_search(objective, SearchBudget(max_queries=20, seed=4))
    initial = random_search(objective, SearchBudget(max_queries=20, seed=4))
    assert evolved.trajectory == initial.trajectory
    assert evolved.best_index == initial.best_index
    with pytest.raises(ValueError):
        evolutionary_search(objective, SearchBudget(max_queries=10))


def test_evolution_reaches_separable_optimum():
    hits = 0
    for seed in range(10):
        result = evolutionary_search(FunctionObjective(separable), SearchBudget(max_queries=300, seed=seed))
        assert result.queries_used <= 300
        hits += result.best_value == pytest.approx(OPTIMUM)
    assert hits >= 9


def test_strategies_never_requery_or_overspend(micro):
    objective = TableObjective(micro)
    budget = SearchBudget(max_queries=25, seed=2)
    for result in (random_search(objective, budget), evolutionary_search(objective, budget),
                   bayesian_search(objective, budget), aimc_evolutionary_search(objective, budget)):
        indices = [s.arch_index for s in result.trajectory]
        assert len(indices) == len(set(indices)) <= 25
        assert result.best_value == max(s.value for s in result.trajectory if s.feasible)


def test_gbt_constant_targets_give_constant_model():
    model = fit_gbt([(encode(i), 42.5) for i in range(10)])
    assert model.trees == []
    assert all(predict(model, encode(i)) == 42.5 for i in (0, 17, 15624))
    with pytest.raises(ValueError):
        fit_gbt([(encode(0), 1.0)])


def test_gbt_fits_step_function():
    X = np.arange(10, dtype=float)[:, None]
    y = (X[:, 0] >= 5).astype(float)
    model = fit_arrays(X, y, GbtConfig(rounds=300, max_depth=1, learning_rate=0.1))
    assert model.train_rmse[-1] <= 1e-3
    assert len(model.trees) <= 300


def test_gbt_training_rmse_is_monotone_and_seeded():
    rng = np.random.default_rng(0)
    train = [(encode(int(i)), float(rng.normal())) for i in rng.choice(SPACE_SIZE, 200, replace=False)]
    cfg = GbtConfig(rounds=60, max_depth=3, feature_fraction=0.5, seed=11)
    model = fit_gbt(train, cfg)
    assert all(b <= a + 1e-12 for a, b in zip(model.train_rmse, model.train_rmse[1:]))
    cells = [encode(i) for i in range(0, SPACE_SIZE, 997)]
    assert np.array_equal(predict_many(model, cells), predict_many(fit_gbt(train, cfg), cells))


def test_gbt_ranks_held_out_separable_objective():
    rng = np.random.default_rng(3)
    indices = rng.choice(SPACE_SIZE, 1400, replace=False)
    train = [(encode(int(i)), separable(encode(int(i)))) for i in indices[:900]]
    held_out = [encode(int(i)) for i in indices[900:]]
    model = fit_gbt(train, GbtConfig(rounds=300, max_depth=2))
    tau = kendall_tau_b(predict_many(model, held_out), [separable(enc) for enc in held_out])
    assert tau >= 0.8


def test_bayesian_with_perfect_surrogate_is_greedy(micro):
    objective = TableObjective(micro)

    def perfect(encodings, evaluations, rng):
        return lambda pool: (np.array([objective.evaluate(e).primary for e in pool]), np.zeros(len(pool)))

    cfg = BayesConfig(initial=5, kappa=0.0, pool_size=None)
    result = bayesian_search(objective, SearchBudget(max_queries=15, seed=0), cfg, predictor=perfect)
    for k in range(5, 15):
        seen = {s.arch_index for s in result.trajectory[:k]}
        remaining = [r.metric("analog_drift_1d") for r in micro.sorted_records() if r.arch_index not in seen]
        assert result.trajectory[k].value == max(remaining)


def test_bayesian_replays_per_seed(micro):
    objective = TableObjective(micro)
    budget = SearchBudget(max_queries=16, seed=5)
    first = bayesian_search(objective, budget)
    assert first.trajectory == bayesian_search(objective, budget).trajectory
    with pytest.raises(ValueError):
        bayesian_search(objective, SearchBudget(max_queries=10))


def test_search_finds_top_architectures_within_40_queries(micro):
    objective = TableObjective(micro)
    top = top_share(micro)
    for search in (evolutionary_search, bayesian_search):
        hits = sum(search(objective, SearchBudget(max_queries=40, seed=seed)).best_index in top
                   for seed in range(10))
        assert hits >= 7


def test_path_encoding():
    assert len(PATH_VOCAB) == 84
    skip = path_encoding((0, 0, 0, 0, 0, 0))
    assert set(np.nonzero(skip)[0]) == {PATH_INDEX[(0,)], PATH_INDEX[(0, 0)], PATH_INDEX[(0, 0, 0)]}
    assert path_encoding((1, 1, 1, 1, 1, 1)).sum() == 0
    assert path_encoding((2, 2, 2, 2, 2, 2)).sum() == 3


def test_thompson_with_one_member_is_mean_ranking():
    preds = np.array([[0.3, 0.9, 0.1]])
    assert np.array_equal(thompson_scores(preds, np.random.default_rng(0)), preds[0])


def test_thompson_draws_a_member_per_candidate():
    preds = np.vstack([np.zeros(200), np.ones(200)])
    scores = thompson_scores(preds, np.random.default_rng(1))
    assert set(np.unique(scores)) == {0.0, 1.0}
    assert np.array_equal(scores, thompson_scores(preds, np.random.default_rng(1)))


def test_bananas_replays_per_seed(micro):
    objective = TableObjective(micro)
    cfg = BananasConfig(initial=5, ensemble=2, epochs=20, candidates=20, parents=3)
    budget = SearchBudget(max_queries=10, seed=1)
    first = bananas_style_search(objective, budget, cfg)
    assert first.queries_used == 10
    assert first.trajectory == bananas_style_search(objective, budget, cfg).trajectory


def test_aimc_search_respects_avm_bound(micro):
    objective = TableObjective(micro)
    bound = float(np.median(micro.values("avm")))
    for seed in range(10):
        result = aimc_evolutionary_search(objective, SearchBudget(max_queries=40, seed=seed),
                                          AimcConstraints(avm_max=bound))
        assert result.best_evaluation.avm <= bound


def test_aimc_search_infeasible_constraints(micro):
    objective = TableObjective(micro)
    with pytest.raises(InfeasibleConstraintError):
        aimc_evolutionary_search(objective, SearchBudget(max_queries=40), AimcConstraints(param_max=1))
    with pytest.raises(InfeasibleConstraintError):
        aimc_evolutionary_search(objective, SearchBudget(max_queries=40), AimcConstraints(avm_max=-1000.0))


def test_aimc_search_with_exact_surrogate_finds_optimum():
    def exact(encodings, evaluations, rng):
        return lambda pool: (np.array([separable(e) for e in pool]), np.zeros(len(pool)))

    hits = 0
    for seed in range(10):
        result = aimc_evolutionary_search(FunctionObjective(separable), SearchBudget(max_queries=300, seed=seed),
                                          predictor=exact)
        hits += result.best_value == pytest.approx(OPTIMUM)
    assert hits >= 9


def test_aimc_presets_differ():
    assert aimc_config("analognas") != aimc_config("ga_imc")
    with pytest.raises(KeyError):
        aimc_config("nacim")


def test_compare_methods(micro, tmp_path):
    objective = TableObjective(micro)
    single = compare_methods(["random"], objective, 20, seeds=[0])
    assert len(single) == 1 and single[0].runs == 1
    results = {}
    rows = compare_methods(["exhaustive", "random", "evolution"], objective, 30, seeds=[0, 1], results_out=results)
    exhaustive = rows[0]
    assert exhaustive.runs == 1 and exhaustive.drift_1d_std == 0.0
    assert all(row.drift_1d_mean <= exhaustive.drift_1d_mean for row in rows)
    write_comparison_csv(rows, tmp_path / "table.csv", digest="abc")
    csv_rows = read_csv(tmp_path / "table.csv")
    assert csv_rows[0][:3] == ["method", "runs", "baseline_mean"]
    assert [r[0] for r in csv_rows[1:]] == ["exhaustive", "random", "evolution"]
    write_trajectory(results["random"][1], tmp_path / "trajectory.jsonl")
    lines = (tmp_path / "trajectory.jsonl").read_text().splitlines()
    assert len(lines) == 30
    last = json.loads(lines[-1])
    assert last["step"] == 30 and last["best"] == results["random"][1].best_value
