from aimc_bench.nas_search.bananas import (
    PATH_VOCAB,
    BananasConfig,
    MlpEnsemble,
    bananas_style_search,
    path_encoding,
    thompson_scores,
)
from aimc_bench.nas_search.compare import (
    COMPARISON_HEADER,
    STRATEGIES,
    ComparisonRow,
    compare_methods,
    write_comparison_csv,
    write_trajectory,
)
from aimc_bench.nas_search.gbt import (
    GbtConfig,
    GbtSurrogate,
    RegressionTree,
    fit_arrays,
    fit_gbt,
    one_hot,
    predict,
    predict_many,
)
from aimc_bench.nas_search.objective import (
    Evaluation,
    FunctionObjective,
    Objective,
    ObjectiveSpec,
    PipelineObjective,
    QueryTracker,
    SearchBudget,
    SearchDomain,
    SearchResult,
    TableObjective,
    TrajectoryStep,
)
from aimc_bench.nas_search.strategies import (
    AIMC_PRESETS,
    AimcConstraints,
    AimcSearchConfig,
    BayesConfig,
    aimc_config,
    aimc_evolutionary_search,
    bayesian_search,
    evolutionary_search,
    exhaustive_search,
    random_search,
)
