from aimc_bench.analysis.exports import (
    write_correlation_matrix,
    write_drift_robustness,
    write_feature_ranking,
    write_hwt_categories,
    write_noise_robustness,
    write_op_statistics,
    write_paths,
    write_summaries,
)
from aimc_bench.analysis.kendall import correlation_matrix, kendall_tau_b, kendall_tau_b_reference
from aimc_bench.analysis.stats import (
    Criterion,
    DriftRobustness,
    DriftThresholds,
    HwtCategories,
    HwtGroup,
    NoiseRobustness,
    RobustnessLabel,
    SummaryStats,
    accuracy_distribution,
    classify_drift_robustness,
    classify_noise_robustness,
    drift_drop_summary,
    drift_drops,
    hwt_categories,
    rank_correlation_matrix,
    summarize,
)
from aimc_bench.analysis.structure import (
    DEFAULT_SUBSETS,
    UNREACHABLE,
    FeatureCorrelation,
    FeatureRanking,
    GrafFeatureVector,
    OpStatistics,
    PathFrequency,
    SubsetFeatures,
    feature_correlations,
    frequent_paths,
    graf_features,
    op_statistics,
    rank_features,
    robustness_targets,
    table_features,
)
