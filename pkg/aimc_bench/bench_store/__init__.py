from aimc_bench.bench_store.models import (
    CODE_VERSION,
    SCHEMA_VERSION,
    AccuracyStat,
    BenchmarkRecord,
    BenchmarkTable,
    Provenance,
    TableMetadata,
    metric_names,
)
from aimc_bench.bench_store.pipeline import (
    STAGES,
    load_splits,
    run_full_pipeline,
    run_pipeline_for_config,
    stage_seeds,
)
from aimc_bench.bench_store.table import (
    export_csv,
    field_value,
    load,
    merge,
    new_table,
    query,
    resolve_key,
    resolve_scope,
    save,
)
