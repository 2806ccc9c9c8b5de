import json
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import List, Sequence

import numpy as np

from aimc_bench.bench_store import (
    BenchmarkTable,
    load_splits,
    merge,
    new_table,
    resolve_scope,
    run_pipeline_for_config,
)
from aimc_bench.errors import PipelineStageError
from aimc_bench.models import RunConfig
from aimc_bench.search_space import CellEncoding, decode, format_encoding
from aimc_bench.utils import remote_log

logger = logging.getLogger(__name__)


def init_worker(level: int) -> None:
    """Gives a spawned worker process the parent's log level and format."""
    logging.basicConfig(level=level, format="%(message)s")
    logging.getLogger().setLevel(level)


def build_partition(config: RunConfig, encodings: Sequence[CellEncoding],
                    keep_going: bool = False) -> BenchmarkTable:
    """Runs the pipeline for one worker's share of the scope."""
    table = new_table(config)
    splits = load_splits(config.dataset, config.train.normalize)
    for k, enc in enumerate(encodings):
        try:
            record = run_pipeline_for_config(enc, config, splits)
        except PipelineStageError as e:
            if not keep_going:
                raise
            logger.warning(f"Skipping {format_encoding(enc)} (ArchIndex {decode(enc)}): {e}")
            continue
        table.put(record)
        logger.info(f"[{k + 1}/{len(encodings)}] ArchIndex {record.arch_index}: baseline {record.baseline_acc:.2f} "
                    f"noisy {record.noisy_acc.mean:.2f} analog {record.analog_acc.mean:.2f}")
    return table


class BenchmarkBuilder:
    def __init__(self, config: RunConfig, workers: int = 1, keep_going: bool = False):
        if workers < 1:
            raise ValueError(f"workers must be at least 1, got {workers}")
        self.config = config
        self.workers = workers
        self.keep_going = keep_going
        self.skipped: List[int] = []

    def partitions(self, encodings: Sequence[CellEncoding]) -> List[List[CellEncoding]]:
        """Contiguous ArchIndex-ordered shares, one per worker."""
        ordered = sorted(encodings, key=decode)
        count = max(1, min(self.workers, len(ordered)))
        return [[ordered[int(k)] for k in share] for share in np.array_split(np.arange(len(ordered)), count)]

    def generate(self) -> BenchmarkTable:
        """Builds the table for every architecture of the configured scope."""
        encodings = resolve_scope(self.config.scope)
        shares = self.partitions(encodings)
        logger.info(f"Starting benchmark generation: {len(encodings)} architectures, {len(shares)} partition(s), "
                    f"config digest {self.config.digest()[:12]}")
        if len(shares) == 1:
            parts = [build_partition(self.config, shares[0], self.keep_going)]
        else:
            with ProcessPoolExecutor(max_workers=len(shares), initializer=init_worker,
                                     initargs=(logging.getLogger().getEffectiveLevel(),)) as pool:
                parts = list(pool.map(build_partition, [self.config] * len(shares), shares,
                                      [self.keep_going] * len(shares)))
        table = merge(parts)
        self.skipped = sorted(set(decode(enc) for enc in encodings) - set(table.records))
        summary = self.summary(table)
        logger.info(f"Benchmark generation complete: {json.dumps(summary)}")
        remote_log(self.config.model_dump(mode="json"), json.dumps(summary))
        return table

    def summary(self, table: BenchmarkTable) -> dict:
        summary = {"records": len(table), "skipped": self.skipped, "config_digest": table.metadata.config_digest}
        if len(table):
            for metric in ("baseline", "noisy", "analog", "analog_drift_1d", "avm"):
                summary[f"mean_{metric}"] = round(float(np.mean(table.values(metric))), 4)
        return summary


def build_benchmark(config: RunConfig, workers: int = 1, keep_going: bool = False) -> BenchmarkTable:
    return BenchmarkBuilder(config, workers, keep_going).generate()
