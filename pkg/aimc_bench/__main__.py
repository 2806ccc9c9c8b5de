"""
Command-line entry point: ``python -m aimc_bench <command> ...``.

Exit codes: 0 on success, 1 on runtime errors (missing file, unknown
record, incomplete table, failed pipeline...), 2 on argument errors.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

from aimc_bench import build_benchmark
from aimc_bench.analysis import (
    accuracy_distribution,
    classify_drift_robustness,
    classify_noise_robustness,
    feature_correlations,
    frequent_paths,
    hwt_categories,
    op_statistics,
    rank_correlation_matrix,
    write_correlation_matrix,
    write_drift_robustness,
    write_feature_ranking,
    write_hwt_categories,
    write_noise_robustness,
    write_op_statistics,
    write_paths,
    write_summaries,
)
from aimc_bench.bench_store import BenchmarkTable, export_csv, load, metric_names, query, resolve_key, save
from aimc_bench.config import CONFIG_ENV, get_run_config, load_run_config
from aimc_bench.errors import (
    ArchIndexRangeError,
    BenchError,
    CellParseError,
    ConfigError,
    IncompleteTableError,
    InfeasibleConstraintError,
    RecordNotFoundError,
)
from aimc_bench.nas_search import (
    STRATEGIES,
    AimcConstraints,
    ObjectiveSpec,
    SearchBudget,
    SearchResult,
    TableObjective,
    aimc_config,
    aimc_evolutionary_search,
    compare_methods,
    write_comparison_csv,
    write_trajectory,
)
from aimc_bench.nas_search.strategies import AIMC_PRESETS
from aimc_bench.search_space import (
    SPACE_SIZE,
    decode,
    encode,
    extract_paths,
    format_encoding,
    parse_cell,
    sample_space,
    to_nb201_string,
)

logger = logging.getLogger("aimc_bench")

KENDALL_DEFAULT = "baseline,noisy,analog,ptq,qat"
SUMMARY_METRICS = ["baseline", "ptq", "qat", "noisy", "analog"]


class ArgumentError(BenchError, ValueError):
    """A well-formed command line with an unusable value."""


def _print(args: argparse.Namespace, payload, text: str) -> None:
    print(json.dumps(payload) if args.json else text)


def _csv_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _key(text: str):
    return int(text) if text.lstrip("-").isdigit() else text


def _load_table(path: str) -> BenchmarkTable:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return load(path)


def cmd_enumerate(args: argparse.Namespace) -> None:
    if args.count:
        _print(args, {"count": SPACE_SIZE}, str(SPACE_SIZE))
        return
    if args.sample:
        indices = sample_space(args.sample, args.seed or 0)
    else:
        indices = list(range(SPACE_SIZE))[args.start:args.start + args.limit if args.limit else None]
    if args.json:
        print(json.dumps([{"index": i, "encoding": list(encode(i)), "nb201": to_nb201_string(encode(i))}
                          for i in indices]))
        return
    for i in indices:
        print(f"{i}\t{format_encoding(encode(i))}\t{to_nb201_string(encode(i))}")


def cmd_encode(args: argparse.Namespace) -> None:
    enc = encode(args.index)
    _print(args, {"index": args.index, "encoding": list(enc), "nb201": to_nb201_string(enc)}, format_encoding(enc))


def cmd_decode(args: argparse.Namespace) -> None:
    enc = parse_cell(args.cell)
    index = decode(enc)
    _print(args, {"index": index, "encoding": list(enc), "nb201": to_nb201_string(enc)}, str(index))


def cmd_paths(args: argparse.Namespace) -> None:
    enc = encode(resolve_key(_key(args.cell)))
    paths = extract_paths(enc)
    if args.json:
        print(json.dumps({"encoding": list(enc), "paths": [list(p) for p in paths]}))
        return
    if not paths:
        print("(no paths)")
    for path in paths:
        print(",".join(str(op) for op in path))


def cmd_build_bench(args: argparse.Namespace) -> None:
    config = load_run_config(args.config) if args.config or os.environ.get(CONFIG_ENV) else get_run_config(args.preset)
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    table = build_benchmark(config, workers=args.workers, keep_going=args.keep_going)
    output = args.output or config.output.table
    save(table, output)
    _print(args, {"records": len(table), "output": output, "config_digest": table.metadata.config_digest},
           f"Wrote {len(table)} records to {output}")


def cmd_query(args: argparse.Namespace) -> None:
    table = _load_table(args.table)
    record = query(table, _key(args.key))
    if args.json:
        print(record.model_dump_json())
        return
    print(f"ArchIndex {record.arch_index}  {format_encoding(record.arch)}  {record.nb201}")
    for name in metric_names():
        print(f"  {name:<20} {record.metric(name):.4f}")


def cmd_analyze(args: argparse.Namespace) -> None:
    table = _load_table(args.table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = table.metadata.config_digest
    metrics = _csv_list(args.kendall)
    unknown = [m for m in metrics if m not in metric_names()]
    if unknown:
        raise ArgumentError(f"Unknown metric(s) {unknown}")
    group = [r.arch for r in table.sorted_records()]
    jobs = [
        ("kendall.csv", lambda p: write_correlation_matrix(rank_correlation_matrix(table, metrics), p, digest)),
        ("summaries.csv", lambda p: write_summaries(accuracy_distribution(table, SUMMARY_METRICS), p, digest)),
        ("noise_robustness.csv", lambda p: write_noise_robustness(classify_noise_robustness(table), p, digest)),
        ("drift_noisy.csv", lambda p: write_drift_robustness(classify_drift_robustness(table, "noisy"), p, digest)),
        ("drift_analog.csv", lambda p: write_drift_robustness(classify_drift_robustness(table, "analog"), p, digest)),
        ("hwt_categories.csv", lambda p: write_hwt_categories(hwt_categories(table), p, digest)),
        ("op_stats.csv", lambda p: write_op_statistics(op_statistics(group), p, digest)),
        ("paths.csv", lambda p: write_paths({n: frequent_paths(group, n, args.top_k) for n in (1, 2, 3)}, p, digest)),
        (f"features_{args.target}.csv",
         lambda p: write_feature_ranking(feature_correlations(table, args.target, top_k=args.top_k), p, digest)),
    ]
    written: List[str] = []
    for name, job in jobs:
        try:
            job(out / name)
        except ValueError as e:
            # too few or fully filtered records
            logger.warning(f"Skipped {name}: {e}")
            continue
        written.append(name)
    _print(args, {"out": str(out), "files": written}, f"Wrote {len(written)} files to {out}")


def _result_payload(result: SearchResult, digest: str) -> Dict:
    # no wall-clock fields: reruns write identical bytes
    return {"config_digest": digest, "result": result.model_dump(mode="json", exclude={"elapsed_seconds"})}


def cmd_search(args: argparse.Namespace) -> None:
    table = _load_table(args.table)
    objective = TableObjective(table, ObjectiveSpec(primary=args.primary, avm=args.avm))
    budget = SearchBudget(max_queries=args.budget, seed=args.seed or 0, time_limit=args.time_limit)
    if args.method in AIMC_PRESETS:
        constraints = AimcConstraints(avm_max=args.avm_max, param_max=args.param_max)
        result = aimc_evolutionary_search(objective, budget, constraints, cfg=aimc_config(args.method),
                                          method=args.method)
    else:
        result = STRATEGIES[args.method](objective, budget)
    digest = table.metadata.config_digest
    payload = _result_payload(result, digest)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(payload, sort_keys=True) + "\n")
    if args.trajectory:
        write_trajectory(result, args.trajectory, digest)
    _print(args, payload, f"{result.method}: best {result.best_value:.2f} at ArchIndex {result.best_index} "
                          f"{format_encoding(result.best_encoding)} after {result.queries_used} queries")


def cmd_export(args: argparse.Namespace) -> None:
    table = _load_table(args.table)
    fields = _csv_list(args.fields)
    allowed = {"arch_index", "arch", "nb201", "noisy_std", "analog_std", *metric_names()}
    unknown = [f for f in fields if f not in allowed]
    if unknown:
        raise ArgumentError(f"Unknown field(s) {unknown}")
    export_csv(table, fields, args.out)
    _print(args, {"rows": len(table), "out": args.out}, f"Exported {len(table)} rows to {args.out}")


def cmd_compare(args: argparse.Namespace) -> None:
    table = _load_table(args.table)
    methods = _csv_list(args.methods)
    unknown = [m for m in methods if m not in STRATEGIES]
    if unknown:
        raise ArgumentError(f"Unknown search method(s) {unknown}")
    seeds = [int(s) for s in _csv_list(args.seeds)] if args.seeds else [args.seed or 0]
    rows = compare_methods(methods, TableObjective(table), args.budget, seeds)
    write_comparison_csv(rows, args.out, table.metadata.config_digest)
    _print(args, [row.model_dump() for row in rows], "\n".join(
        f"{row.method:<12} 1-day {row.drift_1d_mean:.2f} +- {row.drift_1d_std:.2f}  avm {row.avm_mean:.2f}  "
        f"time {row.search_time_s:.2f}s" for row in rows))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--seed", type=int, default=None, help="seed for any randomness the command uses")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="aimc_bench", description="NAS benchmark under analog in-memory computing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", parents=[common], help="list architectures of the search space")
    p.add_argument("--count", action="store_true", help="print only the size of the space")
    p.add_argument("--sample", type=int, default=None, help="a seeded sample of this many indices")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("encode", parents=[common], help="ArchIndex to cell")
    p.add_argument("index", type=int)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="cell (NB201 string or op tuple) to ArchIndex")
    p.add_argument("cell")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("paths", parents=[common], help="input-to-output op paths of a cell")
    p.add_argument("cell", help="ArchIndex, NB201 string or op tuple")
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("build-bench", parents=[common], help="run the pipeline over the configured scope")
    p.add_argument("--config", default=None, help=f"JSON config file (default: ${CONFIG_ENV})")
    p.add_argument("--preset", default="desk", help="preset used when no config file is given")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--keep-going", action="store_true", help="skip architectures whose pipeline fails")
    p.add_argument("--output", default=None, help="table path (default: output.table of the config)")
    p.set_defaults(func=cmd_build_bench)

    p = sub.add_parser("query", parents=[common], help="print one record")
    p.add_argument("table")
    p.add_argument("key", help="ArchIndex, NB201 string or op tuple")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("analyze", parents=[common], help="write the analysis CSVs of a table")
    p.add_argument("table")
    p.add_argument("--out", default="analysis")
    p.add_argument("--kendall", default=KENDALL_DEFAULT, help="metrics of the correlation matrix")
    p.add_argument("--target", default="noisy_drop", help="robustness target of the feature ranking")
    p.add_argument("--top-k", type=int, default=20)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("search", parents=[common], help="run one search strategy on a frozen table")
    p.add_argument("table")
    p.add_argument("--method", choices=sorted(STRATEGIES), required=True)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--time-limit", type=float, default=None, help="wall-clock cap in seconds")
    p.add_argument("--primary", default="analog_drift_1d")
    p.add_argument("--avm", choices=["avm", "avm_t0"], default="avm")
    p.add_argument("--avm-max", type=float, default=float("inf"))
    p.add_argument("--param-max", type=int, default=None)
    p.add_argument("--out", default=None, help="SearchResult JSON path")
    p.add_argument("--trajectory", default=None, help="trajectory JSON-lines path")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("export", parents=[common], help="dump record fields to CSV")
    p.add_argument("table")
    p.add_argument("--fields", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("compare", parents=[common], help="compare search strategies on a frozen table")
    p.add_argument("table")
    p.add_argument("--methods", default=",".join(STRATEGIES))
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--seeds", default=None, help="comma-separated seeds (default: --seed)")
    p.add_argument("--out", default="comparison.csv")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(message)s')
    logging.getLogger().setLevel(level)
    try:
        args.func(args)
    except (ArgumentError, ArchIndexRangeError, CellParseError, ValidationError) as e:
        logger.error(f"Invalid argument: {e}")
        return 2
    except FileNotFoundError as e:
        logger.error(f"File not found: {e.filename or e}")
        return 1
    except RecordNotFoundError as e:
        logger.error(str(e))
        return 1
    except IncompleteTableError as e:
        logger.error(f"Incomplete table: {e}")
        return 1
    except InfeasibleConstraintError as e:
        logger.error(f"Infeasible constraints: {e}")
        return 1
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 1
    except Exception as e:
        logger.error(f"Error during {args.command}: {e}")
        logger.debug("", exc_info=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
