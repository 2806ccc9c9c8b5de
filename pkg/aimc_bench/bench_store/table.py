"""
Benchmark table persistence and queries.

File format (JSON lines, UTF-8): line 1 is the metadata object, every
further line one record, records in ArchIndex order, keys in model field
order.
"""
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

from pydantic import ValidationError

from aimc_bench.bench_store.models import SCHEMA_VERSION, BenchmarkRecord, BenchmarkTable, TableMetadata
from aimc_bench.errors import (
    MergeConflictError,
    MetadataMismatchError,
    RecordNotFoundError,
    RecordValidationError,
    SchemaVersionError,
)
from aimc_bench.models import RunConfig, ScopeSpec
from aimc_bench.search_space import (
    CellEncoding,
    decode,
    encode,
    enumerate_space,
    format_encoding,
    parse_cell,
    read_arch_list,
    sample_space,
)
from aimc_bench.utils import write_csv

logger = logging.getLogger(__name__)

ArchKey = Union[int, str, Sequence[int]]


def new_table(config: RunConfig) -> BenchmarkTable:
    """Empty table carrying the metadata of a run config."""
    fields = config.pipeline_fields()
    metadata = TableMetadata(scope=config.scope.model_dump(mode="json"), config_digest=config.digest(), **fields)
    return BenchmarkTable(metadata=metadata)


def save(table: BenchmarkTable, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(table.metadata.model_dump(mode="json")) + "\n")
        for record in table.sorted_records():
            f.write(json.dumps(record.model_dump(mode="json")) + "\n")
    logger.info(f"Saved {len(table)} records to {path}")


def _check_version(obj: Any, line: int) -> None:
    if not isinstance(obj, dict):
        raise RecordValidationError(line, None, "expected a JSON object")
    version = obj.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(version, SCHEMA_VERSION)


def _validation_error(line: int, e: ValidationError) -> RecordValidationError:
    first = e.errors()[0]
    field = ".".join(str(part) for part in first["loc"]) or None
    return RecordValidationError(line, field, first["msg"])


def load(path: Union[str, Path]) -> BenchmarkTable:
    """Reads and validates a benchmark file.

    :raises SchemaVersionError: the file was written with another schema.
    :raises RecordValidationError: carrying the 1-based line number and field.
    """
    metadata = None
    records = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordValidationError(line_no, None, f"not valid JSON ({e.msg})") from e
            _check_version(obj, line_no)
            if metadata is None:
                try:
                    metadata = TableMetadata.model_validate(obj)
                except ValidationError as e:
                    raise _validation_error(line_no, e) from e
                continue
            try:
                record = BenchmarkRecord.model_validate(obj)
            except ValidationError as e:
                raise _validation_error(line_no, e) from e
            if record.arch_index in records:
                raise RecordValidationError(line_no, "arch_index", f"duplicate ArchIndex {record.arch_index}")
            if record.provenance.config_digest != metadata.config_digest:
                raise RecordValidationError(line_no, "provenance.config_digest",
                                            "record digest differs from the table metadata")
            records[record.arch_index] = record
    if metadata is None:
        raise RecordValidationError(1, None, "missing metadata line")
    logger.info(f"Loaded {len(records)} records from {path}")
    return BenchmarkTable(metadata=metadata, records=records)


def merge(partitions: Sequence[BenchmarkTable]) -> BenchmarkTable:
    """Union of partitions produced under one config; identical duplicates collapse."""
    if not partitions:
        raise ValueError("merge needs at least one partition")
    first = partitions[0].metadata
    for table in partitions[1:]:
        if table.metadata.config_digest != first.config_digest:
            raise MetadataMismatchError(
                f"Cannot merge tables with config digests {first.config_digest[:12]} and "
                f"{table.metadata.config_digest[:12]}"
            )
    records = {}
    conflicts = set()
    for table in partitions:
        for index, record in table.records.items():
            if index in records and records[index] != record:
                conflicts.add(index)
            records.setdefault(index, record)
    if conflicts:
        raise MergeConflictError(conflicts)
    metadata = first
    if any(table.metadata.scope != first.scope for table in partitions):
        metadata = first.model_copy(update={"scope": None})
    return BenchmarkTable(metadata=metadata, records=records)


def resolve_key(key: ArchKey) -> int:
    """ArchIndex of an int, an op tuple, or any string ``parse_cell`` accepts."""
    if isinstance(key, str):
        return decode(parse_cell(key))
    if isinstance(key, int) and not isinstance(key, bool):
        encode(key)
        return key
    return decode(key)


def query(table: BenchmarkTable, key: ArchKey) -> BenchmarkRecord:
    index = resolve_key(key)
    record = table.records.get(index)
    if record is None:
        raise RecordNotFoundError(index)
    return record


def field_value(record: BenchmarkRecord, field: str) -> Any:
    if field in ("arch_index", "nb201"):
        return getattr(record, field)
    if field == "arch":
        return format_encoding(record.arch)
    if field in ("noisy_std", "analog_std"):
        return getattr(record, f"{field[:-4]}_acc").std
    return record.metric(field)


def export_csv(table: BenchmarkTable, fields: Sequence[str], path: Union[str, Path]) -> None:
    """Any subset of record fields and metric names, one row per record in ArchIndex order."""
    rows = [[field_value(record, field) for field in fields] for record in table.sorted_records()]
    write_csv(path, fields, rows, digest=table.metadata.config_digest)
    logger.info(f"Exported {len(rows)} rows x {len(fields)} fields to {path}")


def resolve_scope(scope: ScopeSpec) -> List[CellEncoding]:
    if scope.kind == "full":
        return list(enumerate_space())
    if scope.kind == "sample":
        return [encode(i) for i in sample_space(scope.count, scope.seed)]
    encodings: Iterable[CellEncoding] = []
    if scope.arch_file:
        encodings = read_arch_list(scope.arch_file)
    if scope.indices:
        encodings = list(encodings) + [encode(i) for i in scope.indices]
    # duplicates collapse, first occurrence wins
    return list(dict.fromkeys(encodings))
