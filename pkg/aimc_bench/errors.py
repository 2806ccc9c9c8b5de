"""
Error types raised across aimc_bench.

Every error derives from BenchError and from the builtin it specializes, so
``except ValueError`` style handling keeps working for callers that do not
know about this module.
"""
from typing import Iterable, List, Optional


class BenchError(Exception):
    """Base class for all aimc_bench errors."""


class ArchIndexRangeError(BenchError, ValueError):
    pass


class CellParseError(BenchError, ValueError):
    def __init__(self, segment: str, reason: str):
        self.segment = segment
        super().__init__(f"Cannot parse cell segment {segment!r}: {reason}")


class DatasetFormatError(BenchError, ValueError):
    def __init__(self, path: str, offset: int, reason: str):
        self.path = path
        self.offset = offset
        super().__init__(f"{path}: bad record at byte offset {offset}: {reason}")


class EmptyDatasetError(BenchError, ValueError):
    pass


class DivergenceError(BenchError, RuntimeError):
    def __init__(self, epoch: int, detail: str = "non-finite loss"):
        self.epoch = epoch
        super().__init__(f"Training diverged at epoch {epoch}: {detail}")


class UnsupportedLayerError(BenchError, TypeError):
    pass


class DriftTimeError(BenchError, ValueError):
    pass


class PipelineStageError(BenchError, RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Pipeline stage '{stage}' failed: {cause}")


class SchemaVersionError(BenchError, ValueError):
    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(
            f"Benchmark file has schema_version {found}, this code reads {expected}; "
            f"migrate the file before loading"
        )


class RecordValidationError(BenchError, ValueError):
    def __init__(self, line: int, field: Optional[str], reason: str):
        self.line = line
        self.field = field
        where = f"line {line}" + (f", field '{field}'" if field else "")
        super().__init__(f"Invalid benchmark data at {where}: {reason}")


class MetadataMismatchError(BenchError, ValueError):
    pass


class MergeConflictError(BenchError, ValueError):
    def __init__(self, indices: Iterable[int]):
        self.indices: List[int] = sorted(indices)
        super().__init__(f"Conflicting records for ArchIndex {self.indices}")


class RecordNotFoundError(BenchError, KeyError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(index)

    def __str__(self) -> str:
        return f"No benchmark record for ArchIndex {self.index}"


class IncompleteTableError(BenchError, ValueError):
    def __init__(self, missing: Iterable[int]):
        self.missing: List[int] = sorted(missing)
        shown = self.missing[:20]
        more = f" (+{len(self.missing) - 20} more)" if len(self.missing) > 20 else ""
        super().__init__(f"Table is missing {len(self.missing)} architectures: {shown}{more}")


class InfeasibleConstraintError(BenchError, ValueError):
    pass


class ConfigError(BenchError, ValueError):
    pass
