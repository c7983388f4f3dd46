"""Exception types raised across the package."""

from __future__ import annotations


class EmrGraphError(Exception):
    """Base class for all package errors."""


class MalformedNumber(EmrGraphError):
    def __init__(self, value: str, table: str | None = None, row: int | None = None,
                 column: str | None = None):
        self.value = value
        self.table = table
        self.row = row
        self.column = column
        where = ""
        if table is not None:
            where = f" in table {table}, row {row}, column {column}"
        super().__init__(f"malformed number {value!r}{where}")


class ConfigParseError(EmrGraphError):
    pass


class ConfigValidationError(EmrGraphError):
    pass


class MappingError(EmrGraphError):
    pass


class MissingRequiredCell(MappingError):
    def __init__(self, table: str, row: int, column: str):
        self.table, self.row, self.column = table, row, column
        super().__init__(f"{table}: row {row} has empty required column {column!r}")


class DuplicatePrimaryKey(MappingError):
    def __init__(self, table: str, key: str, row: int):
        self.table, self.key, self.row = table, key, row
        super().__init__(f"{table}: primary key {key!r} repeated at row {row}")


class NTriplesSyntaxError(EmrGraphError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnknownNamespace(EmrGraphError):
    pass


class CrossPatientComparison(EmrGraphError):
    pass


class InconsistentEdges(EmrGraphError):
    pass


class DegenerateLabels(EmrGraphError):
    pass


class QueryError(EmrGraphError):
    pass


class QuerySyntaxError(QueryError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"at position {position}: {message}")


class UnboundSelectVariable(QueryError):
    pass


class DisconnectedPattern(QueryError):
    pass


class PipelineError(EmrGraphError):
    """Wraps a stage failure with the stage name and input locus."""

    def __init__(self, stage: str, locus: str, cause: Exception):
        self.stage = stage
        self.locus = locus
        self.cause = cause
        super().__init__(f"[{stage}] {locus}: {cause}")
