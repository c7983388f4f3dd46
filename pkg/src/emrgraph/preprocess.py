"""Cleaning of raw EMR record tables before mapping.

Covers qualitative-value normalization, unit conversion, splitting of
multi-valued cells into one row per value, and the missing-value policy.
Everything here is a pure function of ``(table, config)``.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import os
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

from emrgraph.errors import ConfigParseError, ConfigValidationError, MalformedNumber

# Column layout of the six record tables consumed by the pipeline.
SOURCE_SCHEMAS: Mapping[str, Tuple[str, ...]] = {
    "PR": ("PatientID", "Gender", "Birthday"),
    "HR": ("HospitalizationID", "PatientID", "AdmissionDate", "DischargeDate", "Department"),
    "DR": ("DiagnosisID", "PatientID", "Date", "Disease", "Situation"),
    "MR": ("DrugRecordID", "PatientID", "StartDate", "EndDate", "Drug", "Dosage"),
    "AR": ("AssayID", "PatientID", "Date", "AssayName", "Result", "Unit", "Prompt"),
    "SR": ("SurgeryID", "PatientID", "Date", "Surgery"),
}
TABLE_ORDER: Tuple[str, ...] = ("PR", "HR", "DR", "MR", "AR", "SR")

DEFAULT_DELIMITERS = frozenset({",", "，", ";", "；", " ", "、"})
_PAREN_FOLD = str.maketrans({"（": "(", "）": ")", "＋": "+", "－": "-"})


@dataclass(frozen=True)
class RecordTable:
    name: str
    columns: Tuple[str, ...]
    rows: Tuple[Tuple[str, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"{self.name}: row {i} has {len(row)} cells, expected {width}")

    def col(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise KeyError(f"{self.name} has no column {name!r}") from None

    def records(self) -> List[Dict[str, str]]:
        return [dict(zip(self.columns, r)) for r in self.rows]


def read_table(path: str | os.PathLike, name: Optional[str] = None) -> RecordTable:
    """Load a UTF-8 CSV with a header row."""
    name = name or os.path.splitext(os.path.basename(path))[0]
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: missing header row") from None
        rows = [r for r in reader if r]
    return RecordTable(name, tuple(h.strip() for h in header), tuple(tuple(r) for r in rows))


def table_to_csv(table: RecordTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    writer.writerows(table.rows)
    return buf.getvalue()


def write_table(table: RecordTable, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(table_to_csv(table))


class MissingPolicy(str, enum.Enum):
    DROP_ROW = "DropRow"
    KEEP_EMPTY = "KeepEmpty"


@dataclass(frozen=True)
class UnitColumns:
    value: str
    unit: str
    quantity: str


@dataclass(frozen=True)
class TablePolicy:
    qualitative: Tuple[str, ...] = ()
    units: Tuple[UnitColumns, ...] = ()
    multivalue: Tuple[str, ...] = ()
    mandatory: Tuple[str, ...] = ()
    # When set, rows produced by splitting get "-1", "-2", ... appended to this key column.
    split_key: Optional[str] = None


@dataclass(frozen=True)
class NormalizationConfig:
    qualitative_map: Mapping[str, str] = field(default_factory=dict)
    unit_table: Mapping[Tuple[str, str], Tuple[str, Decimal]] = field(default_factory=dict)
    split_delimiters: FrozenSet[str] = DEFAULT_DELIMITERS
    missing_policy: MissingPolicy = MissingPolicy.DROP_ROW
    table_policies: Mapping[str, TablePolicy] = field(default_factory=dict)

    def __post_init__(self):
        folded = {fold_qualitative(k): v for k, v in self.qualitative_map.items()}
        object.__setattr__(self, "qualitative_map", folded)
        for key, (_, factor) in self.unit_table.items():
            if not factor > 0:
                raise ConfigValidationError(f"unit factor for {key} must be positive")


def fold_qualitative(text: str) -> str:
    return "".join(text.translate(_PAREN_FOLD).split()).lower()


def load_normalization_config(path: str | os.PathLike) -> NormalizationConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigParseError(f"{path}: {exc}") from exc
    return normalization_config_from_dict(doc)


def normalization_config_from_dict(doc: Mapping) -> NormalizationConfig:
    try:
        units = {}
        for entry in doc.get("units", []):
            units[(entry["quantity"], entry["from"])] = (entry["to"], Decimal(str(entry["factor"])))
        policies = {}
        for table, pol in doc.get("table_policies", {}).items():
            policies[table] = TablePolicy(
                qualitative=tuple(pol.get("qualitative", ())),
                units=tuple(UnitColumns(u["value"], u["unit"], u["quantity"])
                            for u in pol.get("units", ())),
                multivalue=tuple(pol.get("multivalue", ())),
                mandatory=tuple(pol.get("mandatory", ())),
                split_key=pol.get("split_key"),
            )
        delims = doc.get("delimiters")
        missing = doc.get("missing", MissingPolicy.DROP_ROW.value)
        if isinstance(missing, Mapping):
            missing = missing.get("policy", MissingPolicy.DROP_ROW.value)
        return NormalizationConfig(
            qualitative_map=dict(doc.get("qualitative", {})),
            unit_table=units,
            split_delimiters=frozenset(delims) if delims is not None else DEFAULT_DELIMITERS,
            missing_policy=MissingPolicy(missing),
            table_policies=policies,
        )
    except (KeyError, TypeError, ValueError, InvalidOperation) as exc:
        raise ConfigValidationError(f"normalization config: {exc!r}") from exc


def normalize_qualitative(cell: str, config: NormalizationConfig) -> str:
    trimmed = cell.strip()
    return config.qualitative_map.get(fold_qualitative(trimmed), trimmed)


def parse_decimal(cell: str) -> Decimal:
    try:
        value = Decimal(cell.strip())
    except InvalidOperation:
        raise MalformedNumber(cell) from None
    if not value.is_finite():
        raise MalformedNumber(cell)
    return value


def format_decimal(value: Decimal) -> str:
    """Plain notation, no trailing zeros: 120.0 -> '120', 1.50 -> '1.5'."""
    text = format(value.normalize(), "f")
    return "0" if text in ("-0", "") else text


def convert_unit(value: Decimal, quantity: str, unit: str,
                 config: NormalizationConfig) -> Tuple[Decimal, str]:
    target = config.unit_table.get((quantity, unit))
    if target is None:
        return value, unit
    to_unit, factor = target
    return value * factor, to_unit


def split_multivalue(cell: str, config: NormalizationConfig) -> List[str]:
    pieces = [cell]
    for delim in sorted(config.split_delimiters):
        pieces = [part for piece in pieces for part in piece.split(delim)]
    return [p.strip() for p in pieces if p.strip()]


def _explode(row: List[str], idx: Sequence[int], config: NormalizationConfig) -> List[List[str]]:
    out = [row]
    for i in idx:
        values = split_multivalue(row[i], config) or [""]
        nxt = []
        for r in out:
            for v in values:
                copy = list(r)
                copy[i] = v
                nxt.append(copy)
        out = nxt
    return out


def preprocess_table(table: RecordTable, config: NormalizationConfig) -> RecordTable:
    policy = config.table_policies.get(table.name)
    if policy is None:
        raise ConfigValidationError(f"no table policy configured for {table.name!r}")
    for name in (*policy.qualitative, *policy.multivalue, *policy.mandatory,
                 *(c for u in policy.units for c in (u.value, u.unit, u.quantity))):
        if name not in table.columns:
            raise ConfigValidationError(f"policy for {table.name} names unknown column {name!r}")
    qual_idx = [table.col(c) for c in policy.qualitative]
    unit_idx = [(table.col(u.value), table.col(u.unit), table.col(u.quantity)) for u in policy.units]
    multi_idx = [table.col(c) for c in policy.multivalue]
    mand_idx = [table.col(c) for c in policy.mandatory]
    key_idx = table.col(policy.split_key) if policy.split_key else None

    rows: List[Tuple[str, ...]] = []
    for r, raw in enumerate(table.rows):
        row = [c.strip() for c in raw]
        for i in qual_idx:
            row[i] = normalize_qualitative(row[i], config)
        for vi, ui, qi in unit_idx:
            if not row[vi] or (row[qi], row[ui]) not in config.unit_table:
                continue
            try:
                value = parse_decimal(row[vi])
            except MalformedNumber:
                raise MalformedNumber(row[vi], table.name, r, table.columns[vi]) from None
            converted, unit = convert_unit(value, row[qi], row[ui], config)
            row[vi], row[ui] = format_decimal(converted), unit
        exploded = _explode(row, multi_idx, config)
        if key_idx is not None and len(exploded) > 1:
            for n, er in enumerate(exploded, start=1):
                er[key_idx] = f"{er[key_idx]}-{n}"
        for er in exploded:
            if config.missing_policy is MissingPolicy.DROP_ROW and any(not er[i] for i in mand_idx):
                continue
            rows.append(tuple(er))
    return RecordTable(table.name, table.columns, tuple(rows))
