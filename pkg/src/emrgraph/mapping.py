"""Triples-map engine turning preprocessed record tables into triples.

A :class:`TriplesMap` says how one table becomes triples: the subject comes
from the primary-key column, every row gets one ``rdf:type`` triple, and each
:class:`PredicateObjectMap` contributes one triple per non-empty cell.
Name columns (diseases, drugs, ...) are resolved through an
:class:`EntityRegistry` that mints stable resource ids for entity labels.
"""

from __future__ import annotations

import json
import os
import threading
import unicodedata
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple
from urllib.parse import quote

from emrgraph.core_model import (
    DATATYPES,
    RDF_TYPE,
    VOCABULARY,
    EntityKind,
    Iri,
    Literal,
    MedicalEntity,
    Triple,
    entity_to_triples,
    parse_timestamp,
    res,
    timestamp_literal,
)
from emrgraph.errors import (
    ConfigParseError,
    ConfigValidationError,
    DuplicatePrimaryKey,
    MappingError,
    MissingRequiredCell,
    UnknownNamespace,
)
from emrgraph.preprocess import SOURCE_SCHEMAS, TABLE_ORDER, RecordTable

LITERAL = "literal"
RESOURCE = "resource"


@dataclass(frozen=True)
class PredicateObjectMap:
    column: str
    predicate: Iri
    object_kind: str = LITERAL
    # Only for literal objects. "date" upgrades to dateTime when the cell has a time.
    datatype: Optional[str] = None
    # Set on resource objects whose cells hold entity labels rather than keys.
    entity_kind: Optional[EntityKind] = None
    required: bool = False


@dataclass(frozen=True)
class TriplesMap:
    table: str
    subject_pk_column: str
    type_iri: Iri
    pom: Tuple[PredicateObjectMap, ...]
    subject_namespace: str = "peg-r"


def resource_id(cell: str) -> Iri:
    return res(quote(cell.strip(), safe="-._~"))


def normalize_label(label: str) -> str:
    return " ".join(unicodedata.normalize("NFKC", label).split())


class EntityRegistry:
    """Deterministic label -> resource id minting, persisted as JSON.

    Ids are ``entity-<n>`` from a monotone counter; the first occurrence of a
    ``(kind, normalized label)`` pair claims the next number. Reloading a saved
    registry keeps every existing id and continues the counter.
    """

    def __init__(self, start: int = 1):
        self._ids: Dict[Tuple[EntityKind, str], str] = {}
        self._next = start
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._ids)

    def mint(self, kind: EntityKind, label: str) -> Iri:
        key = (kind, normalize_label(label))
        with self._lock:
            local = self._ids.get(key)
            if local is None:
                local = f"entity-{self._next}"
                self._next += 1
                self._ids[key] = local
        return res(local)

    def lookup(self, kind: EntityKind, label: str) -> Optional[Iri]:
        local = self._ids.get((kind, normalize_label(label)))
        return res(local) if local else None

    def entities(self) -> List[MedicalEntity]:
        return [MedicalEntity(res(local), kind, label)
                for (kind, label), local in self._ids.items()]

    def to_triples(self) -> List[Triple]:
        return [t for e in self.entities() for t in entity_to_triples(e)]

    def to_json(self) -> str:
        entries = [{"kind": k.value, "label": label, "id": local}
                   for (k, label), local in sorted(self._ids.items(),
                                                   key=lambda kv: _id_order(kv[1]))]
        return json.dumps({"next": self._next, "entities": entries},
                          ensure_ascii=False, indent=2) + "\n"

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "EntityRegistry":
        doc = json.loads(text)
        reg = cls(int(doc.get("next", 1)))
        for e in doc.get("entities", []):
            reg._ids[(EntityKind(e["kind"]), normalize_label(e["label"]))] = e["id"]
        return reg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EntityRegistry":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _id_order(local: str) -> Tuple[int, str]:
    tail = local.rsplit("-", 1)[-1]
    return (int(tail) if tail.isdigit() else -1, local)


def _parse_iri(text: str, where: str) -> Iri:
    try:
        return Iri.parse(text)
    except (ValueError, UnknownNamespace) as exc:
        raise ConfigValidationError(f"{where}: bad IRI {text!r} ({exc})") from None


def mapping_config_from_doc(doc, schemas: Mapping[str, Sequence[str]] = SOURCE_SCHEMAS
                            ) -> List[TriplesMap]:
    raw_maps = doc.get("maps") if isinstance(doc, Mapping) else doc
    if not isinstance(raw_maps, list):
        raise ConfigValidationError("mapping config must be a list of triples maps")
    if not raw_maps:
        raise ConfigValidationError("mapping config defines no triples maps")
    maps = []
    for n, m in enumerate(raw_maps):
        where = f"map #{n}"
        try:
            table = m["table"]
            where = f"map {table!r}"
            if table not in schemas:
                raise ConfigValidationError(f"{where}: unknown table")
            columns = schemas[table]
            subject = m["subjectColumn"]
            if subject not in columns:
                raise ConfigValidationError(f"{where}: subjectColumn {subject!r} not in table")
            type_iri = _parse_iri(m["type"], f"{where}.type")
            if type_iri.prefix != "peg-o" or type_iri not in VOCABULARY:
                raise ConfigValidationError(f"{where}.type: {type_iri} is not a peg-o class")
            poms = []
            for k, p in enumerate(m.get("predicateObjectMaps", [])):
                pw = f"{where}.predicateObjectMaps[{k}]"
                column = p["column"]
                if column not in columns:
                    raise ConfigValidationError(f"{pw}: column {column!r} not in table {table}")
                predicate = _parse_iri(p["predicate"], pw)
                if predicate not in VOCABULARY:
                    raise ConfigValidationError(f"{pw}: predicate {predicate} outside the vocabulary")
                kind = p.get("objectKind", LITERAL)
                if kind not in (LITERAL, RESOURCE):
                    raise ConfigValidationError(f"{pw}: objectKind must be literal or resource")
                datatype = p.get("datatype")
                if datatype is not None and datatype not in DATATYPES:
                    raise ConfigValidationError(f"{pw}: unsupported datatype {datatype!r}")
                entity = p.get("entityKind")
                if entity is not None:
                    if kind != RESOURCE:
                        raise ConfigValidationError(f"{pw}: entityKind needs objectKind resource")
                    entity = EntityKind(entity)
                poms.append(PredicateObjectMap(column, predicate, kind, datatype, entity,
                                               bool(p.get("required", False))))
            maps.append(TriplesMap(table, subject, type_iri, tuple(poms)))
        except ConfigValidationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigValidationError(f"{where}: {exc!r}") from exc
    return maps


def load_mapping_config(path: str | os.PathLike,
                        schemas: Mapping[str, Sequence[str]] = SOURCE_SCHEMAS) -> List[TriplesMap]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigParseError(f"{path}: {exc}") from exc
    return mapping_config_from_doc(doc, schemas)


def _object(cell: str, pom: PredicateObjectMap, registry: Optional[EntityRegistry]):
    if pom.object_kind == RESOURCE:
        if pom.entity_kind is not None:
            if registry is None:
                raise MappingError(f"column {pom.column} needs an entity registry")
            return registry.mint(pom.entity_kind, cell)
        return resource_id(cell)
    if pom.datatype in ("date", "dateTime"):
        return timestamp_literal(parse_timestamp(cell))
    return Literal(cell, pom.datatype)


def apply_triples_map(table: RecordTable, tmap: TriplesMap,
                      registry: Optional[EntityRegistry] = None) -> List[Triple]:
    """Emit triples row by row, in pom order within each row."""
    if table.name != tmap.table:
        raise MappingError(f"map for {tmap.table} applied to table {table.name}")
    pk = table.col(tmap.subject_pk_column)
    idx = [table.col(p.column) for p in tmap.pom]
    seen: Dict[str, int] = {}
    out: List[Triple] = []
    for r, row in enumerate(table.rows):
        key = row[pk].strip()
        if not key:
            raise MissingRequiredCell(table.name, r, tmap.subject_pk_column)
        if key in seen:
            raise DuplicatePrimaryKey(table.name, key, r)
        seen[key] = r
        subject = resource_id(key)
        out.append(Triple(subject, RDF_TYPE, tmap.type_iri))
        for pom, i in zip(tmap.pom, idx):
            cell = row[i].strip()
            if not cell:
                if pom.required:
                    raise MissingRequiredCell(table.name, r, pom.column)
                continue
            try:
                obj = _object(cell, pom, registry)
            except ValueError as exc:
                raise MappingError(f"{table.name}: row {r}, column {pom.column}: {exc}") from None
            out.append(Triple(subject, pom.predicate, obj))
    return out


def map_tables(tables: Mapping[str, RecordTable], maps: Iterable[TriplesMap],
               registry: EntityRegistry) -> List[Triple]:
    """Apply every map in the fixed table order, then add the registry's entity triples.

    Ordering is what keeps minted entity ids deterministic.
    """
    by_table = {m.table: m for m in maps}
    order = [t for t in TABLE_ORDER if t in by_table] + sorted(set(by_table) - set(TABLE_ORDER))
    out: List[Triple] = []
    for name in order:
        if name in tables:
            out.extend(apply_triples_map(tables[name], by_table[name], registry))
    out.extend(registry.to_triples())
    return out


def expected_triple_count(table: RecordTable, tmap: TriplesMap) -> int:
    """Closed-form size of :func:`apply_triples_map` output: one type triple per
    row plus one per non-empty mapped cell."""
    idx = [table.col(p.column) for p in tmap.pom]
    return sum(1 + sum(1 for i in idx if row[i].strip()) for row in table.rows)
