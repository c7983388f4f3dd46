"""Vocabulary, RDF-style terms and the typed patient/event model.

Every other module speaks in terms of :class:`Iri`, :class:`Literal` and
:class:`Triple`; events and entities convert to triples through
:func:`event_to_triples` / :func:`entity_to_triples` and back through
:func:`events_from_triples` / :func:`entities_from_triples`.
"""

from __future__ import annotations

import enum
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime
from decimal import Decimal, InvalidOperation
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

from emrgraph.errors import UnknownNamespace

PREFIXES: Mapping[str, str] = MappingProxyType({
    "peg-o": "http://peg.ecustnlplab.com/ontology#",
    "peg-r": "http://peg.ecustnlplab.com/resource/",
    "sem": "https://semanticweb.cs.vu.nl/2009/11/sem/",
    "rdf": "http://www.w3.org/1999/02/22-rdf-syntax-ns#",
    "rdfs": "http://www.w3.org/2000/01/rdf-schema#",
    "skos": "http://www.w3.org/2004/02/skos/core#",
})

# Datatype IRIs are only used inside typed literals, never as Iri terms.
XSD = "http://www.w3.org/2001/XMLSchema#"
DATATYPES = ("string", "date", "dateTime", "integer", "decimal")

_BAD_LOCAL = re.compile(r"[\s<>]")


@dataclass(frozen=True, order=True)
class Iri:
    prefix: str
    local: str

    def __post_init__(self):
        if self.prefix not in PREFIXES:
            raise UnknownNamespace(f"unknown prefix {self.prefix!r}")
        if not self.local or _BAD_LOCAL.search(self.local):
            raise ValueError(f"invalid local name {self.local!r}")

    @property
    def uri(self) -> str:
        return PREFIXES[self.prefix] + self.local

    @classmethod
    def from_uri(cls, uri: str) -> "Iri":
        # Longest base first so nested namespaces resolve unambiguously.
        for prefix, base in sorted(PREFIXES.items(), key=lambda kv: -len(kv[1])):
            if uri.startswith(base) and len(uri) > len(base):
                return cls(prefix, uri[len(base):])
        raise UnknownNamespace(f"IRI outside the prefix table: <{uri}>")

    @classmethod
    def parse(cls, curie: str) -> "Iri":
        prefix, sep, local = curie.partition(":")
        if not sep:
            raise ValueError(f"not a prefixed name: {curie!r}")
        return cls(prefix, local)

    def __str__(self) -> str:
        return f"{self.prefix}:{self.local}"


@dataclass(frozen=True, order=True)
class Literal:
    lexical: str
    datatype: Optional[str] = None

    def __post_init__(self):
        if self.datatype == "string":
            object.__setattr__(self, "datatype", None)
        dt = self.datatype
        if dt is None:
            return
        if dt not in DATATYPES:
            raise ValueError(f"unsupported datatype {dt!r}")
        try:
            if dt == "date":
                date.fromisoformat(self.lexical)
            elif dt == "dateTime":
                datetime.fromisoformat(self.lexical)
            elif dt == "integer":
                int(self.lexical)
            elif dt == "decimal":
                if not Decimal(self.lexical).is_finite():
                    raise ValueError(self.lexical)
        except (ValueError, InvalidOperation):
            raise ValueError(f"{self.lexical!r} is not a valid {dt}") from None

    def __str__(self) -> str:
        return self.lexical


Term = Union[Iri, Literal]
Timestamp = Union[date, datetime]


def _check_not_resource(predicate: Iri) -> None:
    if predicate.prefix == "peg-r":
        raise ValueError(f"predicate {predicate} lies in the resource namespace")


@dataclass(frozen=True)
class Triple:
    subject: Iri
    predicate: Iri
    object: Term

    def __post_init__(self):
        _check_not_resource(self.predicate)

    def __iter__(self):
        return iter((self.subject, self.predicate, self.object))


def onto(local: str) -> Iri:
    return Iri("peg-o", local)


def res(local: str) -> Iri:
    return Iri("peg-r", local)


RDF_TYPE = Iri("rdf", "type")
RDFS_LABEL = Iri("rdfs", "label")
RDFS_SUBCLASS = Iri("rdfs", "subClassOf")
SKOS_EXACT_MATCH = Iri("skos", "exactMatch")
HAS_ACTOR = Iri("sem", "hasActor")
HAS_BEGIN = Iri("sem", "hasBeginTimeStamp")
HAS_END = Iri("sem", "hasEndTimeStamp")
GENDER = onto("gender")
BIRTHDAY = onto("birthday")
SITUATION = onto("situation")
ASSAY_RESULT = onto("assayResult")
ASSAY_PROMPT = onto("assayPrompt")
ASSAY_UNIT = onto("assayUnit")

EVENT_PROPERTIES = frozenset({SITUATION, ASSAY_RESULT, ASSAY_PROMPT, ASSAY_UNIT})


class EntityKind(str, enum.Enum):
    DISEASE = "Disease"
    DRUG = "Drug"
    ASSAY = "Assay"
    SURGERY = "Surgery"

    @property
    def iri(self) -> Iri:
        return onto(self.value)


class EventKind(str, enum.Enum):
    HOSPITALIZATION = "Hospitalization"
    DIAGNOSIS = "Diagnosis"
    DRUG = "Drug"
    ASSAY = "Assay"
    SURGERY = "Surgery"

    @property
    def iri(self) -> Iri:
        return onto(self.value + "Event")

    @property
    def point_only(self) -> bool:
        return self in (EventKind.DIAGNOSIS, EventKind.ASSAY, EventKind.SURGERY)


class RelationKind(str, enum.Enum):
    BEFORE = "Before"
    AFTER = "After"
    CONCURRENT = "Concurrent"
    DURING = "During"
    OVERLAP = "Overlap"

    @property
    def iri(self) -> Iri:
        return onto(self.value)


PATIENT_CLASS = onto("Patient")
EVENT_CLASSES: Mapping[Iri, EventKind] = MappingProxyType({k.iri: k for k in EventKind})
ENTITY_CLASSES: Mapping[Iri, EntityKind] = MappingProxyType({k.iri: k for k in EntityKind})
RELATION_PREDICATES: Mapping[Iri, RelationKind] = MappingProxyType(
    {k.iri: k for k in RelationKind})

VOCABULARY = frozenset(
    {PATIENT_CLASS, RDF_TYPE, RDFS_LABEL, RDFS_SUBCLASS, SKOS_EXACT_MATCH,
     HAS_ACTOR, HAS_BEGIN, HAS_END, GENDER, BIRTHDAY,
     Iri("sem", "Event"), Iri("sem", "Actor"), Iri("sem", "Object")}
    | EVENT_PROPERTIES
    | set(EVENT_CLASSES) | set(ENTITY_CLASSES) | set(RELATION_PREDICATES)
)


def parse_timestamp(text: str) -> Timestamp:
    """Parse an ISO date (day granularity) or datetime cell."""
    text = text.strip()
    try:
        return date.fromisoformat(text)
    except ValueError:
        pass
    return datetime.fromisoformat(text)


def timestamp_literal(value: Timestamp) -> Literal:
    if isinstance(value, datetime):
        return Literal(value.isoformat(), "dateTime")
    return Literal(value.isoformat(), "date")


def time_key(value: Timestamp) -> datetime:
    """Chronological sort key usable across dates and datetimes."""
    if isinstance(value, datetime):
        return value.replace(tzinfo=None) if value.tzinfo else value
    return datetime(value.year, value.month, value.day)


@dataclass(frozen=True)
class Interval:
    begin: Timestamp
    end: Timestamp

    def __post_init__(self):
        if time_key(self.begin) > time_key(self.end):
            raise ValueError(f"interval begins after it ends: {self.begin} > {self.end}")

    @classmethod
    def point(cls, at: Timestamp) -> "Interval":
        return cls(at, at)

    @property
    def lo(self) -> datetime:
        return time_key(self.begin)

    @property
    def hi(self) -> datetime:
        return time_key(self.end)

    def is_point(self) -> bool:
        return self.lo == self.hi


@dataclass(frozen=True)
class PatientEntity:
    id: Iri
    gender: str = ""
    birthday: Optional[date] = None


@dataclass(frozen=True)
class MedicalEntity:
    id: Iri
    kind: EntityKind
    label: str


@dataclass(frozen=True)
class MedicalEvent:
    """One medical event of a single patient.

    ``entities`` is kept as a sorted tuple and ``props`` as a sorted tuple of
    ``(predicate, literal)`` pairs so that equal events compare and hash equal
    regardless of how they were assembled.
    """

    id: Iri
    kind: EventKind
    patient: Iri
    interval: Interval
    entities: Tuple[Iri, ...] = ()
    props: Tuple[Tuple[Iri, Literal], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(sorted(set(self.entities))))
        props = self.props
        if isinstance(props, Mapping):
            props = props.items()
        object.__setattr__(self, "props", tuple(sorted(props)))
        if self.kind.point_only and not self.interval.is_point():
            raise ValueError(f"{self.kind.value} event {self.id} must be a time point")
        for pred, _ in self.props:
            if pred not in EVENT_PROPERTIES:
                raise ValueError(f"{pred} is not an event property")

    @property
    def prop_map(self) -> Dict[Iri, Literal]:
        return dict(self.props)


@dataclass(frozen=True)
class TemporalEdge:
    source: Iri
    target: Iri
    rel: RelationKind

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError(f"self-edge on {self.source}")


def event_to_triples(event: MedicalEvent) -> List[Triple]:
    s = event.id
    out = [
        Triple(s, RDF_TYPE, event.kind.iri),
        Triple(s, HAS_ACTOR, event.patient),
    ]
    out.extend(Triple(s, HAS_ACTOR, ent) for ent in event.entities)
    out.append(Triple(s, HAS_BEGIN, timestamp_literal(event.interval.begin)))
    if not event.interval.is_point():
        out.append(Triple(s, HAS_END, timestamp_literal(event.interval.end)))
    out.extend(Triple(s, pred, lit) for pred, lit in event.props)
    return out


def entity_to_triples(entity: Union[PatientEntity, MedicalEntity]) -> List[Triple]:
    s = entity.id
    if isinstance(entity, PatientEntity):
        out = [Triple(s, RDF_TYPE, PATIENT_CLASS)]
        if entity.gender:
            out.append(Triple(s, GENDER, Literal(entity.gender)))
        if entity.birthday is not None:
            out.append(Triple(s, BIRTHDAY, timestamp_literal(entity.birthday)))
        return out
    out = [Triple(s, RDF_TYPE, entity.kind.iri)]
    if entity.label:
        out.append(Triple(s, RDFS_LABEL, Literal(entity.label)))
    return out


def group_by_subject(triples: Iterable[Triple]) -> Dict[Iri, List[Triple]]:
    groups: Dict[Iri, List[Triple]] = defaultdict(list)
    for t in triples:
        groups[t.subject].append(t)
    return groups


def _types(group: List[Triple]) -> List[Iri]:
    return [t.object for t in group if t.predicate == RDF_TYPE and isinstance(t.object, Iri)]


def _literal_time(term: Term) -> Timestamp:
    if not isinstance(term, Literal):
        raise ValueError(f"timestamp must be a literal, got {term}")
    return parse_timestamp(term.lexical)


def events_from_triples(triples: Iterable[Triple],
                        patients: Optional[Iterable[Iri]] = None) -> List[MedicalEvent]:
    """Regroup triples by subject and rebuild every typed event.

    The patient actor of each event is recognised by membership in
    ``patients``; when omitted, subjects typed ``peg-o:Patient`` in the same
    triple set are used. Events come back sorted by id.
    """
    groups = group_by_subject(triples)
    if patients is None:
        patient_ids = {s for s, g in groups.items() if PATIENT_CLASS in _types(g)}
    else:
        patient_ids = set(patients)
    events = []
    for subject, group in groups.items():
        kinds = [EVENT_CLASSES[t] for t in _types(group) if t in EVENT_CLASSES]
        if not kinds:
            continue
        if len(kinds) > 1:
            raise ValueError(f"{subject} has several event types")
        actors = [t.object for t in group if t.predicate == HAS_ACTOR]
        owners = [a for a in actors if a in patient_ids]
        if len(owners) != 1:
            raise ValueError(f"event {subject} must reference exactly one patient, found {len(owners)}")
        begins = [t.object for t in group if t.predicate == HAS_BEGIN]
        ends = [t.object for t in group if t.predicate == HAS_END]
        if len(begins) != 1 or len(ends) > 1:
            raise ValueError(f"event {subject} needs one begin and at most one end timestamp")
        begin = _literal_time(begins[0])
        end = _literal_time(ends[0]) if ends else begin
        props = [(t.predicate, t.object) for t in group if t.predicate in EVENT_PROPERTIES]
        events.append(MedicalEvent(
            id=subject,
            kind=kinds[0],
            patient=owners[0],
            interval=Interval(begin, end),
            entities=tuple(a for a in actors if a != owners[0]),
            props=tuple(props),
        ))
    events.sort(key=lambda e: e.id)
    return events


def entities_from_triples(triples: Iterable[Triple]) -> List[Union[PatientEntity, MedicalEntity]]:
    out: List[Union[PatientEntity, MedicalEntity]] = []
    for subject, group in group_by_subject(triples).items():
        types = _types(group)
        if PATIENT_CLASS in types:
            gender = next((t.object.lexical for t in group if t.predicate == GENDER), "")
            bday = next((t.object for t in group if t.predicate == BIRTHDAY), None)
            out.append(PatientEntity(
                subject, gender,
                date.fromisoformat(bday.lexical) if bday is not None else None,
            ))
            continue
        kinds = [ENTITY_CLASSES[t] for t in types if t in ENTITY_CLASSES]
        if kinds:
            label = next((t.object.lexical for t in group if t.predicate == RDFS_LABEL), "")
            out.append(MedicalEntity(subject, kinds[0], label))
    out.sort(key=lambda e: e.id)
    return out
