"""Temporal relations between the events of one patient.

Two construction modes are provided:

* :func:`build_full` materializes every relation between every pair of
  events of a patient.
* :func:`build_reduced` stores the point-event Before/After/Concurrent
  relations as chains (consecutive timestamps, consecutive ids within one
  timestamp) and everything involving a period event directly.
  :func:`infer_closure` recovers the full relation set from it.

Relations are decided on closed intervals ``[begin, end]``:

* Concurrent: identical begin and end.
* Before(a, b): ``end(a) < begin(b)``; After is its inverse.
* During(a, b): a lies inside b (inclusive ends) and they are not identical.
* Overlap(a, b): b starts strictly earlier, a starts no later than b ends,
  and a ends strictly after b.

For any two distinct events of a patient exactly one of these holds in one
direction.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations, groupby
from typing import Dict, Iterable, List, Sequence, Set, Tuple

from emrgraph.core_model import (
    RELATION_PREDICATES,
    Iri,
    MedicalEvent,
    RelationKind,
    TemporalEdge,
    Triple,
)
from emrgraph.errors import CrossPatientComparison, InconsistentEdges

BEFORE = RelationKind.BEFORE
AFTER = RelationKind.AFTER
CONCURRENT = RelationKind.CONCURRENT
DURING = RelationKind.DURING
OVERLAP = RelationKind.OVERLAP

# Relations that the reduced mode may leave implicit.
INFERABLE = frozenset({BEFORE, AFTER, CONCURRENT})


class TimeType(str, enum.Enum):
    POINT = "Point"
    PERIOD = "Period"


class Mode(str, enum.Enum):
    FULL = "full"
    REDUCED = "reduced"


@dataclass(frozen=True)
class PatientTimeline:
    patient: Iri
    events: Tuple[MedicalEvent, ...]

    def __post_init__(self):
        for e in self.events:
            if e.patient != self.patient:
                raise CrossPatientComparison(
                    f"event {e.id} belongs to {e.patient}, not {self.patient}")
        object.__setattr__(self, "events", tuple(sorted(self.events, key=_event_order)))


def _event_order(e: MedicalEvent):
    return (e.interval.lo, e.interval.hi, e.id)


def timelines(events: Iterable[MedicalEvent]) -> List[PatientTimeline]:
    """Split events into per-patient timelines, ordered by patient id."""
    by_patient: Dict[Iri, List[MedicalEvent]] = defaultdict(list)
    for e in events:
        by_patient[e.patient].append(e)
    return [PatientTimeline(p, tuple(evs)) for p, evs in sorted(by_patient.items())]


def classify_time_type(event: MedicalEvent) -> TimeType:
    return TimeType.POINT if event.interval.is_point() else TimeType.PERIOD


def relate(a: MedicalEvent, b: MedicalEvent) -> TemporalEdge:
    """The single relation holding between ``a`` and ``b``, as a directed edge.

    Before/After/Concurrent/Overlap/During are reported from whichever side
    the definition names as the source, so a contained ``b`` comes back as
    ``During(b, a)``.
    """
    if a.patient != b.patient:
        raise CrossPatientComparison(f"{a.id} ({a.patient}) vs {b.id} ({b.patient})")
    if a.id == b.id:
        raise ValueError(f"cannot relate {a.id} to itself")
    la, ha, lb, hb = a.interval.lo, a.interval.hi, b.interval.lo, b.interval.hi
    if ha < lb:
        return TemporalEdge(a.id, b.id, BEFORE)
    if hb < la:
        return TemporalEdge(a.id, b.id, AFTER)
    if la == lb and ha == hb:
        return TemporalEdge(a.id, b.id, CONCURRENT)
    if la >= lb and ha <= hb:
        return TemporalEdge(a.id, b.id, DURING)
    if lb >= la and hb <= ha:
        return TemporalEdge(b.id, a.id, DURING)
    if la > lb:
        return TemporalEdge(a.id, b.id, OVERLAP)
    return TemporalEdge(b.id, a.id, OVERLAP)


def _pair(first: Iri, second: Iri, rel: RelationKind) -> List[TemporalEdge]:
    """``rel(first, second)`` plus the edge stored in the other direction, if any."""
    if rel is BEFORE:
        return [TemporalEdge(first, second, BEFORE), TemporalEdge(second, first, AFTER)]
    if rel is AFTER:
        return [TemporalEdge(first, second, AFTER), TemporalEdge(second, first, BEFORE)]
    if rel is CONCURRENT:
        return [TemporalEdge(first, second, CONCURRENT), TemporalEdge(second, first, CONCURRENT)]
    return [TemporalEdge(first, second, rel)]


def edge_key(e: TemporalEdge):
    return (e.source, e.target, e.rel.value)


def _split(timeline: PatientTimeline) -> Tuple[List[MedicalEvent], List[MedicalEvent]]:
    points = [e for e in timeline.events if e.interval.is_point()]
    periods = [e for e in timeline.events if not e.interval.is_point()]
    return points, periods


def _point_groups(points: Sequence[MedicalEvent]) -> List[List[MedicalEvent]]:
    ordered = sorted(points, key=lambda e: (e.interval.lo, e.id))
    return [list(g) for _, g in groupby(ordered, key=lambda e: e.interval.lo)]


def _period_edges(points: Sequence[MedicalEvent],
                  periods: Sequence[MedicalEvent]) -> List[TemporalEdge]:
    """Steps two to four: every relation that involves at least one period."""
    out: List[TemporalEdge] = []
    # period vs period: Before/After/Concurrent, then During/Overlap
    for a, b in combinations(periods, 2):
        la, ha, lb, hb = a.interval.lo, a.interval.hi, b.interval.lo, b.interval.hi
        if ha < lb:
            out += _pair(a.id, b.id, BEFORE)
        elif hb < la:
            out += _pair(b.id, a.id, BEFORE)
        elif la == lb and ha == hb:
            out += _pair(a.id, b.id, CONCURRENT)
        elif lb <= la and ha <= hb:
            out += _pair(a.id, b.id, DURING)
        elif la <= lb and hb <= ha:
            out += _pair(b.id, a.id, DURING)
        elif lb < la:
            out += _pair(a.id, b.id, OVERLAP)
        else:
            out += _pair(b.id, a.id, OVERLAP)
    # point vs period: Before/After/During
    for p in points:
        t = p.interval.lo
        for q in periods:
            if t < q.interval.lo:
                out += _pair(p.id, q.id, BEFORE)
            elif t > q.interval.hi:
                out += _pair(q.id, p.id, BEFORE)
            else:
                out += _pair(p.id, q.id, DURING)
    return out


def build_full(timeline: PatientTimeline) -> List[TemporalEdge]:
    points, periods = _split(timeline)
    out: List[TemporalEdge] = []
    # step one: point vs point
    groups = _point_groups(points)
    for group in groups:
        for a, b in combinations(group, 2):
            out += _pair(a.id, b.id, CONCURRENT)
    for i, earlier in enumerate(groups):
        for later in groups[i + 1:]:
            for a in earlier:
                for b in later:
                    out += _pair(a.id, b.id, BEFORE)
    out += _period_edges(points, periods)
    return sorted(out, key=edge_key)


def build_reduced(timeline: PatientTimeline) -> List[TemporalEdge]:
    points, periods = _split(timeline)
    out: List[TemporalEdge] = []
    groups = _point_groups(points)
    for group in groups:
        for a, b in zip(group, group[1:]):
            out += _pair(a.id, b.id, CONCURRENT)
    for earlier, later in zip(groups, groups[1:]):
        out += _pair(earlier[0].id, later[0].id, BEFORE)
    out += _period_edges(points, periods)
    return sorted(out, key=edge_key)


def build(timeline: PatientTimeline, mode: Mode | str = Mode.FULL) -> List[TemporalEdge]:
    return build_full(timeline) if Mode(mode) is Mode.FULL else build_reduced(timeline)


def build_all(events: Iterable[MedicalEvent],
              mode: Mode | str = Mode.FULL) -> Dict[Iri, List[TemporalEdge]]:
    return {tl.patient: build(tl, mode) for tl in timelines(events)}


class _UnionFind:
    def __init__(self):
        self.parent: Dict[Iri, Iri] = {}

    def find(self, x: Iri) -> Iri:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: Iri, b: Iri) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller id becomes the root, keeps classes deterministic
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def infer_closure(edges: Iterable[TemporalEdge]) -> List[TemporalEdge]:
    """Close an edge set under the Before/After/Concurrent inference rules.

    Concurrent is made symmetric and transitive, Before is closed under
    composition with itself and with Concurrent on either side, and After is
    rebuilt as the exact inverse of Before. During and Overlap edges pass
    through unchanged.
    """
    uf = _UnionFind()
    before: Set[Tuple[Iri, Iri]] = set()
    passthrough: Set[TemporalEdge] = set()
    for e in edges:
        uf.find(e.source)
        uf.find(e.target)
        if e.rel is CONCURRENT:
            uf.union(e.source, e.target)
        elif e.rel is BEFORE:
            before.add((e.source, e.target))
        elif e.rel is AFTER:
            before.add((e.target, e.source))
        else:
            passthrough.add(e)

    members: Dict[Iri, List[Iri]] = defaultdict(list)
    for node in list(uf.parent):
        members[uf.find(node)].append(node)
    for group in members.values():
        group.sort()

    succ: Dict[Iri, Set[Iri]] = defaultdict(set)
    for a, b in before:
        ca, cb = uf.find(a), uf.find(b)
        if ca == cb:
            raise InconsistentEdges(f"{a} is both Before and Concurrent with {b}")
        succ[ca].add(cb)

    # Kahn's order over class nodes; leftover nodes mean a Before cycle.
    classes = sorted(members)
    indeg = {c: 0 for c in classes}
    for c in classes:
        for d in succ[c]:
            indeg[d] += 1
    queue = [c for c in classes if indeg[c] == 0]
    order: List[Iri] = []
    while queue:
        c = queue.pop()
        order.append(c)
        for d in succ[c]:
            indeg[d] -= 1
            if indeg[d] == 0:
                queue.append(d)
    if len(order) != len(classes):
        raise InconsistentEdges("Before/After edges form a cycle")

    bit = {c: 1 << i for i, c in enumerate(classes)}
    reach: Dict[Iri, int] = {}
    for c in reversed(order):
        mask = 0
        for d in succ[c]:
            mask |= bit[d] | reach[d]
        reach[c] = mask

    out: Set[TemporalEdge] = set(passthrough)
    for group in members.values():
        for a in group:
            for b in group:
                if a != b:
                    out.add(TemporalEdge(a, b, CONCURRENT))
    for c in classes:
        mask = reach[c]
        if not mask:
            continue
        later = [d for d in classes if mask & bit[d]]
        for a in members[c]:
            for d in later:
                for b in members[d]:
                    out.add(TemporalEdge(a, b, BEFORE))
                    out.add(TemporalEdge(b, a, AFTER))
    return sorted(out, key=edge_key)


def edges_to_triples(edges: Iterable[TemporalEdge]) -> List[Triple]:
    ordered = sorted(set(edges), key=edge_key)
    return [Triple(e.source, e.rel.iri, e.target) for e in ordered]


def edges_from_triples(triples: Iterable[Triple]) -> List[TemporalEdge]:
    out = []
    for t in triples:
        rel = RELATION_PREDICATES.get(t.predicate)
        if rel is not None and isinstance(t.object, Iri):
            out.append(TemporalEdge(t.subject, t.object, rel))
    return out


def relation_count_rows(edges_by_patient: Dict[Iri, List[TemporalEdge]]) -> List[Tuple[str, str, int]]:
    """``(patient, relation, count)`` rows for the per-patient edge report."""
    rows = []
    for patient in sorted(edges_by_patient):
        counts: Dict[str, int] = defaultdict(int)
        for e in edges_by_patient[patient]:
            counts[e.rel.value] += 1
        for rel in RelationKind:
            rows.append((str(patient), rel.value, counts.get(rel.value, 0)))
    return rows
