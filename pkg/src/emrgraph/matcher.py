"""Linking dataset entities to a terminology graph by string similarity.

The matchability score of a dataset label ``m`` and a terminology label
``e`` is the mean of three similarities in ``[0, 1]``: normalized
Levenshtein, character-bigram Jaccard, and normalized longest common
subsequence. Each dataset entity keeps its best same-kind candidate; a
per-kind threshold, chosen on labeled pairs by balanced accuracy, decides
which candidates become ``skos:exactMatch`` links.
"""

from __future__ import annotations

import csv
import math
import os
import random
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from emrgraph.core_model import (
    ENTITY_CLASSES,
    RDF_TYPE,
    RDFS_LABEL,
    SKOS_EXACT_MATCH,
    EntityKind,
    Iri,
    Literal,
    MedicalEntity,
    Triple,
    group_by_subject,
    res,
)
from emrgraph.errors import DegenerateLabels
from emrgraph.ntriples import parse_ntriples

LINKABLE_KINDS = (EntityKind.DISEASE, EntityKind.DRUG, EntityKind.ASSAY)

# Scores are floats; this absorbs rounding when comparing against grid thresholds.
SCORE_EPS = 1e-12

DEFAULT_GRID: Tuple[Decimal, ...] = tuple(Decimal(k) / 100 for k in range(5, 100, 5))


def edit_distance(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def lcs_length(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if ca == cb else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def lev_sim(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - edit_distance(a, b) / longest


def char_ngrams(s: str) -> frozenset:
    if len(s) < 2:
        return frozenset(s)
    return frozenset(s[i:i + 2] for i in range(len(s) - 1))


def jaccard_sim(a: str, b: str) -> float:
    ga, gb = char_ngrams(a), char_ngrams(b)
    union = ga | gb
    if not union:
        return 1.0
    return len(ga & gb) / len(union)


def lcs_sim(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return lcs_length(a, b) / longest


def score(m: str, e: str) -> float:
    return (lev_sim(m, e) + jaccard_sim(m, e) + lcs_sim(m, e)) / 3


@dataclass(frozen=True)
class TermEntry:
    kg_id: str
    kind: EntityKind
    label: str

    def __post_init__(self):
        if not self.label.strip():
            raise ValueError(f"terminology entry {self.kg_id} has an empty label")

    @property
    def iri(self) -> Iri:
        return res(f"kg/{self.kg_id}")


@dataclass(frozen=True)
class MatchCandidate:
    m: MedicalEntity
    e: TermEntry
    score: float

    def __post_init__(self):
        if self.m.kind != self.e.kind:
            raise ValueError(f"{self.m.id} ({self.m.kind.value}) vs {self.e.kg_id} ({self.e.kind.value})")


@dataclass(frozen=True)
class LabeledPair:
    candidate: MatchCandidate
    correct: bool


@dataclass(frozen=True)
class ThresholdReport:
    kind: EntityKind
    threshold: Decimal
    metric: Optional[float]
    link_rate: float


class TermIndex:
    """Terminology entries bucketed by kind, each bucket sorted by kg_id."""

    def __init__(self, entries: Iterable[TermEntry]):
        self.by_kind: Dict[EntityKind, List[TermEntry]] = {}
        for t in entries:
            self.by_kind.setdefault(t.kind, []).append(t)
        for bucket in self.by_kind.values():
            bucket.sort(key=lambda t: t.kg_id)

    def __len__(self) -> int:
        return sum(len(b) for b in self.by_kind.values())


def best_candidate(m: MedicalEntity, kg: Union[TermIndex, Sequence[TermEntry]]
                   ) -> Optional[MatchCandidate]:
    index = kg if isinstance(kg, TermIndex) else TermIndex(kg)
    best: Optional[MatchCandidate] = None
    for entry in index.by_kind.get(m.kind, ()):
        s = score(m.label, entry.label)
        # bucket is kg_id-sorted, so strict '>' keeps the smallest id on ties
        if best is None or s > best.score:
            best = MatchCandidate(m, entry, s)
    return best


def candidates_for(entities: Iterable[MedicalEntity], kg: Union[TermIndex, Sequence[TermEntry]]
                   ) -> List[MatchCandidate]:
    index = kg if isinstance(kg, TermIndex) else TermIndex(kg)
    out = []
    for m in sorted(entities, key=lambda x: x.id):
        c = best_candidate(m, index)
        if c is not None:
            out.append(c)
    return out


def _as_fraction(ratio) -> Fraction:
    return Fraction(str(ratio)) if not isinstance(ratio, Fraction) else ratio


def sample_verification(candidates: Sequence[MatchCandidate], ratio, seed: int
                        ) -> List[MatchCandidate]:
    """Score-stratified systematic sample over candidates sorted by (score, m id).

    With ratio ``a/b`` in lowest terms, position ``k`` of the sample is
    ``floor((j + k*b) / a)`` for a seeded ``j`` in ``[0, b)``. That is plain
    every-``b``-th sampling when ``a == 1`` and keeps the size within one of
    ``ratio * n`` otherwise.
    """
    r = _as_fraction(ratio)
    if not 0 < r <= 1:
        raise ValueError(f"sampling ratio must be in (0, 1], got {ratio}")
    if not candidates:
        return []
    a, b = r.numerator, r.denominator
    ordered = sorted(candidates, key=lambda c: (c.score, c.m.id))
    j = random.Random(seed).randrange(b)
    limit = len(ordered) * a
    return [ordered[(j + k * b) // a] for k in range(math.ceil((limit - j) / b))]


def _check_labels(labeled: Sequence[LabeledPair]) -> Tuple[int, int]:
    pos = sum(1 for p in labeled if p.correct)
    neg = len(labeled) - pos
    if pos == 0 or neg == 0:
        raise DegenerateLabels(f"need both classes, got {pos} positive and {neg} negative")
    return pos, neg


def _links(candidate: MatchCandidate, t) -> bool:
    return candidate.score + SCORE_EPS >= float(t)


def _balanced_accuracy(labeled: Sequence[LabeledPair], t) -> Fraction:
    pos, neg = _check_labels(labeled)
    tp = sum(1 for p in labeled if p.correct and _links(p.candidate, t))
    tn = sum(1 for p in labeled if not p.correct and not _links(p.candidate, t))
    return (Fraction(tp, pos) + Fraction(tn, neg)) / 2


def threshold_metric(labeled: Sequence[LabeledPair], t) -> float:
    """Balanced accuracy of "link when score >= t" on the labeled pairs."""
    return float(_balanced_accuracy(labeled, t))


def select_threshold(labeled: Sequence[LabeledPair], grid: Sequence = DEFAULT_GRID
                     ) -> Tuple[Decimal, float]:
    """Best grid threshold by :func:`threshold_metric`; ties go to the smallest threshold."""
    _check_labels(labeled)
    best_t, best_m = None, Fraction(-1)
    # exact fractions so equal metrics really tie
    for t in sorted(Decimal(str(g)) for g in grid):
        metric = _balanced_accuracy(labeled, t)
        if metric > best_m:
            best_t, best_m = t, metric
    if best_t is None:
        raise ValueError("empty threshold grid")
    return best_t, float(best_m)


def link_rate(candidates: Sequence[MatchCandidate], kind: EntityKind, threshold,
              total: Optional[int] = None) -> float:
    """Share of distinct dataset entities of ``kind`` holding a link at ``threshold``.

    ``total`` defaults to the number of distinct entities among the candidates.
    """
    mine = [c for c in candidates if c.m.kind is kind]
    if total is None:
        total = len({c.m.id for c in mine})
    if total == 0:
        return 0.0
    linked = {c.m.id for c in mine if _links(c, threshold)}
    return len(linked) / total


def apply_links(candidates: Sequence[MatchCandidate], thresholds: Mapping[EntityKind, Decimal],
                metrics: Optional[Mapping[EntityKind, float]] = None,
                totals: Optional[Mapping[EntityKind, int]] = None,
                ) -> Tuple[List[Triple], Dict[EntityKind, ThresholdReport]]:
    triples = []
    for c in sorted(candidates, key=lambda c: (c.m.id, c.e.kg_id)):
        t = thresholds.get(c.m.kind)
        if t is not None and _links(c, t):
            triples.append(Triple(c.m.id, SKOS_EXACT_MATCH, c.e.iri))
    reports = {}
    for kind, t in thresholds.items():
        reports[kind] = ThresholdReport(
            kind, Decimal(str(t)),
            (metrics or {}).get(kind),
            link_rate(candidates, kind, t, (totals or {}).get(kind)),
        )
    return triples, reports


# --- file formats -------------------------------------------------------------

def read_terms_csv(path: str | os.PathLike) -> List[TermEntry]:
    with open(path, encoding="utf-8-sig", newline="") as fh:
        return [TermEntry(r["kg_id"].strip(), EntityKind(r["kind"].strip()), r["label"].strip())
                for r in csv.DictReader(fh)]


def terms_from_triples(triples: Iterable[Triple]) -> List[TermEntry]:
    """Terminology entries from ``rdf:type`` + ``rdfs:label`` triples."""
    out = []
    for subject, group in group_by_subject(triples).items():
        kinds = [ENTITY_CLASSES[t.object] for t in group
                 if t.predicate == RDF_TYPE and t.object in ENTITY_CLASSES]
        labels = [t.object.lexical for t in group
                  if t.predicate == RDFS_LABEL and isinstance(t.object, Literal)]
        if kinds and labels:
            kg_id = subject.local[3:] if subject.local.startswith("kg/") else subject.local
            out.append(TermEntry(kg_id, kinds[0], labels[0]))
    return sorted(out, key=lambda t: t.kg_id)


def read_terms(path: str | os.PathLike) -> List[TermEntry]:
    if str(path).endswith(".nt"):
        return terms_from_triples(parse_ntriples(os.fspath(path)))
    return read_terms_csv(path)


def read_labels(path: str | os.PathLike) -> Dict[Tuple[str, str], bool]:
    """``(m_id, kg_id) -> correct`` from a labels CSV; m_id is a peg-r local name
    or prefixed name."""
    out = {}
    with open(path, encoding="utf-8-sig", newline="") as fh:
        for r in csv.DictReader(fh):
            m_id = r["m_id"].strip()
            if m_id.startswith("peg-r:"):
                m_id = m_id[len("peg-r:"):]
            flag = r["correct"].strip()
            if flag not in ("0", "1"):
                raise ValueError(f"labels: correct must be 0 or 1, got {flag!r}")
            out[(m_id, r["kg_id"].strip())] = flag == "1"
    return out


def label_candidates(candidates: Iterable[MatchCandidate],
                     labels: Mapping[Tuple[str, str], bool]) -> List[LabeledPair]:
    return [LabeledPair(c, labels[(c.m.id.local, c.e.kg_id)]) for c in candidates
            if (c.m.id.local, c.e.kg_id) in labels]


def format_metric(value: Optional[float], places: int = 4) -> str:
    if value is None:
        return ""
    return f"{value:.{places}f}"


def report_csv(reports: Mapping[EntityKind, ThresholdReport]) -> str:
    lines = ["Entity type,Threshold,AUC,Link rate"]
    for kind in LINKABLE_KINDS:
        r = reports.get(kind)
        if r is None:
            continue
        lines.append(f"{kind.value},{r.threshold:.2f},{format_metric(r.metric)},"
                     f"{format_metric(r.link_rate, 3)}")
    return "\n".join(lines) + "\n"
