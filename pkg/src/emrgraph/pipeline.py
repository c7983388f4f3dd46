"""Stage-by-stage build of the event graph and the dataset statistics.

Stages communicate only through files in the output directory, so each one
can be run on its own:

    preprocess  tables            -> preprocessed/<table>.csv
    map         preprocessed/*    -> events.nt, registry.json
    temporal    events.nt         -> temporal.nt, temporal_counts.csv
    match       events.nt         -> links.nt, threshold_report.csv,
                                     verification_sample.csv
    stats       *.nt              -> stats.csv
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from emrgraph import matcher, ntriples, temporal
from emrgraph.core_model import (
    ENTITY_CLASSES,
    EVENT_CLASSES,
    PATIENT_CLASS,
    RDF_TYPE,
    RELATION_PREDICATES,
    SKOS_EXACT_MATCH,
    EntityKind,
    EventKind,
    MedicalEntity,
    RelationKind,
    Triple,
    entities_from_triples,
    events_from_triples,
)
from emrgraph.errors import ConfigParseError, ConfigValidationError, EmrGraphError, PipelineError
from emrgraph.mapping import EntityRegistry, load_mapping_config, map_tables
from emrgraph.preprocess import (
    TABLE_ORDER,
    RecordTable,
    load_normalization_config,
    preprocess_table,
    read_table,
    write_table,
)
from emrgraph.store_query import TripleStore, load

log = logging.getLogger(__name__)

# Thresholds used for a kind whose labels cannot support selection.
FALLBACK_THRESHOLDS: Mapping[EntityKind, Decimal] = {
    EntityKind.DISEASE: Decimal("0.40"),
    EntityKind.DRUG: Decimal("0.40"),
    EntityKind.ASSAY: Decimal("0.70"),
}

STAGES = ("preprocess", "map", "temporal", "match")


@dataclass
class PipelineConfig:
    tables: Dict[str, Path]
    normalization: Path
    mapping: Path
    out: Path
    kg: Optional[Path] = None
    labels: Optional[Path] = None
    registry: Optional[Path] = None
    mode: temporal.Mode = temporal.Mode.FULL
    seed: int = 0
    sample_ratio: Decimal = Decimal("0.1")
    match: bool = True

    def validate(self, stages: Sequence[str] = STAGES) -> "PipelineConfig":
        missing = []
        if "preprocess" in stages:
            missing += [f"tables.{k}" for k, p in self.tables.items() if not p.is_file()]
            if not self.normalization.is_file():
                missing.append("normalization")
        if "map" in stages and not self.mapping.is_file():
            missing.append("mapping")
        if "match" in stages and self.match:
            for name in ("kg", "labels"):
                path = getattr(self, name)
                if path is None or not path.is_file():
                    missing.append(name)
        if self.registry is not None and not self.registry.is_file():
            missing.append("registry")
        if missing:
            raise ConfigValidationError("missing or unreadable paths: " + ", ".join(missing))
        unknown = set(self.tables) - set(TABLE_ORDER)
        if unknown:
            raise ConfigValidationError(f"unknown record tables: {sorted(unknown)}")
        return self


def load_pipeline_config(path: str | os.PathLike, **overrides) -> PipelineConfig:
    """Read a pipeline JSON config; relative paths resolve against its directory.

    ``overrides`` (``out``, ``mode``, ``seed``) replace config values when not None.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigParseError(f"{path}: {exc}") from exc
    base = path.parent

    def rel(value) -> Optional[Path]:
        return None if value in (None, "") else (base / value)

    try:
        cfg = PipelineConfig(
            tables={k: rel(v) for k, v in doc["tables"].items()},
            normalization=rel(doc["normalization"]),
            mapping=rel(doc["mapping"]),
            out=rel(doc["out"]) if doc.get("out") else Path("out"),
            kg=rel(doc.get("kg")),
            labels=rel(doc.get("labels")),
            registry=rel(doc.get("registry")),
            mode=temporal.Mode(doc.get("mode", "full")),
            seed=int(doc.get("seed", 0)),
            sample_ratio=Decimal(str(doc.get("sample_ratio", "0.1"))),
            match=bool(doc.get("match", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigValidationError(f"{path}: {exc!r}") from exc
    if overrides.get("out") is not None:
        cfg.out = Path(overrides["out"])
    if overrides.get("mode") is not None:
        cfg.mode = temporal.Mode(overrides["mode"])
    if overrides.get("seed") is not None:
        cfg.seed = int(overrides["seed"])
    return cfg


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


class _stage:
    """Context manager re-raising failures as :class:`PipelineError`."""

    def __init__(self, name: str, locus: str = ""):
        self.name = name
        self.locus = locus

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError) and isinstance(
                exc, (EmrGraphError, ValueError, KeyError, OSError)):
            raise PipelineError(self.name, self.locus or "-", exc) from exc
        return False


# --- stages --------------------------------------------------------------------

def stage_preprocess(cfg: PipelineConfig) -> Dict[str, RecordTable]:
    out_dir = cfg.out / "preprocessed"
    out_dir.mkdir(parents=True, exist_ok=True)
    with _stage("preprocess", str(cfg.normalization)) as st:
        norm = load_normalization_config(cfg.normalization)
        tables = {}
        for name in TABLE_ORDER:
            if name not in cfg.tables:
                continue
            st.locus = str(cfg.tables[name])
            cleaned = preprocess_table(read_table(cfg.tables[name], name), norm)
            write_table(cleaned, out_dir / f"{name}.csv")
            tables[name] = cleaned
    return tables


def read_preprocessed(cfg: PipelineConfig) -> Dict[str, RecordTable]:
    out_dir = cfg.out / "preprocessed"
    return {name: read_table(out_dir / f"{name}.csv", name)
            for name in TABLE_ORDER if (out_dir / f"{name}.csv").is_file()}


def stage_map(cfg: PipelineConfig, tables=None) -> List[Triple]:
    with _stage("map", str(cfg.mapping)):
        if tables is None:
            tables = read_preprocessed(cfg)
        maps = load_mapping_config(cfg.mapping)
        registry = EntityRegistry.load(cfg.registry) if cfg.registry else EntityRegistry()
        triples = map_tables(tables, maps, registry)
        cfg.out.mkdir(parents=True, exist_ok=True)
        ntriples.serialize_ntriples(triples, cfg.out / "events.nt")
        registry.save(cfg.out / "registry.json")
    return triples


def _read_events_nt(cfg: PipelineConfig) -> List[Triple]:
    return ntriples.parse_ntriples(cfg.out / "events.nt")


def stage_temporal(cfg: PipelineConfig, event_triples=None) -> List[Triple]:
    with _stage("temporal", str(cfg.out / "events.nt")):
        if event_triples is None:
            event_triples = _read_events_nt(cfg)
        events = events_from_triples(event_triples)
        by_patient = temporal.build_all(events, cfg.mode)
        edges = [e for p in sorted(by_patient) for e in by_patient[p]]
        triples = temporal.edges_to_triples(edges)
        ntriples.serialize_ntriples(triples, cfg.out / "temporal.nt")
        _write_text(cfg.out / "temporal_counts.csv",
                    _csv_text(("patient", "relation", "count"),
                              temporal.relation_count_rows(by_patient)))
    return triples


def stage_match(cfg: PipelineConfig, event_triples=None) -> List[Triple]:
    with _stage("match", str(cfg.kg)) as st:
        if event_triples is None:
            event_triples = _read_events_nt(cfg)
        entities = [e for e in entities_from_triples(event_triples)
                    if isinstance(e, MedicalEntity) and e.kind in matcher.LINKABLE_KINDS]
        terms = matcher.TermIndex(matcher.read_terms(cfg.kg))
        st.locus = str(cfg.labels)
        labels = matcher.read_labels(cfg.labels)
        candidates = matcher.candidates_for(entities, terms)

        thresholds: Dict[EntityKind, Decimal] = {}
        metrics: Dict[EntityKind, float] = {}
        totals: Dict[EntityKind, int] = {}
        sample_rows = []
        for kind in matcher.LINKABLE_KINDS:
            mine = [c for c in candidates if c.m.kind is kind]
            totals[kind] = sum(1 for e in entities if e.kind is kind)
            for c in matcher.sample_verification(mine, cfg.sample_ratio, cfg.seed):
                sample_rows.append((kind.value, c.m.id.local, c.m.label, c.e.kg_id,
                                    c.e.label, f"{c.score:.6f}"))
            labeled = matcher.label_candidates(mine, labels)
            try:
                thresholds[kind], metrics[kind] = matcher.select_threshold(labeled)
            except EmrGraphError as exc:
                log.warning("%s: %s; using fallback threshold %s",
                            kind.value, exc, FALLBACK_THRESHOLDS[kind])
                thresholds[kind] = FALLBACK_THRESHOLDS[kind]

        links, reports = matcher.apply_links(candidates, thresholds, metrics, totals)
        ntriples.serialize_ntriples(links, cfg.out / "links.nt")
        _write_text(cfg.out / "threshold_report.csv", matcher.report_csv(reports))
        _write_text(cfg.out / "verification_sample.csv",
                    _csv_text(("kind", "m_id", "m_label", "kg_id", "kg_label", "score"),
                              sample_rows))
    return links


# --- statistics ----------------------------------------------------------------

@dataclass
class DatasetStats:
    events: Dict[str, int] = field(default_factory=dict)
    relations: Dict[str, int] = field(default_factory=dict)
    links: Dict[str, int] = field(default_factory=dict)
    entities: Dict[str, int] = field(default_factory=dict)
    total_triples: int = 0

    def rows(self) -> List[Tuple[str, str, int]]:
        rows = [("event", k.value, self.events.get(k.value, 0)) for k in EventKind]
        rows += [("relation", k.value, self.relations.get(k.value, 0)) for k in RelationKind]
        rows += [("link", k.value, self.links.get(k.value, 0)) for k in matcher.LINKABLE_KINDS]
        rows += [("entity", k, self.entities.get(k, 0))
                 for k in ("Patient", *(e.value for e in EntityKind))]
        rows.append(("total", "triples", self.total_triples))
        return rows

    def to_csv(self) -> str:
        return _csv_text(("category", "kind", "count"), self.rows())


def compute_stats(store: TripleStore) -> DatasetStats:
    stats = DatasetStats(total_triples=store.size())
    for cls, kind in EVENT_CLASSES.items():
        stats.events[kind.value] = store.count(None, RDF_TYPE, cls)
    for pred, rel in RELATION_PREDICATES.items():
        stats.relations[rel.value] = store.count(None, pred, None)
    stats.entities["Patient"] = store.count(None, RDF_TYPE, PATIENT_CLASS)
    for cls, kind in ENTITY_CLASSES.items():
        stats.entities[kind.value] = store.count(None, RDF_TYPE, cls)
    linked: Dict[str, set] = {k.value: set() for k in matcher.LINKABLE_KINDS}
    for t in store.match(None, SKOS_EXACT_MATCH, None):
        for o in store.spo.get(t.subject, {}).get(RDF_TYPE, ()):
            kind = ENTITY_CLASSES.get(o)
            if kind is not None and kind.value in linked:
                linked[kind.value].add(t.subject)
    stats.links = {k: len(v) for k, v in linked.items()}
    return stats


def stats_for_files(paths: Sequence[str | os.PathLike]) -> DatasetStats:
    triples: List[Triple] = []
    for p in paths:
        triples.extend(ntriples.parse_ntriples(Path(p)))
    return compute_stats(load(triples))


def output_files(cfg: PipelineConfig) -> List[Path]:
    names = ["events.nt", "temporal.nt"] + (["links.nt"] if cfg.match else [])
    return [cfg.out / n for n in names]


def run_pipeline(cfg: PipelineConfig) -> DatasetStats:
    cfg.validate()
    cfg.out.mkdir(parents=True, exist_ok=True)
    tables = stage_preprocess(cfg)
    events = stage_map(cfg, tables)
    stage_temporal(cfg, events)
    if cfg.match:
        stage_match(cfg, events)
    with _stage("stats", str(cfg.out)):
        stats = stats_for_files(output_files(cfg))
        _write_text(cfg.out / "stats.csv", stats.to_csv())
    return stats
