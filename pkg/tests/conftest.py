from __future__ import annotations

import random
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import List

import pytest

from emrgraph.core_model import EventKind, Interval, Iri, Literal, MedicalEvent, res
from emrgraph.pipeline import load_pipeline_config, run_pipeline
from emrgraph.store_query import Var

DATA = Path(__file__).resolve().parents[1] / "src" / "emrgraph" / "data"
MINI = DATA / "mini"
PIPELINE_CONFIG = MINI / "pipeline.json"
QUERIES = MINI / "queries"

BASE_DAY = date(2012, 1, 1)


def day(n: int) -> date:
    return BASE_DAY + timedelta(days=n)


def point(eid: str, n: int, patient: str = "p1", kind: EventKind = EventKind.DIAGNOSIS) -> MedicalEvent:
    return MedicalEvent(res(eid), kind, res(patient), Interval.point(day(n)))


def period(eid: str, lo: int, hi: int, patient: str = "p1",
           kind: EventKind = EventKind.DRUG) -> MedicalEvent:
    return MedicalEvent(res(eid), kind, res(patient), Interval(day(lo), day(hi)))


def random_timeline(rng: random.Random, patient: str, max_events: int = 40,
                    horizon: int = 12) -> List[MedicalEvent]:
    """Events on a short horizon so equal timestamps and touching ends are common.

    A few events carry a time of day, mixing dates and datetimes.
    """
    events = []
    for i in range(rng.randint(1, max_events)):
        eid = f"{patient}-e{i:02d}"
        lo = rng.randrange(horizon)
        if rng.random() < 0.5:
            kind = rng.choice([EventKind.DIAGNOSIS, EventKind.ASSAY, EventKind.SURGERY])
            at = day(lo)
            if rng.random() < 0.1:
                at = datetime.combine(at, datetime.min.time()) + timedelta(hours=rng.choice([0, 12]))
            events.append(MedicalEvent(res(eid), kind, res(patient), Interval.point(at)))
        else:
            kind = rng.choice([EventKind.DRUG, EventKind.HOSPITALIZATION])
            hi = lo + rng.randrange(0, 5)
            events.append(MedicalEvent(res(eid), kind, res(patient), Interval(day(lo), day(hi))))
    return events


@pytest.fixture(scope="session")
def mini_build(tmp_path_factory):
    """One full-mode and one reduced-mode build of the shipped mini corpus."""
    root = tmp_path_factory.mktemp("mini")
    out = {}
    for mode in ("full", "reduced"):
        cfg = load_pipeline_config(PIPELINE_CONFIG, out=root / mode, mode=mode)
        out[mode] = (cfg, run_pipeline(cfg))
    return out


def render_pattern_term(term) -> str:
    if isinstance(term, Var):
        return f"?{term.name}"
    if isinstance(term, Literal):
        body = term.lexical.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
        return f'"{body}"' + (f"^^xsd:{term.datatype}" if term.datatype else "")
    return f"<{term.uri}>"


def random_query(rng: random.Random, triples, max_patterns: int = 4) -> str:
    """A connected conjunctive query grown from triples that occur in ``triples``.

    Nodes shared between patterns always become variables so the pattern graph
    stays connected; other positions are generalized at random. Some queries
    get a ground term swapped for one from elsewhere, which usually empties them.
    """
    triples = sorted(triples, key=lambda t: tuple(map(str, t)))
    by_node = {}
    for t in triples:
        by_node.setdefault(t.subject, []).append(t)
        if isinstance(t.object, Iri):
            by_node.setdefault(t.object, []).append(t)
    chosen = [rng.choice(triples)]
    for _ in range(rng.randint(0, max_patterns - 1)):
        anchor = rng.choice([x for t in chosen for x in (t.subject, t.object) if x in by_node])
        chosen.append(rng.choice(by_node[anchor]))
    uses = {}
    for t in chosen:
        for x in {t.subject, t.object}:
            uses[x] = uses.get(x, 0) + 1
    names = {}

    def var_for(x):
        return Var(names.setdefault(x, f"v{len(names)}"))

    patterns = []
    for t in chosen:
        s = var_for(t.subject) if uses[t.subject] > 1 or rng.random() < 0.6 else t.subject
        p = Var(f"p{len(patterns)}") if rng.random() < 0.15 else t.predicate
        o = var_for(t.object) if uses[t.object] > 1 or rng.random() < 0.5 else t.object
        if not any(isinstance(x, Var) for x in (s, p, o)):
            s = var_for(t.subject)
        patterns.append((s, p, o))
    if rng.random() < 0.15:
        i = rng.randrange(len(patterns))
        s, p, o = patterns[i]
        if not isinstance(o, Var):
            patterns[i] = (s, p, rng.choice(triples).object)
    variables = sorted({x.name for pat in patterns for x in pat if isinstance(x, Var)})
    roll = rng.random()
    if roll < 0.2:
        head = f"SELECT COUNT(DISTINCT ?{rng.choice(variables)})"
    else:
        picked = rng.sample(variables, rng.randint(1, len(variables)))
        head = ("SELECT DISTINCT " if roll < 0.6 else "SELECT ") + " ".join(f"?{v}" for v in picked)
    body = " .\n  ".join(" ".join(render_pattern_term(x) for x in pat) for pat in patterns)
    return f"{head} WHERE {{\n  {body} .\n}}\n"
