from __future__ import annotations

import random
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_query
from emrgraph.core_model import (
    EntityKind,
    EventKind,
    Interval,
    Literal,
    MedicalEntity,
    MedicalEvent,
    PatientEntity,
    Triple,
    entity_to_triples,
    event_to_triples,
    res,
)
from emrgraph.errors import DisconnectedPattern, QuerySyntaxError, UnboundSelectVariable
from emrgraph.store_query import (
    Query,
    TripleStore,
    Var,
    evaluate,
    load,
    parse_query,
    plan,
)
from emrgraph.temporal import build_full, build_reduced, edges_to_triples, timelines
from oracles import engine_answer, oracle_answer

SE = """SELECT DISTINCT ?p WHERE {
  ?e rdf:type peg-o:DiagnosisEvent . ?e sem:hasActor ?p . ?p rdf:type peg-o:Patient .
  ?e sem:hasActor ?d . ?d rdfs:label "冠心病" .
}"""


def is_var(x) -> bool:
    return isinstance(x, Var)


def small_corpus():
    """Three patients; only p1 and p2 have a coronary diagnosis."""
    chd = MedicalEntity(res("d1"), EntityKind.DISEASE, "冠心病")
    flu = MedicalEntity(res("d2"), EntityKind.DISEASE, "流感")
    events = [
        MedicalEvent(res("e1"), EventKind.DIAGNOSIS, res("p1"), Interval.point(date(2012, 1, 1)), (chd.id,)),
        MedicalEvent(res("e2"), EventKind.DIAGNOSIS, res("p2"), Interval.point(date(2012, 1, 3)), (chd.id,)),
        MedicalEvent(res("e3"), EventKind.DIAGNOSIS, res("p3"), Interval.point(date(2012, 1, 3)), (flu.id,)),
        MedicalEvent(res("e4"), EventKind.DIAGNOSIS, res("p1"), Interval.point(date(2012, 1, 9)), (flu.id,)),
        MedicalEvent(res("e5"), EventKind.DIAGNOSIS, res("p1"), Interval.point(date(2012, 2, 9)), (flu.id,)),
    ]
    patients = [PatientEntity(res(p), g) for p, g in (("p1", "男"), ("p2", "女"), ("p3", "男"))]
    triples = [t for e in events for t in event_to_triples(e)]
    triples += [t for x in [chd, flu, *patients] for t in entity_to_triples(x)]
    return triples, events


def test_load_is_a_set():
    triples, _ = small_corpus()
    assert load(triples + triples).size() == load(triples).size() == len(set(triples))
    assert load([]).size() == 0


def test_indexes_agree():
    triples, _ = small_corpus()
    store = TripleStore(triples)
    from_spo = {Triple(s, p, o) for s, ps in store.spo.items() for p, os in ps.items() for o in os}
    from_pos = {Triple(s, p, o) for p, os in store.pos.items() for o, ss in os.items() for s in ss}
    from_osp = {Triple(s, p, o) for o, ss in store.osp.items() for s, ps in ss.items() for p in ps}
    assert from_spo == from_pos == from_osp == set(triples)


def test_match_and_count_agree_with_scan():
    triples, _ = small_corpus()
    store = TripleStore(triples)
    rng = random.Random(0)
    for _ in range(200):
        t = rng.choice(triples)
        mask = [rng.random() < 0.5 for _ in range(3)]
        s, p, o = (x if keep else None for x, keep in zip(t, mask))
        expected = {u for u in triples if all(q is None or q == v for q, v in zip((s, p, o), u))}
        assert set(store.match(s, p, o)) == expected
        assert store.count(s, p, o) == len(expected)


def test_parse_examples():
    q = parse_query("SELECT ?p WHERE { ?e rdf:type peg-o:DiagnosisEvent . "
                    "?e sem:hasActor ?p . ?p rdf:type peg-o:Patient . }")
    assert len(q.patterns) == 3 and q.select == ("p",) and not q.count
    q = parse_query("SELECT COUNT(DISTINCT ?p) WHERE { ?p a peg-o:Patient }")
    assert q.count and q.select == ("p",)
    q = parse_query('SELECT $x WHERE { $x peg-o:birthday "1950-03-02"^^xsd:date . # trailing\n}')
    assert q.patterns[0].o == Literal("1950-03-02", "date")


def test_parse_errors():
    with pytest.raises(UnboundSelectVariable):
        parse_query("SELECT ?x WHERE { ?y rdf:type peg-o:Drug . }")
    with pytest.raises(DisconnectedPattern):
        parse_query("SELECT ?x WHERE { ?x a peg-o:Drug . ?y a peg-o:Disease . }")
    with pytest.raises(QuerySyntaxError) as info:
        parse_query("SELECT ?x WHERE { ?x a peg-o:Drug ; }")
    assert info.value.position == len("SELECT ?x WHERE { ?x a peg-o:Drug ")
    for bad in ["SELECT WHERE { ?x a peg-o:Drug }", "SELECT ?x { ?x a peg-o:Drug }",
                "SELECT ?x WHERE { ?x \"lit\" peg-o:Drug }", "SELECT ?x WHERE { ?x a ex:Drug }",
                "SELECT ?x WHERE { }", "SELECT ?x WHERE { ?x a peg-o:Drug } extra"]:
        with pytest.raises(QuerySyntaxError):
            parse_query(bad)


def test_se_answer_and_empty_store():
    triples, _ = small_corpus()
    result = evaluate(load(triples), parse_query(SE))
    assert result.row_set() == {(res("p1"),), (res("p2"),)}
    assert result.to_text() == "p\npeg-r:p1\npeg-r:p2\n"
    assert evaluate(load([]), parse_query(SE)).rows == []
    count = parse_query("SELECT COUNT(DISTINCT ?p) WHERE { ?p a peg-o:Patient }")
    assert evaluate(load([]), count).count == 0
    assert evaluate(load(triples), count).to_text() == "3\n"


def test_bag_semantics_without_distinct():
    triples, _ = small_corpus()
    q = parse_query("SELECT ?p WHERE { ?e sem:hasActor ?p . ?p a peg-o:Patient }")
    rows = evaluate(load(triples), q).rows
    assert sorted(r[0].local for r in rows) == ["p1", "p1", "p1", "p2", "p3"]


def test_plan_starts_with_most_selective():
    triples, _ = small_corpus()
    q = parse_query(SE)
    first = plan(load(triples), q)[0]
    assert first.o == Literal("冠心病")


def test_temporal_queries_match_across_modes():
    triples, events = small_corpus()
    q = parse_query("SELECT DISTINCT ?a ?b WHERE { ?a peg-o:Before ?b . ?a a peg-o:DiagnosisEvent . }")
    answers = []
    for builder in (build_full, build_reduced):
        edges = [e for t in timelines(events) for e in builder(t)]
        answers.append(evaluate(load(triples + edges_to_triples(edges)), q).row_set())
    assert answers[0] == answers[1]
    assert (res("e1"), res("e5")) in answers[0]


@given(st.integers(0, 10**6))
@settings(max_examples=60, deadline=None)
def test_engine_matches_nested_loop(seed):
    triples, _ = small_corpus()
    store = load(triples)
    q = parse_query(random_query(random.Random(seed), store.triples()))
    assert engine_answer(evaluate(store, q), q) == oracle_answer(store.triples(), q, is_var)


@given(st.integers(0, 10**6), st.randoms())
@settings(max_examples=60, deadline=None)
def test_join_order_independence(seed, rnd):
    triples, _ = small_corpus()
    store = load(triples)
    q = parse_query(random_query(random.Random(seed), store.triples()))
    patterns = list(q.patterns)
    rnd.shuffle(patterns)
    shuffled = Query(q.select, tuple(patterns), q.distinct, q.count)
    assert engine_answer(evaluate(store, q), q) == engine_answer(evaluate(store, shuffled), shuffled)
