"""In-memory triple store and a small conjunctive query language.

Grammar (keywords case-insensitive, prefixes fixed, ``#`` starts a comment)::

    query    := SELECT [DISTINCT] ( var+ | COUNT "(" DISTINCT var ")" )
                WHERE "{" pattern ( "." pattern )* [ "." ] "}"
    pattern  := term term term
    term     := var | prefixed-name | "<" absolute-iri ">" | literal | "a"
    var      := ("?" | "$") name
    literal  := '"' chars '"' [ "^^" ( "xsd:" type | "<" xsd-iri ">" ) ]

Patterns are joined on shared variables; there is no OPTIONAL, FILTER,
UNION or property path.
"""

from __future__ import annotations

import csv
import io
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Set, Tuple, Union

from emrgraph.core_model import (
    DATATYPES,
    RDF_TYPE,
    XSD,
    Iri,
    Literal,
    Term,
    Triple,
)
from emrgraph.errors import (
    DisconnectedPattern,
    QuerySyntaxError,
    UnboundSelectVariable,
    UnknownNamespace,
)
from emrgraph.temporal import edges_from_triples, edges_to_triples, infer_closure


class TripleStore:
    """Deduplicated triple set with subject, predicate and object indexes.

    ``spo[s][p]`` holds objects, ``pos[p][o]`` subjects and ``osp[o][s]``
    predicates. The store is read-only once built.
    """

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples: Set[Triple] = set()
        self.spo: Dict[Iri, Dict[Iri, Set[Term]]] = defaultdict(lambda: defaultdict(set))
        self.pos: Dict[Iri, Dict[Term, Set[Iri]]] = defaultdict(lambda: defaultdict(set))
        self.osp: Dict[Term, Dict[Iri, Set[Iri]]] = defaultdict(lambda: defaultdict(set))
        for t in triples:
            self._add(t)

    def _add(self, t: Triple) -> None:
        if t in self._triples:
            return
        self._triples.add(t)
        s, p, o = t.subject, t.predicate, t.object
        self.spo[s][p].add(o)
        self.pos[p][o].add(s)
        self.osp[o][s].add(p)

    def size(self) -> int:
        return len(self._triples)

    __len__ = size

    def __contains__(self, t: Triple) -> bool:
        return t in self._triples

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def triples(self) -> Set[Triple]:
        return set(self._triples)

    def match(self, s: Optional[Iri] = None, p: Optional[Iri] = None,
              o: Optional[Term] = None) -> Iterator[Triple]:
        """All triples agreeing with the bound positions (``None`` is a wildcard)."""
        if s is not None:
            by_p = self.spo.get(s)
            if not by_p:
                return
            preds = [p] if p is not None else list(by_p)
            for pp in preds:
                objs = by_p.get(pp, ())
                if o is not None:
                    if o in objs:
                        yield Triple(s, pp, o)
                else:
                    for oo in objs:
                        yield Triple(s, pp, oo)
        elif o is not None:
            by_s = self.osp.get(o)
            if not by_s:
                return
            for ss, preds in by_s.items():
                if p is None:
                    for pp in preds:
                        yield Triple(ss, pp, o)
                elif p in preds:
                    yield Triple(ss, p, o)
        elif p is not None:
            for oo, subjects in self.pos.get(p, {}).items():
                for ss in subjects:
                    yield Triple(ss, p, oo)
        else:
            yield from self._triples

    def count(self, s: Optional[Iri] = None, p: Optional[Iri] = None,
              o: Optional[Term] = None) -> int:
        if s is None and p is None and o is None:
            return len(self._triples)
        if s is None and o is None:
            return sum(len(v) for v in self.pos.get(p, {}).values())
        if s is not None and p is not None and o is None:
            return len(self.spo.get(s, {}).get(p, ()))
        if s is None and p is not None and o is not None:
            return len(self.pos.get(p, {}).get(o, ()))
        return sum(1 for _ in self.match(s, p, o))


def load(triples: Iterable[Triple], infer_temporal: bool = True) -> TripleStore:
    """Build a store; with ``infer_temporal`` the stored temporal edges are
    closed under inference first, so reduced and full builds answer alike."""
    triples = list(triples)
    if infer_temporal:
        edges = edges_from_triples(triples)
        if edges:
            triples.extend(edges_to_triples(infer_closure(edges)))
    return TripleStore(triples)


# --- query AST -----------------------------------------------------------------

@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


PatternTerm = Union[Var, Iri, Literal]


@dataclass(frozen=True)
class TriplePattern:
    s: PatternTerm
    p: PatternTerm
    o: PatternTerm

    def __post_init__(self):
        if isinstance(self.p, Literal) or isinstance(self.s, Literal):
            raise ValueError("literal in subject or predicate position")

    def terms(self) -> Tuple[PatternTerm, PatternTerm, PatternTerm]:
        return (self.s, self.p, self.o)

    def variables(self) -> Set[str]:
        return {t.name for t in self.terms() if isinstance(t, Var)}


@dataclass(frozen=True)
class Query:
    select: Tuple[str, ...]
    patterns: Tuple[TriplePattern, ...]
    distinct: bool = False
    count: bool = False

    def variables(self) -> Set[str]:
        out: Set[str] = set()
        for p in self.patterns:
            out |= p.variables()
        return out


def validate(query: Query) -> Query:
    bound = query.variables()
    for v in query.select:
        if v not in bound:
            raise UnboundSelectVariable(f"?{v} does not occur in any pattern")
    if len(query.patterns) > 1:
        # union-find over pattern indexes joined by shared variables
        owner: Dict[str, int] = {}
        parent = list(range(len(query.patterns)))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, pat in enumerate(query.patterns):
            for v in pat.variables():
                if v in owner:
                    parent[find(i)] = find(owner[v])
                else:
                    owner[v] = i
        roots = {find(i) for i in range(len(query.patterns))}
        if len(roots) > 1:
            raise DisconnectedPattern(
                f"patterns split into {len(roots)} groups sharing no variables")
    return query


# --- parser --------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<var>[?$][A-Za-z_][A-Za-z0-9_]*)
  | (?P<iri><[^<>"{}|^`\\\s]*>)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<dtype>\^\^)
  | (?P<punct>[{}().])
  | (?P<pname>[A-Za-z][A-Za-z0-9_-]*:[^\s{}()<>"]*)
  | (?P<word>[A-Za-z]+)
""", re.VERBOSE)

_STRING_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\", "'": "'"}


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> List[_Tok]:
    toks: List[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        value = m.group()
        if kind == "pname" and value.endswith("."):
            # a prefixed name never ends in '.', that dot terminates the pattern
            stripped = value.rstrip(".")
            toks.append(_Tok("pname", stripped, pos))
            for k in range(len(value) - len(stripped)):
                toks.append(_Tok("punct", ".", pos + len(stripped) + k))
        elif kind != "ws":
            toks.append(_Tok(kind, value, pos))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, message: str):
        t = self.tok
        found = t.text or "end of input"
        raise QuerySyntaxError(f"{message}, found {found!r}", t.pos)

    def keyword(self, word: str) -> bool:
        if self.tok.kind == "word" and self.tok.text.upper() == word:
            self.i += 1
            return True
        return False

    def expect_keyword(self, word: str) -> None:
        if not self.keyword(word):
            self.fail(f"expected {word}")

    def expect_punct(self, ch: str) -> None:
        if self.tok.kind == "punct" and self.tok.text == ch:
            self.i += 1
            return
        self.fail(f"expected {ch!r}")

    def var(self) -> str:
        if self.tok.kind != "var":
            self.fail("expected a variable")
        return self.advance().text[1:]

    def query(self) -> Query:
        self.expect_keyword("SELECT")
        distinct = self.keyword("DISTINCT")
        count = False
        select: List[str] = []
        if self.keyword("COUNT"):
            self.expect_punct("(")
            self.expect_keyword("DISTINCT")
            select.append(self.var())
            self.expect_punct(")")
            count = True
        else:
            while self.tok.kind == "var":
                select.append(self.var())
            if not select:
                self.fail("expected selected variables")
        self.expect_keyword("WHERE")
        self.expect_punct("{")
        patterns: List[TriplePattern] = []
        while not (self.tok.kind == "punct" and self.tok.text == "}"):
            start = self.tok.pos
            s, p, o = self.term(), self.term(), self.term()
            try:
                patterns.append(TriplePattern(s, p, o))
            except ValueError as exc:
                raise QuerySyntaxError(str(exc), start) from None
            if self.tok.kind == "punct" and self.tok.text == ".":
                self.advance()
            elif not (self.tok.kind == "punct" and self.tok.text == "}"):
                self.fail("expected '.' or '}'")
        self.expect_punct("}")
        if not patterns:
            self.fail("empty WHERE clause")
        if self.tok.kind != "eof":
            self.fail("unexpected trailing input")
        return Query(tuple(select), tuple(patterns), distinct or count, count)

    def term(self) -> PatternTerm:
        t = self.tok
        if t.kind == "var":
            return Var(self.advance().text[1:])
        if t.kind == "pname":
            self.advance()
            try:
                return Iri.parse(t.text)
            except (ValueError, UnknownNamespace) as exc:
                raise QuerySyntaxError(str(exc), t.pos) from None
        if t.kind == "iri":
            self.advance()
            try:
                return Iri.from_uri(t.text[1:-1])
            except (ValueError, UnknownNamespace) as exc:
                raise QuerySyntaxError(str(exc), t.pos) from None
        if t.kind == "word" and t.text == "a":
            self.advance()
            return RDF_TYPE
        if t.kind == "string":
            self.advance()
            lexical = re.sub(r"\\(.)", lambda m: _STRING_ESCAPES.get(m.group(1), m.group(1)),
                             t.text[1:-1])
            datatype = None
            if self.tok.kind == "dtype":
                self.advance()
                dt = self.tok
                if dt.kind == "pname" and dt.text.startswith("xsd:"):
                    datatype = dt.text[4:]
                elif dt.kind == "iri" and dt.text[1:-1].startswith(XSD):
                    datatype = dt.text[1 + len(XSD):-1]
                else:
                    self.fail("expected an xsd datatype")
                if datatype not in DATATYPES:
                    self.fail("unsupported datatype")
                self.advance()
            try:
                return Literal(lexical, datatype)
            except ValueError as exc:
                raise QuerySyntaxError(str(exc), t.pos) from None
        self.fail("expected a term")


def parse_query(text: str) -> Query:
    return validate(_Parser(text).query())


# --- evaluation ----------------------------------------------------------------

Binding = Dict[str, Term]


def _ground(term: PatternTerm, binding: Binding) -> Optional[Term]:
    if isinstance(term, Var):
        return binding.get(term.name)
    return term


def _estimate(store: TripleStore, pat: TriplePattern, bound: Set[str]) -> int:
    s, p, o = (None if isinstance(t, Var) else t for t in pat.terms())
    n = store.count(s, p, o)
    # each already-bound variable acts as a join key and narrows the pattern
    for _ in pat.variables() & bound:
        n = n // 4 if n > 1 else n
    return n


def plan(store: TripleStore, query: Query) -> List[TriplePattern]:
    """Join order: the most selective pattern, then greedily the cheapest pattern
    sharing a variable with what is already bound."""
    remaining = list(query.patterns)
    order: List[TriplePattern] = []
    bound: Set[str] = set()
    while remaining:
        connected = [p for p in remaining if not bound or p.variables() & bound]
        pool = connected or remaining
        best = min(pool, key=lambda p: (_estimate(store, p, bound), remaining.index(p)))
        order.append(best)
        remaining.remove(best)
        bound |= best.variables()
    return order


def _extend(store: TripleStore, pat: TriplePattern, binding: Binding) -> Iterator[Binding]:
    s, p, o = (_ground(t, binding) for t in pat.terms())
    if isinstance(s, Literal) or isinstance(p, Literal):
        return
    for t in store.match(s, p, o):
        new = dict(binding)
        ok = True
        for term, value in zip(pat.terms(), (t.subject, t.predicate, t.object)):
            if isinstance(term, Var):
                prev = new.get(term.name)
                if prev is None:
                    new[term.name] = value
                elif prev != value:
                    ok = False
                    break
        if ok:
            yield new


def solutions(store: TripleStore, query: Query) -> List[Binding]:
    rows: List[Binding] = [{}]
    for pat in plan(store, query):
        rows = [b2 for b in rows for b2 in _extend(store, pat, b)]
        if not rows:
            break
    return rows


@dataclass
class QueryResult:
    variables: Tuple[str, ...]
    rows: List[Tuple[Term, ...]] = field(default_factory=list)
    count: Optional[int] = None

    def row_set(self) -> Set[Tuple[Term, ...]]:
        return set(self.rows)

    def sorted_rows(self) -> List[Tuple[str, ...]]:
        return sorted(tuple(render_term(t) for t in row) for row in self.rows)

    def to_text(self) -> str:
        if self.count is not None:
            return f"{self.count}\n"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.variables)
        w.writerows(self.sorted_rows())
        return buf.getvalue()


def render_term(t: Term) -> str:
    return t.lexical if isinstance(t, Literal) else str(t)


def evaluate(store: TripleStore, query: Query) -> QueryResult:
    sols = solutions(store, query)
    if query.count:
        var = query.select[0]
        return QueryResult(query.select, [], len({b[var] for b in sols}))
    rows = [tuple(b[v] for v in query.select) for b in sols]
    if query.distinct:
        rows = sorted(set(rows), key=lambda r: tuple(render_term(t) for t in r))
    return QueryResult(query.select, rows)
