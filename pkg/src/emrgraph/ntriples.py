"""Canonical N-Triples writer and a reader for the same restricted subset.

Output is one triple per line, deduplicated and sorted by the serialized
line, so identical triple sets always produce identical bytes.
"""

from __future__ import annotations

import io
import os
import re
from typing import IO, Iterable, List, Union

from emrgraph.core_model import XSD, Iri, Literal, Term, Triple
from emrgraph.errors import NTriplesSyntaxError, UnknownNamespace

_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t",
            "\b": "\\b", "\f": "\\f"}
_UNESCAPES = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t",
              "b": "\b", "f": "\f", "'": "'"}


def escape_literal(text: str) -> str:
    out = []
    for ch in text:
        if ch in _ESCAPES:
            out.append(_ESCAPES[ch])
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


def format_term(term: Term) -> str:
    if isinstance(term, Iri):
        return f"<{term.uri}>"
    body = f'"{escape_literal(term.lexical)}"'
    if term.datatype is None:
        return body
    return f"{body}^^<{XSD}{term.datatype}>"


def format_triple(t: Triple) -> str:
    return f"{format_term(t.subject)} {format_term(t.predicate)} {format_term(t.object)} ."


def canonical_lines(triples: Iterable[Triple]) -> List[str]:
    return sorted({format_triple(t) for t in triples})


def dumps(triples: Iterable[Triple]) -> str:
    lines = canonical_lines(triples)
    return "".join(line + "\n" for line in lines)


def serialize_ntriples(triples: Iterable[Triple], sink: Union[str, os.PathLike, IO[bytes]]) -> int:
    """Write ``triples`` canonically to a path or binary stream; return bytes written."""
    data = dumps(triples).encode("utf-8")
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)
    return len(data)


# --- reader -----------------------------------------------------------------

_WS = re.compile(r"[ \t]*")
_IRIREF = re.compile(r"<([^<>\"{}|^`\\\x00-\x20]*)>")
_LITERAL = re.compile(r'"((?:[^"\\\n\r]|\\.)*)"')
_UCHAR = re.compile(r"\\u([0-9A-Fa-f]{4})|\\U([0-9A-Fa-f]{8})|\\(.)")


def _unescape(body: str, lineno: int) -> str:
    def repl(m: re.Match) -> str:
        if m.group(1) or m.group(2):
            return chr(int(m.group(1) or m.group(2), 16))
        ch = m.group(3)
        if ch not in _UNESCAPES:
            raise NTriplesSyntaxError(f"invalid escape \\{ch}", lineno)
        return _UNESCAPES[ch]

    return _UCHAR.sub(repl, body)


class _LineReader:
    def __init__(self, text: str, lineno: int):
        self.text = text
        self.pos = 0
        self.lineno = lineno

    def skip_ws(self) -> None:
        self.pos = _WS.match(self.text, self.pos).end()

    def fail(self, message: str):
        raise NTriplesSyntaxError(f"{message} (column {self.pos + 1})", self.lineno)

    def iri(self) -> Iri:
        self.skip_ws()
        m = _IRIREF.match(self.text, self.pos)
        if not m:
            self.fail("expected IRI")
        self.pos = m.end()
        try:
            return Iri.from_uri(m.group(1))
        except UnknownNamespace as exc:
            raise UnknownNamespace(f"line {self.lineno}: {exc}") from None

    def term(self) -> Term:
        self.skip_ws()
        if self.text.startswith("<", self.pos):
            return self.iri()
        m = _LITERAL.match(self.text, self.pos)
        if not m:
            self.fail("expected IRI or literal")
        self.pos = m.end()
        lexical = _unescape(m.group(1), self.lineno)
        datatype = None
        if self.text.startswith("^^", self.pos):
            self.pos += 2
            dm = _IRIREF.match(self.text, self.pos)
            if not dm or not dm.group(1).startswith(XSD):
                self.fail("unsupported datatype IRI")
            self.pos = dm.end()
            datatype = dm.group(1)[len(XSD):]
        elif self.text.startswith("@", self.pos):
            self.fail("language-tagged literals are not supported")
        try:
            return Literal(lexical, datatype)
        except ValueError as exc:
            self.fail(str(exc))

    def end(self) -> None:
        self.skip_ws()
        if not self.text.startswith(".", self.pos):
            self.fail("expected '.' terminating the triple")
        self.pos += 1
        self.skip_ws()
        if self.pos < len(self.text) and not self.text.startswith("#", self.pos):
            self.fail("trailing content after '.'")


def parse_ntriples(source: Union[str, os.PathLike, IO]) -> List[Triple]:
    """Read N-Triples from a path, a text/binary stream, or a string of content.

    A ``str`` containing a newline, or not naming an existing file, is treated
    as document content.
    """
    if isinstance(source, os.PathLike) or (
            isinstance(source, str) and "\n" not in source and os.path.isfile(source)):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    return loads(text)


def loads(text: str) -> List[Triple]:
    out: List[Triple] = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.rstrip("\r\n")
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        rd = _LineReader(line, lineno)
        s = rd.iri()
        p = rd.iri()
        o = rd.term()
        rd.end()
        try:
            out.append(Triple(s, p, o))
        except ValueError as exc:
            raise NTriplesSyntaxError(str(exc), lineno) from None
    return out
