"""Corpus ingestion: normalization, segmentation, lemma extraction.

Input formats
-------------
- monolingual jsonl: one object per line with fields ``id`` (string),
  ``text`` (string) and optional ``origin``.
- monolingual plain-lines: one segment per line; ids are assigned as
  ``<filename>:<line-number>`` (1-based).
- parallel tsv: ``id \\t latin \\t reference[ \\t reference...]`` with no
  header row and ``\\n`` line endings.
- parallel jsonl: one object per line with fields ``id``, ``text`` and
  ``references`` (non-empty list of strings).

All files must be valid UTF-8; anything else is rejected rather than
transcoded, since silent transcoding corrupts philological text.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Protocol

from refta.errors import CorpusFormatError

LemmaSet = frozenset  # set of lowercase token stems

_WS_RE = re.compile(r"\s+")
_TOKEN_RE = re.compile(r"[^\W\d_]+", re.UNICODE)


def normalize_text(raw: str) -> str:
    """Normalize a raw segment to canonical form.

    Applies Unicode NFC, turns newlines and other whitespace into single
    spaces, strips remaining control/format characters, collapses whitespace
    runs and trims. Idempotent. Returns the empty string when nothing
    survives; the caller decides whether to drop the segment.
    """
    s = unicodedata.normalize("NFC", raw)
    chars = []
    for ch in s:
        if ch in "\n\r\t\v\f":
            chars.append(" ")
            continue
        if unicodedata.category(ch) in ("Cc", "Cf"):
            continue
        chars.append(ch)
    return _WS_RE.sub(" ", "".join(chars)).strip()


@dataclass(frozen=True)
class SourceSegment:
    """One Latin input unit. ``text`` is NFC-normalized and non-empty."""

    id: str
    text: str
    origin: str
    char_count: int

    @classmethod
    def make(cls, id: str, raw_text: str, origin: str) -> "SourceSegment":
        text = normalize_text(raw_text)
        if not text:
            raise ValueError(f"segment '{id}' normalizes to empty text")
        return cls(id=id, text=text, origin=origin, char_count=len(text))


@dataclass(frozen=True)
class ParallelPair:
    """A source segment with one or more English references."""

    source: SourceSegment
    references: tuple[str, ...]

    def __post_init__(self):
        if not self.references or any(not r for r in self.references):
            raise ValueError(
                f"pair '{self.source.id}' needs at least one non-empty reference"
            )


class Lemmatizer(Protocol):
    """Maps one lowercase alphabetic token to its set of stems."""

    def stem(self, token: str) -> frozenset: ...


# The 'que' enclitic cannot be stripped from these words.
_QUE_EXCEPTIONS = frozenset(
    """
    atque quoque neque itaque absque apsque abusque adaeque adusque denique
    deque susque oblique peraeque plenisque quandoque quisque quaeque
    cuiusque cuique quemque quamque quaque quique quorumque quarumque
    quibusque quosque quasque quotusquisque quousque ubique undique usque
    uterque utique utroque utribique torque coque concoque contorque
    detorque decoque excoque extorque obtorque optorque retorque recoque
    attorque incoque intorque praetorque
    """.split()
)

_NOUN_SUFFIXES = sorted(
    [
        "ibus", "ius", "ae", "am", "as", "em", "es", "ia", "is", "nt",
        "os", "ud", "um", "us", "a", "e", "i", "o", "u",
    ],
    key=len,
    reverse=True,
)

_VERB_SUFFIXES = sorted(
    [
        "iuntur", "beris", "erunt", "untur", "iunt", "mini", "ntur", "stis",
        "bor", "ero", "mur", "mus", "ris", "sti", "tis", "tur", "unt",
        "bo", "ns", "nt", "ri", "m", "r", "s", "t",
    ],
    key=len,
    reverse=True,
)

_VERB_REPLACEMENTS = {
    "iuntur": "i", "erunt": "i", "untur": "i", "iunt": "i", "unt": "i",
    "beris": "bi", "bor": "bi", "bo": "bi",
    "ero": "eri",
}


class SchinkeStemmer:
    """Deterministic rule-based Latin stemmer producing noun and verb stems.

    Each token yields up to two stems. i/j and u/v are conflated first, the
    'que' enclitic is stripped unless the word is on the exception list, and
    the longest matching suffix from each table is removed (or substituted)
    provided at least two characters remain.
    """

    def stem(self, token: str) -> frozenset:
        w = token.lower().replace("j", "i").replace("v", "u")
        if w.endswith("que"):
            if w in _QUE_EXCEPTIONS:
                return frozenset((w,))
            w = w[:-3]

        noun = w
        for suf in _NOUN_SUFFIXES:
            if w.endswith(suf):
                if len(w) - len(suf) >= 2:
                    noun = w[: -len(suf)]
                break

        verb = w
        for suf in _VERB_SUFFIXES:
            if w.endswith(suf):
                candidate = w[: -len(suf)] + _VERB_REPLACEMENTS.get(suf, "")
                if len(candidate) >= 2:
                    verb = candidate
                break

        return frozenset(s for s in (noun, verb) if s)


_DEFAULT_STEMMER = SchinkeStemmer()


def lemmatize(text: str, stemmer: Lemmatizer | None = None) -> frozenset:
    """Return the set of stems for every alphabetic token of length >= 2."""
    stemmer = stemmer or _DEFAULT_STEMMER
    stems: set[str] = set()
    for token in _TOKEN_RE.findall(text):
        if len(token) < 2:
            continue
        stems.update(stemmer.stem(token.lower()))
    return frozenset(stems)


@dataclass
class SkipRecord:
    """One segment dropped during loading, with the reason."""

    path: str
    line_no: int
    reason: str


def _open_utf8(path: Path):
    try:
        return path.open("r", encoding="utf-8", errors="strict", newline="")
    except OSError as exc:
        raise CorpusFormatError(path, None, f"cannot open: {exc}") from exc


def _iter_lines(path: Path) -> Iterator[tuple[int, str]]:
    """Yield (line_no, line) pairs; decode failures become CorpusFormatError."""
    line_no = 0
    with _open_utf8(path) as fh:
        while True:
            try:
                line = fh.readline()
            except UnicodeDecodeError as exc:
                raise CorpusFormatError(path, line_no + 1, f"not valid UTF-8: {exc}") from exc
            except OSError as exc:
                raise CorpusFormatError(path, line_no + 1, f"read failed: {exc}") from exc
            if line == "":
                return
            line_no += 1
            yield line_no, line


def load_monolingual(
    path: str | Path,
    format: str,
    origin: str | None = None,
    skipped: list[SkipRecord] | None = None,
) -> Iterator[SourceSegment]:
    """Stream normalized segments from a monolingual corpus file.

    ``format`` is ``"jsonl"`` or ``"plain-lines"``. Rows that normalize to
    empty text are skipped and, when ``skipped`` is given, reported into it.
    Malformed rows raise :class:`CorpusFormatError` with the line number.
    """
    if format not in ("jsonl", "plain-lines"):
        raise ValueError(f"unknown monolingual format: {format!r}")
    path = Path(path)
    origin = origin if origin is not None else path.name
    seen_ids: dict[str, int] = {}
    for line_no, line in _iter_lines(path):
        raw_line = line.rstrip("\n").rstrip("\r")
        if format == "jsonl":
            if not raw_line.strip():
                continue
            try:
                row = json.loads(raw_line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(path, line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(row, dict) or "id" not in row:
                raise CorpusFormatError(path, line_no, "row missing 'id' field")
            if "text" not in row:
                raise CorpusFormatError(path, line_no, "row missing 'text' field")
            seg_id = str(row["id"])
            raw_text = str(row["text"])
            seg_origin = str(row.get("origin", origin))
        else:
            seg_id = f"{path.name}:{line_no}"
            raw_text = raw_line
            seg_origin = origin
        if seg_id in seen_ids:
            raise CorpusFormatError(
                path, line_no,
                f"duplicate id '{seg_id}' (first seen at line {seen_ids[seg_id]})",
            )
        seen_ids[seg_id] = line_no
        text = normalize_text(raw_text)
        if not text:
            if skipped is not None:
                skipped.append(SkipRecord(str(path), line_no, "empty after normalization"))
            continue
        yield SourceSegment(id=seg_id, text=text, origin=seg_origin, char_count=len(text))


def write_monolingual(segments: Iterable[SourceSegment], path: str | Path) -> int:
    """Write segments as jsonl; returns the row count. Round-trips load_monolingual."""
    path = Path(path)
    n = 0
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for seg in segments:
            fh.write(json.dumps(
                {"id": seg.id, "text": seg.text, "origin": seg.origin},
                ensure_ascii=False,
            ))
            fh.write("\n")
            n += 1
    return n


def load_parallel(path: str | Path, format: str) -> list[ParallelPair]:
    """Load a parallel test set (``tsv`` or ``jsonl``), preserving file order."""
    if format not in ("tsv", "jsonl"):
        raise ValueError(f"unknown parallel format: {format!r}")
    path = Path(path)
    pairs: list[ParallelPair] = []
    seen_ids: dict[str, int] = {}
    for line_no, line in _iter_lines(path):
        raw_line = line.rstrip("\n").rstrip("\r")
        if not raw_line.strip():
            continue
        if format == "tsv":
            fields = raw_line.split("\t")
            if len(fields) < 3:
                raise CorpusFormatError(
                    path, line_no,
                    f"expected at least 3 tab-separated fields, got {len(fields)}",
                )
            seg_id, latin, refs = fields[0], fields[1], fields[2:]
        else:
            try:
                row = json.loads(raw_line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(path, line_no, f"invalid JSON: {exc}") from exc
            missing = [k for k in ("id", "text", "references") if k not in row]
            if missing:
                raise CorpusFormatError(path, line_no, f"row missing {missing}")
            seg_id, latin = str(row["id"]), str(row["text"])
            refs = [str(r) for r in row["references"]]
        if seg_id in seen_ids:
            raise CorpusFormatError(
                path, line_no,
                f"duplicate id '{seg_id}' (first seen at line {seen_ids[seg_id]})",
            )
        seen_ids[seg_id] = line_no
        text = normalize_text(latin)
        if not text:
            raise CorpusFormatError(path, line_no, "source normalizes to empty text")
        norm_refs = tuple(normalize_text(r) for r in refs)
        if any(not r for r in norm_refs):
            raise CorpusFormatError(path, line_no, "empty reference")
        source = SourceSegment(id=seg_id, text=text, origin=path.name, char_count=len(text))
        pairs.append(ParallelPair(source=source, references=norm_refs))
    return pairs
