"""Ingestion of transcripts, financial statements and report templates.

Everything here is immutable once built and the operations are pure, so a
loaded corpus can be shared between worker threads freely.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterator

__all__ = [
    "Chunk",
    "ChunkingConfig",
    "Corpus",
    "CorpusError",
    "FinancialStatement",
    "ReportTemplate",
    "Section",
    "TemplateParseError",
    "Transcript",
    "chunk_text",
    "load_corpus",
    "load_statement",
    "parse_template",
    "serialize_template",
    "split_sentences",
]


class CorpusError(ValueError):
    """Raised for invalid corpus directories, manifests or documents."""


class TemplateParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


# ---------------------------------------------------------------------------
# Documents


@dataclass(frozen=True)
class Transcript:
    doc_id: str
    company: str
    year: int
    quarter: int
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise CorpusError(f"transcript {self.doc_id!r} is empty")
        if not 1 <= self.quarter <= 4:
            raise CorpusError(f"transcript {self.doc_id!r}: quarter must be 1-4, got {self.quarter}")


class JsonNumber(float):
    """A float that remembers the exact JSON token it was parsed from."""

    raw: str

    def __new__(cls, raw: str) -> "JsonNumber":
        obj = super().__new__(cls, raw)
        obj.raw = raw
        return obj


def _dump_json(value: Any) -> str:
    # compact, order-preserving, and writes JsonNumber tokens back verbatim
    if isinstance(value, dict):
        return "{" + ",".join(_dump_json(str(k)) + ":" + _dump_json(v) for k, v in value.items()) + "}"
    if isinstance(value, list):
        return "[" + ",".join(_dump_json(v) for v in value) + "]"
    if isinstance(value, JsonNumber):
        return value.raw
    return json.dumps(value, ensure_ascii=False)


@dataclass(frozen=True)
class FinancialStatement:
    doc_id: str
    data: Any

    @classmethod
    def from_json(cls, doc_id: str, source: str) -> "FinancialStatement":
        return cls(doc_id, json.loads(source, parse_float=JsonNumber))

    def to_json(self) -> str:
        """Compact JSON with every numeric leaf written exactly as parsed."""
        return _dump_json(self.data)


def load_statement(path: str | Path, doc_id: str | None = None) -> FinancialStatement:
    path = Path(path)
    try:
        return FinancialStatement.from_json(doc_id or path.stem, path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"malformed statement JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Chunking


@dataclass(frozen=True)
class ChunkingConfig:
    size: int = 1000
    overlap: int = 200

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError(f"chunk size must be positive, got {self.size}")
        if not 0 <= self.overlap < self.size:
            raise ValueError(f"chunk overlap must satisfy 0 <= overlap < size, got {self.overlap}")

    @property
    def stride(self) -> int:
        return self.size - self.overlap


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    doc_id: str
    char_start: int
    char_end: int
    text: str

    @property
    def ref(self) -> tuple[str, int]:
        return (self.doc_id, self.chunk_id)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "chunk_id": self.chunk_id,
            "char_start": self.char_start,
            "char_end": self.char_end,
            "text": self.text,
        }


def chunk_text(text: str, cfg: ChunkingConfig = ChunkingConfig(), doc_id: str = "") -> list[Chunk]:
    """Split ``text`` into fixed-size windows that overlap by ``cfg.overlap``.

    Windows start every ``size - overlap`` characters (code points, not
    bytes). The first window reaching the end of the text is truncated there
    and is the last one emitted.
    """
    chunks: list[Chunk] = []
    length = len(text)
    start = 0
    while start < length:
        end = min(start + cfg.size, length)
        chunks.append(Chunk(len(chunks), doc_id, start, end, text[start:end]))
        if start + cfg.size >= length:
            break
        start += cfg.stride
    return chunks


# ---------------------------------------------------------------------------
# Templates


@dataclass(frozen=True)
class Section:
    title: str
    items: tuple[str, ...] = ()
    subsections: tuple["Section", ...] = ()
    # free text lines attached to each item, parallel to ``items``
    item_notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.title.strip():
            raise ValueError("section title must be non-empty")
        if self.item_notes and len(self.item_notes) != len(self.items):
            raise ValueError("item_notes must parallel items")

    def to_markdown(self, level: int = 1) -> str:
        return "\n".join(_section_lines(self, level))


def _section_lines(section: Section, level: int) -> Iterator[str]:
    yield "#" * level + " " + section.title
    notes = section.item_notes or ("",) * len(section.items)
    for item, note in zip(section.items, notes):
        yield "- " + item
        if note:
            yield from note.split("\n")
    for sub in section.subsections:
        yield from _section_lines(sub, level + 1)


@dataclass(frozen=True)
class ReportTemplate:
    template_id: str
    sections: tuple[Section, ...]

    def __post_init__(self) -> None:
        if not self.sections:
            raise ValueError("a template needs at least one section")
        _check_unique(self.sections, ())

    def walk(self) -> Iterator[tuple[tuple[str, ...], Section]]:
        """Depth-first (path, section) pairs in template order."""

        def rec(sections, prefix):
            for s in sections:
                path = prefix + (s.title,)
                yield path, s
                yield from rec(s.subsections, path)

        return rec(self.sections, ())

    def item_sections(self) -> list[tuple[tuple[str, ...], Section]]:
        """Sections that carry at least one bullet item, in template order."""
        return [(p, s) for p, s in self.walk() if s.items]

    def find(self, path) -> Section | None:
        path = tuple(path)
        for p, s in self.walk():
            if p == path:
                return s
        return None


def _check_unique(sections, prefix) -> None:
    seen = set()
    for s in sections:
        if s.title in seen:
            raise ValueError(f"duplicate section title {s.title!r} under {list(prefix)}")
        seen.add(s.title)
        _check_unique(s.subsections, prefix + (s.title,))


_HEADING = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")
_ITEM = re.compile(r"^\s*[-*]\s+(.*?)\s*$")


@dataclass
class _Builder:
    title: str
    items: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    subs: list = field(default_factory=list)

    def build(self) -> Section:
        notes = tuple("\n".join(n) for n in self.notes)
        return Section(
            self.title,
            tuple(self.items),
            tuple(b.build() for b in self.subs),
            notes if any(notes) else (),
        )


def parse_template(source: str, template_id: str = "template") -> ReportTemplate:
    """Parse the heading-and-bullet Markdown template format.

    ``#`` headings nest by level, ``- `` lines are items of the enclosing
    section, and any other non-blank line is kept as a note on the preceding
    item.
    """
    roots: list[_Builder] = []
    stack: list[_Builder] = []
    for line_no, line in enumerate(source.splitlines(), start=1):
        if not line.strip():
            continue
        m = _HEADING.match(line)
        if m:
            level, title = len(m.group(1)), m.group(2)
            if not title:
                raise TemplateParseError(line_no, "empty heading")
            if level > len(stack) + 1:
                raise TemplateParseError(
                    line_no, f"heading level {level} follows level {len(stack)}; levels may deepen by one"
                )
            del stack[level - 1 :]
            node = _Builder(title)
            (stack[-1].subs if stack else roots).append(node)
            stack.append(node)
            continue
        if not stack:
            raise TemplateParseError(line_no, "content before the first heading")
        m = _ITEM.match(line)
        if m:
            stack[-1].items.append(m.group(1))
            stack[-1].notes.append([])
        elif stack[-1].items:
            stack[-1].notes[-1].append(line.strip())
        else:
            raise TemplateParseError(line_no, "text line without a preceding item")
    if not roots:
        raise TemplateParseError(0, "template has no sections")
    try:
        return ReportTemplate(template_id, tuple(b.build() for b in roots))
    except ValueError as exc:
        raise TemplateParseError(0, str(exc)) from exc


def serialize_template(template: ReportTemplate) -> str:
    return "\n".join(s.to_markdown(1) for s in template.sections) + "\n"


# ---------------------------------------------------------------------------
# Sentences


@lru_cache(maxsize=1)
def _abbreviations() -> frozenset[str]:
    raw = resources.files("reportgen").joinpath("data/abbreviations.txt").read_text(encoding="utf-8")
    return frozenset(
        w.strip().lower().rstrip(".") for w in raw.splitlines() if w.strip() and not w.startswith("#")
    )


_TERMINATOR = re.compile(r"[.!?]+['\")\]]*(?=\s|$)")
_INITIALISM = re.compile(r"^(?:[A-Za-z]\.)+[A-Za-z]?$")


def _is_abbreviation(text: str, dot: int) -> bool:
    # word immediately before the '.' at index ``dot``
    start = dot
    while start > 0 and not text[start - 1].isspace() and text[start - 1] not in "(\"'[":
        start -= 1
    word = text[start:dot]
    if not word:
        return False
    if len(word) == 1 and word.isalpha():
        return True
    if _INITIALISM.match(word + "."):
        return True
    return word.lower() in _abbreviations()


def split_sentences(text: str) -> list[str]:
    """Rule-based sentence splitter.

    A sentence ends at ``.``, ``!`` or ``?`` (plus closing quotes or
    brackets) followed by whitespace or the end of input. A single ``.``
    after an initial, an initialism like ``U.S.`` or a listed abbreviation
    such as ``Mr.`` does not end a sentence.
    """
    sentences: list[str] = []
    start = 0
    for m in _TERMINATOR.finditer(text):
        punct = m.group(0).rstrip("'\")]")
        if punct == "." and _is_abbreviation(text, m.start()):
            continue
        piece = text[start : m.end()].strip()
        if piece:
            sentences.append(piece)
        start = m.end()
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


# ---------------------------------------------------------------------------
# Corpus directories


@dataclass(frozen=True)
class Corpus:
    transcripts: tuple[Transcript, ...]
    statements: dict[str, FinancialStatement]

    def __post_init__(self) -> None:
        ids = [t.doc_id for t in self.transcripts]
        if len(ids) != len(set(ids)):
            raise CorpusError("duplicate doc_id in corpus")

    def chunks(self, cfg: ChunkingConfig = ChunkingConfig()) -> list[Chunk]:
        out: list[Chunk] = []
        for t in self.transcripts:
            out.extend(chunk_text(t.text, cfg, doc_id=t.doc_id))
        return out

    def select(self, doc_ids) -> "Corpus":
        wanted = set(doc_ids)
        missing = wanted - {t.doc_id for t in self.transcripts}
        if missing:
            raise CorpusError(f"unknown doc ids: {sorted(missing)}")
        return Corpus(
            tuple(t for t in self.transcripts if t.doc_id in wanted),
            {k: v for k, v in self.statements.items() if k in wanted},
        )

    def statement_for_prompt(self) -> tuple[str, list[str]]:
        """Serialized statement(s) for prompting, and the doc ids used."""
        ids = [t.doc_id for t in self.transcripts if t.doc_id in self.statements]
        if not ids:
            return "{}", []
        if len(ids) == 1:
            return self.statements[ids[0]].to_json(), ids
        return "{" + ",".join(json.dumps(i) + ":" + self.statements[i].to_json() for i in ids) + "}", ids


MANIFEST = "manifest.json"


def load_corpus(directory: str | Path) -> Corpus:
    """Load a corpus directory described by ``manifest.json``.

    The manifest lists documents as
    ``{"doc_id", "company", "year", "quarter", "transcript", "statement"?}``
    with file names relative to the directory. Transcript files present on
    disk but absent from the manifest, and manifest entries whose files are
    missing, are reported together as orphans.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError(f"corpus directory {directory} does not exist")
    manifest_path = directory / MANIFEST
    if not manifest_path.exists():
        if not any(directory.iterdir()):
            raise CorpusError(f"corpus directory {directory} is empty")
        raise CorpusError(f"corpus directory {directory} has no {MANIFEST}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"malformed {manifest_path}: {exc}") from exc
    entries = manifest["documents"] if isinstance(manifest, dict) else manifest
    if not entries:
        raise CorpusError(f"{manifest_path} lists no documents")

    orphans: list[str] = []
    listed: set[str] = set()
    transcripts: list[Transcript] = []
    statements: dict[str, FinancialStatement] = {}
    for entry in entries:
        doc_id = entry["doc_id"]
        tfile = entry.get("transcript", f"{doc_id}.txt")
        listed.add(tfile)
        tpath = directory / tfile
        if not tpath.exists():
            orphans.append(f"manifest entry {doc_id!r}: missing transcript {tfile}")
            continue
        transcripts.append(
            Transcript(
                doc_id=doc_id,
                company=entry.get("company", ""),
                year=int(entry.get("year", 0)),
                quarter=int(entry.get("quarter", 1)),
                text=tpath.read_text(encoding="utf-8"),
            )
        )
        sfile = entry.get("statement")
        if sfile:
            listed.add(sfile)
            spath = directory / sfile
            if not spath.exists():
                orphans.append(f"manifest entry {doc_id!r}: missing statement {sfile}")
                continue
            statements[doc_id] = load_statement(spath, doc_id)
    for path in sorted(directory.glob("*.txt")):
        if path.name not in listed:
            orphans.append(f"transcript file {path.name} not in manifest")
    if orphans:
        raise CorpusError("manifest/document mismatch: " + "; ".join(orphans))
    return Corpus(tuple(transcripts), statements)
