"""Prompt-chaining workflow: template -> subqueries -> answers -> section summaries."""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Corpus, ReportTemplate, Section, serialize_template
from .gateway import Gateway, GatewayError
from .report import GeneratedReport
from .retrieval import RetrievalError, VectorIndex, build_index, top_n_chunks

__all__ = [
    "DecomposedRun",
    "DecompositionError",
    "PipelineError",
    "SubQuery",
    "SubQueryAnswer",
    "answer_subquery",
    "decompose_template",
    "load_manual_subqueries",
    "parse_question_list",
    "run_decomposed",
    "summarize_section",
]


class PipelineError(RuntimeError):
    def __init__(self, stage: str, subject: str, message: str):
        super().__init__(f"[{stage}] {subject}: {message}")
        self.stage = stage
        self.subject = subject


class DecompositionError(PipelineError):
    def __init__(self, subject: str, message: str):
        super().__init__("decompose", subject, message)


@dataclass(frozen=True)
class SubQuery:
    id: int
    section_path: tuple[str, ...]
    question: str
    origin: str = "llm_decomposed"

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("subquery question must be non-empty")
        if self.origin not in ("llm_decomposed", "manual"):
            raise ValueError(f"unknown subquery origin {self.origin!r}")

    def to_dict(self) -> dict:
        return {"id": self.id, "section_path": list(self.section_path), "question": self.question, "origin": self.origin}


@dataclass(frozen=True)
class SubQueryAnswer:
    subquery_id: int
    answer: str
    evidence: tuple[tuple[str, int, float], ...]
    statement_used: tuple[str, ...]
    prompt: str = ""

    def to_dict(self) -> dict:
        return {
            "subquery_id": self.subquery_id,
            "answer": self.answer,
            "evidence": [{"doc_id": d, "chunk_id": c, "score": s} for d, c, s in self.evidence],
            "statement_used": list(self.statement_used),
        }


def _section_block(path: Sequence[str], section: Section) -> str:
    lines = [" > ".join(path)]
    lines += [f"- {item}" for item in section.items]
    return "\n".join(lines)


def parse_question_list(reply: str) -> list[str]:
    """Questions from a JSON list reply; strings or objects with ``question``.

    Raises ``ValueError`` when no non-empty list can be read.
    """
    text = reply.strip()
    fence = re.search(r"```(?:json)?\s*(.*?)```", text, flags=re.S)
    if fence:
        text = fence.group(1).strip()
    lo, hi = text.find("["), text.rfind("]")
    if lo < 0 or hi <= lo:
        raise ValueError("no JSON list in reply")
    data = json.loads(text[lo : hi + 1])
    if not isinstance(data, list):
        raise ValueError("reply is not a JSON list")
    out = []
    for item in data:
        q = item.get("question") if isinstance(item, dict) else item
        if not isinstance(q, str):
            raise ValueError(f"list element without a question: {item!r}")
        if q.strip():
            out.append(q.strip())
    if not out:
        raise ValueError("empty question list")
    return out


def decompose_template(template: ReportTemplate, gateway: Gateway) -> list[SubQuery]:
    """Ask the model for the questions behind each item-bearing section.

    One decomposition call per section; a reply that is not a JSON list gets
    a single reformat request before giving up.
    """
    full = serialize_template(template)
    out: list[SubQuery] = []
    for path, section in template.item_sections():
        name = " > ".join(path)
        try:
            _, reply = gateway.run_template("decompose", template=full, section=_section_block(path, section))
            try:
                questions = parse_question_list(reply)
            except ValueError:
                _, reply = gateway.run_template("decompose_reformat", reply=reply)
                questions = parse_question_list(reply)
        except ValueError as exc:
            raise DecompositionError(name, f"unparseable decomposition after one retry ({exc})") from exc
        except GatewayError as exc:
            raise DecompositionError(name, str(exc)) from exc
        for q in questions:
            out.append(SubQuery(len(out), path, q, "llm_decomposed"))
    return out


def load_manual_subqueries(path: str | Path, template: ReportTemplate) -> list[SubQuery]:
    """Read ``[{"section_path": [...], "question": "..."}]`` and validate it.

    Subqueries are returned in template order; within a section the file
    order is kept. Every item-bearing section must be covered.
    """
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(entries, list) or not entries:
        raise DecompositionError(str(path), "manual subquery file must be a non-empty list")
    by_path: dict[tuple[str, ...], list[str]] = {}
    for e in entries:
        sp = tuple(e["section_path"])
        if template.find(sp) is None:
            raise DecompositionError(" > ".join(sp), "section_path does not resolve to a template section")
        q = str(e["question"]).strip()
        if not q:
            raise DecompositionError(" > ".join(sp), "empty question")
        by_path.setdefault(sp, []).append(q)
    out: list[SubQuery] = []
    for p, _ in template.walk():
        for q in by_path.get(p, ()):
            out.append(SubQuery(len(out), p, q, "manual"))
    uncovered = [p for p, _ in template.item_sections() if p not in by_path]
    if uncovered:
        raise DecompositionError(
            ", ".join(" > ".join(p) for p in uncovered), "section has no manual subquery"
        )
    return out


def answer_subquery(
    sq: SubQuery,
    index: VectorIndex,
    statement: str,
    n: int,
    gateway: Gateway,
    statement_ids: Sequence[str] = (),
) -> SubQueryAnswer:
    """Retrieve the top-``n`` chunks for ``sq`` and answer it with the statement."""
    try:
        hits = top_n_chunks(sq.question, n, index, gateway)
        context = "\n\n".join(c.text for c in hits.chunks)
        prompt, answer = gateway.run_template("generate", context=context, statement=statement, question=sq.question)
    except (GatewayError, RetrievalError, ValueError) as exc:
        raise PipelineError("answer", f"subquery {sq.id}", str(exc)) from exc
    if not answer.strip():
        raise PipelineError("answer", f"subquery {sq.id}", "empty answer")
    return SubQueryAnswer(
        subquery_id=sq.id,
        answer=answer,
        evidence=tuple((c.doc_id, c.chunk_id, s) for c, s in hits.ranked),
        statement_used=tuple(statement_ids),
        prompt=prompt,
    )


def format_qa_pairs(pairs: Sequence[tuple[SubQuery, SubQueryAnswer]]) -> str:
    return "\n\n".join(f"Q{k}: {sq.question}\nA{k}: {ans.answer.strip()}" for k, (sq, ans) in enumerate(pairs, 1))


def summarize_section(
    path: Sequence[str],
    section: Section,
    pairs: Sequence[tuple[SubQuery, SubQueryAnswer]],
    gateway: Gateway,
) -> str:
    name = " > ".join(path)
    if not pairs:
        raise PipelineError("summarize", name, "section has no answered subqueries")
    pairs = sorted(pairs, key=lambda p: p[0].id)
    if any(tuple(sq.section_path) != tuple(path) for sq, _ in pairs):
        raise PipelineError("summarize", name, "answers from another section were passed in")
    try:
        _, text = gateway.run_template("summarize", qa_pairs=format_qa_pairs(pairs), section=_section_block(path, section))
    except GatewayError as exc:
        raise PipelineError("summarize", name, str(exc)) from exc
    return text


@dataclass
class DecomposedRun:
    report: GeneratedReport
    subqueries: list[SubQuery]
    answers: list[SubQueryAnswer]
    log: list[dict] = field(default_factory=list)

    def provenance(self) -> dict:
        return {
            "method": self.report.tag,
            "subqueries": [s.to_dict() for s in self.subqueries],
            "answers": [a.to_dict() for a in self.answers],
        }


def run_decomposed(
    template: ReportTemplate,
    corpus: Corpus,
    gateway: Gateway,
    *,
    top_n: int = 3,
    parallelism: int = 1,
    index: VectorIndex | None = None,
    subqueries: Sequence[SubQuery] | None = None,
    chunking=None,
    run_id: str = "",
) -> DecomposedRun:
    """Run the whole chain and assemble the report in template order."""
    if index is None:
        chunks = corpus.chunks(chunking) if chunking is not None else corpus.chunks()
        try:
            index = build_index(chunks, gateway)
        except Exception as exc:
            raise PipelineError("index", "corpus", str(exc)) from exc
    sqs = list(subqueries) if subqueries is not None else decompose_template(template, gateway)
    statement, statement_ids = corpus.statement_for_prompt()

    def answer(sq: SubQuery) -> SubQueryAnswer:
        return answer_subquery(sq, index, statement, top_n, gateway, statement_ids)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            answers = list(pool.map(answer, sqs))
    else:
        answers = [answer(sq) for sq in sqs]

    by_section: dict[tuple[str, ...], list[tuple[SubQuery, SubQueryAnswer]]] = {}
    for sq, ans in zip(sqs, answers):
        by_section.setdefault(tuple(sq.section_path), []).append((sq, ans))
    sections = []
    for path, section in template.item_sections():
        sections.append((path, summarize_section(path, section, by_section.get(path, []), gateway)))
    report = GeneratedReport("decomposed", tuple(sections), run_id=run_id)
    return DecomposedRun(report, sqs, answers)
