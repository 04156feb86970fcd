"""LLM-judged reference-free metrics and the per-report evaluation record."""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from ..corpus import split_sentences
from ..gateway import Gateway
from ..report import CharacteristicSpec
from .metrics import PRF, Readability, bert_score, readability, rouge_l, rouge_n, tokenize

__all__ = [
    "DecompEvalResult",
    "EvaluationResult",
    "JudgeError",
    "SentenceJudgment",
    "decomp_eval",
    "evaluate_report",
    "g_eval",
    "parse_score",
    "parse_verdict",
    "report_sentences",
]


class JudgeError(RuntimeError):
    pass


_HEADING_LINE = re.compile(r"^\s*#{1,6}\s")
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")


def report_sentences(text: str) -> list[str]:
    """Sentences of a Markdown report, ignoring headings.

    Each paragraph or bullet line is split on its own so that unterminated
    bullets do not run into the next line.
    """
    out: list[str] = []
    block: list[str] = []

    def flush():
        if block:
            out.extend(split_sentences(" ".join(block)))
            block.clear()

    for line in text.splitlines():
        if not line.strip() or _HEADING_LINE.match(line):
            flush()
            continue
        if _BULLET.match(line):
            flush()
            block.append(_BULLET.sub("", line).strip())
            flush()
            continue
        block.append(line.strip())
    flush()
    return out


@dataclass(frozen=True)
class SentenceJudgment:
    index: int
    adheres: bool
    raw: str

    def to_dict(self) -> dict:
        return {"index": self.index, "adheres": self.adheres, "raw": self.raw}


@dataclass(frozen=True)
class DecompEvalResult:
    adherent: int
    total: int
    judgments: tuple[SentenceJudgment, ...] = ()

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.adherent, self.total)

    @property
    def score(self) -> float:
        return self.adherent / self.total

    def to_dict(self) -> dict:
        return {
            "adherent": self.adherent,
            "total": self.total,
            "score": self.score,
            "judgments": [j.to_dict() for j in self.judgments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecompEvalResult":
        js = tuple(SentenceJudgment(j["index"], bool(j["adheres"]), j.get("raw", "")) for j in d.get("judgments", ()))
        return cls(int(d["adherent"]), int(d["total"]), js)


_VERDICT = re.compile(r"\b(yes|no)\b", re.I)
_INT = re.compile(r"-?\d+")


def parse_verdict(reply: str) -> bool | None:
    m = _VERDICT.search(reply)
    return None if m is None else m.group(1).lower() == "yes"


def parse_score(reply: str) -> int | None:
    """First integer in the reply, if it lies in 1..5."""
    m = _INT.search(reply)
    if m is None:
        return None
    value = int(m.group(0))
    return value if 1 <= value <= 5 else None


def _ask_with_retry(gateway: Gateway, name: str, reformat: str, parse: Callable, tag: str, **bindings):
    system, user = gateway.render(name, **bindings)
    reply = gateway.chat(system, [("user", user)], tag=tag)
    value = parse(reply)
    if value is not None:
        return value, reply
    _, again = gateway.render(reformat, reply=reply)
    reply2 = gateway.chat(system, [("user", user), ("assistant", reply), ("user", again)], tag=tag)
    return parse(reply2), reply2


def decomp_eval(
    report_text: str,
    ch: CharacteristicSpec,
    gateway: Gateway,
    sentences: Sequence[str] | None = None,
    parallelism: int = 1,
) -> DecompEvalResult:
    """Per-sentence YES/NO adherence judgments, aggregated as a mean."""
    sents = list(sentences) if sentences is not None else report_sentences(report_text)
    if not sents:
        raise JudgeError("decomp_eval: report has no sentences")

    def judge(i: int) -> SentenceJudgment:
        verdict, raw = _ask_with_retry(
            gateway,
            "judge_sentence",
            "judge_sentence_reformat",
            parse_verdict,
            "judge_sentence",
            characteristic=ch.name,
            description=ch.description,
            sentence=sents[i],
        )
        if verdict is None:
            raise JudgeError(f"decomp_eval[{ch.name}]: no YES/NO verdict for sentence {i} after one retry")
        return SentenceJudgment(i, verdict, raw)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            judgments = list(pool.map(judge, range(len(sents))))
    else:
        judgments = [judge(i) for i in range(len(sents))]
    return DecompEvalResult(sum(j.adheres for j in judgments), len(judgments), tuple(judgments))


def g_eval(report_text: str, ch: CharacteristicSpec, gateway: Gateway) -> int:
    """A single 1-5 judge score for ``ch``; one reformat retry."""
    if not report_text.strip():
        raise JudgeError("g_eval: empty report")
    score, raw = _ask_with_retry(
        gateway,
        "judge_geval",
        "judge_geval_reformat",
        parse_score,
        "judge_geval",
        characteristic=ch.name,
        description=ch.description,
        report=report_text,
    )
    if score is None:
        raise JudgeError(f"g_eval[{ch.name}]: no score in 1..5 after one retry (last reply {raw!r})")
    return score


@dataclass
class CharacteristicScores:
    decomp: DecompEvalResult | None = None
    geval: int | None = None

    def to_dict(self) -> dict:
        return {"decomp": self.decomp.to_dict() if self.decomp else None, "geval": self.geval}

    @classmethod
    def from_dict(cls, d: dict) -> "CharacteristicScores":
        return cls(DecompEvalResult.from_dict(d["decomp"]) if d.get("decomp") else None, d.get("geval"))


@dataclass
class EvaluationResult:
    report_ref: str
    method: str = ""
    characteristics: dict[str, CharacteristicScores] = field(default_factory=dict)
    readability: Readability | None = None
    reference: dict[str, PRF] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "report_ref": self.report_ref,
            "method": self.method,
            "characteristics": {k: v.to_dict() for k, v in self.characteristics.items()},
            "readability": self.readability.to_dict() if self.readability else None,
            "reference": {k: v.to_dict() for k, v in self.reference.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationResult":
        rd = d.get("readability")
        return cls(
            report_ref=d.get("report_ref", ""),
            method=d.get("method", ""),
            characteristics={k: CharacteristicScores.from_dict(v) for k, v in d.get("characteristics", {}).items()},
            readability=Readability(**rd) if rd else None,
            reference={k: PRF(v["p"], v["r"], v["f"]) for k, v in d.get("reference", {}).items()},
        )

    def summary_markdown(self) -> str:
        lines = [f"# Evaluation: {self.report_ref}", ""]
        if self.characteristics:
            lines += ["| Characteristic | DE | GE |", "|---|---|---|"]
            for name, s in self.characteristics.items():
                de = f"{s.decomp.score:.2f} ({s.decomp.adherent}/{s.decomp.total})" if s.decomp else "-"
                ge = str(s.geval) if s.geval is not None else "-"
                lines.append(f"| {name} | {de} | {ge} |")
            lines.append("")
        if self.readability:
            r = self.readability
            lines += [
                "| #Sents | FKGL | CLI | ARI |",
                "|---|---|---|---|",
                f"| {r.sentences} | {r.fkgl:.2f} | {r.cli:.2f} | {r.ari:.2f} |",
                "",
            ]
        if self.reference:
            lines += ["| Metric | P | R | F1 |", "|---|---|---|---|"]
            for name, prf in self.reference.items():
                lines.append(f"| {name} | {prf.precision:.4f} | {prf.recall:.4f} | {prf.f1:.4f} |")
            lines.append("")
        return "\n".join(lines)


def evaluate_report(
    report_text: str,
    gateway: Gateway | None,
    characteristics: Sequence[CharacteristicSpec] = (),
    *,
    report_ref: str = "",
    method: str = "",
    reference: str | None = None,
    token_embedder: Callable[[Sequence[str]], Sequence[Sequence[float]]] | None = None,
    judges: bool = True,
    parallelism: int = 1,
) -> EvaluationResult:
    """Everything computable for one report.

    Judge metrics need ``gateway``; ROUGE needs ``reference``; BERTScore also
    needs ``token_embedder``, which maps tokens to vectors.
    """
    result = EvaluationResult(report_ref=report_ref, method=method)
    sents = report_sentences(report_text)
    if sents:
        prose = " ".join(sents)
        result.readability = readability(prose, sents)
    if judges:
        if gateway is None:
            raise JudgeError("judge metrics need a gateway")
        for ch in characteristics:
            result.characteristics[ch.name] = CharacteristicScores(
                decomp=decomp_eval(report_text, ch, gateway, sents, parallelism),
                geval=g_eval(report_text, ch, gateway),
            )
    if reference is not None:
        result.reference["rouge1"] = rouge_n(report_text, reference, 1)
        result.reference["rouge2"] = rouge_n(report_text, reference, 2)
        result.reference["rougeL"] = rouge_l(report_text, reference)
        if token_embedder is not None:
            ct, rt = tokenize(report_text), tokenize(reference)
            result.reference["bertscore"] = bert_score(token_embedder(ct), token_embedder(rt))
    return result
