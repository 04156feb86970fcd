"""Generated reports, their Markdown form, and the self-reflection pass."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

from .corpus import ReportTemplate
from .gateway import Gateway, GatewayError

__all__ = [
    "AssemblyError",
    "CharacteristicSpec",
    "GeneratedReport",
    "ReflectionError",
    "default_characteristics",
    "load_characteristics",
    "self_reflect",
    "split_report_markdown",
]

METHODS = ("agentic", "decomposed")


class AssemblyError(ValueError):
    def __init__(self, missing: Sequence[tuple[str, ...]]):
        self.missing = [tuple(p) for p in missing]
        names = ", ".join(" > ".join(p) for p in self.missing)
        super().__init__(f"report body is missing template section(s): {names}")


class ReflectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CharacteristicSpec:
    name: str
    description: str


def load_characteristics(path: str | Path | None = None) -> list[CharacteristicSpec]:
    if path is None:
        raw = resources.files("reportgen").joinpath("data/characteristics.json").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    return [CharacteristicSpec(d["name"], d["description"]) for d in json.loads(raw)]


def default_characteristics() -> list[CharacteristicSpec]:
    """The four financial characteristics used by the reference-free judges."""
    return load_characteristics()


@dataclass(frozen=True)
class GeneratedReport:
    method: str
    sections: tuple[tuple[tuple[str, ...], str], ...]
    self_reflect: bool = False
    run_id: str = ""

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def tag(self) -> str:
        return self.method + ("+self_reflect" if self.self_reflect else "")

    @property
    def paths(self) -> list[tuple[str, ...]]:
        return [p for p, _ in self.sections]

    def text_for(self, path) -> str:
        path = tuple(path)
        for p, text in self.sections:
            if p == path:
                return text
        raise KeyError(path)

    def body_text(self) -> str:
        return "\n\n".join(text for _, text in self.sections)

    def to_markdown(self, template: ReportTemplate | None = None) -> str:
        """Markdown with one heading per template section.

        Without a template, headings are derived from the section paths.
        """
        texts = dict(self.sections)
        lines: list[str] = []
        if template is not None:
            walk = [(p, len(p)) for p, _ in template.walk()]
        else:
            walk, seen = [], set()
            for p in texts:
                for k in range(1, len(p) + 1):
                    if p[:k] not in seen:
                        seen.add(p[:k])
                        walk.append((p[:k], k))
        for path, depth in walk:
            lines.append("#" * depth + " " + path[-1])
            lines.append("")
            if path in texts:
                lines.append(texts[path].strip())
                lines.append("")
        return "\n".join(lines).rstrip("\n") + "\n"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "self_reflect": self.self_reflect,
            "tag": self.tag,
            "run_id": self.run_id,
            "sections": [{"path": list(p), "text": t} for p, t in self.sections],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratedReport":
        return cls(
            method=d["method"],
            sections=tuple((tuple(s["path"]), s["text"]) for s in d["sections"]),
            self_reflect=bool(d.get("self_reflect", False)),
            run_id=d.get("run_id", ""),
        )


_MD_HEADING = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")


def _norm_title(title: str) -> str:
    title = re.sub(r"[*_`]", "", title).strip().rstrip(":").strip()
    return re.sub(r"^\d+(\.\d+)*[.)]?\s+", "", title).casefold()


def split_report_markdown(body: str, template: ReportTemplate) -> list[tuple[tuple[str, ...], str]]:
    """Cut a Markdown report into the template's item-bearing sections.

    Headings are matched on normalised titles: an exact path match first,
    then a heading whose path ends with the template path (the body may be
    wrapped in an extra top-level title), then a unique heading with the same
    final title. Raises :class:`AssemblyError` listing sections not found.
    """
    headings: list[tuple[tuple[str, ...], list[str]]] = []
    stack: list[tuple[int, str]] = []
    for line in body.splitlines():
        m = _MD_HEADING.match(line.strip())
        if m:
            level = len(m.group(1))
            while stack and stack[-1][0] >= level:
                stack.pop()
            stack.append((level, _norm_title(m.group(2))))
            headings.append((tuple(t for _, t in stack), []))
        elif headings:
            headings[-1][1].append(line)

    found: list[tuple[tuple[str, ...], str]] = []
    missing: list[tuple[str, ...]] = []
    for path, _ in template.item_sections():
        want = tuple(_norm_title(t) for t in path)
        match = next((h for h in headings if h[0] == want), None)
        if match is None:
            match = next((h for h in headings if h[0][-len(want) :] == want), None)
        if match is None:
            same = [h for h in headings if h[0][-1] == want[-1]]
            match = same[0] if len(same) == 1 else None
        if match is None:
            missing.append(path)
        else:
            found.append((path, "\n".join(match[1]).strip()))
    if missing:
        raise AssemblyError(missing)
    return found


def _characteristics_block(characteristics: Sequence[CharacteristicSpec]) -> str:
    return "\n".join(f"- {c.name}: {c.description}" for c in characteristics)


def self_reflect(
    report: GeneratedReport, characteristics: Sequence[CharacteristicSpec], gateway: Gateway
) -> GeneratedReport:
    """One critique-then-revise round per section against ``characteristics``."""
    block = _characteristics_block(characteristics)
    revised = []
    for path, text in report.sections:
        name = " > ".join(path)
        try:
            _, critique = gateway.run_template(
                "reflect_critique", characteristics=block, section=name, text=text
            )
            _, new_text = gateway.run_template(
                "reflect_revise", characteristics=block, section=name, text=text, critique=critique
            )
        except GatewayError as exc:
            raise ReflectionError(f"self-reflection failed on section {name!r}: {exc}") from exc
        revised.append((path, new_text))
    return replace(report, sections=tuple(revised), self_reflect=True)
