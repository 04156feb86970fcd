import json
import random

import pytest

from reportgen.corpus import Corpus, FinancialStatement, Transcript, parse_template
from reportgen.gateway import Gateway, ScriptedBackend

THREE_SECTIONS = """\
# Financial Overview
- Revenue and earnings per share
- Gross margin
# Business Segments
- Segment revenue mix
# Outlook
- Guidance for next quarter
"""

WORDS = (
    "revenue margin wafer demand guidance quarter growth node capacity inventory customers "
    "pricing foundry shipments capex outlook smartphone automotive datacenter utilization"
).split()


def make_text(n_chars: int, seed: int = 0) -> str:
    rng = random.Random(seed)
    parts = []
    total = 0
    while total < n_chars:
        w = rng.choice(WORDS)
        parts.append(w)
        total += len(w) + 1
    return " ".join(parts)[:n_chars]


@pytest.fixture
def template():
    return parse_template(THREE_SECTIONS, "fin")


@pytest.fixture
def corpus():
    t = Transcript("TSMC-2024Q3", "TSMC", 2024, 3, make_text(5000, seed=1))
    s = FinancialStatement.from_json("TSMC-2024Q3", '{"revenue": 23.5, "eps": 1.94}')
    return Corpus((t,), {"TSMC-2024Q3": s})


def decomposed_rules(questions_per_section: int = 2):
    qs = json.dumps([{"section": "s", "question": f"Question {i + 1}?"} for i in range(questions_per_section)])
    return [
        {"tag": "decompose", "response": qs},
        {"tag": "generate", "response": "The answer is 42."},
        {"tag": "summarize", "response": "Section summary."},
        {"tag": "reflect_critique", "response": "Looks aligned."},
    ]


def echo_revise_backend(rules):
    """Backend whose revision step returns the section text unchanged."""

    class Echo(ScriptedBackend):
        def chat(self, request):
            if request.tag == "reflect_revise":
                user = request.messages[-1][1]
                text = user.split("Current text:\n", 1)[1].split("\n\nReview:\n", 1)[0]
                with self._lock:
                    from reportgen.gateway import ScriptedCall

                    self.calls.append(ScriptedCall("chat", request.tag, request.system, request.rendered(), text))
                from reportgen.gateway import ChatResponse

                return ChatResponse(text)
            return super().chat(request)

    return Echo(rules, embedding_dim=32)


def agentic_script(template, n_queries: int | None = None, body: str | None = None):
    """Assistant replies: one task_decompose, one retrieve_generate per item section, then TERMINATE."""
    paths = [p for p, _ in template.item_sections()]
    n = len(paths) if n_queries is None else n_queries
    calls = ['```json\n{"function": "task_decompose", "args": {"task": "Write the report"}}\n```']
    for i in range(n):
        q = f"What about {paths[i % len(paths)][-1]}?"
        calls.append(json.dumps({"function": "retrieve_generate", "args": {"q": q, "n": 3}}))
    if body is None:
        lines = []
        for p, _ in template.walk():
            lines.append("#" * len(p) + " " + p[-1])
            lines.append(f"Text for {p[-1]}.")
        body = "\n".join(lines)
    calls.append("TERMINATE\n" + body)
    return [
        {"tag": "assistant", "responses": calls},
        {"tag": "task_decompose", "response": "1. Gather figures\n2. Explain drivers\n3. Summarize outlook"},
        {"tag": "financial_manager", "response": "Revenue grew 8%."},
    ]


def stub_gateway(rules, cache=None, dim=32, **kw):
    backend = ScriptedBackend(rules, embedding_dim=dim)
    return Gateway(backend, cache=cache, sleep=lambda s: None, **kw), backend


# --- acceptance reporting -------------------------------------------------

_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _CRITERIA.get(marker, "passed")
        _CRITERIA[marker] = "failed" if "failed" in (prev, report.outcome) else report.outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), outcome in sorted(_CRITERIA.items()):
        flag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{flag}] criterion {num}: {title}")
