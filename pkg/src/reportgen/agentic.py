"""Multi-agent workflow: an assistant agent drives function calls until it
compiles the report.

Six roles take part. The user proxy seeds the conversation and executes the
function calls the assistant selects; ``task_decompose`` routes through the
user agent to the task-decomposition agent, and ``retrieve_generate`` runs
the financial retrieval agent (vector search) followed by the financial
manager agent (one completion). The assistant ends the run with a line
``TERMINATE`` followed by the Markdown report.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Corpus, ReportTemplate, serialize_template
from .gateway import Gateway, GatewayError
from .report import AssemblyError, GeneratedReport, split_report_markdown
from .retrieval import RetrievalError, VectorIndex, build_index, top_n_chunks

__all__ = [
    "AgentRole",
    "AgenticRun",
    "AgenticRunError",
    "FinalReport",
    "FunctionCall",
    "FunctionError",
    "IncompleteRunError",
    "Message",
    "PlainMessage",
    "ProtocolViolation",
    "parse_function_call",
    "parse_subtasks",
    "read_transcript",
    "replay_report",
    "retrieve_generate",
    "run_agentic",
    "task_decompose",
    "write_transcript",
]


class AgentRole(str, Enum):
    USER_PROXY = "user_proxy"
    ASSISTANT = "assistant"
    FINANCIAL_RETRIEVAL = "financial_retrieval"
    FINANCIAL_MANAGER = "financial_manager"
    USER = "user"
    TASK_DECOMPOSITION = "task_decomposition"

    @property
    def prompt_name(self) -> str:
        return f"role_{self.value}"


FUNCTIONS = ("task_decompose", "retrieve_generate")
TERMINATE = "TERMINATE"


class FunctionError(RuntimeError):
    """A registered function failed; reported back into the conversation."""


class ProtocolViolation(ValueError):
    """The assistant emitted a malformed or unknown function call."""


class AgenticRunError(RuntimeError):
    def __init__(self, message: str, transcript: Sequence["Message"] = ()):
        super().__init__(message)
        self.transcript = list(transcript)


class IncompleteRunError(AgenticRunError):
    pass


class ReportAssemblyError(AgenticRunError):
    def __init__(self, cause: AssemblyError, transcript: Sequence["Message"]):
        super().__init__(str(cause), transcript)
        self.missing = cause.missing


@dataclass(frozen=True)
class FunctionCall:
    name: str
    args: dict


@dataclass(frozen=True)
class FinalReport:
    body: str


@dataclass(frozen=True)
class PlainMessage:
    text: str


_FENCE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.S)


def _check_args(name: str, args: dict, default_n: int) -> dict:
    if name == "task_decompose":
        task = args.get("task")
        if not isinstance(task, str):
            raise ProtocolViolation("task_decompose needs a string argument 'task'")
        return {"task": task}
    q = args.get("q")
    if not isinstance(q, str):
        raise ProtocolViolation("retrieve_generate needs a string argument 'q'")
    n = args.get("n", default_n)
    if isinstance(n, bool) or not isinstance(n, int):
        raise ProtocolViolation("retrieve_generate argument 'n' must be an integer")
    return {"q": q, "n": n}


def parse_function_call(text: str, default_n: int = 3) -> FunctionCall | FinalReport | PlainMessage:
    """Classify an assistant message.

    A line holding only ``TERMINATE`` marks the final report (the body is
    what follows). Otherwise a fenced JSON block, or a message that is a bare
    JSON object, of the form ``{"function": name, "args": {...}}`` is a call.
    Anything else is a plain message. Unknown function names and invalid
    arguments raise :class:`ProtocolViolation`. A missing ``n`` for
    ``retrieve_generate`` takes ``default_n``.
    """
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if line.strip() == TERMINATE:
            return FinalReport("\n".join(lines[i + 1 :]).strip())
    m = _FENCE.search(text)
    candidate = m.group(1) if m else (text.strip() if text.strip().startswith("{") else None)
    if candidate is None:
        return PlainMessage(text)
    try:
        obj = json.loads(candidate)
    except json.JSONDecodeError:
        if m:
            raise ProtocolViolation("function call block is not valid JSON")
        return PlainMessage(text)
    if not isinstance(obj, dict) or "function" not in obj:
        return PlainMessage(text)
    name = obj["function"]
    if name not in FUNCTIONS:
        raise ProtocolViolation(f"unknown function {name!r}; available: {', '.join(FUNCTIONS)}")
    args = obj.get("args", {})
    if not isinstance(args, dict):
        raise ProtocolViolation("'args' must be an object")
    return FunctionCall(name, _check_args(name, args, default_n))


_LIST_LINE = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s+(.+?)\s*$")


def parse_subtasks(text: str) -> list[str]:
    """Numbered or bulleted lines, or a JSON list of strings."""
    stripped = text.strip()
    if stripped.startswith("["):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError:
            data = None
        if isinstance(data, list) and data and all(isinstance(x, str) and x.strip() for x in data):
            return [x.strip() for x in data]
    out = [m.group(1) for m in map(_LIST_LINE.match, text.splitlines()) if m]
    if not out:
        raise ValueError("no numbered or bulleted subtasks in reply")
    return out


@dataclass(frozen=True)
class Message:
    turn: int
    sender: str
    recipient: str
    content: str
    kind: str = "message"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConversationState:
    max_turns: int
    messages: list[Message] = field(default_factory=list)
    pending_subtasks: list[str] = field(default_factory=list)
    answers: dict[str, str] = field(default_factory=dict)
    turn: int = 0
    terminated: bool = False

    def post(self, sender: AgentRole, recipient: AgentRole, content: str, kind: str = "message") -> None:
        if self.terminated:
            raise RuntimeError("conversation already terminated")
        self.messages.append(Message(self.turn, sender.value, recipient.value, content, kind))

    def assistant_view(self) -> list[tuple[str, str]]:
        """The assistant's chat history: its own messages and those sent to it."""
        out = []
        for m in self.messages:
            if m.sender == AgentRole.ASSISTANT.value:
                out.append(("assistant", m.content if m.kind != "final" else f"{TERMINATE}\n{m.content}"))
            elif m.recipient == AgentRole.ASSISTANT.value:
                out.append(("user", m.content))
        return out


def _role_system(gateway: Gateway, role: AgentRole) -> str:
    return gateway.prompts[role.prompt_name].system


def task_decompose(task: str, gateway: Gateway, state: ConversationState | None = None) -> list[str]:
    """Forward ``task`` via the user agent to the task-decomposition agent.

    The user agent only forwards, so it costs no completion. An unparseable
    reply earns one reformat request; after that :class:`FunctionError`.
    """
    if not task.strip():
        raise ValueError("task_decompose: task must be non-empty")
    system = _role_system(gateway, AgentRole.TASK_DECOMPOSITION)
    _, prompt = gateway.render("task_decompose", task=task)
    if state is not None:
        state.post(AgentRole.USER, AgentRole.TASK_DECOMPOSITION, prompt)
    history = [("user", prompt)]
    reply = gateway.chat(system, history, tag="task_decompose")
    if state is not None:
        state.post(AgentRole.TASK_DECOMPOSITION, AgentRole.USER, reply)
    try:
        return parse_subtasks(reply)
    except ValueError:
        pass
    _, again = gateway.render("task_decompose_reformat", reply=reply)
    history += [("assistant", reply), ("user", again)]
    if state is not None:
        state.post(AgentRole.USER, AgentRole.TASK_DECOMPOSITION, again)
    reply = gateway.chat(system, history, tag="task_decompose")
    if state is not None:
        state.post(AgentRole.TASK_DECOMPOSITION, AgentRole.USER, reply)
    try:
        return parse_subtasks(reply)
    except ValueError as exc:
        raise FunctionError(f"task_decompose: unparseable subtask list after one retry ({exc})") from exc


def retrieve_generate(
    q: str,
    n: int,
    index: VectorIndex,
    statement: str,
    gateway: Gateway,
    state: ConversationState | None = None,
) -> str:
    """Top-``n`` retrieval for ``q``, then one financial-manager completion."""
    if not q.strip():
        raise ValueError("retrieve_generate: q must be non-empty")
    if n < 1:
        raise ValueError("retrieve_generate: n must be >= 1")
    if state is not None:
        state.post(AgentRole.USER_PROXY, AgentRole.FINANCIAL_RETRIEVAL, json.dumps({"q": q, "n": n}))
    hits = top_n_chunks(q, n, index, gateway)
    context = "\n\n".join(c.text for c in hits.chunks)
    if state is not None:
        state.post(AgentRole.FINANCIAL_RETRIEVAL, AgentRole.FINANCIAL_MANAGER, context)
    _, prompt = gateway.render("financial_manager", context=context, statement=statement, question=q)
    answer = gateway.chat(_role_system(gateway, AgentRole.FINANCIAL_MANAGER), [("user", prompt)], tag="financial_manager")
    if state is not None:
        state.post(AgentRole.FINANCIAL_MANAGER, AgentRole.USER_PROXY, answer)
    return answer


@dataclass
class AgenticRun:
    report: GeneratedReport
    transcript: list[Message]

    def provenance(self) -> dict:
        calls = [m for m in self.transcript if m.kind == "function_call"]
        return {
            "method": self.report.tag,
            "turns": max((m.turn for m in self.transcript), default=0),
            "function_calls": [parse_function_call(m.content).__dict__ for m in calls],
        }


def run_agentic(
    template: ReportTemplate,
    corpus: Corpus,
    gateway: Gateway,
    *,
    top_n: int = 3,
    max_turns: int = 40,
    index: VectorIndex | None = None,
    chunking=None,
    run_id: str = "",
) -> AgenticRun:
    """Drive the assistant loop until ``TERMINATE`` or ``max_turns`` completions."""
    if index is None:
        chunks = corpus.chunks(chunking) if chunking is not None else corpus.chunks()
        index = build_index(chunks, gateway)
    statement, _ = corpus.statement_for_prompt()
    state = ConversationState(max_turns=max_turns)
    assistant_system = _role_system(gateway, AgentRole.ASSISTANT)
    _, seed = gateway.render("agentic_seed", template=serialize_template(template))
    state.post(AgentRole.USER_PROXY, AgentRole.ASSISTANT, seed)
    _, nudge = gateway.render("assistant_continue")

    while state.turn < max_turns:
        state.turn += 1
        try:
            reply = gateway.chat(assistant_system, state.assistant_view(), tag="assistant")
        except GatewayError as exc:
            raise AgenticRunError(f"assistant completion failed at turn {state.turn}: {exc}", state.messages) from exc
        try:
            parsed = parse_function_call(reply, default_n=top_n)
        except ProtocolViolation as exc:
            state.post(AgentRole.ASSISTANT, AgentRole.USER_PROXY, reply)
            state.post(AgentRole.USER_PROXY, AgentRole.ASSISTANT, f"ERROR: {exc}")
            continue
        if isinstance(parsed, FinalReport):
            state.post(AgentRole.ASSISTANT, AgentRole.USER_PROXY, parsed.body, "final")
            state.terminated = True
            try:
                sections = split_report_markdown(parsed.body, template)
            except AssemblyError as exc:
                raise ReportAssemblyError(exc, state.messages) from exc
            report = GeneratedReport("agentic", tuple(sections), run_id=run_id)
            return AgenticRun(report, state.messages)
        if isinstance(parsed, PlainMessage):
            state.post(AgentRole.ASSISTANT, AgentRole.USER_PROXY, reply)
            state.post(AgentRole.USER_PROXY, AgentRole.ASSISTANT, nudge)
            continue
        state.post(AgentRole.ASSISTANT, AgentRole.USER_PROXY, reply, "function_call")
        result = _execute(parsed, index, statement, gateway, state)
        state.post(AgentRole.USER_PROXY, AgentRole.ASSISTANT, result, "function_result")

    raise IncompleteRunError(f"no final report after {max_turns} assistant turns", state.messages)


def _execute(call: FunctionCall, index, statement, gateway, state: ConversationState) -> str:
    try:
        if call.name == "task_decompose":
            subtasks = task_decompose(call.args["task"], gateway, state)
            state.pending_subtasks.extend(subtasks)
            return "Subtasks:\n" + "\n".join(f"{i}. {t}" for i, t in enumerate(subtasks, 1))
        q, n = call.args["q"], call.args["n"]
        answer = retrieve_generate(q, n, index, statement, gateway, state)
        state.answers[q] = answer
        if q in state.pending_subtasks:
            state.pending_subtasks.remove(q)
        return answer
    except (FunctionError, ValueError, RetrievalError, GatewayError) as exc:
        return f"ERROR: {exc}"


# ---------------------------------------------------------------------------
# Transcript persistence


def write_transcript(messages: Iterable[Message], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in messages:
            fh.write(json.dumps(m.to_dict(), ensure_ascii=False) + "\n")


def read_transcript(path: str | Path) -> list[Message]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Message(**json.loads(line)))
    return out


def replay_report(messages: Sequence[Message], template: ReportTemplate, run_id: str = "") -> GeneratedReport:
    """Rebuild the report from a persisted transcript's final message."""
    finals = [m for m in messages if m.kind == "final"]
    if not finals:
        raise AgenticRunError("transcript has no final report", messages)
    return GeneratedReport("agentic", tuple(split_report_markdown(finals[-1].content, template)), run_id=run_id)
