"""Single choke point for chat-completion and embedding calls.

The :class:`Gateway` wraps a backend (remote HTTP or the scripted stub) with
retries, a token-bucket rate limiter and a content-addressed response
cache. Every call is recorded as an exchange so run records can replay it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import threading
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import httpx

log = logging.getLogger(__name__)

__all__ = [
    "ChatRequest",
    "ChatResponse",
    "Gateway",
    "GatewayError",
    "HTTPBackend",
    "PromptError",
    "PromptTemplate",
    "ProtocolError",
    "ResponseCache",
    "ScriptedBackend",
    "TokenBucket",
    "TransientError",
    "TransportError",
    "load_prompts",
    "render_prompt",
]

TRUNCATION_MARKER = " …[truncated]"


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Retries exhausted or the backend could not be reached."""


class ProtocolError(GatewayError):
    """The backend answered, but not in the expected shape."""


class TransientError(GatewayError):
    """Retryable backend failure (timeout, throttling, 5xx)."""


class PromptError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Prompt templates


def _slots(text: str) -> set[str]:
    names = set()
    for _, name, spec, conv in string.Formatter().parse(text):
        if name is None:
            continue
        if not name.isidentifier() or spec or conv:
            raise PromptError(f"unsupported slot syntax {{{name}}} in template")
        names.add(name)
    return names


@dataclass(frozen=True)
class PromptTemplate:
    """System text plus a user text with ``{slot}`` markers.

    Literal braces are written doubled, as in :meth:`str.format`.
    """

    name: str
    system_text: str
    user_text: str
    required_slots: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        found = _slots(self.user_text)
        if not self.required_slots:
            object.__setattr__(self, "required_slots", frozenset(found))
        elif found != set(self.required_slots):
            raise PromptError(
                f"template {self.name!r}: slots in text {sorted(found)} != declared {sorted(self.required_slots)}"
            )
        if _slots(self.system_text):
            raise PromptError(f"template {self.name!r}: system text may not contain slots")

    @property
    def system(self) -> str:
        """System text with doubled braces unescaped."""
        return self.system_text.format_map({})


def render_prompt(
    tmpl: PromptTemplate, bindings: Mapping[str, str], slot_budget: int | None = None
) -> tuple[str, str]:
    """Fill every slot of ``tmpl``; returns ``(system_text, user_text)``.

    Values longer than ``slot_budget`` characters are cut and marked.
    """
    missing = tmpl.required_slots - bindings.keys()
    if missing:
        raise PromptError(f"template {tmpl.name!r}: missing slot(s) {', '.join(sorted(missing))}")
    extra = bindings.keys() - tmpl.required_slots
    if extra:
        raise PromptError(f"template {tmpl.name!r}: unknown binding(s) {', '.join(sorted(extra))}")
    values = {}
    for key, value in bindings.items():
        value = str(value)
        if slot_budget is not None and len(value) > slot_budget:
            log.warning("truncating slot %r of %r from %d to %d chars", key, tmpl.name, len(value), slot_budget)
            value = value[:slot_budget] + TRUNCATION_MARKER
        values[key] = value
    return tmpl.system, tmpl.user_text.format_map(values)


@lru_cache(maxsize=None)
def _bundled_prompts() -> dict[str, PromptTemplate]:
    raw = resources.files("reportgen").joinpath("data/prompts.json").read_text(encoding="utf-8")
    return _parse_prompt_file(json.loads(raw))


def _parse_prompt_file(data: Mapping[str, Any]) -> dict[str, PromptTemplate]:
    out = {}
    for name, spec in data["templates"].items():
        out[name] = PromptTemplate(
            name=name,
            system_text=spec.get("system", ""),
            user_text=spec.get("user", ""),
            required_slots=frozenset(spec.get("slots", ())),
        )
    return out


def load_prompts(path: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Prompt templates by name; the bundled set unless ``path`` overrides it."""
    if path is None:
        return dict(_bundled_prompts())
    merged = dict(_bundled_prompts())
    merged.update(_parse_prompt_file(json.loads(Path(path).read_text(encoding="utf-8"))))
    return merged


# ---------------------------------------------------------------------------
# Requests, responses, cache


@dataclass(frozen=True)
class ChatRequest:
    model: str
    system: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int | None = None
    # label for logs and call counting; not part of the cache key
    tag: str = field(default="", compare=False)

    @property
    def cache_key(self) -> str:
        payload = {
            "kind": "chat",
            "model": self.model,
            "system": self.system,
            "messages": [list(m) for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True, ensure_ascii=False).encode()).hexdigest()

    def rendered(self) -> str:
        """Flat text the scripted backend matches against."""
        return "\n\n".join([self.system, *(content for _, content in self.messages)])

    def api_messages(self) -> list[dict[str, str]]:
        msgs = [{"role": "system", "content": self.system}] if self.system else []
        return msgs + [{"role": r, "content": c} for r, c in self.messages]


@dataclass
class ChatResponse:
    text: str
    usage: dict[str, int] = field(default_factory=dict)
    latency: float = 0.0


def embed_cache_key(model: str, text: str) -> str:
    payload = json.dumps({"kind": "embed", "model": model, "text": text}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode()).hexdigest()


class ResponseCache:
    """Content-addressed cache, optionally persisted as append-only JSON lines.

    Each line is ``{"cache_key", "request", "response"}``. Identical keys
    always carry identical values, so concurrent writers simply race.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[str, Any] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._data[rec["cache_key"]] = rec["response"]

    def get(self, key: str) -> Any | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, digest: str, value: Any) -> None:
        with self._lock:
            if key in self._data:
                return
            self._data[key] = value
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"cache_key": key, "request": digest, "response": value}, ensure_ascii=False))
                    fh.write("\n")

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: str) -> bool:
        return key in self._data


class TokenBucket:
    """Admission control: ``rate`` requests per second, bursts up to ``capacity``."""

    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                self._sleep((1 - self._tokens) / self.rate)


# ---------------------------------------------------------------------------
# Backends


@dataclass
class ScriptRule:
    match: str
    responses: list[str]
    regex: bool = False
    system: str | None = None
    tag: str | None = None
    hits: int = 0

    def matches(self, request: ChatRequest) -> bool:
        if self.tag is not None and self.tag != request.tag:
            return False
        if self.system is not None and self.system not in request.system:
            return False
        text = request.rendered()
        if self.regex:
            return re.search(self.match, text, flags=re.S) is not None
        return self.match in text

    def next_response(self) -> str:
        # sequenced rules step through their responses, then repeat the last one
        resp = self.responses[min(self.hits, len(self.responses) - 1)]
        self.hits += 1
        return resp


@dataclass
class ScriptedCall:
    kind: str
    tag: str
    system: str
    prompt: str
    response: Any


def hashed_embedding(text: str, dim: int) -> list[float]:
    """Deterministic bag-of-words feature-hashing embedding for the stub."""
    vec = [0.0] * dim
    for tok in re.findall(r"[a-z0-9]+", text.lower()):
        h = hashlib.blake2b(tok.encode(), digest_size=8).digest()
        idx = int.from_bytes(h[:4], "little") % dim
        vec[idx] += 1.0 if h[4] & 1 else -1.0
    if not any(vec):
        vec[0] = 1.0
    return vec


class ScriptedBackend:
    """Deterministic stand-in for a model provider.

    Chat requests are answered by the first rule whose matcher hits the
    rendered prompt (system text plus all message contents); a rule may also
    require a substring of the system text alone, or the request's tag. A rule with a list of
    ``responses`` returns them in order on successive hits. Embeddings come
    from an explicit text-to-vector table, else from feature hashing.
    Every call is appended to :attr:`calls`.
    """

    def __init__(
        self,
        rules: Sequence[ScriptRule | Mapping[str, Any]] = (),
        default: str | None = "",
        embeddings: Mapping[str, Sequence[float]] | None = None,
        embedding_dim: int = 64,
    ):
        self.rules = [r if isinstance(r, ScriptRule) else self._rule(r) for r in rules]
        self.default = default
        self.embeddings = {k: list(v) for k, v in (embeddings or {}).items()}
        self.embedding_dim = embedding_dim
        self.calls: list[ScriptedCall] = []
        self._lock = threading.Lock()

    @staticmethod
    def _rule(spec: Mapping[str, Any]) -> ScriptRule:
        if "responses" in spec:
            responses = list(spec["responses"])
        else:
            responses = [spec["response"]]
        if not responses:
            raise ValueError("script rule needs at least one response")
        return ScriptRule(
            match=spec.get("match", ""),
            responses=responses,
            regex=bool(spec.get("regex", False)),
            system=spec.get("system"),
            tag=spec.get("tag"),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            rules=data.get("rules", ()),
            default=data.get("default", ""),
            embeddings=data.get("embeddings"),
            embedding_dim=int(data.get("embedding_dim", 64)),
        )

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            text = None
            for rule in self.rules:
                if rule.matches(request):
                    text = rule.next_response()
                    break
            if text is None:
                if self.default is None:
                    raise ProtocolError(f"no script rule matched request {request.tag or request.cache_key[:12]}")
                text = self.default
            self.calls.append(ScriptedCall("chat", request.tag, request.system, request.rendered(), text))
        return ChatResponse(text=text)

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        out = [list(self.embeddings.get(t) or hashed_embedding(t, self.embedding_dim)) for t in texts]
        with self._lock:
            self.calls.append(ScriptedCall("embed", "", "", "\n".join(texts), out))
        return out

    def chat_calls(self, tag: str | None = None) -> list[ScriptedCall]:
        return [c for c in self.calls if c.kind == "chat" and (tag is None or c.tag == tag)]

    @property
    def hit_count(self) -> int:
        return len(self.calls)


_RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class HTTPBackend:
    """Client for chat-completions style HTTP endpoints.

    Chat posts ``{model, messages, temperature, max_tokens}`` and reads
    ``choices[0].message.content``; embeddings post ``{model, input}`` and
    read ``data[].embedding``. The API key comes from the environment.
    """

    def __init__(
        self,
        chat_url: str | None,
        embed_url: str | None = None,
        api_key_env: str = "REPORTGEN_API_KEY",
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.chat_url = chat_url
        self.embed_url = embed_url
        self.api_key = os.environ.get(api_key_env) or os.environ.get("OPENAI_API_KEY", "")
        self._client = client or httpx.Client(timeout=timeout)

    def _post(self, url: str | None, payload: dict) -> Any:
        if not url:
            raise TransportError("backend endpoint URL is not configured")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(url, json=payload, headers=headers)
        except httpx.TimeoutException as exc:
            raise TransientError(f"timeout calling {url}") from exc
        except httpx.TransportError as exc:
            raise TransientError(f"transport failure calling {url}: {exc}") from exc
        if resp.status_code in _RETRY_STATUS:
            raise TransientError(f"{url} returned HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise TransportError(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"{url} returned non-JSON body") from exc

    def chat(self, request: ChatRequest) -> ChatResponse:
        payload: dict[str, Any] = {
            "model": request.model,
            "messages": request.api_messages(),
            "temperature": request.temperature,
        }
        if request.max_tokens is not None:
            payload["max_tokens"] = request.max_tokens
        t0 = time.monotonic()
        body = self._post(self.chat_url, payload)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("chat reply lacks choices[0].message.content") from exc
        if not isinstance(text, str):
            raise ProtocolError("chat reply content is not a string")
        usage = body.get("usage") or {}
        return ChatResponse(text=text, usage=dict(usage), latency=time.monotonic() - t0)

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        body = self._post(self.embed_url, {"model": model, "input": list(texts)})
        try:
            data = sorted(body["data"], key=lambda d: d.get("index", 0))
            return [list(map(float, d["embedding"])) for d in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError("embedding reply lacks data[].embedding") from exc


# ---------------------------------------------------------------------------
# Gateway


@dataclass
class Exchange:
    exchange_id: int
    tag: str
    cache_key: str
    request: dict
    response: str
    cached: bool
    usage: dict = field(default_factory=dict)
    latency: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class Gateway:
    """Retrying, caching, rate-limited front end to a chat/embedding backend."""

    def __init__(
        self,
        backend,
        model: str = "gpt-4o-mini",
        embed_model: str = "fin-mpnet-base",
        cache: ResponseCache | None = None,
        max_retries: int = 3,
        backoff: float = 1.0,
        max_backoff: float = 30.0,
        rate_limiter: TokenBucket | None = None,
        embed_batch: int = 64,
        temperature: float = 0.0,
        max_tokens: int | None = None,
        slot_budget: int | None = None,
        prompts: Mapping[str, PromptTemplate] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.model = model
        self.embed_model = embed_model
        self.cache = cache
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_backoff = max_backoff
        self.rate_limiter = rate_limiter
        self.embed_batch = embed_batch
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.slot_budget = slot_budget
        self.prompts = dict(prompts) if prompts is not None else load_prompts()
        self.exchanges: list[Exchange] = []
        self.attempts = 0
        self._sleep = sleep
        self._lock = threading.Lock()

    # -- plumbing

    def _call(self, fn, what: str):
        delay = self.backoff
        for attempt in range(self.max_retries + 1):
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            with self._lock:
                self.attempts += 1
            try:
                return fn()
            except TransientError as exc:
                if attempt == self.max_retries:
                    raise TransportError(f"{what}: retries exhausted after {attempt + 1} attempts ({exc})") from exc
                log.info("%s: transient failure (%s); retrying in %.2fs", what, exc, delay)
                self._sleep(delay)
                delay = min(delay * 2, self.max_backoff)
        raise AssertionError("unreachable")

    def _record(self, request: ChatRequest, resp: ChatResponse, cached: bool) -> Exchange:
        with self._lock:
            ex = Exchange(
                exchange_id=len(self.exchanges),
                tag=request.tag,
                cache_key=request.cache_key,
                request={
                    "model": request.model,
                    "system": request.system,
                    "messages": [list(m) for m in request.messages],
                    "temperature": request.temperature,
                    "max_tokens": request.max_tokens,
                },
                response=resp.text,
                cached=cached,
                usage=resp.usage,
                latency=resp.latency,
            )
            self.exchanges.append(ex)
        return ex

    # -- chat

    def complete(self, request: ChatRequest) -> str:
        key = request.cache_key
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                self._record(request, ChatResponse(text=hit), cached=True)
                return hit
        resp = self._call(lambda: self.backend.chat(request), f"chat[{request.tag or key[:12]}]")
        if not isinstance(resp.text, str):
            raise ProtocolError("backend returned a non-string completion")
        if self.cache is not None:
            self.cache.put(key, f"chat:{request.model}:{request.tag}", resp.text)
        self._record(request, resp, cached=False)
        return resp.text

    def request(self, system: str, messages: Sequence[tuple[str, str]], tag: str = "") -> ChatRequest:
        return ChatRequest(
            model=self.model,
            system=system,
            messages=tuple((r, c) for r, c in messages),
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            tag=tag,
        )

    def chat(self, system: str, messages: Sequence[tuple[str, str]], tag: str = "") -> str:
        return self.complete(self.request(system, messages, tag))

    def render(self, name: str, **bindings: str) -> tuple[str, str]:
        return render_prompt(self.prompts[name], bindings, self.slot_budget)

    def run_template(self, name: str, **bindings: str) -> tuple[str, str]:
        """Render template ``name`` and complete it; returns (user_text, reply)."""
        system, user = self.render(name, **bindings)
        return user, self.chat(system, [("user", user)], tag=name)

    # -- embeddings

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        texts = list(texts)
        if not texts:
            raise ValueError("embed needs at least one text")
        out: list[list[float] | None] = [None] * len(texts)
        todo: list[int] = []
        for i, t in enumerate(texts):
            hit = self.cache.get(embed_cache_key(self.embed_model, t)) if self.cache is not None else None
            if hit is not None:
                out[i] = hit
            else:
                todo.append(i)
        for lo in range(0, len(todo), self.embed_batch):
            idx = todo[lo : lo + self.embed_batch]
            batch = [texts[i] for i in idx]
            vecs = self._call(lambda: self.backend.embed(batch, self.embed_model), "embed")
            if len(vecs) != len(batch):
                raise ProtocolError(f"backend returned {len(vecs)} embeddings for {len(batch)} texts")
            for i, v in zip(idx, vecs):
                out[i] = list(v)
                if self.cache is not None:
                    self.cache.put(embed_cache_key(self.embed_model, texts[i]), "embed", out[i])
        dims = {len(v) for v in out}
        if len(dims) != 1:
            raise ProtocolError(f"backend returned embeddings of mixed dimension {sorted(dims)}")
        return out  # type: ignore[return-value]

    def __call__(self, texts: Sequence[str]) -> list[list[float]]:
        return self.embed(texts)

    def exchange_log(self) -> list[dict]:
        with self._lock:
            return [e.to_dict() for e in self.exchanges]
