"""Run configuration: built-in defaults, flat key=value files, flag overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .corpus import ChunkingConfig

__all__ = ["ConfigError", "RunConfig", "load_config_file"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    method: str = "decomposed"
    self_reflect: bool = False
    top_n: int = 3
    chunk_size: int = 1000
    chunk_overlap: int = 200
    chat_endpoint: str = "https://api.openai.com/v1/chat/completions"
    chat_model: str = "gpt-4o-mini"
    embed_endpoint: str = "https://api.openai.com/v1/embeddings"
    embed_model: str = "fin-mpnet-base"
    embed_dim: int = 768
    api_key_env: str = "REPORTGEN_API_KEY"
    stub: str | None = None
    parallelism: int = 4
    max_turns: int = 40
    cache: bool = True
    max_retries: int = 3
    rate_limit: float = 0.0
    slot_budget: int | None = None
    corpus: str | None = None
    template: str | None = None
    out: str = "runs"
    subqueries: str | None = None
    characteristics: str | None = None
    docs: str | None = None

    def __post_init__(self) -> None:
        if self.method not in ("agentic", "decomposed"):
            raise ConfigError(f"method must be 'agentic' or 'decomposed', got {self.method!r}")
        if self.top_n < 1:
            raise ConfigError("top_n must be >= 1")
        if self.max_turns < 1:
            raise ConfigError("max_turns must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        try:
            self.chunking
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def chunking(self) -> ChunkingConfig:
        return ChunkingConfig(self.chunk_size, self.chunk_overlap)

    @property
    def doc_ids(self) -> list[str] | None:
        return [d.strip() for d in self.docs.split(",") if d.strip()] if self.docs else None

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def merged(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Copy with the non-None entries of ``overrides`` applied."""
        known = {f.name: f for f in fields(self)}
        values = {}
        for key, raw in overrides.items():
            if raw is None:
                continue
            key = key.replace("-", "_")
            if key in _SECRET_KEYS:
                raise ConfigError(f"{key!r} is not accepted here; set the variable named by api_key_env instead")
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
            values[key] = _coerce(known[key], raw)
        return dataclasses.replace(self, **values)


_SECRET_KEYS = {"api_key", "openai_api_key", "token", "password"}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(f: dataclasses.Field, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    kind = str(f.type)
    if kind.startswith("bool"):
        low = raw.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{f.name}: expected a boolean, got {raw!r}")
    if raw.strip().lower() in ("", "none", "null") and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{f.name}: {exc}") from exc
    return raw


def load_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out
