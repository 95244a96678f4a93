"""Run configuration shared by every pipeline command."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    workspace: str = "ws"
    bug_id: str = ""  # defaults to the workspace directory name

    chat_kind: str = "mock"  # mock | remote
    chat_model: str = ""
    chat_base_url: str = ""
    temperature: float = 1.0
    chat_api_key_env: str = "SEMFL_CHAT_API_KEY"
    chat_max_attempts: int = 3
    chat_backoff: float = 0.5

    embed_kind: str = "hash"  # hash | remote
    embed_model: str = ""
    embed_base_url: str = ""
    embed_dim: int = 256
    embed_api_key_env: str = "SEMFL_EMBED_API_KEY"

    min_size: int = 5
    max_size: int = 15
    seed: int = 42
    randomness: float = 0.01
    top_k: int = 50
    top_k_module: int | None = None
    top_k_chunk: int | None = None
    max_rounds: int = 5
    workers: int = 4
    char_budget: int = 24_000
    explain_k: int = 5
    recall_size: int | None = None

    no_module_context: bool = False
    no_module_retrieval: bool = False
    no_chunk_retrieval: bool = False
    strict: bool = False

    def __post_init__(self):
        if self.min_size < 1 or self.max_size < 1:
            raise ConfigError("module size bounds must be positive")
        if self.min_size > self.max_size:
            raise ConfigError(f"min_size ({self.min_size}) exceeds max_size ({self.max_size})")
        for name in ("top_k", "top_k_module", "top_k_chunk"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.max_rounds < 0 or self.workers < 1 or self.embed_dim < 1 or self.explain_k < 0:
            raise ConfigError("max_rounds, workers, embed_dim and explain_k must be non-negative/positive")
        if self.chat_kind not in ("mock", "remote"):
            raise ConfigError(f"unknown chat_kind {self.chat_kind!r}")
        if self.embed_kind not in ("hash", "remote"):
            raise ConfigError(f"unknown embed_kind {self.embed_kind!r}")

    @property
    def ws(self) -> Path:
        return Path(self.workspace)

    @property
    def resolved_bug_id(self) -> str:
        return self.bug_id or Path(self.workspace).resolve().name

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        d = self.to_json()
        d.pop("workspace")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def field_types(cls) -> dict[str, str]:
        return {f.name: f.type for f in fields(cls)}

    @classmethod
    def from_mapping(cls, data: dict, base: "RunConfig | None" = None) -> "RunConfig":
        known = cls.field_types()
        for key in data:
            if key not in known:
                if "key" in key.lower() or "secret" in key.lower() or "token" in key.lower():
                    raise ConfigError(f"{key!r}: secrets belong in environment variables, not config")
                raise ConfigError(f"unknown config key {key!r}")
        coerced = {k: coerce(k, known[k], v) for k, v in data.items()}
        return dataclasses.replace(base or cls(), **coerced)

    @classmethod
    def load(cls, path: str | Path, base: "RunConfig | None" = None) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
            raise ConfigError("config file must be a flat JSON object")
        return cls.from_mapping(data, base)


def coerce(name: str, typ: str, value):
    """Coerce a config value (from JSON or a CLI string) to the field's type."""
    optional = "None" in typ
    if value is None or (optional and isinstance(value, str) and value.lower() in ("none", "null", "")):
        if optional:
            return None
        raise ConfigError(f"{name} cannot be null")
    base = typ.replace(" | None", "").strip()
    try:
        if base == "bool":
            if isinstance(value, bool):
                return value
            s = str(value).lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if base == "int":
            if isinstance(value, bool):
                raise ValueError(value)
            return int(value)
        if base == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot interpret {value!r} as {base}") from exc
