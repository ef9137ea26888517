"""Application configuration: JSON config file plus GRANMEM_* env overrides.

Offline mode swaps in the deterministic providers (extractive metadata,
hashed-bag embeddings) and refuses to coexist with API keys, so a run
flagged offline provably cannot touch the network.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .embedding import HashedBagProvider, RemoteEmbeddingProvider
from .errors import ConfigError
from .metadata import OfflineExtractiveProvider, RemoteChatProvider
from .retrieval import RetrievalConfig

# λ (softmax temperature), α (seed count), K (top-k) documented ranges
TEMPERATURE_RANGE = (0.0, 5.0)   # exclusive lower bound
SEED_COUNT_RANGE = (1, 10_000)
TOP_K_RANGE = (1, 100)

ENV_PREFIX = "GRANMEM_"
_ENV_KEYS = {
    "CHAT_URL": "chat_url",
    "CHAT_KEY": "chat_key",
    "CHAT_MODEL": "chat_model",
    "EMBED_URL": "embed_url",
    "EMBED_KEY": "embed_key",
    "EMBED_MODEL": "embed_model",
    "DATA_DIR": "data_dir",
    "LOG_LEVEL": "log_level",
    "OFFLINE": "offline_mode",
    "TOP_K": "top_k",
    "SEED_COUNT": "seed_count",
    "TEMPERATURE": "temperature",
    "DAMPING": "damping",
    "FILTER": "filter_enabled",
}
_BOOL_KEYS = {"offline_mode", "filter_enabled"}
_INT_KEYS = {"top_k", "seed_count", "max_concurrency"}
_FLOAT_KEYS = {"temperature", "damping"}


def _coerce(key: str, value):
    try:
        if key in _BOOL_KEYS:
            if isinstance(value, bool):
                return value
            lowered = str(value).strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


@dataclass
class AppConfig:
    chat_url: str | None = None
    chat_key: str | None = None
    chat_model: str | None = None
    embed_url: str | None = None
    embed_key: str | None = None
    embed_model: str | None = None
    data_dir: str = "./granmem-data"
    log_level: str = "INFO"
    offline_mode: bool = True
    max_concurrency: int = 4
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)

    def validate(self) -> None:
        if self.offline_mode and (self.chat_key or self.embed_key):
            raise ConfigError("offline_mode=true requires no network keys")
        if self.max_concurrency < 1:
            raise ConfigError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if not TEMPERATURE_RANGE[0] < self.retrieval.temperature <= TEMPERATURE_RANGE[1]:
            raise ConfigError(
                f"temperature must be in ({TEMPERATURE_RANGE[0]}, {TEMPERATURE_RANGE[1]}], "
                f"got {self.retrieval.temperature}"
            )
        if not SEED_COUNT_RANGE[0] <= self.retrieval.seed_count <= SEED_COUNT_RANGE[1]:
            raise ConfigError(
                f"seed_count must be in [{SEED_COUNT_RANGE[0]}, {SEED_COUNT_RANGE[1]}], "
                f"got {self.retrieval.seed_count}"
            )
        if not TOP_K_RANGE[0] <= self.retrieval.top_k <= TOP_K_RANGE[1]:
            raise ConfigError(
                f"top_k must be in [{TOP_K_RANGE[0]}, {TOP_K_RANGE[1]}], "
                f"got {self.retrieval.top_k}"
            )

    @classmethod
    def load(
        cls, path: str | Path | None = None, env: Mapping[str, str] | None = None
    ) -> "AppConfig":
        """Merge defaults < config file < environment, then validate."""
        env = os.environ if env is None else env
        raw: dict = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError(f"config file {path} must hold a JSON object")
        for env_suffix, key in _ENV_KEYS.items():
            value = env.get(ENV_PREFIX + env_suffix)
            if value is not None:
                raw[key] = value

        provider_raw = raw.pop("provider", {})
        if not isinstance(provider_raw, dict):
            raise ConfigError("config key 'provider' must be an object")
        if "max_concurrency" in provider_raw:
            raw["max_concurrency"] = provider_raw["max_concurrency"]

        retrieval_raw = raw.pop("retrieval", {})
        if not isinstance(retrieval_raw, dict):
            raise ConfigError("config key 'retrieval' must be an object")
        retrieval_kwargs = dict(retrieval_raw)
        for key in ("top_k", "seed_count", "temperature", "damping", "filter_enabled"):
            if key in raw:
                retrieval_kwargs[key] = raw.pop(key)
        retrieval_kwargs = {k: _coerce(k, v) for k, v in retrieval_kwargs.items()}

        known = {f for f in cls.__dataclass_fields__ if f != "retrieval"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: _coerce(k, v) for k, v in raw.items()}
        try:
            retrieval = RetrievalConfig(**retrieval_kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad retrieval config: {exc}") from exc
        config = cls(retrieval=retrieval, **kwargs)
        config.validate()
        return config

    def generation_provider(self):
        if self.offline_mode:
            return OfflineExtractiveProvider()
        if not (self.chat_url and self.chat_model):
            raise ConfigError("chat_url and chat_model are required when offline_mode=false")
        return RemoteChatProvider(self.chat_url, self.chat_model, api_key=self.chat_key)

    def embedding_provider(self):
        if self.offline_mode:
            return HashedBagProvider()
        if not (self.embed_url and self.embed_model):
            raise ConfigError("embed_url and embed_model are required when offline_mode=false")
        return RemoteEmbeddingProvider(self.embed_url, self.embed_model, api_key=self.embed_key)
