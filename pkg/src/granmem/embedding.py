"""Embedding providers, cosine similarity, and the on-disk embedding cache.

Vectors are stored as float32 and L2-normalized at ingestion time; cosine
is computed in float64 so downstream score comparisons are stable. The
cache file is a flat log of ``(content_hash: u64 LE, dim: u32 LE,
dim * f32 LE)`` records keyed by FNV-1a over the granularity tag plus
text, so identical content never hits the provider twice.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np

from .errors import CorruptSnapshot, DegenerateVector, DimensionError, ParameterError, ProviderError
from .textutil import fnv1a64, tokenize

_RECORD_HEADER = struct.Struct("<QI")

DEFAULT_HASHED_DIMENSION = 256


@dataclass(frozen=True, eq=False)
class Embedding:
    """A float32 vector with its precomputed L2 norm."""

    values: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 1:
            raise ParameterError(f"embedding must be 1-D, got shape {values.shape}")
        if values.size == 0:
            raise ParameterError("embedding must be non-empty")
        if not np.all(np.isfinite(values)):
            raise ParameterError("embedding contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "norm", float(np.linalg.norm(values.astype(np.float64))))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Embedding):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    def normalized(self) -> "Embedding":
        if self.norm == 0.0:
            raise DegenerateVector("cannot normalize a zero vector")
        return Embedding((self.values.astype(np.float64) / self.norm).astype(np.float32))


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity, accumulated in float64."""
    if a.dimension != b.dimension:
        raise DimensionError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    if a.norm == 0.0 or b.norm == 0.0:
        raise DegenerateVector("cosine undefined for zero-norm vector")
    dot = float(np.dot(a.values.astype(np.float64), b.values.astype(np.float64)))
    return dot / (a.norm * b.norm)


class EmbeddingProvider(Protocol):
    def embed_batch(self, texts: list[str]) -> list[Embedding]: ...

    def dimension(self) -> int: ...

    def fingerprint(self) -> str: ...


class HashedBagProvider:
    """Deterministic bag-of-tokens embedder for offline runs.

    Tokens are lowercased, split on non-alphanumerics, hashed with
    FNV-1a into ``dim`` buckets with term-frequency weights, then
    L2-normalized. A text with no tokens raises DegenerateVector.
    """

    def __init__(self, dimension: int = DEFAULT_HASHED_DIMENSION):
        if dimension < 1:
            raise ParameterError(f"dimension must be >= 1, got {dimension}")
        self._dimension = dimension
        self.calls = 0

    def dimension(self) -> int:
        return self._dimension

    def fingerprint(self) -> str:
        return f"hashed-bag:fnv1a64:d={self._dimension}"

    def embed_batch(self, texts: list[str]) -> list[Embedding]:
        self.calls += 1
        out = []
        for text in texts:
            vector = np.zeros(self._dimension, dtype=np.float64)
            for token in tokenize(text):
                vector[fnv1a64(token.encode("utf-8")) % self._dimension] += 1.0
            norm = np.linalg.norm(vector)
            if norm == 0.0:
                raise DegenerateVector(f"text has no tokens to embed: {text[:60]!r}")
            out.append(Embedding((vector / norm).astype(np.float32)))
        return out


def _default_embed_transport(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    import httpx

    response = httpx.post(url, json=payload, headers=headers, timeout=timeout)
    response.raise_for_status()
    return response.json()


class RemoteEmbeddingProvider:
    """OpenAI-style embeddings client.

    Sends ``{"model", "input": [...]}`` and reads ``data[i].embedding``,
    preserving input order. Returned vectors are L2-normalized. The
    dimension is learned from the first successful batch.
    """

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str | None = None,
        max_retries: int = 2,
        backoff: float = 0.5,
        timeout: float = 60.0,
        transport: Callable[[str, dict, dict, float], dict] | None = None,
    ):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self.calls = 0
        self._dimension: int | None = None
        self._transport = transport or _default_embed_transport

    def dimension(self) -> int:
        if self._dimension is None:
            raise ParameterError("embedding dimension unknown before the first batch")
        return self._dimension

    def fingerprint(self) -> str:
        return f"remote:{self.model}"

    def embed_batch(self, texts: list[str]) -> list[Embedding]:
        import time

        payload = {"model": self.model, "input": list(texts)}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        attempts = self.max_retries + 1
        for attempt in range(attempts):
            self.calls += 1
            try:
                data = self._transport(self.url, payload, headers, self.timeout)
                rows = data["data"]
                if len(rows) != len(texts):
                    raise ValueError(f"expected {len(texts)} embeddings, got {len(rows)}")
                out = [Embedding(np.asarray(row["embedding"], dtype=np.float32)).normalized() for row in rows]
            except Exception as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * (2 ** attempt))
                continue
            for emb in out:
                if self._dimension is None:
                    self._dimension = emb.dimension
                elif emb.dimension != self._dimension:
                    raise DimensionError(
                        f"provider returned dimension {emb.dimension}, expected {self._dimension}"
                    )
            return out
        raise ProviderError(
            f"embedding provider failed after {attempts} attempts: {last_error}",
            attempts=attempts,
        )


def content_key(granularity_tag: str, text: str) -> int:
    """Cache key: FNV-1a64 of the granularity tag concatenated with the text."""
    return fnv1a64((granularity_tag + text).encode("utf-8"))


class EmbeddingCache:
    """Content-addressed embedding store tied to one provider fingerprint.

    Reads are lock-free; writes take a lock so concurrent embedders
    cannot interleave partial updates.
    """

    def __init__(self, fingerprint: str):
        self.fingerprint = fingerprint
        self._entries: dict[int, Embedding] = {}
        self._write_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, granularity_tag: str, text: str) -> Embedding | None:
        return self._entries.get(content_key(granularity_tag, text))

    def get_by_key(self, key: int) -> Embedding | None:
        return self._entries.get(key)

    def put(self, granularity_tag: str, text: str, embedding: Embedding) -> None:
        with self._write_lock:
            self._entries[content_key(granularity_tag, text)] = embedding

    def put_by_key(self, key: int, embedding: Embedding) -> None:
        with self._write_lock:
            self._entries[key] = embedding

    def items(self) -> Iterable[tuple[int, Embedding]]:
        return self._entries.items()


def write_embedding_records(path: Path, records: Iterable[tuple[int, Embedding]]) -> int:
    """Write ``(content_hash, embedding)`` records to the flat cache format."""
    count = 0
    with open(path, "wb") as handle:
        for key, embedding in records:
            values = np.ascontiguousarray(embedding.values, dtype="<f4")
            handle.write(_RECORD_HEADER.pack(key, embedding.dimension))
            handle.write(values.tobytes())
            count += 1
    return count


def read_embedding_records(path: Path) -> dict[int, Embedding]:
    """Read a cache file back into a key -> Embedding map.

    A truncated trailing record raises CorruptSnapshot with the byte offset.
    """
    entries: dict[int, Embedding] = {}
    data = Path(path).read_bytes()
    offset = 0
    while offset < len(data):
        if offset + _RECORD_HEADER.size > len(data):
            raise CorruptSnapshot(f"{path}: truncated record header at byte {offset}")
        key, dim = _RECORD_HEADER.unpack_from(data, offset)
        offset += _RECORD_HEADER.size
        end = offset + 4 * dim
        if end > len(data):
            raise CorruptSnapshot(f"{path}: truncated embedding payload at byte {offset}")
        values = np.frombuffer(data[offset:end], dtype="<f4").copy()
        entries[key] = Embedding(values)
        offset = end
    return entries


def embed_memory_unit(unit, provider: EmbeddingProvider, cache: EmbeddingCache | None = None) -> dict:
    """Embed every granularity node of a unit, consulting the cache first.

    Returns ``{granularity: [Embedding, ...]}`` aligned with the unit's
    ``granularity_texts``. All cache misses go to the provider in a
    single batch; nothing is cached if that batch fails.
    """
    if cache is not None and cache.fingerprint != provider.fingerprint():
        raise ParameterError(
            f"cache fingerprint {cache.fingerprint!r} does not match provider {provider.fingerprint()!r}"
        )
    plan: list[tuple[str, int, str, str]] = []  # (granularity value, slot, tag, text)
    for granularity, texts in unit.granularity_texts.items():
        for slot, text in enumerate(texts):
            plan.append((granularity, slot, granularity.value, text))

    resolved: dict[tuple[str, int], Embedding] = {}
    misses: list[tuple[str, int, str, str]] = []
    for granularity, slot, tag, text in plan:
        hit = cache.get(tag, text) if cache is not None else None
        if hit is not None:
            resolved[(granularity, slot)] = hit
        else:
            misses.append((granularity, slot, tag, text))

    if misses:
        fresh = provider.embed_batch([text for _, _, _, text in misses])
        for (granularity, slot, tag, text), embedding in zip(misses, fresh):
            resolved[(granularity, slot)] = embedding
            if cache is not None:
                cache.put(tag, text, embedding)

    out: dict = {}
    for granularity, texts in unit.granularity_texts.items():
        out[granularity] = [resolved[(granularity, slot)] for slot in range(len(texts))]
    return out
