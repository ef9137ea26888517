"""Snapshot save/load for memory banks.

Layout inside a bank directory:

* ``units.jsonl``    one memory unit per line, insertion order
* ``graph.jsonl``    per-unit node manifests, then one edge per line
* ``embeddings.bin`` flat binary records keyed by content hash
* ``manifest.json``  counts, fingerprint, config hash; written last

Every file is committed by write-temp-then-rename, and the manifest is
the commit point: a crash mid-save leaves the previous snapshot intact.
All JSON is UTF-8 without BOM; floats round-trip exactly through repr.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .association import AssociationGraph
from .embedding import EmbeddingCache, content_key, read_embedding_records, write_embedding_records
from .errors import CorruptSnapshot, FormatError, IoError, VersionError
from .model import DialogueTurn, Granularity, MemoryBank, MemoryUnit, NodeKey, Session

FORMAT_VERSION = 1

MANIFEST_FILE = "manifest.json"
UNITS_FILE = "units.jsonl"
GRAPH_FILE = "graph.jsonl"
EMBEDDINGS_FILE = "embeddings.bin"


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise IoError(f"cannot write {path}: {exc}") from exc


def _node_to_json(node: NodeKey) -> list:
    return [node[0], node[1].value, node[2]]


def _node_from_json(raw, location: str) -> NodeKey:
    if not (isinstance(raw, list) and len(raw) == 3):
        raise FormatError(f"node key must be a 3-element list, got {raw!r}", location)
    memory_id, granularity, sub_index = raw
    try:
        return (str(memory_id), Granularity(granularity), int(sub_index))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad node key {raw!r}: {exc}", location) from exc


def _unit_to_json(unit: MemoryUnit) -> dict:
    return {
        "memory_id": unit.memory_id,
        "insertion_seq": unit.insertion_seq,
        "session": {
            "session_id": unit.session.session_id,
            "date": unit.session.date,
            "turns": [
                {
                    "index": t.index,
                    "user": t.user_text,
                    "assistant": t.assistant_text,
                    "timestamp": t.timestamp,
                }
                for t in unit.session.turns
            ],
        },
        "turn_texts": unit.turn_texts,
        "summary": unit.summary,
        "keywords": unit.keywords,
        "granularity_texts": {g.value: texts for g, texts in unit.granularity_texts.items()},
    }


def _unit_from_json(record: dict, location: str) -> MemoryUnit:
    try:
        session = Session(
            session_id=record["session"]["session_id"],
            turns=[
                DialogueTurn(
                    index=t["index"],
                    user_text=t["user"],
                    assistant_text=t.get("assistant", ""),
                    timestamp=t.get("timestamp"),
                )
                for t in record["session"]["turns"]
            ],
            date=record["session"].get("date"),
        )
        return MemoryUnit(
            memory_id=record["memory_id"],
            session=session,
            turn_texts=list(record["turn_texts"]),
            summary=record["summary"],
            keywords=list(record["keywords"]),
            granularity_texts={
                Granularity(g): list(texts)
                for g, texts in record["granularity_texts"].items()
            },
            insertion_seq=int(record["insertion_seq"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad unit record: {exc!r}", location) from exc


def save_bank(
    bank: MemoryBank,
    directory: str | Path,
    embedding_fingerprint: str = "",
    config_hash: str | None = None,
) -> dict:
    """Write a complete snapshot; returns the manifest dict."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create bank directory {directory}: {exc}") from exc

    units = bank.units_in_order()
    units_text = "".join(
        json.dumps(_unit_to_json(u), ensure_ascii=False) + "\n" for u in units
    )

    graph_lines = []
    for unit in units:
        graph_lines.append(
            json.dumps(
                {
                    "unit": unit.memory_id,
                    "nodes": [[n[1].value, n[2]] for n in bank.node_keys_for(unit)],
                },
                ensure_ascii=False,
            )
        )
    for a, b, weight in bank.graph.edges():
        graph_lines.append(
            json.dumps(
                {"a": _node_to_json(a), "b": _node_to_json(b), "w": weight},
                ensure_ascii=False,
            )
        )
    graph_text = "".join(line + "\n" for line in graph_lines)

    # Embeddings in first-need order, deduplicated by content hash.
    records: list[tuple[int, object]] = []
    written: set[int] = set()
    for unit in units:
        for node in bank.node_keys_for(unit):
            key = content_key(node[1].value, bank.text_for_node(node))
            if key not in written:
                written.add(key)
                records.append((key, bank.embedding_index[node]))

    manifest = {
        "format_version": FORMAT_VERSION,
        "unit_count": len(units),
        "node_count": bank.graph.node_count(),
        "edge_count": bank.graph.edge_count(),
        "embedding_count": len(records),
        "embedding_fingerprint": embedding_fingerprint,
        "config_hash": config_hash,
        "memory_ids": [u.memory_id for u in units],
    }

    _atomic_write_text(directory / UNITS_FILE, units_text)
    _atomic_write_text(directory / GRAPH_FILE, graph_text)
    embeddings_tmp = directory / (EMBEDDINGS_FILE + f".tmp-{os.getpid()}")
    try:
        write_embedding_records(embeddings_tmp, records)
        os.replace(embeddings_tmp, directory / EMBEDDINGS_FILE)
    except OSError as exc:
        embeddings_tmp.unlink(missing_ok=True)
        raise IoError(f"cannot write {directory / EMBEDDINGS_FILE}: {exc}") from exc
    _atomic_write_text(
        directory / MANIFEST_FILE, json.dumps(manifest, ensure_ascii=False, indent=2) + "\n"
    )
    return manifest


def load_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST_FILE
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        manifest = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in manifest: {exc}", str(path)) from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(
            f"snapshot format_version {version!r} not supported (expected {FORMAT_VERSION})"
        )
    return manifest


def _read_jsonl(path: Path) -> list[tuple[dict, str]]:
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        location = f"{path}:{lineno}"
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", location) from exc
        if not isinstance(record, dict):
            raise FormatError(f"expected an object, got {type(record).__name__}", location)
        records.append((record, location))
    return records


def load_bank(directory: str | Path) -> MemoryBank:
    """Reconstruct a bank from a snapshot directory.

    Counts are cross-checked against the manifest and all MemoryBank
    invariants re-validated; any inconsistency raises CorruptSnapshot
    rather than returning a partial bank.
    """
    directory = Path(directory)
    manifest = load_manifest(directory)

    units: dict[str, MemoryUnit] = {}
    for record, location in _read_jsonl(directory / UNITS_FILE):
        unit = _unit_from_json(record, location)
        if unit.memory_id in units:
            raise CorruptSnapshot(f"duplicate memory_id {unit.memory_id!r} at {location}")
        units[unit.memory_id] = unit

    if len(units) != manifest["unit_count"]:
        raise CorruptSnapshot(
            f"manifest declares {manifest['unit_count']} units, found {len(units)}"
        )

    graph = AssociationGraph()
    node_manifests: dict[str, list[NodeKey]] = {}
    edge_count = 0
    for record, location in _read_jsonl(directory / GRAPH_FILE):
        if "unit" in record:
            memory_id = record["unit"]
            if memory_id not in units:
                raise CorruptSnapshot(f"graph references unknown unit {memory_id!r} at {location}")
            nodes = [
                _node_from_json([memory_id, g, s], location) for g, s in record.get("nodes", [])
            ]
            node_manifests[memory_id] = nodes
            for node in nodes:
                graph.add_node(node)
        elif "a" in record and "b" in record:
            a = _node_from_json(record["a"], location)
            b = _node_from_json(record["b"], location)
            weight = record.get("w")
            if not isinstance(weight, (int, float)):
                raise FormatError(f"edge weight must be a number, got {weight!r}", location)
            try:
                graph.add_edge(a, b, float(weight))
            except Exception as exc:
                raise CorruptSnapshot(f"bad edge at {location}: {exc}") from exc
            edge_count += 1
        else:
            raise FormatError("graph record is neither a node manifest nor an edge", location)

    if graph.node_count() != manifest["node_count"]:
        raise CorruptSnapshot(
            f"manifest declares {manifest['node_count']} nodes, found {graph.node_count()}"
        )
    if edge_count != manifest["edge_count"]:
        raise CorruptSnapshot(
            f"manifest declares {manifest['edge_count']} edges, found {edge_count}"
        )

    bank = MemoryBank(units=units, graph=graph)
    for unit in bank.units_in_order():
        expected = list(bank.node_keys_for(unit))
        if node_manifests.get(unit.memory_id) != expected:
            raise CorruptSnapshot(
                f"node manifest for {unit.memory_id!r} does not match unit structure"
            )

    embeddings = read_embedding_records(directory / EMBEDDINGS_FILE)
    if len(embeddings) != manifest["embedding_count"]:
        raise CorruptSnapshot(
            f"manifest declares {manifest['embedding_count']} embeddings, found {len(embeddings)}"
        )
    for unit in bank.units_in_order():
        for node in bank.node_keys_for(unit):
            key = content_key(node[1].value, bank.text_for_node(node))
            embedding = embeddings.get(key)
            if embedding is None:
                raise CorruptSnapshot(f"missing embedding for node {node}")
            bank.embedding_index[node] = embedding

    try:
        bank.validate()
    except ValueError as exc:
        raise CorruptSnapshot(str(exc)) from exc
    return bank


def cache_from_bank_dir(directory: str | Path, fingerprint: str) -> EmbeddingCache:
    """Prime an embedding cache from a snapshot's binary records, if present."""
    cache = EmbeddingCache(fingerprint)
    path = Path(directory) / EMBEDDINGS_FILE
    if path.exists():
        for key, embedding in read_embedding_records(path).items():
            cache.put_by_key(key, embedding)
    return cache
