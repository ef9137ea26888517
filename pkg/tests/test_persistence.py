"""Snapshot save/load: round-trip fidelity and corruption handling."""

import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
from conftest import make_session
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from granmem.embedding import HashedBagProvider
from granmem.errors import CorruptSnapshot, FormatError, IoError, VersionError
from granmem.metadata import OfflineExtractiveProvider
from granmem.persistence import (
    EMBEDDINGS_FILE,
    GRAPH_FILE,
    MANIFEST_FILE,
    UNITS_FILE,
    cache_from_bank_dir,
    load_bank,
    load_manifest,
    save_bank,
)
from granmem.pipeline import build_bank, ingest_session
from granmem.retrieval import retrieve


def assert_banks_equal(original, restored):
    assert set(original.units) == set(restored.units)
    for memory_id, unit in original.units.items():
        other = restored.units[memory_id]
        assert other.insertion_seq == unit.insertion_seq
        assert other.session.session_id == unit.session.session_id
        assert other.session.date == unit.session.date
        assert [(t.index, t.user_text, t.assistant_text, t.timestamp) for t in other.session.turns] == [
            (t.index, t.user_text, t.assistant_text, t.timestamp) for t in unit.session.turns
        ]
        assert other.turn_texts == unit.turn_texts
        assert other.summary == unit.summary
        assert other.keywords == unit.keywords
        assert other.granularity_texts == unit.granularity_texts

    assert sorted(restored.graph.nodes()) == sorted(original.graph.nodes())
    original_edges = {frozenset((a, b)): w for a, b, w in original.graph.edges()}
    restored_edges = {frozenset((a, b)): w for a, b, w in restored.graph.edges()}
    assert restored_edges == original_edges  # weights must survive exactly

    assert set(restored.embedding_index) == set(original.embedding_index)
    for key, emb in original.embedding_index.items():
        assert np.array_equal(restored.embedding_index[key].values, emb.values)


class TestRoundTrip:
    def test_two_unit_bank_survives(self, two_unit_bank, tmp_path, embed_provider):
        manifest = save_bank(two_unit_bank, tmp_path / "bank", embed_provider.fingerprint())
        restored = load_bank(tmp_path / "bank")
        assert_banks_equal(two_unit_bank, restored)
        assert manifest["unit_count"] == 2
        assert manifest["memory_ids"] == ["mem-tea", "mem-kayak"]
        assert manifest["embedding_fingerprint"] == embed_provider.fingerprint()

    def test_retrieval_identical_after_reload(self, two_unit_bank, tmp_path, embed_provider):
        save_bank(two_unit_bank, tmp_path / "bank")
        restored = load_bank(tmp_path / "bank")
        before = retrieve("green tea pot", two_unit_bank, embedding_provider=embed_provider)
        after = retrieve("green tea pot", restored, embedding_provider=embed_provider)
        assert before.to_dict() == after.to_dict()

    def test_save_is_byte_deterministic(self, two_unit_bank, tmp_path):
        save_bank(two_unit_bank, tmp_path / "a")
        save_bank(two_unit_bank, tmp_path / "b")
        for name in (UNITS_FILE, GRAPH_FILE, EMBEDDINGS_FILE, MANIFEST_FILE):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_ingestion_resumes_after_reload(self, two_unit_bank, tmp_path):
        save_bank(two_unit_bank, tmp_path / "bank")
        restored = load_bank(tmp_path / "bank")
        unit, _ = ingest_session(
            restored,
            make_session("later", [("A brand new topic appears.", "Noted.")]),
            OfflineExtractiveProvider(),
            HashedBagProvider(),
        )
        assert unit.insertion_seq == 2
        assert len(restored) == 3

    @given(
        st.lists(
            st.lists(
                st.sampled_from([
                    "harp", "strings", "tuning", "pedal", "resin", "bow",
                    "granite", "summit", "ridge", "valley", "cairn", "scree",
                ]),
                min_size=3, max_size=6,
            ),
            min_size=1, max_size=4,
        )
    )
    @settings(max_examples=10, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    def test_generated_banks_round_trip(self, word_lists):
        sessions = [
            make_session(f"gen{i}", [(" ".join(words) + ".", "Understood.")])
            for i, words in enumerate(word_lists)
        ]
        bank = build_bank(sessions, OfflineExtractiveProvider(), HashedBagProvider())
        with tempfile.TemporaryDirectory() as scratch:
            directory = Path(scratch) / "bank"
            save_bank(bank, directory)
            assert_banks_equal(bank, load_bank(directory))


class TestSaveErrors:
    def test_unwritable_directory_raises_io_error(self, two_unit_bank, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("a regular file, not a directory")
        target = blocker / "bank"
        with pytest.raises(IoError, match="blocker"):
            save_bank(two_unit_bank, target)


class TestLoadErrors:
    @pytest.fixture
    def snapshot(self, two_unit_bank, tmp_path):
        directory = tmp_path / "bank"
        save_bank(two_unit_bank, directory)
        return directory

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(IoError):
            load_manifest(tmp_path)

    def test_version_mismatch(self, snapshot):
        manifest_path = snapshot / MANIFEST_FILE
        manifest = json.loads(manifest_path.read_text())
        manifest["format_version"] = 99
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(VersionError, match="99"):
            load_bank(snapshot)

    def test_unit_count_mismatch(self, snapshot):
        manifest_path = snapshot / MANIFEST_FILE
        manifest = json.loads(manifest_path.read_text())
        manifest["unit_count"] += 1
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(CorruptSnapshot, match="units"):
            load_bank(snapshot)

    def test_edge_count_mismatch(self, snapshot):
        manifest_path = snapshot / MANIFEST_FILE
        manifest = json.loads(manifest_path.read_text())
        manifest["edge_count"] += 3
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(CorruptSnapshot, match="edges"):
            load_bank(snapshot)

    def test_corrupt_graph_line_reports_number(self, snapshot):
        graph_path = snapshot / GRAPH_FILE
        lines = graph_path.read_text().splitlines()
        lines[1] = "{not valid json"
        graph_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError) as excinfo:
            load_bank(snapshot)
        assert f"{GRAPH_FILE}:2" in str(excinfo.value)

    def test_non_numeric_edge_weight(self, snapshot):
        graph_path = snapshot / GRAPH_FILE
        lines = graph_path.read_text().splitlines()
        for i, line in enumerate(lines):
            record = json.loads(line)
            if "a" in record:
                record["w"] = "heavy"
                lines[i] = json.dumps(record)
                break
        graph_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match="weight"):
            load_bank(snapshot)

    def test_graph_referencing_unknown_unit(self, snapshot):
        graph_path = snapshot / GRAPH_FILE
        ghost = json.dumps({"unit": "mem-ghost", "nodes": [["session", 0]]})
        graph_path.write_text(ghost + "\n" + graph_path.read_text())
        with pytest.raises(CorruptSnapshot, match="mem-ghost"):
            load_bank(snapshot)

    def test_duplicate_unit_record(self, snapshot):
        units_path = snapshot / UNITS_FILE
        lines = units_path.read_text().splitlines()
        units_path.write_text("\n".join(lines + [lines[0]]) + "\n")
        with pytest.raises(CorruptSnapshot, match="duplicate"):
            load_bank(snapshot)

    def test_truncated_embeddings(self, snapshot):
        emb_path = snapshot / EMBEDDINGS_FILE
        emb_path.write_bytes(emb_path.read_bytes()[:-5])
        with pytest.raises(CorruptSnapshot):
            load_bank(snapshot)

    def test_missing_embedding_for_node(self, snapshot):
        emb_path = snapshot / EMBEDDINGS_FILE
        manifest_path = snapshot / MANIFEST_FILE
        # Drop the last full record and fix up the manifest count so only
        # the per-node existence check can catch the hole.
        data = emb_path.read_bytes()
        record_size = 12 + 4 * 256
        emb_path.write_bytes(data[:-record_size])
        manifest = json.loads(manifest_path.read_text())
        manifest["embedding_count"] -= 1
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(CorruptSnapshot, match="missing embedding"):
            load_bank(snapshot)


class TestCachePriming:
    def test_cache_primed_from_snapshot(self, two_unit_bank, tmp_path, embed_provider):
        directory = tmp_path / "bank"
        save_bank(two_unit_bank, directory)
        cache = cache_from_bank_dir(directory, embed_provider.fingerprint())
        assert len(cache) == len(set(two_unit_bank.embedding_index))
        for node, emb in two_unit_bank.embedding_index.items():
            text = two_unit_bank.text_for_node(node)
            hit = cache.get(node[1].value, text)
            assert hit is not None
            assert np.array_equal(hit.values, emb.values)

    def test_missing_snapshot_gives_empty_cache(self, tmp_path):
        cache = cache_from_bank_dir(tmp_path, "any")
        assert len(cache) == 0
