"""Dataset loaders, ranking metrics, and the evaluation runner."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from granmem.embedding import cosine
from granmem.errors import FormatError, ParameterError
from granmem.evaluation import (
    AblationFlags,
    load_locomo,
    load_longmemeval,
    ndcg_at_k,
    recall_at_k,
    run_eval,
)
from granmem.model import Granularity, render_session_text


class TestRecallAtK:
    def test_full_hit(self):
        assert recall_at_k(["a", "b", "c"], {"a", "c"}, 3) == 1.0

    def test_partial_hit(self):
        assert recall_at_k(["g1", "d", "g2"], {"g1", "g2", "g3"}, 3) == pytest.approx(2 / 3)

    def test_cutoff_excludes_later_hits(self):
        assert recall_at_k(["d", "g"], {"g"}, 1) == 0.0

    def test_k_validation(self):
        with pytest.raises(ParameterError):
            recall_at_k(["a"], {"a"}, 0)

    def test_empty_gold_rejected(self):
        with pytest.raises(ParameterError):
            recall_at_k(["a"], set(), 3)

    @given(
        st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=8, unique=True),
        st.sets(st.sampled_from("abcdefgh"), min_size=1, max_size=4),
    )
    @settings(max_examples=80, deadline=None)
    def test_monotone_in_k(self, retrieved, gold):
        values = [recall_at_k(retrieved, gold, k) for k in range(1, len(retrieved) + 2)]
        assert values == sorted(values)
        assert all(0.0 <= v <= 1.0 for v in values)


class TestNdcgAtK:
    def test_perfect_ranking(self):
        assert ndcg_at_k(["g1", "g2", "d"], {"g1", "g2"}, 3) == pytest.approx(1.0)

    def test_single_gold_at_rank_two(self):
        # DCG = 1/log2(3); IDCG = 1
        assert ndcg_at_k(["d", "g", "e"], {"g"}, 3) == pytest.approx(0.6309, abs=1e-4)

    def test_two_gold_with_gap(self):
        # DCG = 1 + 1/2; IDCG = 1 + 1/log2(3)
        expected = 1.5 / (1.0 + 0.6309297535714574)
        assert ndcg_at_k(["g1", "d", "g2"], {"g1", "g2"}, 3) == pytest.approx(expected, abs=1e-9)

    def test_no_hits_is_zero(self):
        assert ndcg_at_k(["d1", "d2"], {"g"}, 2) == 0.0

    def test_validation(self):
        with pytest.raises(ParameterError):
            ndcg_at_k(["a"], {"a"}, 0)
        with pytest.raises(ParameterError):
            ndcg_at_k(["a"], set(), 1)

    @given(
        st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=8, unique=True),
        st.sets(st.sampled_from("abcdefgh"), min_size=1, max_size=4),
        st.integers(1, 10),
    )
    @settings(max_examples=80, deadline=None)
    def test_bounded_unit_interval(self, retrieved, gold, k):
        assert 0.0 <= ndcg_at_k(retrieved, gold, k) <= 1.0 + 1e-12


class TestLongmemevalLoader:
    def test_loads_sample(self, data_dir):
        sessions, queries = load_longmemeval(data_dir / "longmemeval_sample.json")
        assert set(sessions) == {"lme-1", "lme-2"}
        assert [s.session_id for s in sessions["lme-1"]] == ["lme-1-paint", "lme-1-bike"]
        assert len(sessions["lme-2"]) == 3
        assert len(queries) == 2

    def test_dates_and_metadata_plumbed(self, data_dir):
        sessions, queries = load_longmemeval(data_dir / "longmemeval_sample.json")
        assert sessions["lme-1"][0].date == "2025-03-02"
        assert sessions["lme-2"][0].date is None
        by_id = {q.conversation_id: q for q in queries}
        assert by_id["lme-1"].question_date == "2025-04-10"
        assert by_id["lme-1"].query_type == "single-session-user"
        assert by_id["lme-1"].gold_session_ids == {"lme-1-paint"}

    def test_messages_paired_into_turns(self, data_dir):
        sessions, _ = load_longmemeval(data_dir / "longmemeval_sample.json")
        hike = sessions["lme-2"][0]
        assert len(hike.turns) == 2
        assert hike.turns[0].user_text.startswith("We hiked the Cedar Ridge")
        assert hike.turns[0].assistant_text.startswith("Cedar Ridge is lovely")

    def test_empty_array_rejected(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("[]")
        with pytest.raises(FormatError):
            load_longmemeval(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('[\n{"question_id": }\n]')
        with pytest.raises(FormatError) as excinfo:
            load_longmemeval(path)
        assert ":2" in str(excinfo.value)

    def test_missing_field_names_record(self, tmp_path):
        record = {
            "question_id": "q1",
            "haystack_session_ids": [],
            "haystack_sessions": [],
            "answer_session_ids": ["x"],
        }
        path = tmp_path / "missing.json"
        path.write_text(json.dumps([record]))
        with pytest.raises(FormatError) as excinfo:
            load_longmemeval(path)
        message = str(excinfo.value)
        assert "question" in message
        assert "record 0" in message

    def test_gold_outside_haystack_rejected(self, tmp_path):
        record = {
            "question_id": "q1",
            "question": "where?",
            "haystack_session_ids": ["s1"],
            "haystack_sessions": [[{"role": "user", "content": "hi there"}]],
            "answer_session_ids": ["ghost"],
        }
        path = tmp_path / "gold.json"
        path.write_text(json.dumps([record]))
        with pytest.raises(FormatError, match="ghost"):
            load_longmemeval(path)

    def test_length_mismatch_rejected(self, tmp_path):
        record = {
            "question_id": "q1",
            "question": "where?",
            "haystack_session_ids": ["s1", "s2"],
            "haystack_sessions": [[{"role": "user", "content": "hi"}]],
            "answer_session_ids": ["s1"],
        }
        path = tmp_path / "mismatch.json"
        path.write_text(json.dumps([record]))
        with pytest.raises(FormatError, match="haystack_session_ids"):
            load_longmemeval(path)


class TestLocomoLoader:
    def test_loads_sample(self, data_dir):
        sessions, queries = load_locomo(data_dir / "locomo_sample.json")
        assert set(sessions) == {"loco-1"}
        assert [s.session_id for s in sessions["loco-1"]] == ["loco-1-s1", "loco-1-s2"]
        assert sessions["loco-1"][0].date == "2024-11-03"
        assert len(queries) == 2
        assert queries[0].query_type == "single-hop"
        assert queries[1].gold_session_ids == {"loco-1-s2"}

    def test_speaker_lines_paired(self, data_dir):
        sessions, _ = load_locomo(data_dir / "locomo_sample.json")
        first = sessions["loco-1"][0]
        assert len(first.turns) == 2
        assert first.turns[0].user_text.startswith("Ana: I adopted a grey tabby")
        assert first.turns[0].assistant_text.startswith("Ben: Clover is adorable")

    def test_unknown_evidence_rejected(self, tmp_path):
        record = {
            "sample_id": "s",
            "conversation": {
                "speaker_a": "A",
                "speaker_b": "B",
                "sessions": [{
                    "session_id": "s1",
                    "dialogs": [{"speaker": "A", "text": "hello friend"}],
                }],
            },
            "qa": [{"question": "what?", "evidence_session_ids": ["nope"]}],
        }
        path = tmp_path / "loco.json"
        path.write_text(json.dumps([record]))
        with pytest.raises(FormatError, match="nope"):
            load_locomo(path)


class TestAblationFlags:
    def test_link_mode_mapping(self):
        assert AblationFlags().link_mode() == "gmm"
        assert AblationFlags(no_gmm=True).link_mode() == "threshold"
        assert AblationFlags(no_ma=True).link_mode() == "intra-only"
        # no_ma takes precedence: no cross edges at all
        assert AblationFlags(no_ma=True, no_gmm=True).link_mode() == "intra-only"

    def test_single_granularity_accepts_string(self):
        flags = AblationFlags(single_granularity="turn")
        assert flags.single_granularity is Granularity.TURN
        assert flags.to_dict()["single_granularity"] == "turn"

    def test_to_dict_defaults(self):
        assert AblationFlags().to_dict() == {
            "no_gmm": False,
            "no_ppr": False,
            "no_ma": False,
            "no_router": False,
            "single_granularity": None,
        }


class TestRunEval:
    def test_full_pipeline_on_sample(self, data_dir, gen_provider, embed_provider):
        dataset = load_longmemeval(data_dir / "longmemeval_sample.json")
        report = run_eval(
            dataset,
            generation_provider=gen_provider,
            embedding_provider=embed_provider,
        )
        assert report.k_list == (3, 5, 10)
        assert report.mean_recall[3] == 1.0
        assert report.mean_ndcg[3] == 1.0
        assert len(report.per_query) == 2
        assert report.per_query[0].conversation_id == "lme-1"
        assert report.per_query[0].retrieved_session_ids[0] == "lme-1-paint"

    def test_locomo_sample(self, data_dir, gen_provider, embed_provider):
        dataset = load_locomo(data_dir / "locomo_sample.json")
        report = run_eval(
            dataset,
            generation_provider=gen_provider,
            embedding_provider=embed_provider,
        )
        assert report.mean_recall[3] == 1.0
        assert [r.query_index for r in report.per_query] == [0, 1]

    def test_fingerprint_is_stable_and_sensitive(self, data_dir, gen_provider, embed_provider):
        dataset = load_longmemeval(data_dir / "longmemeval_sample.json")
        kwargs = dict(generation_provider=gen_provider, embedding_provider=embed_provider)
        a = run_eval(dataset, **kwargs)
        b = run_eval(dataset, **kwargs)
        assert a.config_fingerprint == b.config_fingerprint
        assert a.to_dict() == b.to_dict()
        ablated = run_eval(dataset, ablations=AblationFlags(no_ppr=True), **kwargs)
        assert ablated.config_fingerprint != a.config_fingerprint

    def test_parallel_matches_serial(self, data_dir, gen_provider, embed_provider):
        dataset = load_longmemeval(data_dir / "longmemeval_sample.json")
        kwargs = dict(generation_provider=gen_provider, embedding_provider=embed_provider)
        serial = run_eval(dataset, **kwargs)
        parallel = run_eval(dataset, max_workers=4, **kwargs)
        assert serial.to_dict() == parallel.to_dict()

    def test_single_granularity_matches_bare_cosine_ranker(
        self, data_dir, gen_provider, embed_provider
    ):
        # Independent oracle: rank sessions by cosine between the query and
        # the rendered session text, nothing else.
        dataset = load_longmemeval(data_dir / "longmemeval_sample.json")
        report = run_eval(
            dataset,
            ablations=AblationFlags(single_granularity=Granularity.SESSION),
            generation_provider=gen_provider,
            embedding_provider=embed_provider,
        )
        sessions_by_conversation, queries = dataset
        for record in report.per_query:
            query = next(
                q for q in queries if q.conversation_id == record.conversation_id
            )
            sessions = sessions_by_conversation[record.conversation_id]
            query_emb = embed_provider.embed_batch([query.query_text])[0]
            sims = []
            for position, session in enumerate(sessions):
                emb = embed_provider.embed_batch([render_session_text(session)])[0]
                sims.append((-cosine(query_emb, emb), position, session.session_id))
            oracle = [sid for _, _, sid in sorted(sims)]
            assert record.retrieved_session_ids == oracle

    def test_requires_providers(self, data_dir):
        dataset = load_longmemeval(data_dir / "longmemeval_sample.json")
        with pytest.raises(ParameterError):
            run_eval(dataset)

    def test_k_list_validated(self, data_dir, gen_provider, embed_provider):
        dataset = load_longmemeval(data_dir / "longmemeval_sample.json")
        with pytest.raises(ParameterError):
            run_eval(
                dataset, k_list=(0,),
                generation_provider=gen_provider, embedding_provider=embed_provider,
            )

    def test_empty_query_list_rejected(self, gen_provider, embed_provider):
        with pytest.raises(ParameterError):
            run_eval(
                ({}, []),
                generation_provider=gen_provider, embedding_provider=embed_provider,
            )

    def test_unknown_conversation_reference_rejected(
        self, data_dir, gen_provider, embed_provider
    ):
        sessions, queries = load_longmemeval(data_dir / "longmemeval_sample.json")
        orphaned = dict(sessions)
        del orphaned["lme-2"]
        with pytest.raises(ParameterError, match="lme-2"):
            run_eval(
                (orphaned, queries),
                generation_provider=gen_provider, embedding_provider=embed_provider,
            )
