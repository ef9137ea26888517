"""Benchmark loaders, retrieval metrics, and the evaluation runner.

Supports two dataset layouts: LongMemEval-style records (one question
plus its haystack of sessions per record) and LoCoMo-style records (one
two-speaker conversation with a QA list). Each conversation becomes its
own memory bank; queries are scoped to their conversation.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .embedding import EmbeddingProvider
from .errors import FormatError, IoError, ParameterError
from .metadata import GenerationProvider
from .model import DialogueTurn, Granularity, Session
from .association import LINK_MODE_GMM, LINK_MODE_INTRA_ONLY, LINK_MODE_THRESHOLD
from .pipeline import build_bank
from .retrieval import RetrievalConfig, RouterWeights, retrieve

DEFAULT_K_LIST = (3, 5, 10)


@dataclass
class BenchmarkQuery:
    query_text: str
    gold_session_ids: set[str]
    conversation_id: str
    query_index: int
    question_date: str | None = None
    query_type: str | None = None


@dataclass
class AblationFlags:
    """Switches mirroring the structural ablations of the full pipeline."""

    no_gmm: bool = False
    no_ppr: bool = False
    no_ma: bool = False
    no_router: bool = False
    single_granularity: Granularity | None = None

    def __post_init__(self):
        if self.single_granularity is not None:
            self.single_granularity = Granularity(self.single_granularity)

    def link_mode(self) -> str:
        if self.no_ma:
            return LINK_MODE_INTRA_ONLY
        if self.no_gmm:
            return LINK_MODE_THRESHOLD
        return LINK_MODE_GMM

    def to_dict(self) -> dict:
        return {
            "no_gmm": self.no_gmm,
            "no_ppr": self.no_ppr,
            "no_ma": self.no_ma,
            "no_router": self.no_router,
            "single_granularity": (
                self.single_granularity.value if self.single_granularity else None
            ),
        }


@dataclass
class QueryRecord:
    conversation_id: str
    query_index: int
    query_text: str
    query_type: str | None
    gold_session_ids: list[str]
    retrieved_session_ids: list[str]
    recall: dict[int, float]
    ndcg: dict[int, float]


@dataclass
class EvalReport:
    k_list: tuple[int, ...]
    mean_recall: dict[int, float]
    mean_ndcg: dict[int, float]
    per_query: list[QueryRecord]
    config_fingerprint: str

    def to_dict(self) -> dict:
        return {
            "k_list": list(self.k_list),
            "mean_recall": {str(k): v for k, v in self.mean_recall.items()},
            "mean_ndcg": {str(k): v for k, v in self.mean_ndcg.items()},
            "config_fingerprint": self.config_fingerprint,
            "query_count": len(self.per_query),
            "per_query": [
                {
                    "conversation_id": r.conversation_id,
                    "query_index": r.query_index,
                    "query_text": r.query_text,
                    "query_type": r.query_type,
                    "gold_session_ids": r.gold_session_ids,
                    "retrieved_session_ids": r.retrieved_session_ids,
                    "recall": {str(k): v for k, v in r.recall.items()},
                    "ndcg": {str(k): v for k, v in r.ndcg.items()},
                }
                for r in self.per_query
            ],
        }


def recall_at_k(retrieved_ids: Sequence[str], gold: set[str], k: int) -> float:
    """Fraction of gold ids present in the top-k of the ranking."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if not gold:
        raise ParameterError("gold set is empty")
    hits = sum(1 for rid in retrieved_ids[:k] if rid in gold)
    return hits / len(gold)


def ndcg_at_k(retrieved_ids: Sequence[str], gold: set[str], k: int) -> float:
    """Binary-relevance NDCG with the ideal DCG over min(|gold|, k) hits."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if not gold:
        raise ParameterError("gold set is empty")
    dcg = sum(
        1.0 / math.log2(rank + 1)
        for rank, rid in enumerate(retrieved_ids[:k], start=1)
        if rid in gold
    )
    idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(len(gold), k) + 1))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def _load_json_file(path: str | Path):
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}") from exc


def _require(record: dict, field_name: str, location: str):
    if field_name not in record:
        raise FormatError(f"missing required field {field_name!r}", location)
    return record[field_name]


def _turns_from_messages(messages, location: str) -> list[DialogueTurn]:
    """Pair alternating role messages into turns; user opens each turn."""
    turns: list[DialogueTurn] = []
    pending_user: str | None = None
    for i, message in enumerate(messages):
        if not isinstance(message, dict):
            raise FormatError(f"message {i} is not an object", location)
        role = message.get("role")
        content = message.get("content")
        if role not in ("user", "assistant") or not isinstance(content, str):
            raise FormatError(f"message {i} needs role user|assistant and text content", location)
        if role == "user":
            if pending_user is not None:
                turns.append(DialogueTurn(index=len(turns), user_text=pending_user))
            pending_user = content
        else:
            if pending_user is None:
                raise FormatError(f"message {i}: assistant reply precedes any user message", location)
            turns.append(
                DialogueTurn(index=len(turns), user_text=pending_user, assistant_text=content)
            )
            pending_user = None
    if pending_user is not None:
        turns.append(DialogueTurn(index=len(turns), user_text=pending_user))
    if not turns:
        raise FormatError("session has no turns", location)
    return turns


def load_longmemeval(path: str | Path) -> tuple[dict[str, list[Session]], list[BenchmarkQuery]]:
    """One record per question, each carrying its haystack of sessions."""
    data = _load_json_file(path)
    if not isinstance(data, list) or not data:
        raise FormatError("expected a non-empty JSON array of records", str(path))
    sessions_by_conversation: dict[str, list[Session]] = {}
    queries: list[BenchmarkQuery] = []
    for i, record in enumerate(data):
        location = f"{path}: record {i}"
        if not isinstance(record, dict):
            raise FormatError("record is not an object", location)
        question_id = str(_require(record, "question_id", location))
        question = _require(record, "question", location)
        session_ids = _require(record, "haystack_session_ids", location)
        session_bodies = _require(record, "haystack_sessions", location)
        gold_ids = _require(record, "answer_session_ids", location)
        if not isinstance(gold_ids, list) or not gold_ids:
            raise FormatError("answer_session_ids must be a non-empty list", location)
        if len(session_ids) != len(session_bodies):
            raise FormatError(
                f"{len(session_ids)} haystack_session_ids but {len(session_bodies)} haystack_sessions",
                location,
            )
        dates = record.get("haystack_dates")
        if dates is not None and len(dates) != len(session_ids):
            raise FormatError("haystack_dates length does not match haystack_session_ids", location)
        unknown = set(gold_ids) - set(map(str, session_ids))
        if unknown:
            raise FormatError(
                f"answer_session_ids not in haystack_session_ids: {sorted(unknown)}", location
            )
        sessions = [
            Session(
                session_id=str(sid),
                turns=_turns_from_messages(body, f"{location}, session {sid}"),
                date=(str(dates[j]) if dates else None),
            )
            for j, (sid, body) in enumerate(zip(session_ids, session_bodies))
        ]
        sessions_by_conversation[question_id] = sessions
        queries.append(
            BenchmarkQuery(
                query_text=question,
                gold_session_ids=set(map(str, gold_ids)),
                conversation_id=question_id,
                query_index=0,
                question_date=record.get("question_date"),
                query_type=record.get("question_type"),
            )
        )
    return sessions_by_conversation, queries


def _turns_from_dialogs(dialogs, speaker_a: str, location: str) -> list[DialogueTurn]:
    """Pair two-speaker dialog lines; the second speaker fills assistant_text."""
    turns: list[DialogueTurn] = []
    pending: str | None = None
    for i, dialog in enumerate(dialogs):
        if not isinstance(dialog, dict) or "speaker" not in dialog or "text" not in dialog:
            raise FormatError(f"dialog {i} needs speaker and text", location)
        line = f"{dialog['speaker']}: {dialog['text']}"
        if dialog["speaker"] == speaker_a:
            if pending is not None:
                turns.append(DialogueTurn(index=len(turns), user_text=pending))
            pending = line
        else:
            if pending is None:
                turns.append(DialogueTurn(index=len(turns), user_text=line))
            else:
                turns.append(DialogueTurn(index=len(turns), user_text=pending, assistant_text=line))
                pending = None
    if pending is not None:
        turns.append(DialogueTurn(index=len(turns), user_text=pending))
    if not turns:
        raise FormatError("session has no dialogs", location)
    return turns


def load_locomo(path: str | Path) -> tuple[dict[str, list[Session]], list[BenchmarkQuery]]:
    """Two-speaker conversations with a shared QA list per record."""
    data = _load_json_file(path)
    if not isinstance(data, list) or not data:
        raise FormatError("expected a non-empty JSON array of records", str(path))
    sessions_by_conversation: dict[str, list[Session]] = {}
    queries: list[BenchmarkQuery] = []
    for i, record in enumerate(data):
        location = f"{path}: record {i}"
        if not isinstance(record, dict):
            raise FormatError("record is not an object", location)
        sample_id = str(_require(record, "sample_id", location))
        conversation = _require(record, "conversation", location)
        speaker_a = _require(conversation, "speaker_a", location)
        raw_sessions = _require(conversation, "sessions", location)
        if not isinstance(raw_sessions, list) or not raw_sessions:
            raise FormatError("conversation.sessions must be a non-empty list", location)
        sessions = []
        for raw in raw_sessions:
            session_id = str(_require(raw, "session_id", location))
            sessions.append(
                Session(
                    session_id=session_id,
                    turns=_turns_from_dialogs(
                        _require(raw, "dialogs", f"{location}, session {session_id}"),
                        speaker_a,
                        f"{location}, session {session_id}",
                    ),
                    date=raw.get("date"),
                )
            )
        known_ids = {s.session_id for s in sessions}
        sessions_by_conversation[sample_id] = sessions
        for qi, qa in enumerate(_require(record, "qa", location)):
            qa_location = f"{location}, qa {qi}"
            gold = _require(qa, "evidence_session_ids", qa_location)
            if not isinstance(gold, list) or not gold:
                raise FormatError("evidence_session_ids must be a non-empty list", qa_location)
            unknown = set(map(str, gold)) - known_ids
            if unknown:
                raise FormatError(
                    f"evidence_session_ids not in conversation sessions: {sorted(unknown)}",
                    qa_location,
                )
            queries.append(
                BenchmarkQuery(
                    query_text=_require(qa, "question", qa_location),
                    gold_session_ids=set(map(str, gold)),
                    conversation_id=sample_id,
                    query_index=qi,
                    question_date=qa.get("question_date"),
                    query_type=qa.get("category"),
                )
            )
    return sessions_by_conversation, queries


def _eval_weights(ablations: AblationFlags, temperature: float) -> RouterWeights | None:
    if ablations.single_granularity is not None:
        return RouterWeights.one_hot(ablations.single_granularity, temperature)
    if ablations.no_router:
        return RouterWeights.uniform(temperature)
    return None


def _config_fingerprint(
    retrieval_config: RetrievalConfig,
    ablations: AblationFlags,
    k_list: Sequence[int],
    embedding_fingerprint: str,
) -> str:
    payload = {
        "retrieval": {
            "top_k": retrieval_config.top_k,
            "seed_count": retrieval_config.seed_count,
            "damping": retrieval_config.damping,
            "ppr_tol": retrieval_config.ppr_tol,
            "ppr_max_iter": retrieval_config.ppr_max_iter,
            "temperature": retrieval_config.temperature,
            "entropy_floor": retrieval_config.entropy_floor,
        },
        "ablations": ablations.to_dict(),
        "k_list": list(k_list),
        "embedding": embedding_fingerprint,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def _evaluate_conversation(
    conversation_id: str,
    sessions: list[Session],
    conversation_queries: list[BenchmarkQuery],
    retrieval_config: RetrievalConfig,
    ablations: AblationFlags,
    k_list: Sequence[int],
    generation_provider: GenerationProvider,
    embedding_provider: EmbeddingProvider,
) -> list[QueryRecord]:
    bank = build_bank(sessions, generation_provider, embedding_provider, ablations.link_mode())
    weights = _eval_weights(ablations, retrieval_config.temperature)
    rank_by_initial = ablations.no_ppr or ablations.single_granularity is not None
    records = []
    for query in conversation_queries:
        ranking_config = RetrievalConfig(
            top_k=len(bank),
            seed_count=retrieval_config.seed_count,
            damping=retrieval_config.damping,
            ppr_tol=retrieval_config.ppr_tol,
            ppr_max_iter=retrieval_config.ppr_max_iter,
            temperature=retrieval_config.temperature,
            entropy_floor=retrieval_config.entropy_floor,
            filter_enabled=False,
        )
        result = retrieve(
            query.query_text,
            bank,
            ranking_config,
            embedding_provider,
            weights_override=weights,
            rank_by_initial=rank_by_initial,
        )
        retrieved = [m.session_id for m in result.ranked]
        records.append(
            QueryRecord(
                conversation_id=conversation_id,
                query_index=query.query_index,
                query_text=query.query_text,
                query_type=query.query_type,
                gold_session_ids=sorted(query.gold_session_ids),
                retrieved_session_ids=retrieved,
                recall={k: recall_at_k(retrieved, query.gold_session_ids, k) for k in k_list},
                ndcg={k: ndcg_at_k(retrieved, query.gold_session_ids, k) for k in k_list},
            )
        )
    return records


def run_eval(
    dataset: tuple[dict[str, list[Session]], list[BenchmarkQuery]],
    retrieval_config: RetrievalConfig | None = None,
    ablations: AblationFlags | None = None,
    k_list: Sequence[int] = DEFAULT_K_LIST,
    generation_provider: GenerationProvider | None = None,
    embedding_provider: EmbeddingProvider | None = None,
    max_workers: int = 1,
) -> EvalReport:
    """Build one bank per conversation, run every query, aggregate means.

    Conversations are independent and may evaluate in parallel; records
    are merged in (conversation_id, query_index) order either way.
    """
    sessions_by_conversation, queries = dataset
    if retrieval_config is None:
        retrieval_config = RetrievalConfig()
    if ablations is None:
        ablations = AblationFlags()
    if generation_provider is None or embedding_provider is None:
        raise ParameterError("run_eval requires generation and embedding providers")
    if not k_list or any(k < 1 for k in k_list):
        raise ParameterError(f"k_list entries must be >= 1, got {k_list!r}")

    if not queries:
        raise ParameterError("dataset has no queries")
    by_conversation: dict[str, list[BenchmarkQuery]] = {}
    for query in queries:
        by_conversation.setdefault(query.conversation_id, []).append(query)
    for conversation_id in by_conversation:
        if conversation_id not in sessions_by_conversation:
            raise ParameterError(f"query references unknown conversation {conversation_id!r}")

    conversation_ids = sorted(by_conversation)
    jobs = [
        (
            cid,
            sessions_by_conversation[cid],
            sorted(by_conversation[cid], key=lambda q: q.query_index),
        )
        for cid in conversation_ids
    ]

    def run_one(job):
        cid, sessions, conversation_queries = job
        return _evaluate_conversation(
            cid,
            sessions,
            conversation_queries,
            retrieval_config,
            ablations,
            k_list,
            generation_provider,
            embedding_provider,
        )

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            chunks = list(pool.map(run_one, jobs))
    else:
        chunks = [run_one(job) for job in jobs]

    per_query = [record for chunk in chunks for record in chunk]
    per_query.sort(key=lambda r: (r.conversation_id, r.query_index))

    mean_recall = {
        k: sum(r.recall[k] for r in per_query) / len(per_query) for k in k_list
    }
    mean_ndcg = {k: sum(r.ndcg[k] for r in per_query) / len(per_query) for k in k_list}
    fingerprint = _config_fingerprint(
        retrieval_config,
        ablations,
        k_list,
        getattr(embedding_provider, "fingerprint", lambda: "")(),
    )
    return EvalReport(
        k_list=tuple(k_list),
        mean_recall=mean_recall,
        mean_ndcg=mean_ndcg,
        per_query=per_query,
        config_fingerprint=fingerprint,
    )
