"""Ingestion and answering glue shared by the CLI, HTTP service, and eval.

Ingestion order per session: metadata generation, embedding, then
association. That order defines ``insertion_seq`` and therefore every
downstream tie-break.
"""

from __future__ import annotations

from .association import LINK_MODE_GMM, associate_new_memory
from .embedding import EmbeddingCache, EmbeddingProvider, embed_memory_unit
from .metadata import GenerationProvider, build_memory_unit
from .model import Granularity, MemoryBank, MemoryUnit, Session
from .prompts import render_qa_prompt
from .retrieval import RetrievalConfig, RetrievalResult, render_memory_block, retrieve

OFFLINE_ANSWER_BANNER = "[offline stub: no generation model; showing retrieved context]"


def ingest_session(
    bank: MemoryBank,
    session: Session,
    generation_provider: GenerationProvider,
    embedding_provider: EmbeddingProvider,
    link_mode: str = LINK_MODE_GMM,
    cache: EmbeddingCache | None = None,
    max_concurrency: int = 1,
) -> tuple[MemoryUnit, int]:
    """Add one session to the bank; returns (unit, edges_added)."""
    unit = build_memory_unit(session, generation_provider, max_concurrency=max_concurrency)
    embeddings = embed_memory_unit(unit, embedding_provider, cache)
    bank.add_unit(unit)
    for granularity, embs in embeddings.items():
        for slot, emb in enumerate(embs):
            key = (unit.memory_id, granularity, slot if granularity is Granularity.TURN else 0)
            bank.embedding_index[key] = emb
    edges = associate_new_memory(bank, unit, mode=link_mode)
    return unit, edges


def build_bank(
    sessions,
    generation_provider: GenerationProvider,
    embedding_provider: EmbeddingProvider,
    link_mode: str = LINK_MODE_GMM,
    cache: EmbeddingCache | None = None,
) -> MemoryBank:
    """Ingest sessions in order into a fresh bank."""
    bank = MemoryBank()
    for session in sessions:
        ingest_session(bank, session, generation_provider, embedding_provider, link_mode, cache)
    return bank


def answer_question(
    query: str,
    bank: MemoryBank,
    config: RetrievalConfig,
    embedding_provider: EmbeddingProvider,
    generation_provider: GenerationProvider,
    question_date: str | None = None,
    offline: bool = False,
) -> tuple[str, RetrievalResult]:
    """Retrieve context and generate an answer with the QA prompt.

    Offline mode never calls a generation model for the answer itself:
    it returns the (possibly filtered) context behind a stub banner.
    """
    result = retrieve(
        query,
        bank,
        config,
        embedding_provider,
        generation_provider=generation_provider,
        question_date=question_date,
    )
    if result.filtered_context is not None:
        context = result.filtered_context
    else:
        units = {u.memory_id: u for u in bank.units_in_order()}
        context = "\n\n".join(render_memory_block(units[m.memory_id]) for m in result.ranked)
    if offline:
        return f"{OFFLINE_ANSWER_BANNER}\n{context}", result
    prompt = render_qa_prompt(context, question_date or "", query)
    return generation_provider.complete(prompt), result
