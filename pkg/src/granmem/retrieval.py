"""Query-time retrieval: routing, seeding, and Personalized PageRank.

A query is scored against every unit on all four granularity channels,
the router converts those score vectors into channel weights, and the
weighted combination seeds a Personalized PageRank walk over the
association graph. Node scores are aggregated per memory unit and the
top units are returned, optionally passed through an LLM redundancy
filter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import prompts
from .association import AssociationGraph
from .embedding import Embedding, EmbeddingProvider
from .errors import EmptyBank, EmptyInput, ParameterError
from .metadata import GenerationProvider
from .model import GRANULARITIES, Granularity, MemoryBank, NodeKey, render_session_text
from .router import GranularityScores, RouterWeights, route

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 3
DEFAULT_SEED_COUNT = 15
DEFAULT_DAMPING = 0.85
DEFAULT_PPR_TOL = 1e-8
DEFAULT_PPR_MAX_ITER = 100


@dataclass
class RetrievalConfig:
    top_k: int = DEFAULT_TOP_K
    seed_count: int = DEFAULT_SEED_COUNT
    damping: float = DEFAULT_DAMPING
    ppr_tol: float = DEFAULT_PPR_TOL
    ppr_max_iter: int = DEFAULT_PPR_MAX_ITER
    temperature: float = 0.2
    entropy_floor: float = 1e-6
    filter_enabled: bool = False

    def __post_init__(self):
        if self.top_k < 1:
            raise ParameterError(f"top_k must be >= 1, got {self.top_k}")
        if self.seed_count < 1:
            raise ParameterError(f"seed_count must be >= 1, got {self.seed_count}")
        if not 0.0 <= self.damping < 1.0:
            raise ParameterError(f"damping must be in [0, 1), got {self.damping}")
        if self.ppr_tol <= 0.0:
            raise ParameterError(f"ppr_tol must be positive, got {self.ppr_tol}")
        if self.ppr_max_iter < 1:
            raise ParameterError(f"ppr_max_iter must be >= 1, got {self.ppr_max_iter}")
        if self.temperature <= 0.0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        if self.entropy_floor <= 0.0:
            raise ParameterError(f"entropy_floor must be positive, got {self.entropy_floor}")


@dataclass
class RankedMemory:
    memory_id: str
    session_id: str
    initial_score: float
    ppr_score: float
    granularity_sims: dict[Granularity, float]


@dataclass
class RetrievalResult:
    ranked: list[RankedMemory]
    router_weights: RouterWeights
    filtered_context: str | None = None

    def memory_ids(self) -> list[str]:
        return [m.memory_id for m in self.ranked]

    def to_dict(self) -> dict:
        return {
            "ranked": [
                {
                    "memory_id": m.memory_id,
                    "session_id": m.session_id,
                    "initial_score": m.initial_score,
                    "ppr_score": m.ppr_score,
                    "granularity_sims": {g.value: m.granularity_sims[g] for g in GRANULARITIES},
                }
                for m in self.ranked
            ],
            "router_weights": {
                "weights": {g.value: self.router_weights.weights[g] for g in GRANULARITIES},
                "entropies": {
                    g.value: self.router_weights.entropies.get(g) for g in GRANULARITIES
                },
                "temperature": self.router_weights.temperature,
            },
            "filtered_context": self.filtered_context,
        }


def compute_granularity_scores(query_embedding: Embedding, bank: MemoryBank) -> GranularityScores:
    """Cosine similarity of the query to every unit on each channel.

    Session, summary, and keyword channels have one node per unit; the
    turn channel takes the max over the unit's turn nodes.
    """
    units = bank.units_in_order()
    if not units:
        raise EmptyBank("memory bank has no units")
    query = query_embedding.values.astype(np.float64)
    query_norm = query_embedding.norm
    if query_norm == 0.0:
        raise ParameterError("query embedding has zero norm")

    def node_sim(node: NodeKey) -> float:
        emb = bank.embedding_index[node]
        dot = float(np.dot(emb.values.astype(np.float64), query))
        return dot / (emb.norm * query_norm)

    vectors: dict[Granularity, np.ndarray] = {}
    for granularity in (Granularity.SESSION, Granularity.SUMMARY, Granularity.KEYWORD):
        vectors[granularity] = np.array(
            [node_sim((u.memory_id, granularity, 0)) for u in units], dtype=np.float64
        )
    vectors[Granularity.TURN] = np.array(
        [
            max(node_sim((u.memory_id, Granularity.TURN, i)) for i in range(len(u.turn_texts)))
            for u in units
        ],
        dtype=np.float64,
    )
    return GranularityScores(memory_ids=[u.memory_id for u in units], vectors=vectors)


def combine_scores(scores: GranularityScores, weights: RouterWeights) -> np.ndarray:
    """Weighted sum of the channel score vectors, aligned with memory_ids."""
    combined = np.zeros(len(scores.memory_ids), dtype=np.float64)
    for granularity in GRANULARITIES:
        combined += weights.weights[granularity] * scores.vectors[granularity]
    return combined


def initial_scores(
    query_embedding: Embedding,
    bank: MemoryBank,
    weights: RouterWeights,
    scores: GranularityScores | None = None,
) -> np.ndarray:
    """Per-unit relevance before graph propagation."""
    if scores is None:
        scores = compute_granularity_scores(query_embedding, bank)
    return combine_scores(scores, weights)


def build_personalization(
    scores: np.ndarray, bank: MemoryBank, seed_count: int
) -> dict[NodeKey, float]:
    """Teleport distribution over the session nodes of the top-scored units.

    The top ``seed_count`` units by initial score (ties broken by
    insertion order) receive mass proportional to max(score, 0); if no
    selected unit has positive score the mass is uniform over them.
    """
    units = bank.units_in_order()
    if len(scores) != len(units):
        raise ParameterError(f"got {len(scores)} scores for {len(units)} units")
    if seed_count < 1:
        raise ParameterError(f"seed_count must be >= 1, got {seed_count}")
    order = sorted(range(len(units)), key=lambda i: (-scores[i], units[i].insertion_seq))
    selected = order[: min(seed_count, len(units))]
    masses = np.maximum(np.array([scores[i] for i in selected], dtype=np.float64), 0.0)
    total = float(masses.sum())
    if total <= 0.0:
        masses = np.full(len(selected), 1.0 / len(selected))
    else:
        masses = masses / total
    return {
        (units[i].memory_id, Granularity.SESSION, 0): float(mass)
        for i, mass in zip(selected, masses)
    }


def run_ppr(
    graph: AssociationGraph,
    personalization: Mapping[NodeKey, float],
    damping: float = DEFAULT_DAMPING,
    tol: float = DEFAULT_PPR_TOL,
    max_iter: int = DEFAULT_PPR_MAX_ITER,
) -> dict[NodeKey, float]:
    """Personalized PageRank by power iteration.

    ``r <- (1 - d) p + d (N r + dangling_mass * p)`` where N is the
    column-normalized weighted adjacency matrix and isolated (dangling)
    nodes redistribute their mass to the teleport vector. Stops when the
    L1 change drops below ``tol``. The result sums to 1.
    """
    nodes = list(graph.nodes())
    if not nodes:
        raise ParameterError("graph has no nodes")
    if not 0.0 <= damping < 1.0:
        raise ParameterError(f"damping must be in [0, 1), got {damping}")
    index = {node: i for i, node in enumerate(nodes)}

    p = np.zeros(len(nodes), dtype=np.float64)
    for node, mass in personalization.items():
        if node not in index:
            raise ParameterError(f"personalization names unknown node {node}")
        if not np.isfinite(mass) or mass < 0.0:
            raise ParameterError(f"personalization mass for {node} must be finite and >= 0")
        p[index[node]] = mass
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise ParameterError(f"personalization must sum to 1, got {float(p.sum())!r}")

    # Directed edge arrays for the sparse matvec; columns are sources.
    sources: list[int] = []
    targets: list[int] = []
    weights: list[float] = []
    out_weight = np.zeros(len(nodes), dtype=np.float64)
    for a, b, w in graph.edges():
        ia, ib = index[a], index[b]
        sources.extend((ia, ib))
        targets.extend((ib, ia))
        weights.extend((w, w))
        out_weight[ia] += w
        out_weight[ib] += w
    src = np.asarray(sources, dtype=np.intp)
    dst = np.asarray(targets, dtype=np.intp)
    wgt = np.asarray(weights, dtype=np.float64)
    dangling = out_weight == 0.0
    normalized = wgt / out_weight[src] if len(wgt) else wgt

    r = p.copy()
    for _ in range(max_iter):
        spread = np.zeros(len(nodes), dtype=np.float64)
        if len(wgt):
            np.add.at(spread, dst, normalized * r[src])
        dangling_mass = float(r[dangling].sum())
        r_next = (1.0 - damping) * p + damping * (spread + dangling_mass * p)
        if float(np.abs(r_next - r).sum()) < tol:
            r = r_next
            break
        r = r_next
    return {node: float(r[index[node]]) for node in nodes}


def aggregate_unit_scores(bank: MemoryBank, node_scores: Mapping[NodeKey, float]) -> np.ndarray:
    """Sum node-level PPR mass into per-unit scores, aligned with unit order."""
    units = bank.units_in_order()
    totals = np.zeros(len(units), dtype=np.float64)
    for i, unit in enumerate(units):
        totals[i] = sum(node_scores.get(node, 0.0) for node in bank.node_keys_for(unit))
    return totals


def single_granularity_top_k(scores: GranularityScores, granularity: Granularity, k: int) -> list[str]:
    """Top-k memory ids ranked by one channel alone, ties by position."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    vector = scores.vectors[granularity]
    order = sorted(range(len(scores.memory_ids)), key=lambda i: (-vector[i], i))
    return [scores.memory_ids[i] for i in order[:k]]


def candidate_pool_union(scores: GranularityScores, k: int) -> set[str]:
    """Union of the per-granularity top-k pools (the multi-granularity candidate set)."""
    pool: set[str] = set()
    for granularity in GRANULARITIES:
        pool.update(single_granularity_top_k(scores, granularity, k))
    return pool


def render_memory_block(unit) -> str:
    """One retrieved memory as dialogue text plus its summary and keywords."""
    return (
        f"{render_session_text(unit.session)}\n\n"
        f"Summary: {unit.summary}\n"
        f"Keywords: {'; '.join(unit.keywords)}"
    )


def filter_context(
    question: str,
    question_date: str | None,
    blocks: list[str],
    provider: GenerationProvider,
) -> str:
    """LLM pass that strips retrieved text down to query-relevant parts.

    An empty filter output falls back to the unfiltered concatenation
    rather than handing the answering model nothing.
    """
    if not question.strip():
        raise EmptyInput("question is empty")
    joined = "\n\n".join(blocks)
    prompt = prompts.render_filter_prompt(joined, question_date or "", question)
    filtered = provider.complete(prompt).strip()
    if not filtered:
        log.warning("filter returned empty output; using unfiltered context")
        return joined
    return filtered


def retrieve(
    query: str,
    bank: MemoryBank,
    config: RetrievalConfig | None = None,
    embedding_provider: EmbeddingProvider | None = None,
    generation_provider: GenerationProvider | None = None,
    question_date: str | None = None,
    weights_override: RouterWeights | None = None,
    rank_by_initial: bool = False,
) -> RetrievalResult:
    """End-to-end retrieval for one query.

    ``weights_override`` bypasses the entropy router (used by ablations);
    ``rank_by_initial`` skips graph propagation and ranks directly by the
    combined similarity scores.
    """
    if config is None:
        config = RetrievalConfig()
    if embedding_provider is None:
        raise ParameterError("an embedding provider is required")
    if not query.strip():
        raise EmptyInput("query is empty")
    if not bank.units_in_order():
        raise EmptyBank("memory bank has no units")

    query_embedding = embedding_provider.embed_batch([query])[0]
    scores = compute_granularity_scores(query_embedding, bank)
    weights = weights_override if weights_override is not None else route(
        scores, config.temperature, config.entropy_floor
    )
    initial = combine_scores(scores, weights)

    units = bank.units_in_order()
    if rank_by_initial:
        unit_scores = initial
    else:
        personalization = build_personalization(initial, bank, config.seed_count)
        node_scores = run_ppr(
            bank.graph,
            personalization,
            damping=config.damping,
            tol=config.ppr_tol,
            max_iter=config.ppr_max_iter,
        )
        unit_scores = aggregate_unit_scores(bank, node_scores)

    order = sorted(range(len(units)), key=lambda i: (-unit_scores[i], units[i].insertion_seq))
    top = order[: min(config.top_k, len(units))]
    ranked = [
        RankedMemory(
            memory_id=units[i].memory_id,
            session_id=units[i].session.session_id,
            initial_score=float(initial[i]),
            ppr_score=float(unit_scores[i]),
            granularity_sims={g: float(scores.vectors[g][i]) for g in GRANULARITIES},
        )
        for i in top
    ]

    filtered = None
    if config.filter_enabled:
        if generation_provider is None:
            raise ParameterError("filter_enabled requires a generation provider")
        blocks = [render_memory_block(units[i]) for i in top]
        filtered = filter_context(query, question_date, blocks, generation_provider)

    return RetrievalResult(ranked=ranked, router_weights=weights, filtered_context=filtered)
