"""granmem: long-term conversational memory with multi-granularity retrieval.

Dialogue sessions are stored at four granularities (session, turn,
summary, keyword), linked into an association graph by GMM-based
accept/reject clustering at insertion time, and retrieved with
entropy-routed scoring plus Personalized PageRank.
"""

from .association import (
    AssociationGraph,
    GmmFit,
    assign_accept_reject,
    associate_new_memory,
    fit_gmm_1d,
)
from .config import AppConfig
from .embedding import (
    Embedding,
    EmbeddingCache,
    HashedBagProvider,
    RemoteEmbeddingProvider,
    cosine,
    embed_memory_unit,
)
from .errors import (
    ConfigError,
    CorruptSnapshot,
    DegenerateScores,
    DegenerateVector,
    DimensionError,
    DuplicateSession,
    EmptyBank,
    EmptyGeneration,
    EmptyInput,
    FormatError,
    GranmemError,
    IoError,
    ParameterError,
    ProviderError,
    VersionError,
)
from .evaluation import (
    AblationFlags,
    BenchmarkQuery,
    EvalReport,
    load_locomo,
    load_longmemeval,
    ndcg_at_k,
    recall_at_k,
    run_eval,
)
from .metadata import (
    MemoryMetadata,
    OfflineExtractiveProvider,
    RemoteChatProvider,
    build_memory_unit,
    generate_keywords,
    generate_summary,
)
from .model import (
    DialogueTurn,
    GRANULARITIES,
    Granularity,
    MemoryBank,
    MemoryUnit,
    Session,
    render_session_text,
    segment_session,
    validate_session,
)
from .persistence import load_bank, load_manifest, save_bank
from .pipeline import answer_question, build_bank, ingest_session
from .retrieval import (
    RetrievalConfig,
    RetrievalResult,
    build_personalization,
    filter_context,
    initial_scores,
    retrieve,
    run_ppr,
)
from .router import (
    GranularityScores,
    RouterWeights,
    route,
    shannon_entropy,
    softmax_distribution,
    weights_from_entropies,
)

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "AppConfig",
    "AssociationGraph",
    "BenchmarkQuery",
    "ConfigError",
    "CorruptSnapshot",
    "DegenerateScores",
    "DegenerateVector",
    "DialogueTurn",
    "DimensionError",
    "DuplicateSession",
    "Embedding",
    "EmbeddingCache",
    "EmptyBank",
    "EmptyGeneration",
    "EmptyInput",
    "EvalReport",
    "FormatError",
    "GmmFit",
    "GranmemError",
    "GranularityScores",
    "GRANULARITIES",
    "Granularity",
    "HashedBagProvider",
    "IoError",
    "MemoryBank",
    "MemoryMetadata",
    "MemoryUnit",
    "OfflineExtractiveProvider",
    "ParameterError",
    "ProviderError",
    "RemoteChatProvider",
    "RemoteEmbeddingProvider",
    "RetrievalConfig",
    "RetrievalResult",
    "RouterWeights",
    "Session",
    "VersionError",
    "answer_question",
    "assign_accept_reject",
    "associate_new_memory",
    "build_bank",
    "build_memory_unit",
    "build_personalization",
    "cosine",
    "embed_memory_unit",
    "filter_context",
    "fit_gmm_1d",
    "generate_keywords",
    "generate_summary",
    "ingest_session",
    "initial_scores",
    "load_bank",
    "load_locomo",
    "load_longmemeval",
    "load_manifest",
    "ndcg_at_k",
    "recall_at_k",
    "render_session_text",
    "retrieve",
    "route",
    "run_eval",
    "run_ppr",
    "save_bank",
    "segment_session",
    "shannon_entropy",
    "softmax_distribution",
    "validate_session",
    "weights_from_entropies",
]
