"""Shared fixtures: session factories and offline-provider banks."""

from pathlib import Path

import pytest

from granmem.embedding import HashedBagProvider
from granmem.metadata import OfflineExtractiveProvider
from granmem.model import DialogueTurn, Session
from granmem.pipeline import build_bank

DATA_DIR = Path(__file__).parent / "data"


def make_session(session_id: str, pairs, date: str | None = None) -> Session:
    """Build a session from (user, assistant) pairs or bare user strings."""
    turns = []
    for i, pair in enumerate(pairs):
        if isinstance(pair, str):
            turns.append(DialogueTurn(index=i, user_text=pair))
        else:
            user, assistant = pair
            turns.append(DialogueTurn(index=i, user_text=user, assistant_text=assistant))
    return Session(session_id=session_id, turns=turns, date=date)


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def gen_provider() -> OfflineExtractiveProvider:
    return OfflineExtractiveProvider()


@pytest.fixture
def embed_provider() -> HashedBagProvider:
    return HashedBagProvider()


TEA_SESSION = [
    (
        "I bought a ceramic tea set from the market in Kyoto.",
        "A Kyoto tea set is a lovely find; rinse the pot with warm water before first use.",
    ),
    (
        "How hot should the water be for green tea in that pot?",
        "Around eighty degrees; boiling water scorches green tea leaves.",
    ),
]

KAYAK_SESSION = [
    (
        "My kayak keeps drifting left on flat water no matter how evenly I paddle.",
        "Check the skeg alignment first; a bent skeg pulls the hull off line.",
    )
]


@pytest.fixture
def two_unit_bank(gen_provider, embed_provider):
    """Two lexically disjoint sessions ingested offline."""
    sessions = [
        make_session("tea", TEA_SESSION, date="2025-03-01"),
        make_session("kayak", KAYAK_SESSION),
    ]
    return build_bank(
        sessions,
        generation_provider=gen_provider,
        embedding_provider=embed_provider,
    )
