"""Domain types for the memory bank and the session -> turns segmentation.

A stored memory keeps four parallel views of one dialogue session:
the full session text, the individual turns, a generated summary, and a
generated keyword string. Each view is embedded and scored separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterator

from .errors import DuplicateSession, EmptyInput

if TYPE_CHECKING:
    from .association import AssociationGraph
    from .embedding import Embedding


class Granularity(str, Enum):
    SESSION = "session"
    TURN = "turn"
    SUMMARY = "summary"
    KEYWORD = "keyword"


#: Canonical iteration order for granularity-indexed maps.
GRANULARITIES = (
    Granularity.SESSION,
    Granularity.TURN,
    Granularity.SUMMARY,
    Granularity.KEYWORD,
)


@dataclass
class DialogueTurn:
    """One user utterance plus the (possibly empty) reply to it."""

    index: int
    user_text: str
    assistant_text: str = ""
    timestamp: str | None = None


@dataclass
class Session:
    """An ordered list of turns under one opaque session id."""

    session_id: str
    turns: list[DialogueTurn]
    date: str | None = None


def validate_session(session: Session) -> None:
    """Raise EmptyInput/ValueError when a session violates its invariants."""
    if not session.turns:
        raise EmptyInput(f"session {session.session_id!r} has no turns")
    for expected, turn in enumerate(session.turns):
        if turn.index != expected:
            raise ValueError(
                f"session {session.session_id!r}: turn index {turn.index} "
                f"at position {expected} is not contiguous"
            )
        if not turn.user_text.strip():
            raise ValueError(
                f"session {session.session_id!r}: turn {turn.index} has empty user text"
            )


def segment_session(session: Session) -> list[str]:
    """Render one text per turn, in order.

    Format is fixed: ``[user]: <u>`` followed by ``[assistant]: <a>`` on
    the next line; the assistant line is omitted when the reply is empty.
    """
    if not session.turns:
        raise EmptyInput(f"session {session.session_id!r} has no turns")
    rendered = []
    for turn in session.turns:
        text = f"[user]: {turn.user_text}"
        if turn.assistant_text.strip():
            text += f"\n[assistant]: {turn.assistant_text}"
        rendered.append(text)
    return rendered


def render_session_text(session: Session) -> str:
    """Canonical session-level text: dated header plus blank-line joined turns."""
    body = "\n\n".join(segment_session(session))
    if session.date:
        return f"Date: {session.date}\n\n{body}"
    return body


@dataclass
class MemoryUnit:
    """One session's bundle of granularity views, ready for embedding.

    ``granularity_texts`` is total over the four granularities: the
    session view and summary hold one entry each, the turn view one entry
    per turn, and the keyword view a single semicolon-joined string (the
    raw keyword list is kept in ``keywords`` for display).
    """

    memory_id: str
    session: Session
    turn_texts: list[str]
    summary: str
    keywords: list[str]
    granularity_texts: dict[Granularity, list[str]]
    insertion_seq: int = -1

    def texts_for(self, granularity: Granularity) -> list[str]:
        return self.granularity_texts[granularity]


NodeKey = tuple[str, Granularity, int]


@dataclass
class MemoryBank:
    """Id-addressable unit store plus the association graph and embeddings.

    Single-writer discipline: insertions happen one at a time and assign
    ``insertion_seq``; readers never observe a partially inserted unit.
    """

    units: dict[str, MemoryUnit] = field(default_factory=dict)
    graph: "AssociationGraph" = None  # type: ignore[assignment]
    embedding_index: dict[NodeKey, "Embedding"] = field(default_factory=dict)

    def __post_init__(self):
        if self.graph is None:
            from .association import AssociationGraph

            self.graph = AssociationGraph()
        self._session_ids: set[str] = {
            u.session.session_id for u in self.units.values()
        }
        self._next_seq = 1 + max(
            (u.insertion_seq for u in self.units.values()), default=-1
        )

    def __len__(self) -> int:
        return len(self.units)

    def add_unit(self, unit: MemoryUnit) -> MemoryUnit:
        """Register a unit, assigning its insertion sequence number."""
        sid = unit.session.session_id
        if sid in self._session_ids:
            raise DuplicateSession(f"session id {sid!r} already ingested")
        if unit.memory_id in self.units:
            raise DuplicateSession(f"memory id {unit.memory_id!r} already present")
        unit.insertion_seq = self._next_seq
        self._next_seq += 1
        self.units[unit.memory_id] = unit
        self._session_ids.add(sid)
        return unit

    def units_in_order(self) -> list[MemoryUnit]:
        return sorted(self.units.values(), key=lambda u: u.insertion_seq)

    def node_keys_for(self, unit: MemoryUnit) -> Iterator[NodeKey]:
        """All embedding-index keys belonging to one unit."""
        yield (unit.memory_id, Granularity.SESSION, 0)
        for i in range(len(unit.turn_texts)):
            yield (unit.memory_id, Granularity.TURN, i)
        yield (unit.memory_id, Granularity.SUMMARY, 0)
        yield (unit.memory_id, Granularity.KEYWORD, 0)

    def text_for_node(self, key: NodeKey) -> str:
        memory_id, granularity, sub_index = key
        return self.units[memory_id].granularity_texts[granularity][
            sub_index if granularity is Granularity.TURN else 0
        ]

    def validate(self) -> None:
        """Check cross-structure invariants; raises ValueError on violation."""
        for unit in self.units.values():
            for granularity in GRANULARITIES:
                if granularity not in unit.granularity_texts:
                    raise ValueError(
                        f"unit {unit.memory_id!r} missing granularity {granularity.value}"
                    )
            for key in self.node_keys_for(unit):
                if key not in self.embedding_index:
                    raise ValueError(f"unit {unit.memory_id!r} missing embedding {key}")
        for node in self.graph.nodes():
            if node[0] not in self.units:
                raise ValueError(f"graph node references unknown unit {node[0]!r}")
            if node not in self.embedding_index:
                raise ValueError(f"graph node {node} has no embedding")
