"""Summary and keyword generation for sessions via pluggable providers.

Two provider implementations share one ``complete(prompt, system)``
interface: ``RemoteChatProvider`` talks to an OpenAI-style chat endpoint,
``OfflineExtractiveProvider`` recognizes the prompt templates and answers
with deterministic extractive algorithms so the whole pipeline can run
hermetically.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Protocol

from . import prompts
from .errors import EmptyGeneration, EmptyInput, ProviderError
from .model import Granularity, MemoryUnit, Session, render_session_text, segment_session, validate_session
from .textutil import STOPWORDS, content_tokens, first_sentence, tokenize

log = logging.getLogger(__name__)

MAX_KEYWORD_LENGTH = 64
OFFLINE_KEYWORD_CAP = 10

_USER_PREFIX = "[user]: "
_FILTER_PREFIX = prompts.FILTER_TEMPLATE.split("{retrieved_texts}")[0]
_QA_PREFIX = prompts.QA_TEMPLATE.split("{retrieved_texts}")[0]


class GenerationProvider(Protocol):
    def complete(self, prompt: str, system: str | None = None) -> str: ...


@dataclass
class MemoryMetadata:
    summary: str
    keywords: list[str]


class OfflineExtractiveProvider:
    """Deterministic stand-in for the chat model.

    Dispatches on the known prompt templates:

    * summary prompt -> first sentence of each of the first three user
      utterances, joined with spaces;
    * keyword prompt -> top term-frequency non-stopword tokens (ties
      broken alphabetically), semicolon-joined;
    * filter prompt  -> the dialogue turns sharing at least one
      non-stopword token with the question, original text preserved.

    Pure function of the prompt; safe to call from any thread.
    """

    def __init__(self):
        self.calls = 0

    def complete(self, prompt: str, system: str | None = None) -> str:
        self.calls += 1
        if prompt.startswith(prompts.SUMMARY_TEMPLATE):
            return self._summarize(prompt[len(prompts.SUMMARY_TEMPLATE):].strip())
        if prompt.startswith(prompts.KEYWORD_TEMPLATE):
            return self._keywords(prompt[len(prompts.KEYWORD_TEMPLATE):].strip())
        if prompt.startswith(_FILTER_PREFIX):
            retrieved, _, question = _parse_slotted_prompt(prompt, _FILTER_PREFIX, drop_answer_tail=True)
            return self._filter(retrieved, question)
        if prompt.startswith(_QA_PREFIX):
            retrieved, _, question = _parse_slotted_prompt(prompt, _QA_PREFIX, drop_answer_tail=False)
            return self._filter(retrieved, question)
        return self._summarize(prompt.strip())

    @staticmethod
    def _summarize(body: str) -> str:
        utterances = [
            line[len(_USER_PREFIX):]
            for line in body.splitlines()
            if line.startswith(_USER_PREFIX)
        ]
        if not utterances:
            utterances = [body]
        return " ".join(first_sentence(u) for u in utterances[:3] if u.strip())

    @staticmethod
    def _keywords(body: str) -> str:
        counts = Counter(t for t in tokenize(body) if t not in STOPWORDS)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return "; ".join(token for token, _ in ranked[:OFFLINE_KEYWORD_CAP])

    @staticmethod
    def _filter(retrieved: str, question: str) -> str:
        question_tokens = set(content_tokens(question))
        kept = [
            block
            for block in _turn_blocks(retrieved)
            if question_tokens & set(content_tokens(block))
        ]
        return "\n".join(kept)


def _parse_slotted_prompt(prompt: str, prefix: str, drop_answer_tail: bool) -> tuple[str, str, str]:
    """Recover (retrieved_texts, question_date, question) from a rendered prompt."""
    body = prompt
    if drop_answer_tail:
        body = body.rpartition("\n\nAnswer:")[0]
    body, _, question = body.rpartition("\n\nQuestion: ")
    body, _, date = body.rpartition("\n\nQuestion Date: ")
    return body[len(prefix):], date, question


def _turn_blocks(text: str) -> list[str]:
    """Split a rendered dialogue into per-turn blocks ([user] line plus replies)."""
    blocks: list[str] = []
    current: list[str] = []
    for line in text.splitlines():
        if line.startswith(_USER_PREFIX):
            if current:
                blocks.append("\n".join(current))
            current = [line]
        elif current and line.strip() and not line.startswith(("Date: ", "Summary: ", "Keywords: ")):
            current.append(line)
        elif current and not line.strip():
            blocks.append("\n".join(current))
            current = []
    if current:
        blocks.append("\n".join(current))
    return blocks


def _default_chat_transport(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    import httpx

    response = httpx.post(url, json=payload, headers=headers, timeout=timeout)
    response.raise_for_status()
    return response.json()


class RemoteChatProvider:
    """OpenAI-style chat-completions client with a bounded retry budget.

    Sends ``{"model", "messages", "temperature": 0}`` and reads
    ``choices[0].message.content``. Temperature is pinned to 0 for
    reproducibility. ``transport`` is injectable for tests.
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
        self._transport = transport or _default_chat_transport

    def complete(self, prompt: str, system: str | None = None) -> str:
        messages = []
        if system is not None:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": prompt})
        payload = {"model": self.model, "messages": messages, "temperature": 0}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        attempts = self.max_retries + 1
        for attempt in range(attempts):
            self.calls += 1
            try:
                data = self._transport(self.url, payload, headers, self.timeout)
                return data["choices"][0]["message"]["content"]
            except Exception as exc:  # transport or shape failure; retry
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * (2 ** attempt))
        raise ProviderError(
            f"chat provider failed after {attempts} attempts: {last_error}",
            attempts=attempts,
        )


def generate_summary(provider: GenerationProvider, session_text: str) -> str:
    """One-paragraph summary of a rendered session."""
    if not session_text.strip():
        raise EmptyInput("session text is empty")
    output = provider.complete(prompts.render_summary_prompt(session_text)).strip()
    if not output:
        raise EmptyGeneration("summary generation returned empty output")
    return output


def generate_keywords(provider: GenerationProvider, session_text: str) -> list[str]:
    """Keyword list for a rendered session.

    Provider output is split on semicolons and newlines, trimmed,
    truncated to 64 characters, and de-duplicated case-insensitively
    while preserving first-occurrence order.
    """
    if not session_text.strip():
        raise EmptyInput("session text is empty")
    output = provider.complete(prompts.render_keyword_prompt(session_text))
    keywords: list[str] = []
    seen: set[str] = set()
    for part in output.replace("\n", ";").split(";"):
        keyword = part.strip()[:MAX_KEYWORD_LENGTH].strip()
        if not keyword:
            continue
        folded = keyword.casefold()
        if folded in seen:
            continue
        seen.add(folded)
        keywords.append(keyword)
    if not keywords:
        raise EmptyGeneration("keyword generation returned no keywords")
    return keywords


def generate_metadata(
    provider: GenerationProvider, session_text: str, max_concurrency: int = 1
) -> MemoryMetadata:
    """Summary plus keywords; the two calls may run concurrently."""
    if max_concurrency > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            summary_future = pool.submit(generate_summary, provider, session_text)
            keywords_future = pool.submit(generate_keywords, provider, session_text)
            return MemoryMetadata(summary_future.result(), keywords_future.result())
    return MemoryMetadata(
        generate_summary(provider, session_text),
        generate_keywords(provider, session_text),
    )


def build_memory_unit(
    session: Session,
    provider: GenerationProvider,
    memory_id: str | None = None,
    max_concurrency: int = 1,
) -> MemoryUnit:
    """Assemble the four granularity views for one session."""
    validate_session(session)
    turn_texts = segment_session(session)
    session_text = render_session_text(session)
    metadata = generate_metadata(provider, session_text, max_concurrency)
    joined_keywords = "; ".join(metadata.keywords)
    return MemoryUnit(
        memory_id=memory_id or f"mem-{session.session_id}",
        session=session,
        turn_texts=turn_texts,
        summary=metadata.summary,
        keywords=metadata.keywords,
        granularity_texts={
            Granularity.SESSION: [session_text],
            Granularity.TURN: list(turn_texts),
            Granularity.SUMMARY: [metadata.summary],
            Granularity.KEYWORD: [joined_keywords],
        },
    )
