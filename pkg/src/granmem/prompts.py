"""Prompt templates for metadata generation, context filtering, and QA.

The templates are fixed strings; ``render_*`` helpers fill the slots.
Tests pin the rendered output byte-for-byte, so any edit here is a
breaking change to the wire contract with chat providers.
"""

from __future__ import annotations

SUMMARY_TEMPLATE = (
    "Below is an user-AI assistant dialogue memory. Please summarize the "
    "following dialogue as concisely as possible in a short paragraph, "
    "extracting the main themes and key information."
)

KEYWORD_TEMPLATE = (
    "Below is an user-AI assistant dialogue memory. Please extract the most "
    "relevant keywords, separated by semicolon."
)

FILTER_TEMPLATE = (
    "You are an intelligent dialog bot. You will be shown History Dialogs "
    "and corresponding multi-granular information.\n"
    "Filter the History Dialogs, summaries, and keywords to extract only the "
    "parts directly relevant to the Question. Preserve original tokens, do "
    "not paraphrase. Remove irrelevant turns, redundant info, and "
    "non-essential details.\n"
    "\n"
    "History Dialogs: {retrieved_texts}\n"
    "\n"
    "Question Date: {question_date}\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Answer:"
)

QA_TEMPLATE = (
    "You are an intelligent dialog bot. You will be shown History Dialogs. "
    "Please read, memorize, and understand the given Dialogs, then generate "
    "one concise, coherent and helpful response for the Question.\n"
    "\n"
    "History Dialogs: {retrieved_texts}\n"
    "\n"
    "Question Date: {question_date}\n"
    "\n"
    "Question: {question}"
)


def render_summary_prompt(session_text: str) -> str:
    return f"{SUMMARY_TEMPLATE}\n\n{session_text}"


def render_keyword_prompt(session_text: str) -> str:
    return f"{KEYWORD_TEMPLATE}\n\n{session_text}"


def render_filter_prompt(retrieved_texts: str, question_date: str, question: str) -> str:
    return FILTER_TEMPLATE.format(
        retrieved_texts=retrieved_texts,
        question_date=question_date,
        question=question,
    )


def render_qa_prompt(retrieved_texts: str, question_date: str, question: str) -> str:
    return QA_TEMPLATE.format(
        retrieved_texts=retrieved_texts,
        question_date=question_date,
        question=question,
    )
