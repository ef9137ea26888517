"""Command-line interface: ingest, query, answer, eval, serve.

Exit codes (documented in docs/cli.md): 0 success, 2 format/data error,
3 provider error, 4 I/O error, 5 empty bank, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import AppConfig
from .errors import (
    ConfigError,
    CorruptSnapshot,
    DegenerateVector,
    DuplicateSession,
    EmptyBank,
    EmptyGeneration,
    EmptyInput,
    FormatError,
    GranmemError,
    IoError,
    ProviderError,
    VersionError,
)
from .evaluation import AblationFlags, load_locomo, load_longmemeval, run_eval
from .model import DialogueTurn, Granularity, MemoryBank, Session
from .persistence import MANIFEST_FILE, load_bank, load_manifest, save_bank
from .pipeline import answer_question, ingest_session
from .retrieval import RetrievalConfig, retrieve

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_PROVIDER = 3
EXIT_IO = 4
EXIT_EMPTY_BANK = 5
EXIT_USAGE = 64

_FORMAT_ERRORS = (
    FormatError,
    DuplicateSession,
    CorruptSnapshot,
    VersionError,
    EmptyInput,
    DegenerateVector,
    ConfigError,
    ValueError,
)
_PROVIDER_ERRORS = (ProviderError, EmptyGeneration)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; we reserve 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _exit_code_for(exc: Exception) -> int:
    if isinstance(exc, EmptyBank):
        return EXIT_EMPTY_BANK
    if isinstance(exc, _PROVIDER_ERRORS):
        return EXIT_PROVIDER
    if isinstance(exc, IoError):
        return EXIT_IO
    if isinstance(exc, _FORMAT_ERRORS):
        return EXIT_FORMAT
    if isinstance(exc, OSError):
        return EXIT_IO
    raise exc


def load_sessions_file(path: str | Path) -> list[Session]:
    """Parse the ingestion input: a list of sessions with ordered turns."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}") from exc
    if isinstance(data, dict):
        data = data.get("sessions")
    if not isinstance(data, list) or not data:
        raise FormatError("expected a non-empty list of sessions", str(path))
    sessions = []
    for i, record in enumerate(data):
        location = f"{path}: session {i}"
        if not isinstance(record, dict) or "session_id" not in record or "turns" not in record:
            raise FormatError("session needs session_id and turns", location)
        turns_raw = record["turns"]
        if not isinstance(turns_raw, list) or not turns_raw:
            raise FormatError("turns must be a non-empty list", location)
        turns = []
        for j, turn in enumerate(turns_raw):
            if not isinstance(turn, dict) or "user" not in turn:
                raise FormatError(f"turn {j} needs a user field", location)
            turns.append(
                DialogueTurn(
                    index=j,
                    user_text=turn["user"],
                    assistant_text=turn.get("assistant", ""),
                    timestamp=turn.get("timestamp"),
                )
            )
        sessions.append(
            Session(session_id=str(record["session_id"]), turns=turns, date=record.get("date"))
        )
    return sessions


def _load_config(args) -> AppConfig:
    config = AppConfig.load(getattr(args, "config", None))
    if getattr(args, "offline", False):
        config.offline_mode = True
        config.validate()
    return config


def _open_bank(directory: str) -> MemoryBank:
    bank_dir = Path(directory)
    if (bank_dir / MANIFEST_FILE).exists():
        return load_bank(bank_dir)
    return MemoryBank()


def cmd_ingest(args) -> int:
    config = _load_config(args)
    sessions = load_sessions_file(args.input)
    bank = _open_bank(args.bank)
    generation = config.generation_provider()
    embedder = config.embedding_provider()
    units_added = 0
    edges_added = 0
    for session in sessions:
        _, edges = ingest_session(
            bank, session, generation, embedder, max_concurrency=config.max_concurrency
        )
        units_added += 1
        edges_added += edges
    save_bank(bank, args.bank, embedding_fingerprint=embedder.fingerprint())
    print(
        f"ingested {units_added} units, {edges_added} edges added "
        f"({len(bank)} units, {bank.graph.edge_count()} edges total)"
    )
    return EXIT_OK


def _retrieval_config(config: AppConfig, k: int | None, filter_enabled: bool) -> RetrievalConfig:
    base = config.retrieval
    return RetrievalConfig(
        top_k=k if k is not None else base.top_k,
        seed_count=base.seed_count,
        damping=base.damping,
        ppr_tol=base.ppr_tol,
        ppr_max_iter=base.ppr_max_iter,
        temperature=base.temperature,
        entropy_floor=base.entropy_floor,
        filter_enabled=filter_enabled,
    )


def cmd_query(args) -> int:
    config = _load_config(args)
    bank = _open_bank(args.bank)
    retrieval_config = _retrieval_config(config, args.k, not args.no_filter)
    result = retrieve(
        args.query,
        bank,
        retrieval_config,
        config.embedding_provider(),
        generation_provider=config.generation_provider(),
        question_date=args.date,
    )
    if args.json:
        print(json.dumps(result.to_dict(), ensure_ascii=False, indent=2))
        return EXIT_OK
    for rank, memory in enumerate(result.ranked, start=1):
        print(
            f"{rank}. {memory.memory_id}  session={memory.session_id}  "
            f"ppr={memory.ppr_score:.6f}  initial={memory.initial_score:.6f}"
        )
    if result.filtered_context is not None:
        print("\n--- filtered context ---")
        print(result.filtered_context)
    return EXIT_OK


def cmd_answer(args) -> int:
    config = _load_config(args)
    bank = _open_bank(args.bank)
    retrieval_config = _retrieval_config(config, args.k, not args.no_filter)
    answer, _ = answer_question(
        args.query,
        bank,
        retrieval_config,
        config.embedding_provider(),
        config.generation_provider(),
        question_date=args.date,
        offline=config.offline_mode,
    )
    print(answer)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args)
    loader = load_longmemeval if args.format == "longmemeval" else load_locomo
    dataset = loader(args.dataset)
    try:
        k_list = tuple(int(part) for part in args.k_list.split(","))
    except ValueError:
        raise FormatError(f"--k-list must be comma-separated integers, got {args.k_list!r}")
    single = Granularity(args.single_granularity) if args.single_granularity else None
    ablations = AblationFlags(
        no_gmm=args.no_gmm,
        no_ppr=args.no_ppr,
        no_ma=args.no_ma,
        no_router=args.no_router,
        single_granularity=single,
    )
    report = run_eval(
        dataset,
        retrieval_config=config.retrieval,
        ablations=ablations,
        k_list=k_list,
        generation_provider=config.generation_provider(),
        embedding_provider=config.embedding_provider(),
        max_workers=args.workers,
    )
    from .report import render_figures, render_text_table, write_per_query_csv, write_report_json

    print(render_text_table(report))
    if args.csv:
        write_per_query_csv(report, args.csv)
    if args.report_dir:
        report_dir = Path(args.report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        write_report_json(report, report_dir / "report.json")
        write_per_query_csv(report, report_dir / "per_query.csv")
        for figure in render_figures(report, report_dir):
            log.info("wrote %s", figure)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _load_config(args)
    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        raise FormatError(f"--addr must be HOST:PORT, got {args.addr!r}")
    app = create_app(args.bank, config)
    uvicorn.run(app, host=host, port=int(port), log_level=config.log_level.lower())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="granmem", description="Multi-granularity conversational memory")
    parser.add_argument("--config", help="path to JSON config file")
    parser.add_argument(
        "--offline", action="store_true", help="force deterministic offline providers"
    )
    parser.add_argument("--log-level", default=None, help="logging level override")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="add sessions to a bank")
    p_ingest.add_argument("--bank", required=True, help="bank directory")
    p_ingest.add_argument("--input", required=True, help="sessions JSON file")
    p_ingest.set_defaults(func=cmd_ingest)

    p_query = sub.add_parser("query", help="retrieve memories for a query")
    p_query.add_argument("--bank", required=True)
    p_query.add_argument("--query", required=True)
    p_query.add_argument("--k", type=int, default=None, help="number of results")
    p_query.add_argument("--date", default=None, help="question date")
    p_query.add_argument("--no-filter", action="store_true", help="skip the redundancy filter")
    p_query.add_argument("--json", action="store_true", help="emit the full result as JSON")
    p_query.set_defaults(func=cmd_query)

    p_answer = sub.add_parser("answer", help="answer a question from memory")
    p_answer.add_argument("--bank", required=True)
    p_answer.add_argument("--query", required=True)
    p_answer.add_argument("--date", default=None)
    p_answer.add_argument("--k", type=int, default=None)
    p_answer.add_argument("--no-filter", action="store_true")
    p_answer.set_defaults(func=cmd_answer)

    p_eval = sub.add_parser("eval", help="run a retrieval benchmark")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--format", choices=("longmemeval", "locomo"), default="longmemeval")
    p_eval.add_argument("--k-list", default="3,5,10")
    p_eval.add_argument("--no-gmm", action="store_true")
    p_eval.add_argument("--no-ppr", action="store_true")
    p_eval.add_argument("--no-ma", action="store_true")
    p_eval.add_argument("--no-router", action="store_true")
    p_eval.add_argument(
        "--single-granularity",
        choices=[g.value for g in Granularity],
        default=None,
    )
    p_eval.add_argument("--csv", default=None, help="write per-query CSV to this path")
    p_eval.add_argument("--report-dir", default=None, help="write report JSON, CSV, and figures")
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.set_defaults(func=cmd_eval)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--bank", required=True)
    p_serve.add_argument("--addr", default="127.0.0.1:8080")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=(args.log_level or "INFO").upper())
    if getattr(args, "k", None) is not None and args.k < 1:
        parser.error("--k must be >= 1")
    try:
        return args.func(args)
    except GranmemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
