"""Rendering of evaluation reports: table, JSON, CSV, and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluation import EvalReport


def render_text_table(report: EvalReport) -> str:
    """Metric grid with one row per K, mirroring the standard layout."""
    lines = [
        f"queries: {len(report.per_query)}    config: {report.config_fingerprint[:12]}",
        f"{'K':>4}  {'Recall@K':>10}  {'NDCG@K':>10}",
    ]
    for k in report.k_list:
        lines.append(f"{k:>4}  {report.mean_recall[k]:>10.4f}  {report.mean_ndcg[k]:>10.4f}")
    return "\n".join(lines)


def write_report_json(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def write_per_query_csv(report: EvalReport, path: str | Path) -> None:
    """One row per query with its per-K metrics."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        header = ["conversation_id", "query_index", "query_type", "gold", "retrieved_top10"]
        for k in report.k_list:
            header.extend([f"recall@{k}", f"ndcg@{k}"])
        writer.writerow(header)
        for record in report.per_query:
            row = [
                record.conversation_id,
                record.query_index,
                record.query_type or "",
                "|".join(record.gold_session_ids),
                "|".join(record.retrieved_session_ids[:10]),
            ]
            for k in report.k_list:
                row.extend([f"{record.recall[k]:.6f}", f"{record.ndcg[k]:.6f}"])
            writer.writerow(row)


def render_figures(report: EvalReport, directory: str | Path) -> list[Path]:
    """Write metric figures next to the delimited output; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ks = list(report.k_list)
    ax.plot(ks, [report.mean_recall[k] for k in ks], marker="o", label="Recall@K")
    ax.plot(ks, [report.mean_ndcg[k] for k in ks], marker="s", label="NDCG@K")
    ax.set_xlabel("K")
    ax.set_ylabel("score")
    ax.set_xticks(ks)
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.set_title("Retrieval quality vs. K")
    fig.tight_layout()
    path = directory / "metrics_vs_k.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    first_k = report.k_list[0]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(
        [record.recall[first_k] for record in report.per_query],
        bins=10,
        range=(0.0, 1.0),
        edgecolor="black",
    )
    ax.set_xlabel(f"Recall@{first_k}")
    ax.set_ylabel("queries")
    ax.set_title(f"Per-query Recall@{first_k}")
    fig.tight_layout()
    path = directory / "recall_histogram.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
