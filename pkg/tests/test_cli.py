"""CLI behavior: commands, exit codes, output formats."""

import json
from pathlib import Path

import jsonschema
import pytest

from granmem.cli import main
from granmem.pipeline import OFFLINE_ANSWER_BANNER

SCHEMA_PATH = Path(__file__).parent.parent / "docs" / "schemas" / "retrieval_result.schema.json"


@pytest.fixture
def bank_dir(tmp_path, data_dir):
    """A bank directory with the two sample sessions already ingested."""
    directory = tmp_path / "bank"
    code = main(["ingest", "--bank", str(directory), "--input", str(data_dir / "sessions_sample.json")])
    assert code == 0
    return directory


class TestIngest:
    def test_ingest_reports_counts(self, tmp_path, data_dir, capsys):
        code = main([
            "ingest", "--bank", str(tmp_path / "bank"),
            "--input", str(data_dir / "sessions_sample.json"),
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "ingested 2 units" in out
        assert (tmp_path / "bank" / "manifest.json").exists()

    def test_reingesting_same_sessions_fails(self, bank_dir, data_dir, capsys):
        code = main([
            "ingest", "--bank", str(bank_dir),
            "--input", str(data_dir / "sessions_sample.json"),
        ])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_malformed_input_is_format_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        code = main(["ingest", "--bank", str(tmp_path / "bank"), "--input", str(bad)])
        assert code == 2
        assert "invalid JSON" in capsys.readouterr().err

    def test_missing_input_is_io_error(self, tmp_path, capsys):
        code = main([
            "ingest", "--bank", str(tmp_path / "bank"),
            "--input", str(tmp_path / "absent.json"),
        ])
        assert code == 4

    def test_empty_session_list_rejected(self, tmp_path, capsys):
        empty = tmp_path / "empty.json"
        empty.write_text('{"sessions": []}')
        code = main(["ingest", "--bank", str(tmp_path / "bank"), "--input", str(empty)])
        assert code == 2

    def test_session_missing_turns_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps([{"session_id": "x"}]))
        code = main(["ingest", "--bank", str(tmp_path / "bank"), "--input", str(bad)])
        assert code == 2
        assert "turns" in capsys.readouterr().err


class TestQuery:
    def test_json_output_matches_schema(self, bank_dir, capsys):
        code = main([
            "query", "--bank", str(bank_dir),
            "--query", "greenhouse thermostat sensor", "--json",
        ])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        schema = json.loads(SCHEMA_PATH.read_text())
        jsonschema.validate(payload, schema)
        assert payload["ranked"][0]["session_id"] == "greenhouse"

    def test_text_output_lists_ranked_memories(self, bank_dir, capsys):
        code = main([
            "query", "--bank", str(bank_dir),
            "--query", "violin scratchy string", "--no-filter",
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert out.splitlines()[0].startswith("1. mem-violin")
        assert "ppr=" in out
        assert "--- filtered context ---" not in out

    def test_filter_enabled_by_default(self, bank_dir, capsys):
        code = main([
            "query", "--bank", str(bank_dir),
            "--query", "violin scratchy string",
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "--- filtered context ---" in out
        assert "violin" in out

    def test_k_zero_is_usage_error(self, bank_dir):
        with pytest.raises(SystemExit) as excinfo:
            main(["query", "--bank", str(bank_dir), "--query", "x", "--k", "0"])
        assert excinfo.value.code == 64

    def test_k_larger_than_bank_returns_everything(self, bank_dir, capsys):
        code = main([
            "query", "--bank", str(bank_dir),
            "--query", "greenhouse", "--k", "50", "--no-filter",
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert len([line for line in out.splitlines() if line and line[0].isdigit()]) == 2

    def test_empty_bank_exits_five(self, tmp_path, capsys):
        code = main([
            "query", "--bank", str(tmp_path / "nothing"),
            "--query", "anything",
        ])
        assert code == 5
        assert "error:" in capsys.readouterr().err


class TestAnswer:
    def test_offline_answer_shows_banner_and_context(self, bank_dir, capsys):
        code = main([
            "answer", "--bank", str(bank_dir),
            "--query", "what does the greenhouse thermostat read",
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert out.startswith(OFFLINE_ANSWER_BANNER)
        assert "thermostat" in out


class TestEval:
    def test_table_output(self, data_dir, capsys):
        code = main([
            "eval", "--dataset", str(data_dir / "longmemeval_sample.json"),
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "Recall@K" in out and "NDCG@K" in out
        assert "1.0000" in out
        assert "queries: 2" in out

    def test_k_list_flag(self, data_dir, capsys):
        code = main([
            "eval", "--dataset", str(data_dir / "longmemeval_sample.json"),
            "--k-list", "2,4",
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "\n   2  " in out and "\n   4  " in out

    def test_bad_k_list_is_format_error(self, data_dir, capsys):
        code = main([
            "eval", "--dataset", str(data_dir / "longmemeval_sample.json"),
            "--k-list", "a,b",
        ])
        assert code == 2

    def test_csv_written(self, data_dir, tmp_path, capsys):
        csv_path = tmp_path / "per_query.csv"
        code = main([
            "eval", "--dataset", str(data_dir / "longmemeval_sample.json"),
            "--csv", str(csv_path),
        ])
        assert code == 0
        header = csv_path.read_text().splitlines()[0]
        assert "recall@3" in header and "ndcg@10" in header
        assert len(csv_path.read_text().splitlines()) == 3  # header + 2 queries

    def test_report_dir_writes_json_csv_and_figures(self, data_dir, tmp_path, capsys):
        report_dir = tmp_path / "report"
        code = main([
            "eval", "--dataset", str(data_dir / "longmemeval_sample.json"),
            "--report-dir", str(report_dir),
        ])
        assert code == 0
        assert (report_dir / "report.json").exists()
        assert (report_dir / "per_query.csv").exists()
        assert (report_dir / "metrics_vs_k.png").stat().st_size > 0
        assert (report_dir / "recall_histogram.png").stat().st_size > 0
        payload = json.loads((report_dir / "report.json").read_text())
        assert payload["mean_recall"]["3"] == 1.0

    def test_locomo_format(self, data_dir, capsys):
        code = main([
            "eval", "--dataset", str(data_dir / "locomo_sample.json"),
            "--format", "locomo",
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "queries: 2" in out

    def test_ablation_flags_accepted(self, data_dir, capsys):
        code = main([
            "eval", "--dataset", str(data_dir / "longmemeval_sample.json"),
            "--no-ppr", "--single-granularity", "session",
        ])
        assert code == 0

    def test_missing_dataset_is_io_error(self, tmp_path, capsys):
        code = main(["eval", "--dataset", str(tmp_path / "absent.json")])
        assert code == 4


class TestUsage:
    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 64

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["query", "--bank", "x", "--query", "y", "--frobnicate"])
        assert excinfo.value.code == 64

    def test_bad_single_granularity_choice(self, data_dir):
        with pytest.raises(SystemExit) as excinfo:
            main([
                "eval", "--dataset", str(data_dir / "longmemeval_sample.json"),
                "--single-granularity", "paragraph",
            ])
        assert excinfo.value.code == 64
