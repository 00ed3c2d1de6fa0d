"""Tests for run records and atomic file helpers."""

import os

import pytest

from typedq.errors import DataIOError
from typedq.file_ops import read_entries, read_file, write_bytes, write_file
from typedq.log_utils import (
    analyze_logs,
    create_run_entry,
    load_run_logs,
    log_epoch,
    log_stage,
    save_run_log,
    summarize_runs,
)


class TestRunRecords:

    def test_entry_fields(self):
        entry = create_run_entry("train", config={"seed": 7})
        assert entry["command"] == "train"
        assert entry["config"] == {"seed": 7}
        assert entry["stages"] == [] and entry["epochs"] == []
        assert entry["final_status"] is None

    def test_save_and_load(self, tmp_path):
        entry = create_run_entry("pipeline")
        log_stage(entry, "synth", "completed", 0.12345)
        log_epoch(entry, "htd", {"epoch": 1, "valid_perplexity": 42.0})
        entry["final_status"] = "completed"
        path = save_run_log(entry, str(tmp_path))
        assert os.path.basename(path).startswith("run_")
        (record,) = load_run_logs(str(tmp_path))
        assert record["stages"][0] == {"stage": "synth", "status": "completed", "seconds": 0.123, "detail": {}}
        assert record["epochs"][0]["variant"] == "htd"

    def test_unreadable_record_skipped(self, tmp_path, capsys):
        (tmp_path / "run_broken.json").write_text("{", encoding="utf-8")
        assert load_run_logs(str(tmp_path)) == []
        assert "Error reading" in capsys.readouterr().out

    def test_summary(self):
        records = [
            {"command": "train", "final_status": "completed",
             "epochs": [{"variant": "std", "valid_perplexity": 30.0}, {"variant": "std", "valid_perplexity": 25.0}]},
            {"command": "train", "final_status": "failed", "error_messages": ["boom"],
             "epochs": [{"variant": "htd", "valid_perplexity": 20.0}]},
            {"command": "eval", "final_status": "failed", "error_messages": ["boom"]},
        ]
        stats = summarize_runs(records)
        assert stats["total_runs"] == 3
        assert stats["by_status"] == {"completed": 1, "failed": 2}
        assert stats["by_command"] == {"train": 2, "eval": 1}
        assert stats["best_perplexity"] == {"std": 25.0, "htd": 20.0}
        assert stats["common_errors"] == {"boom": 2}

    def test_analyze_missing_dir(self, tmp_path):
        assert analyze_logs(str(tmp_path / "nowhere")) is None

    def test_analyze_empty_dir(self, tmp_path):
        assert analyze_logs(str(tmp_path)) is None


class TestFileOps:

    def test_write_replaces_whole_file(self, tmp_path):
        path = str(tmp_path / "sub" / "out.txt")
        write_file(path, "first version\n")
        write_file(path, "second\n")
        assert read_file(path) == "second\n"
        assert [n for n in os.listdir(tmp_path / "sub") if n.startswith(".tmp-")] == []

    def test_failed_write_leaves_no_file(self, tmp_path):
        path = str(tmp_path / "out.bin")
        with pytest.raises(TypeError):
            write_bytes(path, "not bytes")
        assert os.listdir(tmp_path) == []

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("", encoding="utf-8")
        with pytest.raises(DataIOError):
            write_file(str(blocker / "out.txt"), "x\n")

    def test_read_missing(self, tmp_path):
        with pytest.raises(DataIOError):
            read_file(str(tmp_path / "absent"))

    def test_entries_skip_comments(self, tmp_path):
        path = tmp_path / "list.txt"
        path.write_text("# header\nwhat\n\n  how \n", encoding="utf-8")
        assert read_entries(str(path)) == [(2, "what"), (4, "how")]
