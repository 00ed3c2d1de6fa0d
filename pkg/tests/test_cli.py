"""End-to-end tests for the command line and the pipeline stages."""

import io
import json
import os

import pytest

from typedq.cli import main
from typedq.config import resolve_config
from typedq.pipeline import COMPARISON_COLUMNS, cmd_repl, tokenize

SMALL = ["--set", "model.d_emb=4", "--set", "model.d_hidden=6", "--set", "model.n_layers=1",
         "--set", "eval.max_gen_len=8"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic corpus, PMI table and a one-epoch std checkpoint built through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    logs = str(root / "logs")
    raw = str(root / "raw.tsv")
    distilled = str(root / "distilled.tsv")
    table = str(root / "table.pmi")
    ckpt_dir = str(root / "ckpt")
    assert main(["synth", "--out", raw, "--n", "60", "--log-dir", logs]) == 0
    assert main(["distill", "--raw", raw, "--out", distilled, "--log-dir", logs]) == 0
    assert main(["pmi-build", "--input", distilled, "--out", table, "--log-dir", logs]) == 0
    assert main(["train", "--corpus", distilled, "--pmi", table, "--out", ckpt_dir, "--epochs", "1",
                 "--batch-size", "16", "--log-dir", logs] + SMALL) == 0
    return {
        "root": root,
        "logs": logs,
        "distilled": distilled,
        "table": table,
        "checkpoint": os.path.join(ckpt_dir, "std_best.ckpt"),
    }


class TestExitCodes:

    def test_no_command(self):
        assert main([]) == 2

    def test_missing_required_flag(self):
        assert main(["train"]) == 2

    def test_bad_override(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "x.tsv"), "--set", "train.nope=1",
                     "--log-dir", str(tmp_path)]) == 2

    def test_missing_input_file(self, tmp_path):
        assert main(["distill", "--raw", str(tmp_path / "absent.tsv"), "--out", str(tmp_path / "out.tsv"),
                     "--log-dir", str(tmp_path)]) == 3
        assert not (tmp_path / "out.tsv").exists()

    def test_variant_mismatch(self, workspace):
        assert main(["generate", "--checkpoint", workspace["checkpoint"], "--post", "i eat sushi",
                     "--variant", "htd", "--log-dir", workspace["logs"]] + SMALL) == 3

    def test_hyperparameter_mismatch(self, workspace):
        assert main(["generate", "--checkpoint", workspace["checkpoint"], "--post", "i eat sushi",
                     "--preset", "paper", "--log-dir", workspace["logs"]]) == 3

    def test_repl_variant_mismatch(self, workspace, monkeypatch):
        monkeypatch.setattr("sys.stdin", io.StringIO("i eat sushi\n"))
        assert main(["repl", "--checkpoint", workspace["checkpoint"], "--variant", "htd",
                     "--log-dir", workspace["logs"]] + SMALL) == 3

    def test_failed_run_is_logged(self, tmp_path):
        main(["distill", "--raw", str(tmp_path / "absent.tsv"), "--out", str(tmp_path / "o.tsv"),
              "--log-dir", str(tmp_path)])
        records = [f for f in os.listdir(tmp_path) if f.startswith("run_")]
        assert len(records) == 1
        record = json.loads((tmp_path / records[0]).read_text(encoding="utf-8"))
        assert record["final_status"] == "failed"
        assert record["command"] == "distill"


class TestDistillCommand:

    def test_declaratives_only(self, tmp_path, capsys):
        raw = tmp_path / "raw.tsv"
        raw.write_text("hello\ti went home\nhi there\tnice weather today\n", encoding="utf-8")
        out = tmp_path / "out.tsv"
        assert main(["distill", "--raw", str(raw), "--out", str(out), "--log-dir", str(tmp_path)]) == 0
        assert out.read_text(encoding="utf-8") == ""
        assert "kept=0 dropped_nonquestion=2 dropped_universal=0" in capsys.readouterr().out

    def test_idempotent(self, workspace, tmp_path):
        again = tmp_path / "again.tsv"
        assert main(["distill", "--raw", workspace["distilled"], "--out", str(again),
                     "--log-dir", str(tmp_path)]) == 0
        assert again.read_bytes() == open(workspace["distilled"], "rb").read()


class TestGenerateCommand:

    def test_prints_question_and_trace(self, workspace, capsys):
        assert main(["generate", "--checkpoint", workspace["checkpoint"], "--post", "I eat sushi today",
                     "--trace", "--log-dir", workspace["logs"]] + SMALL) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("❓")
        assert "step\tP(I)\tP(T)\tP(O)\ttoken\ttype" in out

    def test_pmi_table_taken_from_checkpoint(self, workspace, capsys):
        assert main(["generate", "--checkpoint", workspace["checkpoint"], "--post", "i eat sushi",
                     "--log-dir", workspace["logs"]] + SMALL) == 0


class TestRepl:

    def _run(self, workspace, text: str):
        out = io.StringIO()
        config = resolve_config("repl", set_overrides=SMALL[1::2])
        answered = cmd_repl(config, workspace["checkpoint"], stream=io.StringIO(text), out=out)
        return answered, out.getvalue()

    def test_empty_stream(self, workspace):
        assert self._run(workspace, "") == (0, "")

    def test_same_line_twice(self, workspace):
        answered, text = self._run(workspace, "i eat sushi\ni eat sushi\n")
        assert answered == 2
        lines = text.splitlines()
        half = len(lines) // 2
        assert lines[:half] == lines[half:]

    def test_out_of_vocabulary_post(self, workspace):
        answered, text = self._run(workspace, "zzq qqz xyzzy\n")
        assert answered == 1
        assert "(none)" in text

    def test_blank_line_skipped(self, workspace):
        answered, _ = self._run(workspace, "\n   \ni eat sushi\n")
        assert answered == 1


class TestEvalCommand:

    def test_writes_report_and_detail(self, workspace, tmp_path):
        report = tmp_path / "report.json"
        assert main(["eval", "--checkpoint", workspace["checkpoint"], "--corpus", workspace["distilled"],
                     "--report", str(report), "--log-dir", workspace["logs"]] + SMALL) == 0
        data = json.loads(report.read_text(encoding="utf-8"))
        assert data["variant"] == "std"
        assert {"perplexity", "distinct1", "distinct2", "trr", "pattern_kl"} <= set(data)
        assert (tmp_path / "report_detail.csv").exists()

    def test_failed_detail_write_leaves_no_report(self, workspace, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("", encoding="utf-8")
        report = tmp_path / "report.json"
        assert main(["eval", "--checkpoint", workspace["checkpoint"], "--corpus", workspace["distilled"],
                     "--report", str(report), "--detail", str(blocker / "detail.csv"),
                     "--log-dir", workspace["logs"]] + SMALL) == 3
        assert not report.exists()


class TestPipeline:

    def _run(self, tmp_path, name: str) -> str:
        workdir = tmp_path / name
        args = ["pipeline", "--workdir", str(workdir), "--n", "60", "--epochs", "1",
                "--set", "train.batch_size=16", "--log-dir", str(tmp_path / "logs")] + SMALL
        assert main(args) == 0
        return (workdir / "comparison.tsv").read_text(encoding="utf-8")

    def test_deterministic_with_all_columns(self, tmp_path):
        first = self._run(tmp_path, "a")
        second = self._run(tmp_path, "b")
        assert first == second
        lines = first.splitlines()
        assert lines[0].split("\t") == list(COMPARISON_COLUMNS)
        assert [line.split("\t")[0] for line in lines[1:]] == ["std", "htd", "plain"]
        for line in lines[1:]:
            assert len(line.split("\t")) == len(COMPARISON_COLUMNS)

    def test_stage_failure_names_stage(self, tmp_path, capsys):
        args = ["pipeline", "--workdir", str(tmp_path / "w"), "--n", "1", "--log-dir", str(tmp_path / "logs")]
        assert main(args) == 3
        records = [f for f in os.listdir(tmp_path / "logs") if f.startswith("run_")]
        record = json.loads((tmp_path / "logs" / records[0]).read_text(encoding="utf-8"))
        assert "stage 'split' failed" in record["error_messages"][0]


class TestAnalyzeLogs:

    def test_summary(self, workspace, capsys):
        assert main(["analyze-logs", "--log-dir", workspace["logs"]]) == 0
        assert "Run Statistics" in capsys.readouterr().out


class TestTokenize:

    def test_question_mark_split(self):
        assert tokenize("What About Sushi?") == ["what", "about", "sushi", "?"]

    def test_blank(self):
        assert tokenize("   ") == []
