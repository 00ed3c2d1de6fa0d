"""Desk-scale reference run: pipeline with seed 7, 2000 synthetic pairs, 30 epochs per variant."""

import csv
import json
import os
import shutil
import time

import pytest

from typedq.cli import main

pytestmark = pytest.mark.slow

VARIANTS = ("std", "htd", "plain")
REFERENCE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "reference_run")
TIME_LIMIT_SECONDS = 30 * 60


def _read_curve(path) -> list:
    with open(path, newline="", encoding="utf-8") as f:
        return [{key: float(value) for key, value in row.items()} for row in csv.DictReader(f)]


def _record(workdir, elapsed: float) -> None:
    os.makedirs(REFERENCE_DIR, exist_ok=True)
    shutil.copy(workdir / "comparison.tsv", REFERENCE_DIR)
    for variant in VARIANTS:
        shutil.copy(workdir / f"report_{variant}.json", REFERENCE_DIR)
        shutil.copy(workdir / "ckpt" / f"{variant}_report.csv", REFERENCE_DIR)
    run = {"seed": 7, "synth_size": 2000, "epochs": 30, "wall_seconds": round(elapsed, 1)}
    with open(os.path.join(REFERENCE_DIR, "run.json"), "w", encoding="utf-8") as f:
        json.dump(run, f, indent=2, sort_keys=True)
        f.write("\n")


@pytest.fixture(scope="module")
def reference_run(tmp_path_factory, request):
    root = tmp_path_factory.mktemp("reference")
    workdir = root / "work"
    started = time.perf_counter()
    assert main(["pipeline", "--workdir", str(workdir), "--seed", "7", "--n", "2000", "--epochs", "30",
                 "--log-dir", str(root / "logs")]) == 0
    elapsed = time.perf_counter() - started
    if request.config.getoption("--record-reference"):
        _record(workdir, elapsed)
    return {
        "elapsed": elapsed,
        "reports": {v: json.loads((workdir / f"report_{v}.json").read_text(encoding="utf-8")) for v in VARIANTS},
        "curves": {v: _read_curve(workdir / "ckpt" / f"{v}_report.csv") for v in VARIANTS},
    }


class TestReferenceRun:

    def test_within_time_limit(self, reference_run):
        assert reference_run["elapsed"] < TIME_LIMIT_SECONDS

    def test_std_training_loss_halves(self, reference_run):
        curve = reference_run["curves"]["std"]
        assert curve[-1]["phi1"] < 0.5 * curve[0]["phi1"]

    @pytest.mark.parametrize("variant", ["std", "htd"])
    def test_validation_perplexity_falls(self, reference_run, variant):
        curve = reference_run["curves"][variant]
        assert min(row["valid_perplexity"] for row in curve) < 0.6 * curve[0]["valid_perplexity"]

    def test_topical_ordering(self, reference_run):
        reports = reference_run["reports"]
        assert reports["htd"]["trr"] >= reports["std"]["trr"] >= reports["plain"]["trr"]

    def test_htd_distinct2_not_below_ablation(self, reference_run):
        reports = reference_run["reports"]
        assert reports["htd"]["distinct2"] >= reports["plain"]["distinct2"]

    def test_htd_questions_end(self, reference_run):
        assert reference_run["reports"]["htd"]["eos_rate"] >= 0.95

    def test_htd_interrogative_steps_typed(self, reference_run):
        assert reference_run["reports"]["htd"]["question_alignment"] >= 0.9
