#!/usr/bin/env python3
"""
Stage orchestration for the typedq command line.

Each cmd_* function runs one subcommand end to end: it loads its inputs,
calls into the computational modules, writes outputs atomically and prints
short status lines.
"""

import logging
import os
import sys
import time
from dataclasses import asdict, replace
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from typedq.config import CliConfig, stage_seed, with_variant
from typedq.corpus import (
    CorpusPair,
    LoadStats,
    TypeLexicons,
    distill,
    load_lexicons,
    load_pairs,
    synth_corpus,
    tag_pairs,
    write_pairs,
)
from typedq.errors import InvalidInputError, PipelineError, TypedQError
from typedq.evalgen import Generation, MetricReport, evaluate, generate, write_detail_csv, write_metric_report
from typedq.file_ops import write_file
from typedq.log_utils import log_stage
from typedq.model import VARIANTS
from typedq.pmi import PmiTable, build_table, export_tsv, load_table, save_table
from typedq.trainer import Checkpoint, TrainReport, checkpoint_load, train, write_report_csv

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = ("variant", "perplexity", "distinct1", "distinct2", "trr", "pattern_kl")
TEST_FRACTION = 0.1


def lexicons_for(config: CliConfig) -> TypeLexicons:
    return load_lexicons(
        config.paths.get("interrogatives"),
        config.paths.get("content_lexicon"),
        config.paths.get("templates"),
    )


def tokenize(text: str) -> List[str]:
    """Lower-cased whitespace tokens; a trailing '?' glued to a word is split off."""
    tokens = []
    for token in text.lower().split():
        if len(token) > 1 and token.endswith("?"):
            tokens.extend([token[:-1], "?"])
        else:
            tokens.append(token)
    return tokens


def read_pairs(path: str, config: CliConfig) -> List[CorpusPair]:
    stats = LoadStats()
    pairs = list(load_pairs(path, config.corpus.max_len, stats))
    if stats.warnings:
        logger.warning(f"⚠️ {path}: skipped {stats.blank} blank, {stats.malformed} malformed, "
                       f"{stats.too_long} over-long lines")
    if not pairs:
        raise InvalidInputError(f"{path}: no usable pairs")
    logger.info(f"📚 Loaded {len(pairs)} pairs from {path}")
    return pairs


def cmd_synth(out_path: str, seed: int, n: int) -> List[CorpusPair]:
    """Write a synthetic raw corpus."""
    pairs = synth_corpus(seed, n)
    write_pairs(out_path, pairs)
    print(f"🧪 Wrote {len(pairs)} synthetic pairs to {out_path}")
    return pairs


def cmd_distill(config: CliConfig, raw_path: str, out_path: str) -> str:
    """Keep question responses, drop universal ones; returns the stats line."""
    lexicons = lexicons_for(config)
    pairs = read_pairs(raw_path, config)
    kept, stats = distill(pairs, lexicons, config.corpus.universal_threshold)
    write_pairs(out_path, kept)
    line = stats.line()
    print(f"🧹 Distilled {raw_path} -> {out_path}: {line}")
    logger.info(f"🧹 {line}")
    return line


def cmd_pmi_build(config: CliConfig, corpus_path: str, out_path: str, tsv_path: Optional[str] = None) -> PmiTable:
    table = build_table(read_pairs(corpus_path, config), config.pmi.min_count)
    save_table(out_path, table)
    if tsv_path:
        export_tsv(tsv_path, table)
    print(f"📊 PMI table with {len(table.joint_count)} joint entries written to {out_path}")
    return table


def cmd_train(config: CliConfig, corpus_path: str, out_dir: str, pmi_path: Optional[str] = None,
              run_entry: Optional[Dict] = None, show_progress: bool = False) -> TrainReport:
    """Train config.model.variant; writes <variant>_best.ckpt and <variant>_report.csv into out_dir."""
    if pmi_path:
        # fail before training rather than at generation time
        load_table(pmi_path)
    lexicons = lexicons_for(config)
    pairs = tag_pairs(read_pairs(corpus_path, config), lexicons)
    train_config = replace(config.train, checkpoint_dir=out_dir)
    meta = {"pmi_table": os.path.abspath(pmi_path) if pmi_path else None, "train": asdict(train_config)}
    variant = config.model.variant
    print(f"🧠 Training {variant} on {len(pairs)} pairs...")
    report = train(train_config, config.model, pairs, lexicons, run_entry=run_entry,
                   show_progress=show_progress, meta=meta,
                   topic_min_count=config.pmi.min_count, n_topics=config.pmi.n_topics)
    csv_path = os.path.join(out_dir, f"{variant}_report.csv")
    write_report_csv(csv_path, report)
    print(f"✅ {variant}: best validation perplexity {report.best_perplexity:.3f} "
          f"(epoch {report.best_epoch}), checkpoint {report.best_checkpoint}")
    print(f"📝 Report: {csv_path}")
    return report


def _open_session(config: CliConfig, checkpoint_path: str, pmi_path: Optional[str],
                  expected_variant: Optional[str] = None) -> Tuple[Checkpoint, PmiTable]:
    checkpoint = checkpoint_load(checkpoint_path, expected_variant, config.model)
    pmi_path = pmi_path or checkpoint.meta.get("pmi_table")
    if not pmi_path:
        raise InvalidInputError("no PMI table given and the checkpoint does not name one")
    return checkpoint, load_table(pmi_path)


def _print_generation(g: Generation, vocab, out: TextIO, show_trace: bool) -> None:
    print(f"❓ {' '.join(g.tokens) if g.tokens else '(empty)'}", file=out)
    print(f"🏷️  topics: {' '.join(g.topics) if g.topics else '(none)'}", file=out)
    if show_trace:
        print("step\tP(I)\tP(T)\tP(O)\ttoken\ttype", file=out)
        for line in g.trace.to_lines(vocab):
            print(line, file=out)


def _generation_rng(config: CliConfig) -> Optional[np.random.Generator]:
    return np.random.default_rng(stage_seed(config.seed, "generate")) if config.eval.sample else None


def cmd_generate(config: CliConfig, checkpoint_path: str, post: str, pmi_path: Optional[str] = None,
                 show_trace: bool = False, expected_variant: Optional[str] = None,
                 out: Optional[TextIO] = None) -> Generation:
    out = out or sys.stdout
    checkpoint, table = _open_session(config, checkpoint_path, pmi_path, expected_variant)
    tokens = tokenize(post)
    if not tokens:
        raise InvalidInputError("post is empty")
    g = generate(checkpoint.params, checkpoint.vocab, tokens, table, lexicons_for(config),
                 tau=config.train.tau_final, n_topics=config.pmi.n_topics, max_len=config.eval.max_gen_len,
                 sample=config.eval.sample, rng=_generation_rng(config))
    _print_generation(g, checkpoint.vocab, out, show_trace)
    return g


def cmd_eval(config: CliConfig, checkpoint_path: str, corpus_path: str, report_path: str,
             pmi_path: Optional[str] = None, detail_path: Optional[str] = None,
             expected_variant: Optional[str] = None, show_progress: bool = False) -> MetricReport:
    checkpoint, table = _open_session(config, checkpoint_path, pmi_path, expected_variant)
    lexicons = lexicons_for(config)
    pairs = tag_pairs(read_pairs(corpus_path, config), lexicons)
    report, detail = evaluate(
        checkpoint.params, checkpoint.vocab, pairs, table, lexicons,
        tau=config.train.tau_final,
        n_topics=config.pmi.n_topics,
        max_len=config.eval.max_gen_len,
        distinct2_denominator=config.eval.distinct2_denominator,
        sample=config.eval.sample,
        rng=_generation_rng(config),
        show_progress=show_progress,
    )
    detail_path = detail_path or os.path.splitext(report_path)[0] + "_detail.csv"
    # report.json last: its presence means the detail file is complete
    write_detail_csv(detail_path, detail)
    write_metric_report(report_path, report)
    print(f"📏 {report.variant}: perplexity={report.perplexity:.3f} distinct1={report.distinct1:.4f} "
          f"distinct2={report.distinct2:.4f} trr={report.trr:.3f} pattern_kl={report.pattern_kl:.4f}")
    print(f"📝 Report: {report_path} (detail: {detail_path})")
    return report


def cmd_repl(config: CliConfig, checkpoint_path: str, pmi_path: Optional[str] = None, show_trace: bool = False,
             stream: Optional[TextIO] = None, out: Optional[TextIO] = None,
             expected_variant: Optional[str] = None) -> int:
    """Generate a question for every line read until EOF; returns the number of posts answered."""
    stream = stream or sys.stdin
    out = out or sys.stdout
    checkpoint, table = _open_session(config, checkpoint_path, pmi_path, expected_variant)
    lexicons = lexicons_for(config)
    rng = _generation_rng(config)
    if stream.isatty():
        print("💬 Enter a post per line (Ctrl-D to quit)", file=out)
    answered = 0
    for line in stream:
        tokens = tokenize(line)
        if not tokens:
            logger.warning("⚠️ empty post ignored")
            continue
        try:
            g = generate(checkpoint.params, checkpoint.vocab, tokens, table, lexicons,
                         tau=config.train.tau_final, n_topics=config.pmi.n_topics,
                         max_len=config.eval.max_gen_len, sample=config.eval.sample, rng=rng)
        except TypedQError as e:
            logger.warning(f"⚠️ could not answer '{line.strip()}': {e}")
            continue
        _print_generation(g, checkpoint.vocab, out, show_trace)
        answered += 1
    return answered


def _run_stage(run_entry: Optional[Dict], stage: str, fn: Callable, *args, **kwargs):
    """Run one pipeline stage, timing it and tagging any failure with the stage name."""
    print(f"\n▶️  Stage: {stage}")
    started = time.perf_counter()
    try:
        result = fn(*args, **kwargs)
    except TypedQError as e:
        if run_entry is not None:
            log_stage(run_entry, stage, "failed", time.perf_counter() - started, {"error": str(e)})
        raise PipelineError(stage, e) from e
    if run_entry is not None:
        log_stage(run_entry, stage, "completed", time.perf_counter() - started)
    return result


def format_comparison(reports: Sequence[MetricReport]) -> str:
    lines = ["\t".join(COMPARISON_COLUMNS)]
    for r in reports:
        lines.append(f"{r.variant}\t{r.perplexity:.4f}\t{r.distinct1:.4f}\t{r.distinct2:.4f}\t"
                     f"{r.trr:.4f}\t{r.pattern_kl:.4f}")
    return "\n".join(lines) + "\n"


def cmd_pipeline(config: CliConfig, workdir: str, variants: Sequence[str] = VARIANTS,
                 run_entry: Optional[Dict] = None, show_progress: bool = False) -> str:
    """synth → distill → split → pmi-build → train and eval every variant → comparison.tsv."""
    os.makedirs(workdir, exist_ok=True)
    raw_path = os.path.join(workdir, "raw.tsv")
    distilled_path = os.path.join(workdir, "distilled.tsv")
    train_path = os.path.join(workdir, "train.tsv")
    test_path = os.path.join(workdir, "test.tsv")
    pmi_path = os.path.join(workdir, "table.pmi")
    ckpt_dir = os.path.join(workdir, "ckpt")

    print(f"🚀 Pipeline in {workdir} (seed {config.seed})")
    _run_stage(run_entry, "synth", cmd_synth, raw_path, stage_seed(config.seed, "synth"), config.corpus.synth_size)
    _run_stage(run_entry, "distill", cmd_distill, config, raw_path, distilled_path)

    def split_stage():
        pairs = read_pairs(distilled_path, config)
        order = np.random.default_rng(stage_seed(config.seed, "split")).permutation(len(pairs))
        n_test = max(1, int(round(len(pairs) * TEST_FRACTION)))
        if n_test >= len(pairs):
            raise InvalidInputError("too few distilled pairs to hold out a test set")
        write_pairs(test_path, [pairs[i] for i in order[:n_test]])
        write_pairs(train_path, [pairs[i] for i in order[n_test:]])
        print(f"✂️  {len(pairs) - n_test} training / {n_test} test pairs")

    _run_stage(run_entry, "split", split_stage)
    _run_stage(run_entry, "pmi-build", cmd_pmi_build, config, train_path, pmi_path)

    reports = []
    for variant in variants:
        variant_config = with_variant(config, variant)
        trained = _run_stage(run_entry, f"train-{variant}", cmd_train, variant_config, train_path, ckpt_dir,
                             pmi_path, run_entry, show_progress)
        reports.append(_run_stage(
            run_entry, f"eval-{variant}", cmd_eval, variant_config, trained.best_checkpoint, test_path,
            os.path.join(workdir, f"report_{variant}.json"), pmi_path,
            expected_variant=variant, show_progress=show_progress,
        ))

    comparison_path = os.path.join(workdir, "comparison.tsv")
    table = format_comparison(reports)
    write_file(comparison_path, table)
    print(f"\n🏁 Comparison ({comparison_path}):\n{table}")
    return comparison_path
