#!/usr/bin/env python3
"""
Command line interface for typedq.
"""

import argparse
import json
import logging
import sys
import time
from typing import Any, Dict, List, Optional

from typedq.config import PRESETS, resolve_config
from typedq.errors import TypedQError, UsageError
from typedq.log_utils import DEFAULT_LOG_DIR, analyze_logs, create_run_entry, save_run_log, setup_logging
from typedq.model import VARIANTS
from typedq.pipeline import (
    cmd_distill,
    cmd_eval,
    cmd_generate,
    cmd_pipeline,
    cmd_pmi_build,
    cmd_repl,
    cmd_synth,
    cmd_train,
)

EPILOG = """
Pipeline:
1. synth      writes a synthetic post/question corpus (post<TAB>response)
2. distill    keeps question-form responses and drops universal questions
3. pmi-build  counts post/response co-occurrences for topic prediction
4. train      trains one decoder variant (std, htd or plain)
5. generate   answers one post; --trace prints the per-step type table
6. eval       perplexity, distinct-1/2, TRR and pattern KL on a test file
7. repl       reads one post per line from stdin until EOF
8. pipeline   runs 1-6 for all variants and writes comparison.tsv

Configuration:
- --config FILE reads a TOML file with [model] [train] [corpus] [pmi] [eval]
- --set section.key=value overrides single keys (repeatable)
- explicit flags win over --set, which wins over the file
- --preset paper switches to the large model sizes

Logging:
- Every run writes a log file and a JSON run record to --log-dir (default: logs)
- The resolved configuration is logged so a run can be reproduced exactly
- Use 'analyze-logs' to summarize previous runs

Exit codes: 0 ok, 2 usage, 3 data/format, 4 numeric failure.
"""


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument('--config', help='TOML configuration file')
    p.add_argument('--preset', choices=sorted(PRESETS), help='Size preset applied before the config file')
    p.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                   help='Override one configuration key (repeatable)')
    p.add_argument('--seed', type=int, help='Root seed (default: 7)')
    p.add_argument('--log-dir', default=DEFAULT_LOG_DIR, help=f'Directory for logs (default: {DEFAULT_LOG_DIR})')
    p.add_argument('--verbose', action='store_true', help='Debug-level logging')
    p.add_argument('--interrogatives', help='Interrogative word list (default: bundled)')
    p.add_argument('--content-lexicon', help='Noun/verb content lexicon TSV (default: bundled)')
    p.add_argument('--templates', help='Question-lead template list (default: bundled)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="typedq",
        description="Typed-decoder question generation for open-domain dialogue",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG
    )
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')

    p = sub.add_parser('synth', help='Write a synthetic raw corpus')
    _add_common(p)
    p.add_argument('--out', required=True, help='Output TSV path')
    p.add_argument('--n', type=int, help='Number of pairs (default: corpus.synth_size)')

    p = sub.add_parser('distill', help='Keep question responses, drop universal ones')
    _add_common(p)
    p.add_argument('--raw', required=True, help='Raw post<TAB>response TSV')
    p.add_argument('--out', required=True, help='Distilled TSV path')
    p.add_argument('--threshold', type=int, help='Universal-question threshold (default: 10)')
    p.add_argument('--max-len', type=int, help='Skip pairs longer than this (default: 30)')

    p = sub.add_parser('pmi-build', help='Build the PMI table')
    _add_common(p)
    p.add_argument('--input', '--corpus', dest='corpus', required=True, help='Pairs TSV (raw or distilled)')
    p.add_argument('--out', required=True, help='Binary PMI table path')
    p.add_argument('--min-count', type=int, help='Drop counts below this (default: 1)')
    p.add_argument('--tsv', help='Also write a readable TSV dump')

    p = sub.add_parser('train', help='Train one decoder variant')
    _add_common(p)
    p.add_argument('--variant', choices=VARIANTS, help='Decoder variant (default: std)')
    p.add_argument('--corpus', required=True, help='Distilled training TSV')
    p.add_argument('--pmi', help='PMI table recorded in the checkpoint for later generation')
    p.add_argument('--out', required=True, help='Checkpoint directory')
    p.add_argument('--epochs', type=int, help='Training epochs (default: 30)')
    p.add_argument('--batch-size', type=int, help='Batch size (default: 32)')
    p.add_argument('--lr', type=float, help='Adam learning rate (default: 1e-3)')
    p.add_argument('--lam', type=float, help='Type-loss weight λ (default: 0.8)')
    p.add_argument('--progress', action='store_true', help='Show progress bars')

    for name, help_text in (('generate', 'Generate a question for one post'),
                            ('repl', 'Interactive generation from stdin')):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.add_argument('--checkpoint', required=True, help='Checkpoint file')
        p.add_argument('--pmi', help='PMI table (default: the one recorded in the checkpoint)')
        p.add_argument('--trace', action='store_true', help='Print the per-step type distribution table')
        p.add_argument('--sample', action='store_true', help='HTD: sample Gumbel noise instead of g=0')
        p.add_argument('--variant', choices=VARIANTS, help='Refuse checkpoints of another variant')
        if name == 'generate':
            p.add_argument('--post', required=True, help='The post text')

    p = sub.add_parser('eval', help='Compute metrics on a test corpus')
    _add_common(p)
    p.add_argument('--checkpoint', required=True, help='Checkpoint file')
    p.add_argument('--corpus', required=True, help='Test pairs TSV')
    p.add_argument('--pmi', help='PMI table (default: the one recorded in the checkpoint)')
    p.add_argument('--report', required=True, help='JSON metric report path')
    p.add_argument('--detail', help='Per-post CSV path (default: <report>_detail.csv)')
    p.add_argument('--variant', choices=VARIANTS, help='Refuse checkpoints of another variant')
    p.add_argument('--sample', action='store_true', help='HTD: sample Gumbel noise instead of g=0')
    p.add_argument('--progress', action='store_true', help='Show progress bars')

    p = sub.add_parser('pipeline', help='Full synthetic demo run for all variants')
    _add_common(p)
    p.add_argument('--workdir', required=True, help='Working directory for all artifacts')
    p.add_argument('--n', type=int, help='Synthetic corpus size (default: 2000)')
    p.add_argument('--epochs', type=int, help='Training epochs per variant (default: 30)')
    p.add_argument('--variants', nargs='+', choices=VARIANTS, default=list(VARIANTS),
                   help='Variants to train and compare (default: all)')
    p.add_argument('--progress', action='store_true', help='Show progress bars')

    p = sub.add_parser('analyze-logs', help='Summarize previous run records')
    p.add_argument('--log-dir', default=DEFAULT_LOG_DIR, help=f'Directory with run logs (default: {DEFAULT_LOG_DIR})')
    return parser


def _flag_layer(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Explicit flags mapped onto config sections; unset flags are None and ignored."""
    get = lambda name: getattr(args, name, None)
    return {
        "model": {"variant": get('variant') if args.command == 'train' else None},
        "train": {"seed": get('seed'), "epochs": get('epochs'), "batch_size": get('batch_size'),
                  "learning_rate": get('lr'), "lam": get('lam')},
        "corpus": {"universal_threshold": get('threshold'), "max_len": get('max_len'), "synth_size": get('n')},
        "pmi": {"min_count": get('min_count')},
        "eval": {"sample": True if get('sample') else None},
    }


def run_command(args: argparse.Namespace, config, run_entry: Dict) -> None:
    command = args.command
    progress = getattr(args, 'progress', False)
    if command == 'synth':
        cmd_synth(args.out, config.seed, config.corpus.synth_size)
    elif command == 'distill':
        run_entry["stats"] = cmd_distill(config, args.raw, args.out)
    elif command == 'pmi-build':
        cmd_pmi_build(config, args.corpus, args.out, args.tsv)
    elif command == 'train':
        cmd_train(config, args.corpus, args.out, args.pmi, run_entry, progress)
    elif command == 'generate':
        cmd_generate(config, args.checkpoint, args.post, args.pmi, args.trace, args.variant)
    elif command == 'eval':
        cmd_eval(config, args.checkpoint, args.corpus, args.report, args.pmi, args.detail, args.variant, progress)
    elif command == 'repl':
        cmd_repl(config, args.checkpoint, args.pmi, args.trace, expected_variant=args.variant)
    elif command == 'pipeline':
        cmd_pipeline(config, args.workdir, args.variants, run_entry, progress)
    else:
        raise UsageError(f"unknown command '{command}'")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.command is None:
        parser.print_help()
        return UsageError.exit_code

    # Handle log analysis
    if args.command == 'analyze-logs':
        analyze_logs(args.log_dir)
        return 0

    logger = setup_logging(args.log_dir, logging.DEBUG if args.verbose else logging.INFO)
    run_entry = create_run_entry(args.command)
    start_time = time.perf_counter()
    try:
        config = resolve_config(
            args.command,
            config_path=args.config,
            preset=args.preset,
            set_overrides=args.overrides,
            flags=_flag_layer(args),
            paths={"interrogatives": args.interrogatives, "content_lexicon": args.content_lexicon,
                   "templates": args.templates},
        )
        run_entry["config"] = config.to_dict()
        logger.info(f"⚙️ Resolved config: {json.dumps(config.to_dict(), sort_keys=True)}")
        run_command(args, config, run_entry)
    except TypedQError as e:
        logger.error(f"❌ {e}")
        run_entry["final_status"] = "failed"
        run_entry["error_messages"].append(str(e))
        run_entry["total_time_seconds"] = time.perf_counter() - start_time
        save_run_log(run_entry, args.log_dir)
        return e.exit_code

    run_entry["final_status"] = "completed"
    run_entry["total_time_seconds"] = time.perf_counter() - start_time
    log_path = save_run_log(run_entry, args.log_dir)
    logger.info(f"📝 Run log saved to: {log_path}")
    return 0


if __name__ == '__main__':
    sys.exit(main())
