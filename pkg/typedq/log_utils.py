#!/usr/bin/env python3
"""
Logging module for typedq runs.
"""

import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Optional

DEFAULT_LOG_DIR = "logs"  # Directory for run logs and JSON run records


def setup_logging(log_dir: str = DEFAULT_LOG_DIR, level: int = logging.INFO) -> logging.Logger:
    """Set up console and file logging for the typedq package."""
    os.makedirs(log_dir, exist_ok=True)

    logger = logging.getLogger("typedq")
    logger.setLevel(level)

    # Prevent duplicate handlers
    if logger.handlers:
        return logger

    detailed_formatter = logging.Formatter(
        '%(asctime)s | %(levelname)-8s | %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_file = os.path.join(log_dir, f"typedq_{timestamp}.log")
    file_handler = logging.FileHandler(log_file, encoding='utf-8')
    file_handler.setLevel(level)
    file_handler.setFormatter(detailed_formatter)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(detailed_formatter)

    logger.addHandler(file_handler)
    logger.addHandler(console_handler)

    logger.info(f"📝 Logging initialized - Log file: {log_file}")
    return logger


def create_run_entry(command: str, mode: str = "cli", config: Optional[Dict[str, Any]] = None) -> Dict:
    """Create a structured record for one run of a subcommand."""
    return {
        "timestamp": datetime.now().isoformat(),
        "command": command,
        "mode": mode,
        "config": config or {},
        "stages": [],
        "epochs": [],
        "final_status": None,
        "error_messages": [],
        "total_time_seconds": None
    }


def log_stage(run_entry: Dict, stage: str, status: str, seconds: float, detail: Optional[Dict] = None) -> None:
    """Append one pipeline stage outcome to a run record."""
    run_entry["stages"].append({
        "stage": stage,
        "status": status,
        "seconds": round(seconds, 3),
        "detail": detail or {}
    })


def log_epoch(run_entry: Dict, variant: str, row: Dict[str, Any]) -> None:
    """Append one training epoch row to a run record."""
    epoch_data = {"variant": variant}
    epoch_data.update(row)
    run_entry["epochs"].append(epoch_data)


def save_run_log(run_entry: Dict, log_dir: str = DEFAULT_LOG_DIR) -> str:
    """Save a run record as JSON. Returns the path, or "" if saving failed."""
    os.makedirs(log_dir, exist_ok=True)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    safe_name = "".join(c for c in run_entry["command"][:40] if c.isalnum() or c in ('-', '_'))
    log_path = os.path.join(log_dir, f"run_{timestamp}_{safe_name}.json")

    try:
        with open(log_path, 'w', encoding='utf-8') as f:
            json.dump(run_entry, f, indent=2, ensure_ascii=False)
        return log_path
    except OSError as e:
        logging.getLogger("typedq").error(f"Failed to save run log: {e}")
        return ""


def load_run_logs(log_dir: str = DEFAULT_LOG_DIR) -> List[Dict]:
    """Read every run record in a log directory, skipping unreadable files."""
    records = []
    for name in sorted(os.listdir(log_dir)):
        if not (name.startswith('run_') and name.endswith('.json')):
            continue
        try:
            with open(os.path.join(log_dir, name), 'r', encoding='utf-8') as f:
                records.append(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            print(f"⚠️ Error reading {name}: {e}")
    return records


def summarize_runs(records: List[Dict]) -> Dict[str, Any]:
    """Aggregate run records: status counts, best validation perplexity per variant, common errors."""
    stats: Dict[str, Any] = {
        'total_runs': len(records),
        'by_status': {},
        'by_command': {},
        'best_perplexity': {},
        'common_errors': {}
    }

    for record in records:
        status = record.get('final_status') or 'unknown'
        stats['by_status'][status] = stats['by_status'].get(status, 0) + 1
        command = record.get('command', 'unknown')
        stats['by_command'][command] = stats['by_command'].get(command, 0) + 1

        for epoch in record.get('epochs', []):
            variant = epoch.get('variant', '?')
            ppl = epoch.get('valid_perplexity')
            if ppl is None:
                continue
            best = stats['best_perplexity'].get(variant)
            if best is None or ppl < best:
                stats['best_perplexity'][variant] = ppl

        for error in record.get('error_messages', []):
            # Group similar errors by their first 100 characters
            error_key = error[:100]
            stats['common_errors'][error_key] = stats['common_errors'].get(error_key, 0) + 1

    return stats


def analyze_logs(log_dir: str = DEFAULT_LOG_DIR) -> Optional[Dict[str, Any]]:
    """Print a summary of all run records in a log directory."""
    if not os.path.exists(log_dir):
        print(f"❌ Log directory not found: {log_dir}")
        return None

    print(f"\n📊 Analyzing logs in: {log_dir}")
    records = load_run_logs(log_dir)
    if not records:
        print("📝 No run logs found.")
        return None

    print(f"📁 Found {len(records)} run logs")
    stats = summarize_runs(records)

    print(f"\n📈 Run Statistics:")
    for status, count in sorted(stats['by_status'].items()):
        print(f"   {status}: {count} ({count / stats['total_runs'] * 100:.1f}%)")

    print(f"\n🧾 Commands:")
    for command, count in sorted(stats['by_command'].items()):
        print(f"   {command}: {count}")

    if stats['best_perplexity']:
        print(f"\n🏆 Best validation perplexity:")
        for variant, ppl in sorted(stats['best_perplexity'].items()):
            print(f"   {variant}: {ppl:.3f}")

    if stats['common_errors']:
        print(f"\n🔍 Top Common Errors:")
        sorted_errors = sorted(stats['common_errors'].items(), key=lambda x: x[1], reverse=True)[:5]
        for i, (error, count) in enumerate(sorted_errors, 1):
            print(f"   {i}. ({count} occurrences) {error}")

    return stats
