#!/usr/bin/env python3
"""
Teacher-forced mini-batch training with the τ schedule, validation
perplexity early stopping and binary checkpoints.
"""

import csv
import io
import json
import logging
import os
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from typedq.corpus import CorpusPair, TypeLexicons, Vocabulary, build_vocab, tag_pairs
from typedq.errors import CheckpointFormatError, InvalidInputError, NumericError
from typedq.evalgen import perplexity
from typedq.file_ops import read_bytes, write_bytes, write_file
from typedq.log_utils import log_epoch
from typedq.model import ModelConfig, ModelParams, batch_pairs, loss, parameter_shapes
from typedq.pmi import DEFAULT_TOPIC_COUNT, build_table
from typedq.tensorcore import ComputationTape, OptimizerState, optimizer_step, read_exact, read_tensor, write_tensor

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TQCK"
CHECKPOINT_VERSION = 1
REPORT_COLUMNS = ("epoch", "phi", "phi1", "phi2", "valid_perplexity", "tau", "steps")
HYPERPARAMETER_FIELDS = ("d_emb", "d_hidden", "n_layers", "k")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    lam: float = 0.8
    tau_initial: float = 0.6
    tau_switch_step: int = 1000
    tau_final: float = 0.8
    seed: int = 7
    checkpoint_dir: Optional[str] = None
    validation_fraction: float = 0.1
    patience: int = 5
    clip_norm: float = 5.0
    vocab_cap: int = 5000

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidInputError(f"lam must be non-negative, got {self.lam}")
        for name in ("tau_initial", "tau_final"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise InvalidInputError(f"{name} must lie in (0, 1], got {value}")
        if self.tau_switch_step < 0:
            raise InvalidInputError("tau_switch_step must be non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1 or self.vocab_cap < 1:
            raise InvalidInputError("epochs, batch_size, patience and vocab_cap must be positive")
        if self.learning_rate < 0:
            raise InvalidInputError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidInputError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")


def tau_at(config: TrainConfig, step: int) -> float:
    """Gumbel-Softmax temperature at a global optimizer step."""
    if step < 0:
        raise InvalidInputError(f"step must be non-negative, got {step}")
    return config.tau_initial if step < config.tau_switch_step else config.tau_final


@dataclass
class EpochRow:
    """Per-token means over one epoch."""

    epoch: int
    phi: float
    phi1: float
    phi2: float
    valid_perplexity: float
    tau: float
    steps: int
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainReport:
    variant: str
    rows: List[EpochRow] = field(default_factory=list)
    best_epoch: int = 0
    best_perplexity: float = float("inf")
    best_checkpoint: Optional[str] = None
    stopped_early: bool = False
    params: Optional[ModelParams] = field(default=None, compare=False, repr=False)
    vocab: Optional[Vocabulary] = field(default=None, compare=False, repr=False)

    @property
    def epochs_completed(self) -> int:
        return len(self.rows)


def write_report_csv(path: str, report: TrainReport) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in report.rows:
        writer.writerow([row.epoch, f"{row.phi:.6f}", f"{row.phi1:.6f}", f"{row.phi2:.6f}",
                         f"{row.valid_perplexity:.6f}", f"{row.tau:.2f}", row.steps])
    write_file(path, buf.getvalue())


def split_pairs(pairs: Sequence[CorpusPair], fraction: float,
                rng: np.random.Generator) -> Tuple[List[CorpusPair], List[CorpusPair]]:
    """Seeded train/validation split; validation falls back to the training set when empty."""
    order = rng.permutation(len(pairs))
    n_valid = int(round(len(pairs) * fraction))
    if n_valid >= len(pairs):
        n_valid = 0
    valid = [pairs[i] for i in order[:n_valid]]
    training = [pairs[i] for i in order[n_valid:]]
    return training, (valid or training)


def _numeric_failure(err: NumericError, epoch: int, step: int, tau: float) -> NumericError:
    return type(err)(f"epoch {epoch}, step {step} (tau={tau}): {err}")


def train(
    config: TrainConfig,
    model_config: ModelConfig,
    pairs: Sequence[CorpusPair],
    lexicons: TypeLexicons,
    vocab: Optional[Vocabulary] = None,
    run_entry: Optional[Dict] = None,
    show_progress: bool = False,
    meta: Optional[Dict[str, Any]] = None,
    topic_min_count: int = 1,
    n_topics: int = DEFAULT_TOPIC_COUNT
) -> TrainReport:
    """
    Train one variant; returns the report with the best-validation parameters attached.

    The training loss types each reference with its own tags. HTD validation
    predicts topic words from a PMI table over the training split instead.
    """
    if not pairs:
        raise InvalidInputError("training corpus is empty")
    if any(p.response_types is None for p in pairs):
        pairs = tag_pairs(pairs, lexicons)

    init_seq, split_seq, shuffle_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(4)
    training, valid = split_pairs(pairs, config.validation_fraction, np.random.default_rng(split_seq))
    vocab = vocab or build_vocab(training, config.vocab_cap)
    model_config = replace(model_config, vocab_size=len(vocab))
    variant = model_config.variant

    params = ModelParams.init(model_config, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    interrogative_ids = vocab.ids_of(lexicons.interrogatives)
    optimizer = OptimizerState(learning_rate=config.learning_rate, clip_norm=config.clip_norm)
    report = TrainReport(variant=variant, vocab=vocab)
    valid_table = build_table(training, topic_min_count) if variant == "htd" else None

    logger.info(f"🧠 Training {variant}: {len(training)} pairs, {len(valid)} validation, "
                f"|V|={len(vocab)}, {config.epochs} epochs")
    global_step = 0
    best_params = params.copy()
    stale = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(training))
        totals = np.zeros(3)
        tokens = 0
        tau = tau_at(config, global_step)
        starts = range(0, len(training), config.batch_size)
        for start in tqdm(starts, desc=f"{variant} epoch {epoch}", disable=not show_progress, leave=False):
            batch = batch_pairs([training[i] for i in order[start:start + config.batch_size]], vocab,
                                interrogative_ids, with_partition=(variant == "htd"))
            tau = tau_at(config, global_step)
            try:
                with ComputationTape() as tape:
                    result = loss(params, batch, tau=tau, lam=config.lam, rng=noise_rng, mode="train")
                    value = result.total.item()
                    if not np.isfinite(value):
                        raise NumericError(f"non-finite loss {value}")
                    tape.backward(result.total)
            except NumericError as e:
                raise _numeric_failure(e, epoch, global_step, tau) from e
            optimizer_step(optimizer, params.trainable())
            totals += (value, result.phi1.item(), result.phi2.item())
            tokens += result.n_tokens
            global_step += 1

        valid_ppl = perplexity(params, valid, vocab, lexicons, valid_table, tau=config.tau_final,
                               n_topics=n_topics, batch_size=config.batch_size)
        means = totals / max(tokens, 1)
        row = EpochRow(epoch, float(means[0]), float(means[1]), float(means[2]), valid_ppl, tau,
                       global_step, time.perf_counter() - started)
        report.rows.append(row)
        if run_entry is not None:
            log_epoch(run_entry, variant, row.to_dict())
        logger.info(f"📉 {variant} epoch {epoch}: Φ={row.phi:.4f} Φ1={row.phi1:.4f} Φ2={row.phi2:.4f} "
                    f"valid ppl={valid_ppl:.3f} ({row.wall_time:.1f}s)")

        if valid_ppl < report.best_perplexity:
            report.best_perplexity = valid_ppl
            report.best_epoch = epoch
            best_params = params.copy()
            stale = 0
            if config.checkpoint_dir:
                path = os.path.join(config.checkpoint_dir, f"{variant}_best.ckpt")
                checkpoint_save(path, best_params, vocab, meta={**(meta or {}), "epoch": epoch})
                report.best_checkpoint = path
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"⏹️ Early stop after epoch {epoch}: no improvement for {stale} epochs")
                report.stopped_early = True
                break

    report.params = best_params
    logger.info(f"✅ {variant}: best validation perplexity {report.best_perplexity:.3f} at epoch {report.best_epoch}")
    return report


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, variant, JSON header, named tensor blocks
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: ModelParams
    vocab: Vocabulary
    meta: Dict[str, Any] = field(default_factory=dict)


def _pack_str(buf: io.BytesIO, s: str) -> None:
    data = s.encode('utf-8')
    buf.write(struct.pack('<I', len(data)))
    buf.write(data)


def _unpack_str(buf: io.BytesIO, what: str) -> str:
    (length,) = struct.unpack('<I', read_exact(buf, 4, what))
    try:
        return read_exact(buf, length, what).decode('utf-8')
    except UnicodeDecodeError as e:
        raise CheckpointFormatError(f"bad {what} encoding: {e}") from e


def encode_checkpoint(params: ModelParams, vocab: Vocabulary, meta: Optional[Dict[str, Any]] = None) -> bytes:
    if len(vocab) != params.config.vocab_size:
        raise InvalidInputError(f"vocabulary size {len(vocab)} does not match model ({params.config.vocab_size})")
    header = {"model": params.config.to_dict(), "vocab": vocab.tokens, "meta": meta or {}}
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack('<I', CHECKPOINT_VERSION))
    _pack_str(buf, params.variant)
    _pack_str(buf, json.dumps(header, sort_keys=True, ensure_ascii=False))
    names = params.names()
    buf.write(struct.pack('<I', len(names)))
    for name in names:
        _pack_str(buf, name)
        write_tensor(buf, params[name])
    return buf.getvalue()


def _hyperparameter_mismatch(stored: ModelConfig, expected: ModelConfig) -> List[str]:
    return [f"{name}={getattr(stored, name)} (session expects {getattr(expected, name)})"
            for name in HYPERPARAMETER_FIELDS if getattr(stored, name) != getattr(expected, name)]


def decode_checkpoint(data: bytes, expected_variant: Optional[str] = None,
                      expected_model: Optional[ModelConfig] = None) -> Checkpoint:
    """Parse checkpoint bytes; with expected_model every dimension but vocab_size must match."""
    buf = io.BytesIO(data)
    if read_exact(buf, 4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a typedq checkpoint (bad magic)")
    (version,) = struct.unpack('<I', read_exact(buf, 4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    variant = _unpack_str(buf, "variant")
    if expected_variant is not None and variant != expected_variant:
        raise CheckpointFormatError(f"checkpoint holds a {variant} model, session expects {expected_variant}")
    try:
        header = json.loads(_unpack_str(buf, "header"))
        config = ModelConfig(**header["model"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointFormatError(f"bad checkpoint header: {e}") from e
    if config.variant != variant:
        raise CheckpointFormatError(f"header variant {config.variant} disagrees with tag {variant}")
    if expected_model is not None:
        mismatched = _hyperparameter_mismatch(config, expected_model)
        if mismatched:
            raise CheckpointFormatError(f"checkpoint hyperparameters disagree with the config: {', '.join(mismatched)}")

    shapes = parameter_shapes(config)
    (count,) = struct.unpack('<I', read_exact(buf, 4, "tensor count"))
    tensors = {}
    for _ in range(count):
        name = _unpack_str(buf, "tensor name")
        tensor = read_tensor(buf, requires_grad=True, name=name)
        if shapes.get(name) != tensor.shape:
            raise CheckpointFormatError(f"tensor '{name}' has shape {tensor.shape}, expected {shapes.get(name)}")
        tensors[name] = tensor
    if buf.read(1):
        raise CheckpointFormatError("trailing bytes after checkpoint")
    if set(tensors) != set(shapes):
        missing = sorted(set(shapes) - set(tensors))
        raise CheckpointFormatError(f"checkpoint misses tensors: {', '.join(missing[:5])}")

    vocab = Vocabulary(header.get("vocab", []))
    if len(vocab) != config.vocab_size:
        raise CheckpointFormatError(f"vocabulary has {len(vocab)} entries, model expects {config.vocab_size}")
    return Checkpoint(ModelParams(config, tensors), vocab, header.get("meta", {}))


def checkpoint_save(path: str, params: ModelParams, vocab: Vocabulary, meta: Optional[Dict[str, Any]] = None) -> None:
    write_bytes(path, encode_checkpoint(params, vocab, meta))
    logger.info(f"💾 Saved {params.variant} checkpoint: {path}")


def checkpoint_load(path: str, expected_variant: Optional[str] = None,
                    expected_model: Optional[ModelConfig] = None) -> Checkpoint:
    checkpoint = decode_checkpoint(read_bytes(path), expected_variant, expected_model)
    logger.info(f"📦 Loaded {checkpoint.params.variant} checkpoint: {path}")
    return checkpoint
