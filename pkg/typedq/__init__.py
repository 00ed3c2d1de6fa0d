"""
typedq: typed-decoder question generation.

This package contains the autodiff core, corpus tools, PMI topic prediction,
the soft and hard typed decoders, training, evaluation and the command line.
"""

from .cli import main
from .config import CliConfig, resolve_config, stage_seed
from .corpus import (
    CorpusPair, TypeLexicons, Vocabulary, WordType, build_vocab, distill, filter_universal,
    is_question, load_lexicons, load_pairs, synth_corpus, tag_pairs, tag_types
)
from .errors import TypedQError
from .evalgen import (
    MetricReport, PatternClass, classify_pattern, distinct_n, evaluate, generate,
    pattern_kl, perplexity, trr
)
from .log_utils import setup_logging, analyze_logs, create_run_entry, save_run_log
from .model import (
    ModelConfig, ModelParams, DecoderTrace, attend, decoder_step, encode, gumbel_softmax,
    htd_step_dist, loss, make_partition, std_generation_dist, std_type_dist
)
from .pmi import PmiTable, build_table, pmi, predict_topics, rel
from .tensorcore import ComputationTape, Tensor, backward, gradient_check, optimizer_step, softmax
from .trainer import TrainConfig, TrainReport, checkpoint_load, checkpoint_save, tau_at, train

__all__ = [
    'main',
    'CliConfig',
    'resolve_config',
    'stage_seed',
    'CorpusPair',
    'TypeLexicons',
    'Vocabulary',
    'WordType',
    'build_vocab',
    'distill',
    'filter_universal',
    'is_question',
    'load_lexicons',
    'load_pairs',
    'synth_corpus',
    'tag_pairs',
    'tag_types',
    'TypedQError',
    'MetricReport',
    'PatternClass',
    'classify_pattern',
    'distinct_n',
    'evaluate',
    'generate',
    'pattern_kl',
    'perplexity',
    'trr',
    'setup_logging',
    'analyze_logs',
    'create_run_entry',
    'save_run_log',
    'ModelConfig',
    'ModelParams',
    'DecoderTrace',
    'attend',
    'decoder_step',
    'encode',
    'gumbel_softmax',
    'htd_step_dist',
    'loss',
    'make_partition',
    'std_generation_dist',
    'std_type_dist',
    'PmiTable',
    'build_table',
    'pmi',
    'predict_topics',
    'rel',
    'ComputationTape',
    'Tensor',
    'backward',
    'gradient_check',
    'optimizer_step',
    'softmax',
    'TrainConfig',
    'TrainReport',
    'checkpoint_load',
    'checkpoint_save',
    'tau_at',
    'train'
]
