#!/usr/bin/env python3
"""
Generation driver and automatic metrics: perplexity, distinct-1/2, topical
response ratio (TRR) and questioning-pattern KL divergence.
"""

import csv
import io
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from typedq.corpus import CorpusPair, TypeLexicons, Vocabulary, WordType
from typedq.errors import DataFormatError, InvalidInputError
from typedq.file_ops import data_path, read_entries, write_file
from typedq.model import (
    DEFAULT_MAX_GEN_LEN,
    DecoderTrace,
    ModelParams,
    TypePartition,
    batch_pairs,
    greedy_decode,
    loss,
    make_partition,
)
from typedq.pmi import DEFAULT_TOPIC_COUNT, PmiTable, TopicPrediction, predict_topics

logger = logging.getLogger(__name__)

DETAIL_COLUMNS = ("post", "reference", "generated", "topics", "topical", "pattern", "reference_pattern", "ended")


class PatternClass(Enum):
    YES_NO = "Yes-No"
    HOW = "How"
    WHY = "Why"
    WHAT = "What"
    WHEN = "When"
    WHO = "Who"
    WHERE = "Where"
    WHICH = "Which"
    HOW_MANY = "How-many"
    ALTERNATIVE = "Alternative"
    OTHER = "Other"

    @classmethod
    def from_label(cls, label: str) -> "PatternClass":
        for member in cls:
            if member.value == label:
                return member
        raise ValueError(label)


PATTERN_CLASSES = tuple(PatternClass)


@dataclass(frozen=True)
class PatternRule:
    pattern: PatternClass
    phrase: Tuple[str, ...]


def load_pattern_rules(path: Optional[str] = None) -> Tuple[PatternRule, ...]:
    """Ordered first-match rules from a 'class<TAB>phrase' file."""
    path = path or data_path("patterns.tsv")
    rules = []
    for lineno, entry in read_entries(path):
        parts = entry.split('\t')
        if len(parts) != 2 or not parts[1].split():
            raise DataFormatError(f"{path}:{lineno}: expected 'class<TAB>phrase', got '{entry}'")
        try:
            pattern = PatternClass.from_label(parts[0])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: unknown pattern class '{parts[0]}'") from None
        rules.append(PatternRule(pattern, tuple(parts[1].split())))
    return tuple(rules)


def _contains(tokens: Sequence[str], phrase: Tuple[str, ...]) -> bool:
    width = len(phrase)
    return any(tuple(tokens[i:i + width]) == phrase for i in range(len(tokens) - width + 1))


def _template_led(tokens: Sequence[str], lexicons: TypeLexicons) -> bool:
    return (tokens[0],) in lexicons.question_leads or tuple(tokens[:2]) in lexicons.question_leads


def classify_pattern(question: Sequence[str], lexicons: TypeLexicons,
                     rules: Optional[Sequence[PatternRule]] = None) -> PatternClass:
    """First matching rule wins; otherwise Yes-No when template-led, else Other."""
    if not question:
        raise InvalidInputError("classify_pattern needs a non-empty question")
    for rule in (rules if rules is not None else load_pattern_rules()):
        if _contains(question, rule.phrase):
            return rule.pattern
    return PatternClass.YES_NO if _template_led(question, lexicons) else PatternClass.OTHER


def pattern_histogram(questions: Iterable[Sequence[str]], lexicons: TypeLexicons,
                      rules: Optional[Sequence[PatternRule]] = None) -> np.ndarray:
    """Counts per PatternClass in PATTERN_CLASSES order; empty questions count as Other."""
    rules = rules if rules is not None else load_pattern_rules()
    counts = Counter()
    for q in questions:
        counts[classify_pattern(q, lexicons, rules) if q else PatternClass.OTHER] += 1
    return np.array([counts[c] for c in PATTERN_CLASSES], dtype=np.float64)


def pattern_kl(model_counts, reference_counts) -> float:
    """KL(reference ‖ model) over the 11 classes after add-one smoothing of both count vectors."""
    model_counts = np.asarray(model_counts, dtype=np.float64)
    reference_counts = np.asarray(reference_counts, dtype=np.float64)
    n = len(PATTERN_CLASSES)
    if model_counts.shape != (n,) or reference_counts.shape != (n,):
        raise InvalidInputError(f"pattern histograms must have {n} entries")
    if np.any(model_counts < 0) or np.any(reference_counts < 0):
        raise InvalidInputError("pattern counts must be non-negative")
    p = (reference_counts + 1.0) / np.sum(reference_counts + 1.0)
    q = (model_counts + 1.0) / np.sum(model_counts + 1.0)
    return float(max(0.0, np.sum(p * np.log(p / q))))


# ---------------------------------------------------------------------------
# Perplexity, diversity, topicality
# ---------------------------------------------------------------------------

def perplexity_from_nll(total_nll: float, n_tokens: int) -> float:
    """exp(mean negative log-likelihood per token), natural log."""
    if n_tokens < 1:
        raise InvalidInputError("perplexity needs at least one token")
    return float(math.exp(total_nll / n_tokens))


def predicted_partition(vocab: Vocabulary, post: Sequence[str], table: PmiTable, lexicons: TypeLexicons,
                        n_topics: int = DEFAULT_TOPIC_COUNT) -> Tuple[TypePartition, TopicPrediction]:
    """Test-time dynamic vocabulary: the interrogative dictionary plus the post's PMI top-n topic words."""
    prediction = predict_topics(table, post, n_topics, lexicons)
    partition = make_partition(vocab, vocab.ids_of(lexicons.interrogatives), vocab.ids_of(prediction.words))
    return partition, prediction


def perplexity(params: ModelParams, pairs: Sequence[CorpusPair], vocab: Vocabulary, lexicons: TypeLexicons,
               table: Optional[PmiTable] = None, tau: float = 0.8, n_topics: int = DEFAULT_TOPIC_COUNT,
               batch_size: int = 32) -> float:
    """
    Teacher-forced perplexity over typed pairs, EOS included and PAD excluded.

    HTD scores P* under the partition predicted from each post with the PMI
    table, never from the reference's own tags.
    """
    if not pairs:
        raise InvalidInputError("perplexity needs at least one pair")
    is_htd = params.variant == "htd"
    if is_htd and table is None:
        raise InvalidInputError("HTD perplexity needs a PMI table to predict each post's topic words")
    interrogative_ids = vocab.ids_of(lexicons.interrogatives)
    total_nll = 0.0
    n_tokens = 0
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        partitions = None
        if is_htd:
            partitions = [predicted_partition(vocab, p.post, table, lexicons, n_topics)[0] for p in chunk]
        batch = batch_pairs(chunk, vocab, interrogative_ids, with_partition=is_htd, partitions=partitions)
        result = loss(params, batch, tau=tau, lam=0.0, mode="infer")
        total_nll += result.phi1.item()
        n_tokens += result.n_tokens
    return perplexity_from_nll(total_nll, n_tokens)


def distinct_n(responses: Sequence[Sequence[str]], n: int, denominator: str = "tokens") -> float:
    """
    Distinct n-grams across all responses over the total token count.

    denominator="bigrams" divides by the number of n-grams instead.
    """
    if n not in (1, 2):
        raise InvalidInputError(f"distinct_n supports n=1 or n=2, got {n}")
    if not responses or any(len(r) == 0 for r in responses):
        raise InvalidInputError("distinct_n needs non-empty responses")
    if denominator not in ("tokens", "bigrams"):
        raise InvalidInputError(f"unknown denominator '{denominator}'")
    grams = set()
    n_grams = 0
    for r in responses:
        seq = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
        grams.update(seq)
        n_grams += len(seq)
    total = sum(len(r) for r in responses) if denominator == "tokens" else n_grams
    return len(grams) / total if total else 0.0


def trr(responses: Sequence[Sequence[str]], topic_predictions: Sequence[Iterable[str]]) -> float:
    """Share of responses containing at least one of their post's predicted topic words."""
    if len(responses) != len(topic_predictions):
        raise InvalidInputError(f"{len(responses)} responses but {len(topic_predictions)} topic lists")
    if not responses:
        raise InvalidInputError("trr needs at least one response")
    hits = sum(1 for r, topics in zip(responses, topic_predictions) if set(r) & set(topics))
    return hits / len(responses)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass
class Generation:
    post: Tuple[str, ...]
    tokens: List[str]
    topics: List[str]
    trace: DecoderTrace
    ended: bool


def generate(params: ModelParams, vocab: Vocabulary, post: Sequence[str], table: PmiTable, lexicons: TypeLexicons,
             tau: float = 0.8, n_topics: int = DEFAULT_TOPIC_COUNT, max_len: int = DEFAULT_MAX_GEN_LEN,
             sample: bool = False, rng: Optional[np.random.Generator] = None) -> Generation:
    """
    Greedy question for one post.

    The dynamic vocabulary is the interrogative dictionary plus the post's
    PMI-predicted topic words; HTD decodes under it and every variant uses it
    to label the trace.
    """
    post = tuple(post)
    if not post:
        raise InvalidInputError("generate needs a non-empty post")
    if sample and rng is None:
        raise InvalidInputError("sampling Gumbel noise needs an RNG")
    partition, prediction = predicted_partition(vocab, post, table, lexicons, n_topics)
    ids, trace = greedy_decode(params, vocab.encode(post), partition, tau=tau, max_len=max_len,
                               rng=rng, sample_noise=sample)
    # the trace keeps the EOS step, the id list does not
    ended = len(ids) < len(trace)
    return Generation(post, vocab.decode(ids), prediction.words, trace, ended)


def type_alignment(generations: Sequence[Generation]) -> Optional[float]:
    """
    Share of emitted interrogative positions whose most probable type is Interrogative.

    None for the plain variant (no type distribution) or when no interrogative was emitted.
    """
    hits = 0
    total = 0
    for g in generations:
        for step in g.trace.steps:
            if step.type_probs is None:
                return None
            if step.token_type == WordType.INTERROGATIVE:
                total += 1
                hits += int(np.argmax(step.type_probs) == int(WordType.INTERROGATIVE))
    return hits / total if total else None


def question_alignment(generations: Sequence[Generation]) -> Optional[float]:
    """
    Share of questions whose every interrogative-emitting step has Interrogative as its most probable type.

    Questions without an interrogative are not counted; None for plain or when none qualifies.
    """
    aligned = 0
    counted = 0
    for g in generations:
        if any(step.type_probs is None for step in g.trace.steps):
            return None
        steps = [s for s in g.trace.steps if s.token_type == WordType.INTERROGATIVE]
        if not steps:
            continue
        counted += 1
        aligned += int(all(np.argmax(s.type_probs) == int(WordType.INTERROGATIVE) for s in steps))
    return aligned / counted if counted else None


@dataclass
class MetricReport:
    variant: str
    perplexity: float
    distinct1: float
    distinct2: float
    trr: float
    pattern_kl: float
    n_posts: int
    eos_rate: float = 0.0
    type_alignment: Optional[float] = None
    question_alignment: Optional[float] = None
    pattern_counts: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)


def evaluate(
    params: ModelParams,
    vocab: Vocabulary,
    pairs: Sequence[CorpusPair],
    table: PmiTable,
    lexicons: TypeLexicons,
    tau: float = 0.8,
    n_topics: int = DEFAULT_TOPIC_COUNT,
    max_len: int = DEFAULT_MAX_GEN_LEN,
    distinct2_denominator: str = "tokens",
    sample: bool = False,
    rng: Optional[np.random.Generator] = None,
    rules: Optional[Sequence[PatternRule]] = None,
    show_progress: bool = False
) -> Tuple[MetricReport, List[Dict[str, str]]]:
    """All metrics on a typed test set plus one detail row per post."""
    if not pairs:
        raise InvalidInputError("evaluate needs at least one pair")
    rules = rules if rules is not None else load_pattern_rules()
    ppl = perplexity(params, pairs, vocab, lexicons, table, tau=tau, n_topics=n_topics)

    generations = []
    for pair in tqdm(pairs, desc=f"{params.variant} generate", disable=not show_progress, leave=False):
        generations.append(generate(params, vocab, pair.post, table, lexicons, tau=tau, n_topics=n_topics,
                                    max_len=max_len, sample=sample, rng=rng))

    outputs = [g.tokens for g in generations]
    non_empty = [o for o in outputs if o]
    if len(non_empty) < len(outputs):
        logger.warning(f"⚠️ {len(outputs) - len(non_empty)} empty generations left out of distinct-n")
    d1 = distinct_n(non_empty, 1) if non_empty else 0.0
    d2 = distinct_n(non_empty, 2, distinct2_denominator) if non_empty else 0.0
    topical = trr(outputs, [g.topics for g in generations])
    model_hist = pattern_histogram(outputs, lexicons, rules)
    reference_hist = pattern_histogram([p.response for p in pairs], lexicons, rules)

    report = MetricReport(
        variant=params.variant,
        perplexity=ppl,
        distinct1=d1,
        distinct2=d2,
        trr=topical,
        pattern_kl=pattern_kl(model_hist, reference_hist),
        n_posts=len(pairs),
        eos_rate=sum(g.ended for g in generations) / len(generations),
        type_alignment=type_alignment(generations),
        question_alignment=question_alignment(generations),
        pattern_counts={c.value: int(n) for c, n in zip(PATTERN_CLASSES, model_hist)},
    )

    detail = []
    for pair, g in zip(pairs, generations):
        detail.append({
            "post": pair.post_text,
            "reference": pair.response_text,
            "generated": " ".join(g.tokens),
            "topics": " ".join(g.topics),
            "topical": str(int(bool(set(g.tokens) & set(g.topics)))),
            "pattern": (classify_pattern(g.tokens, lexicons, rules) if g.tokens else PatternClass.OTHER).value,
            "reference_pattern": classify_pattern(pair.response, lexicons, rules).value,
            "ended": str(int(g.ended)),
        })
    logger.info(f"📏 {params.variant}: ppl={ppl:.3f} d1={d1:.4f} d2={d2:.4f} trr={topical:.3f} "
                f"kl={report.pattern_kl:.4f}")
    return report, detail


def write_metric_report(path: str, report: MetricReport) -> None:
    write_file(path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def write_detail_csv(path: str, rows: Sequence[Dict[str, str]]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=DETAIL_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    write_file(path, buf.getvalue())
