#!/usr/bin/env python3
"""
Corpus module: post-response pairs, question distillation, word-type tagging,
vocabulary building and the synthetic scene corpus.
"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from typedq.errors import DataFormatError, InvalidInputError, RangeError
from typedq.file_ops import data_path, iter_lines, read_entries, write_file

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED_TOKENS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

QUESTION_MARK = "?"
DEFAULT_MAX_LEN = 30
DEFAULT_UNIVERSAL_THRESHOLD = 10
MALFORMED_RATIO_LIMIT = 0.10


class WordType(IntEnum):
    INTERROGATIVE = 0
    TOPIC = 1
    ORDINARY = 2

    @property
    def label(self) -> str:
        return self.name.lower()


NUM_TYPES = len(WordType)


@dataclass(frozen=True)
class CorpusPair:
    """
    A post and its question response.

    response_types, when present, covers the response tokens plus the
    end-of-sequence marker (typed Ordinary), i.e. it aligns with `target`.
    """

    post: Tuple[str, ...]
    response: Tuple[str, ...]
    response_types: Optional[Tuple[WordType, ...]] = None

    def __post_init__(self):
        if not self.post or not self.response:
            raise InvalidInputError("post and response must both be non-empty")
        if self.response_types is not None and len(self.response_types) != len(self.response) + 1:
            raise InvalidInputError(
                f"response_types has {len(self.response_types)} entries, "
                f"expected {len(self.response) + 1} (response plus end marker)"
            )

    @property
    def target(self) -> Tuple[str, ...]:
        return self.response + (EOS,)

    @property
    def post_text(self) -> str:
        return " ".join(self.post)

    @property
    def response_text(self) -> str:
        return " ".join(self.response)

    def with_types(self, types: Sequence[WordType]) -> "CorpusPair":
        return CorpusPair(self.post, self.response, tuple(WordType(t) for t in types))


@dataclass(frozen=True)
class TypeLexicons:
    """Interrogative set, noun/verb content lexicon and question-lead templates."""

    interrogatives: FrozenSet[str]
    content: Mapping[str, str]
    question_leads: FrozenSet[Tuple[str, ...]] = frozenset()

    def is_interrogative(self, token: str) -> bool:
        return token in self.interrogatives

    def is_content_word(self, token: str) -> bool:
        return bool(self.content.get(token))


def _read_interrogatives(path: str) -> FrozenSet[str]:
    forms = set()
    for lineno, entry in read_entries(path):
        if len(entry.split()) != 1:
            raise DataFormatError(f"{path}:{lineno}: interrogatives must be single tokens, got '{entry}'")
        forms.add(entry)
    return frozenset(forms)


def _read_content_lexicon(path: str) -> Dict[str, str]:
    lexicon = {}
    for lineno, entry in read_entries(path):
        parts = entry.split('\t')
        if len(parts) != 2 or not parts[1] or set(parts[1]) - {'n', 'v'}:
            raise DataFormatError(f"{path}:{lineno}: expected 'token<TAB>n|v|nv', got '{entry}'")
        lexicon[parts[0]] = "".join(sorted(set(parts[1])))
    return lexicon


def _read_question_leads(path: str) -> FrozenSet[Tuple[str, ...]]:
    leads = set()
    for lineno, entry in read_entries(path):
        tokens = tuple(entry.split())
        if len(tokens) > 2:
            raise DataFormatError(f"{path}:{lineno}: question leads are one or two tokens, got '{entry}'")
        leads.add(tokens)
    return frozenset(leads)


def load_lexicons(
    interrogatives_path: Optional[str] = None,
    content_path: Optional[str] = None,
    templates_path: Optional[str] = None
) -> TypeLexicons:
    """Load the type lexicons; any path left out falls back to the bundled file."""
    return TypeLexicons(
        interrogatives=_read_interrogatives(interrogatives_path or data_path("interrogatives.txt")),
        content=_read_content_lexicon(content_path or data_path("content_lexicon.tsv")),
        question_leads=_read_question_leads(templates_path or data_path("question_templates.txt")),
    )


# ---------------------------------------------------------------------------
# Loading and writing pairs
# ---------------------------------------------------------------------------

@dataclass
class LoadStats:
    pairs: int = 0
    blank: int = 0
    malformed: int = 0
    too_long: int = 0
    bad_lines: List[int] = field(default_factory=list)

    @property
    def warnings(self) -> int:
        return self.blank + self.malformed + self.too_long


def load_pairs(path: str, max_len: int = DEFAULT_MAX_LEN, stats: Optional[LoadStats] = None) -> Iterator[CorpusPair]:
    """
    Stream untyped pairs from a 'post<TAB>response' TSV file in file order.

    Blank, malformed and over-long lines are skipped with a warning. When more
    than 10% of the non-blank lines are malformed a DataFormatError is raised
    once the file has been read.
    """
    stats = stats if stats is not None else LoadStats()
    for lineno, line in iter_lines(path):
        if not line.strip():
            stats.blank += 1
            logger.warning(f"⚠️ {path}:{lineno}: blank line skipped")
            continue
        parts = line.split('\t')
        post = parts[0].split() if len(parts) == 2 else []
        response = parts[1].split() if len(parts) == 2 else []
        if not post or not response:
            stats.malformed += 1
            if len(stats.bad_lines) < 20:
                stats.bad_lines.append(lineno)
            logger.warning(f"⚠️ {path}:{lineno}: malformed line skipped")
            continue
        if len(post) > max_len or len(response) > max_len:
            stats.too_long += 1
            logger.warning(f"⚠️ {path}:{lineno}: pair longer than {max_len} tokens skipped")
            continue
        stats.pairs += 1
        yield CorpusPair(tuple(post), tuple(response))

    checked = stats.pairs + stats.malformed + stats.too_long
    if checked and stats.malformed / checked > MALFORMED_RATIO_LIMIT:
        raise DataFormatError(
            f"{path}: {stats.malformed} of {checked} lines malformed "
            f"(first at lines {', '.join(map(str, stats.bad_lines[:10]))})"
        )


def format_pairs(pairs: Iterable[CorpusPair]) -> str:
    return "".join(f"{p.post_text}\t{p.response_text}\n" for p in pairs)


def write_pairs(path: str, pairs: Iterable[CorpusPair]) -> None:
    write_file(path, format_pairs(pairs))


# ---------------------------------------------------------------------------
# Distillation and tagging
# ---------------------------------------------------------------------------

def is_question(response: Sequence[str], lexicons: TypeLexicons) -> bool:
    """Template-led (first token or first bigram) or ending in a question mark."""
    if not response:
        return False
    if response[-1] == QUESTION_MARK:
        return True
    if (response[0],) in lexicons.question_leads:
        return True
    return len(response) > 1 and tuple(response[:2]) in lexicons.question_leads


def filter_universal(pairs: Sequence[CorpusPair], threshold: int = DEFAULT_UNIVERSAL_THRESHOLD) -> List[CorpusPair]:
    """Drop every pair whose response string answers more than `threshold` distinct posts."""
    if threshold < 2:
        raise InvalidInputError(f"universal threshold must be at least 2, got {threshold}")
    posts_by_response: Dict[str, Set[str]] = defaultdict(set)
    for p in pairs:
        posts_by_response[p.response_text].add(p.post_text)
    universal = {r for r, posts in posts_by_response.items() if len(posts) > threshold}
    if universal:
        logger.info(f"🧹 {len(universal)} universal responses found")
    return [p for p in pairs if p.response_text not in universal]


def tag_types(response: Sequence[str], lexicons: TypeLexicons) -> List[WordType]:
    """Interrogative set first, then noun/verb content words as Topic, everything else Ordinary."""
    types = []
    for token in response:
        if token in lexicons.interrogatives:
            types.append(WordType.INTERROGATIVE)
        elif token != EOS and lexicons.is_content_word(token):
            types.append(WordType.TOPIC)
        else:
            types.append(WordType.ORDINARY)
    return types


def tag_pair(pair: CorpusPair, lexicons: TypeLexicons) -> CorpusPair:
    return pair.with_types(tag_types(pair.target, lexicons))


def tag_pairs(pairs: Iterable[CorpusPair], lexicons: TypeLexicons) -> List[CorpusPair]:
    return [tag_pair(p, lexicons) for p in pairs]


@dataclass
class DistillStats:
    kept: int = 0
    dropped_nonquestion: int = 0
    dropped_universal: int = 0

    def line(self) -> str:
        return (f"kept={self.kept} dropped_nonquestion={self.dropped_nonquestion} "
                f"dropped_universal={self.dropped_universal}")


def distill(pairs: Sequence[CorpusPair], lexicons: TypeLexicons,
            threshold: int = DEFAULT_UNIVERSAL_THRESHOLD) -> Tuple[List[CorpusPair], DistillStats]:
    """Keep question-form responses, then remove universal questions."""
    questions = [p for p in pairs if is_question(p.response, lexicons)]
    kept = filter_universal(questions, threshold)
    stats = DistillStats(
        kept=len(kept),
        dropped_nonquestion=len(pairs) - len(questions),
        dropped_universal=len(questions) - len(kept),
    )
    return kept, stats


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

class Vocabulary:
    """Token/id bijection; ids 0..3 are PAD, BOS, EOS and UNK."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            tokens = list(RESERVED_TOKENS) + [t for t in tokens if t not in RESERVED_TOKENS]
        index = {}
        for i, token in enumerate(tokens):
            if token in index:
                raise InvalidInputError(f"duplicate vocabulary entry '{token}'")
            index[token] = i
        self._tokens = tokens
        self._index = index

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise RangeError(f"token id {token_id} outside vocabulary of size {len(self._tokens)}")
        return self._tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> List[str]:
        out = []
        for i in ids:
            token = self.token_of(int(i))
            if strip_special and token in RESERVED_TOKENS and token != UNK:
                continue
            out.append(token)
        return out

    def ids_of(self, tokens: Iterable[str]) -> Set[int]:
        """Ids of the tokens present in the vocabulary (OOV tokens are left out)."""
        return {self._index[t] for t in tokens if t in self._index and t not in RESERVED_TOKENS}


def build_vocab(pairs: Sequence[CorpusPair], cap: int) -> Vocabulary:
    """The `cap` most frequent tokens of posts and responses; ties go to the lexicographically smaller token."""
    if not pairs:
        raise InvalidInputError("build_vocab needs at least one pair")
    counts: Counter = Counter()
    for p in pairs:
        counts.update(p.post)
        counts.update(p.response)
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return Vocabulary(list(RESERVED_TOKENS) + [token for token, _ in ranked])


# ---------------------------------------------------------------------------
# Synthetic scene corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scene:
    verb: str
    topic: str
    related: Tuple[str, ...]


# (pattern, template); {B} is the related question topic
RESPONSE_TEMPLATES: Tuple[Tuple[str, str], ...] = (
    ("Yes-No", "do you like the {B} ?"),
    ("Yes-No", "is the {B} nice ?"),
    ("Yes-No", "did you see the {B} ?"),
    ("What", "what kind of {B} is it ?"),
    ("What", "what {B} did you get ?"),
    ("Where", "where is the {B} ?"),
    ("Where", "where did you find the {B} ?"),
    ("How-many", "how many {B} are there ?"),
    ("How-many", "how many {B} did you buy ?"),
    ("Who", "who was with you at the {B} ?"),
    ("Who", "who gave you the {B} ?"),
)

TEMPLATE_INTERROGATIVES = frozenset({"what", "where", "how", "who", QUESTION_MARK})
POST_TAILS = ("today", "yesterday", "tonight", "again", "")


def load_scenes(path: Optional[str] = None) -> List[Scene]:
    path = path or data_path("scenes.tsv")
    scenes = []
    for lineno, entry in read_entries(path):
        parts = entry.split('\t')
        if len(parts) != 3 or not parts[2]:
            raise DataFormatError(f"{path}:{lineno}: expected 'verb<TAB>topic<TAB>related,...'")
        scenes.append(Scene(parts[0], parts[1], tuple(parts[2].split(','))))
    return scenes


def _construct_types(tokens: Sequence[str], topic: str) -> List[WordType]:
    types = []
    for token in tokens:
        if token in TEMPLATE_INTERROGATIVES:
            types.append(WordType.INTERROGATIVE)
        elif token == topic:
            types.append(WordType.TOPIC)
        else:
            types.append(WordType.ORDINARY)
    return types + [WordType.ORDINARY]


def synth_corpus(seed: int, n: int, scenes: Optional[Sequence[Scene]] = None) -> List[CorpusPair]:
    """
    Deterministic templated corpus: "i <verb> <topic> [tail]" posts answered by
    a question about a related topic, typed by construction.
    """
    if n < 1:
        raise InvalidInputError(f"synth_corpus needs n >= 1, got {n}")
    scenes = list(scenes) if scenes is not None else load_scenes()
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        scene = scenes[int(rng.integers(len(scenes)))]
        related = scene.related[int(rng.integers(len(scene.related)))]
        _, template = RESPONSE_TEMPLATES[int(rng.integers(len(RESPONSE_TEMPLATES)))]
        tail = POST_TAILS[int(rng.integers(len(POST_TAILS)))]
        post = ("i", scene.verb, scene.topic) + ((tail,) if tail else ())
        response = tuple(template.replace("{B}", related).split())
        pairs.append(CorpusPair(post, response, tuple(_construct_types(response, related))))
    return pairs
