#!/usr/bin/env python3
"""
PMI module: post/response co-occurrence statistics and topic-word prediction.

Counts are document frequencies: a token counts once per post (or response)
however often it repeats, and a (post token, response token) pair counts once
per corpus pair.
"""

import io
import logging
import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from typedq.corpus import CorpusPair, TypeLexicons
from typedq.errors import CheckpointFormatError, InvalidInputError, UndefinedPairError
from typedq.file_ops import read_bytes, write_bytes, write_file
from typedq.tensorcore import read_exact

logger = logging.getLogger(__name__)

PMI_MAGIC = b"TQPM"
PMI_FORMAT_VERSION = 1
DEFAULT_TOPIC_COUNT = 20


@dataclass
class PmiTable:
    n_pairs: int
    post_doc_count: Dict[str, int]
    resp_doc_count: Dict[str, int]
    joint_count: Dict[Tuple[str, str], int]
    min_count: int = 1
    _by_post: Dict[str, Dict[str, int]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        by_post: Dict[str, Dict[str, int]] = defaultdict(dict)
        for (x, y), c in self.joint_count.items():
            by_post[x][y] = c
        self._by_post = dict(by_post)

    def cooccurring(self, post_token: str) -> Mapping[str, int]:
        """Response tokens with a joint count for post_token."""
        return self._by_post.get(post_token, {})


@dataclass
class TopicPrediction:
    post: Tuple[str, ...]
    topics: List[Tuple[str, float]]

    @property
    def words(self) -> List[str]:
        return [w for w, _ in self.topics]


def build_table(pairs: Iterable[CorpusPair], min_count: int = 1) -> PmiTable:
    """Count document frequencies over a pair stream, dropping entries below min_count."""
    if min_count < 1:
        raise InvalidInputError(f"min_count must be at least 1, got {min_count}")
    n_pairs = 0
    post_counts: Counter = Counter()
    resp_counts: Counter = Counter()
    joint: Counter = Counter()
    for pair in pairs:
        n_pairs += 1
        post_set = set(pair.post)
        resp_set = set(pair.response)
        post_counts.update(post_set)
        resp_counts.update(resp_set)
        joint.update((x, y) for x in post_set for y in resp_set)
    if n_pairs == 0:
        raise InvalidInputError("build_table needs at least one pair")

    table = PmiTable(
        n_pairs=n_pairs,
        post_doc_count={w: c for w, c in post_counts.items() if c >= min_count},
        resp_doc_count={w: c for w, c in resp_counts.items() if c >= min_count},
        joint_count={k: c for k, c in joint.items() if c >= min_count},
        min_count=min_count,
    )
    logger.info(f"📊 PMI table: {n_pairs} pairs, {len(table.post_doc_count)} post tokens, "
                f"{len(table.resp_doc_count)} response tokens, {len(table.joint_count)} joint entries")
    return table


def _ratio(table: PmiTable, w_x: str, w_y: str) -> float:
    """p(x, y) / (p1(x) p2(y)), i.e. e^PMI."""
    joint = table.joint_count.get((w_x, w_y), 0)
    px = table.post_doc_count.get(w_x, 0)
    py = table.resp_doc_count.get(w_y, 0)
    if joint == 0 or px == 0 or py == 0:
        raise UndefinedPairError(f"PMI undefined for ('{w_x}', '{w_y}')")
    return joint * table.n_pairs / (px * py)


def pmi(table: PmiTable, w_x: str, w_y: str) -> float:
    """Natural-log PMI of post token w_x and response token w_y."""
    return math.log(_ratio(table, w_x, w_y))


def rel(table: PmiTable, k: str, post: Sequence[str]) -> float:
    """Sum of e^PMI(w_x, k) over the distinct post tokens; undefined pairs add nothing."""
    if not post:
        raise InvalidInputError("rel needs a non-empty post")
    total = 0.0
    for w_x in sorted(set(post)):
        try:
            total += _ratio(table, w_x, k)
        except UndefinedPairError:
            continue
    return total


def predict_topics(table: PmiTable, post: Sequence[str], n: int = DEFAULT_TOPIC_COUNT,
                   lexicons: Optional[TypeLexicons] = None) -> TopicPrediction:
    """
    Top-n response-side candidates by Rel, ties broken by token order.

    With lexicons, candidates are restricted to noun/verb content words.
    Candidates scoring zero are never returned.
    """
    if n < 1:
        raise InvalidInputError(f"n must be at least 1, got {n}")
    candidates = set()
    for w_x in set(post):
        candidates.update(table.cooccurring(w_x))
    if lexicons is not None:
        candidates = {c for c in candidates if lexicons.is_content_word(c)}

    scored = []
    for k in candidates:
        score = rel(table, k, post) if post else 0.0
        if score > 0.0:
            scored.append((k, score))
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return TopicPrediction(tuple(post), scored[:n])


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _write_str(buf: io.BytesIO, s: str) -> None:
    data = s.encode('utf-8')
    buf.write(struct.pack('<I', len(data)))
    buf.write(data)


def _read_str(buf: io.BytesIO) -> str:
    (length,) = struct.unpack('<I', read_exact(buf, 4, "string length"))
    try:
        return read_exact(buf, length, "string").decode('utf-8')
    except UnicodeDecodeError as e:
        raise CheckpointFormatError(f"bad token encoding: {e}") from e


def encode_table(table: PmiTable) -> bytes:
    buf = io.BytesIO()
    buf.write(PMI_MAGIC)
    buf.write(struct.pack('<IQI', PMI_FORMAT_VERSION, table.n_pairs, table.min_count))
    for counts in (table.post_doc_count, table.resp_doc_count):
        buf.write(struct.pack('<Q', len(counts)))
        for token in sorted(counts):
            _write_str(buf, token)
            buf.write(struct.pack('<Q', counts[token]))
    buf.write(struct.pack('<Q', len(table.joint_count)))
    for (x, y) in sorted(table.joint_count):
        _write_str(buf, x)
        _write_str(buf, y)
        buf.write(struct.pack('<Q', table.joint_count[(x, y)]))
    return buf.getvalue()


def decode_table(data: bytes) -> PmiTable:
    buf = io.BytesIO(data)
    if read_exact(buf, 4, "magic") != PMI_MAGIC:
        raise CheckpointFormatError("not a PMI table file (bad magic)")
    version, n_pairs, min_count = struct.unpack('<IQI', read_exact(buf, 16, "header"))
    if version != PMI_FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported PMI table version {version}")

    marginals = []
    for section in ("post counts", "response counts"):
        (count,) = struct.unpack('<Q', read_exact(buf, 8, section))
        entries = {}
        for _ in range(count):
            token = _read_str(buf)
            (c,) = struct.unpack('<Q', read_exact(buf, 8, section))
            entries[token] = c
        marginals.append(entries)
    (count,) = struct.unpack('<Q', read_exact(buf, 8, "joint counts"))
    joint = {}
    for _ in range(count):
        x = _read_str(buf)
        y = _read_str(buf)
        (c,) = struct.unpack('<Q', read_exact(buf, 8, "joint counts"))
        joint[(x, y)] = c
    if buf.read(1):
        raise CheckpointFormatError("trailing bytes after PMI table")
    return PmiTable(n_pairs, marginals[0], marginals[1], joint, min_count)


def save_table(path: str, table: PmiTable) -> None:
    write_bytes(path, encode_table(table))


def load_table(path: str) -> PmiTable:
    return decode_table(read_bytes(path))


def export_tsv(path: str, table: PmiTable) -> None:
    """Human-readable dump: one joint entry per line with its counts and PMI."""
    lines = [f"# n_pairs={table.n_pairs}\tmin_count={table.min_count}",
             "post_token\tresponse_token\tjoint\tpost_df\tresponse_df\tpmi"]
    for (x, y) in sorted(table.joint_count):
        try:
            value = f"{pmi(table, x, y):.6f}"
        except UndefinedPairError:
            value = "nan"
        lines.append(f"{x}\t{y}\t{table.joint_count[(x, y)]}\t"
                     f"{table.post_doc_count.get(x, 0)}\t{table.resp_doc_count.get(y, 0)}\t{value}")
    write_file(path, "\n".join(lines) + "\n")
