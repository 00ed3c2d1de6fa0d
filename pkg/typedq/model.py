#!/usr/bin/env python3
"""
GRU encoder-decoder with additive attention and typed output layers.

Three variants share the encoder, attention and decoder GRU stack:

- ``std``: soft typed decoder, a type-weighted mixture of three
  type-specific softmaxes, plus a type distribution supervised by Φ2.
- ``htd``: hard typed decoder, a single softmax modulated by a
  Gumbel-Softmax relaxed type mask over a per-post dynamic vocabulary and
  renormalized.
- ``plain``: a single softmax with no typing (the ablation baseline).

Matrices are stored input-major (``s @ W``), so a weight written W ∈ R^{k×d}
in the usual column convention is held here as a d×k array.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from typedq.corpus import (
    BOS_ID,
    EOS_ID,
    NUM_TYPES,
    PAD_ID,
    UNK_ID,
    CorpusPair,
    Vocabulary,
    WordType,
)
from typedq.errors import InvalidInputError, RangeError, UnderflowError
from typedq.tensorcore import (
    Tensor,
    add,
    as_tensor,
    concat,
    exp,
    gather_rows,
    log,
    log_softmax,
    matmul,
    mul,
    parameter,
    reshape,
    scalar_mul,
    sigmoid,
    softmax,
    tanh,
    tsum,
)

logger = logging.getLogger(__name__)

VARIANTS = ("std", "htd", "plain")
MASKED_SCORE = -1e9
UNDERFLOW_LIMIT = 1e-12
GS_CLAMP = 1e-12
TRACE_TOP = 10
DEFAULT_MAX_GEN_LEN = 30

# number of zero type probabilities clamped before taking log in gumbel_softmax
gs_clamp_count = 0


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "std"
    vocab_size: int = 5000
    d_emb: int = 64
    d_hidden: int = 128
    n_layers: int = 2
    k: int = NUM_TYPES

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant '{self.variant}', expected one of {', '.join(VARIANTS)}")
        if self.k != NUM_TYPES:
            raise InvalidInputError(f"k is fixed at {NUM_TYPES}, got {self.k}")
        for name in ("vocab_size", "d_emb", "d_hidden", "n_layers"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be positive")

    def to_dict(self) -> Dict:
        return asdict(self)


class ModelParams:
    """All trainable weights of one model variant, keyed by name."""

    def __init__(self, config: ModelConfig, tensors: Dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    @property
    def variant(self) -> str:
        return self.config.variant

    def names(self) -> List[str]:
        return sorted(self.tensors)

    def trainable(self) -> Dict[str, Tensor]:
        return {name: self.tensors[name] for name in self.names()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {n: parameter(t.values.copy(), name=n) for n, t in self.tensors.items()})

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator, scale: float = 0.1) -> "ModelParams":
        """Uniform(-scale, scale) matrices, zero biases."""
        shapes = parameter_shapes(config)
        tensors = {}
        for name in sorted(shapes):
            shape = shapes[name]
            leaf = name.split(".")[-1]
            if leaf == "b" or leaf.startswith("b_"):
                values = np.zeros(shape)
            else:
                values = rng.uniform(-scale, scale, size=shape)
            tensors[name] = parameter(values, name=name)
        return cls(config, tensors)


def _gru_shapes(prefix: str, d_in: int, d_hidden: int) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    for gate in ("r", "z", "h"):
        shapes[f"{prefix}.W_{gate}"] = (d_in, d_hidden)
        shapes[f"{prefix}.U_{gate}"] = (d_hidden, d_hidden)
        shapes[f"{prefix}.b_{gate}"] = (d_hidden,)
    return shapes


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    V, E, H, L, k = config.vocab_size, config.d_emb, config.d_hidden, config.n_layers, config.k
    shapes: Dict[str, Tuple[int, ...]] = {"embedding": (V, E)}
    for layer in range(L):
        shapes.update(_gru_shapes(f"enc.{layer}", E if layer == 0 else H, H))
        # decoder input is [e(y_prev); c_t]
        shapes.update(_gru_shapes(f"dec.{layer}", E + H if layer == 0 else H, H))
    shapes.update({"att.W": (H, H), "att.U": (H, H), "att.v": (H, 1)})
    if config.variant == "std":
        shapes.update({"std.type.W": (H, k), "std.type.b": (k,)})
        for i in range(k):
            shapes.update({f"std.out.{i}.W": (H, V), f"std.out.{i}.b": (V,)})
    elif config.variant == "htd":
        shapes.update({"htd.out.W": (H, V), "htd.out.b": (V,), "htd.type.W": (H, k), "htd.type.b": (k,)})
    else:
        shapes.update({"plain.out.W": (H, V), "plain.out.b": (V,)})
    return shapes


def _affine(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    return add(matmul(x, params[f"{prefix}.W"]), params[f"{prefix}.b"])


def _as_id_matrix(ids) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty id sequence or batch, got shape {arr.shape}")
    return arr


def _check_ids(params: ModelParams, ids: np.ndarray) -> None:
    V = params.config.vocab_size
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise RangeError(f"token id outside vocabulary of size {V}")


# ---------------------------------------------------------------------------
# Encoder, attention, decoder state
# ---------------------------------------------------------------------------

def gru_cell(params: ModelParams, prefix: str, x: Tensor, h_prev: Tensor) -> Tensor:
    """h = (1 - z) ⊙ h_prev + z ⊙ tanh(x W_h + (r ⊙ h_prev) U_h + b_h)."""
    r = sigmoid(add(add(matmul(x, params[f"{prefix}.W_r"]), matmul(h_prev, params[f"{prefix}.U_r"])),
                    params[f"{prefix}.b_r"]))
    z = sigmoid(add(add(matmul(x, params[f"{prefix}.W_z"]), matmul(h_prev, params[f"{prefix}.U_z"])),
                    params[f"{prefix}.b_z"]))
    candidate = tanh(add(add(matmul(x, params[f"{prefix}.W_h"]), matmul(mul(r, h_prev), params[f"{prefix}.U_h"])),
                         params[f"{prefix}.b_h"]))
    return add(h_prev, mul(z, add(candidate, scalar_mul(h_prev, -1.0))))


@dataclass
class EncoderOutput:
    states: List[Tensor]
    final: List[Tensor]
    memory: Tensor
    memory_proj: Tensor
    score_mask: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return len(self.states)


def encode(params: ModelParams, post_ids, post_mask: Optional[np.ndarray] = None) -> EncoderOutput:
    """Run the L-layer encoder GRU from a zero state over a post (or a padded batch of posts)."""
    ids = _as_id_matrix(post_ids)
    _check_ids(params, ids)
    B, m = ids.shape
    H = params.config.d_hidden
    mask = None if post_mask is None else np.asarray(post_mask, dtype=np.float64).reshape(B, m)

    layer_input = [gather_rows(params["embedding"], ids[:, t]) for t in range(m)]
    final = []
    for layer in range(params.config.n_layers):
        h = Tensor(np.zeros((B, H)))
        outputs = []
        for t in range(m):
            h_new = gru_cell(params, f"enc.{layer}", layer_input[t], h)
            if mask is not None and not mask[:, t].all():
                # padded positions carry the previous state through
                keep = mask[:, t:t + 1]
                h_new = add(h, mul(add(h_new, scalar_mul(h, -1.0)), keep))
            h = h_new
            outputs.append(h)
        final.append(h)
        layer_input = outputs

    memory = concat([reshape(h_t, (B, 1, H)) for h_t in layer_input], axis=1)
    score_mask = None
    if mask is not None and not mask.all():
        score_mask = np.where(mask > 0, 0.0, MASKED_SCORE)
    return EncoderOutput(
        states=layer_input,
        final=final,
        memory=memory,
        memory_proj=matmul(memory, params["att.U"]),
        score_mask=score_mask,
    )


def attend(params: ModelParams, s_prev: Tensor, enc: EncoderOutput) -> Tuple[Tensor, Tensor]:
    """Additive attention: score_i = vᵀ tanh(W_a s_prev + U_a h_i); returns (c_t, α)."""
    if enc.length == 0:
        raise InvalidInputError("attend needs at least one encoder state")
    B, m, H = enc.memory.shape
    query = reshape(matmul(s_prev, params["att.W"]), (B, 1, H))
    hidden = tanh(add(enc.memory_proj, query))
    scores = reshape(matmul(hidden, params["att.v"]), (B, m))
    if enc.score_mask is not None:
        scores = add(scores, enc.score_mask)
    alpha = softmax(scores, axis=-1)
    context = tsum(mul(reshape(alpha, (B, m, 1)), enc.memory), axis=1)
    return context, alpha


def decoder_step(params: ModelParams, s_prev: Sequence[Tensor], y_prev, c_t: Tensor) -> List[Tensor]:
    """One decoder GRU step on [e(y_prev); c_t]; returns the new per-layer states."""
    ids = np.asarray(y_prev, dtype=np.int64).reshape(-1)
    _check_ids(params, ids)
    x = concat([gather_rows(params["embedding"], ids), c_t], axis=-1)
    states = []
    for layer in range(params.config.n_layers):
        h = gru_cell(params, f"dec.{layer}", x, s_prev[layer])
        states.append(h)
        x = h
    return states


def initial_decoder_state(enc: EncoderOutput) -> List[Tensor]:
    return list(enc.final)


# ---------------------------------------------------------------------------
# Output layers
# ---------------------------------------------------------------------------

def _require_variant(params: ModelParams, variant: str) -> None:
    if params.variant != variant:
        raise InvalidInputError(f"operation needs a {variant} model, this one is {params.variant}")


def _type_selector(i: int) -> np.ndarray:
    sel = np.zeros((NUM_TYPES, 1))
    sel[i, 0] = 1.0
    return sel


def std_type_dist(params: ModelParams, s_t: Tensor) -> Tensor:
    """P(ty_t | ·) = softmax(s_t W_0 + b_0) over the three word types."""
    _require_variant(params, "std")
    return softmax(_affine(params, "std.type", s_t), axis=-1)


def std_components(params: ModelParams, s_t: Tensor) -> List[Tensor]:
    """The three type-specific generation distributions."""
    _require_variant(params, "std")
    return [softmax(_affine(params, f"std.out.{i}", s_t), axis=-1) for i in range(NUM_TYPES)]


def std_generation_dist(params: ModelParams, s_t: Tensor, type_dist=None) -> Tensor:
    """Σ_i softmax(s_t W_{c_i} + b_{c_i}) · P(ty_t = c_i | ·)."""
    weights = std_type_dist(params, s_t) if type_dist is None else as_tensor(type_dist)
    if weights.ndim == 1:
        weights = reshape(weights, (1, NUM_TYPES))
    mixture = None
    for i, component in enumerate(std_components(params, s_t)):
        term = mul(component, matmul(weights, _type_selector(i)))
        mixture = term if mixture is None else add(mixture, term)
    return mixture


def plain_generation_dist(params: ModelParams, s_t: Tensor) -> Tensor:
    _require_variant(params, "plain")
    return softmax(_affine(params, "plain.out", s_t), axis=-1)


@dataclass
class TypePartition:
    """Word type of every vocabulary id for one post's dynamic vocabulary."""

    types: np.ndarray

    @property
    def size(self) -> int:
        return len(self.types)

    def type_of(self, token_id: int) -> WordType:
        return WordType(int(self.types[token_id]))

    def counts(self) -> Tuple[int, int, int]:
        return tuple(int(np.sum(self.types == t)) for t in WordType)

    def one_hot(self) -> np.ndarray:
        out = np.zeros((len(self.types), NUM_TYPES))
        out[np.arange(len(self.types)), self.types] = 1.0
        return out


def make_partition(vocab: Union[Vocabulary, int], interrogative_ids: Iterable[int],
                   topic_ids: Iterable[int]) -> TypePartition:
    """Interrogative > Topic > Ordinary on overlap."""
    size = vocab if isinstance(vocab, int) else len(vocab)
    types = np.full(size, int(WordType.ORDINARY), dtype=np.int64)
    for ids, word_type in ((topic_ids, WordType.TOPIC), (interrogative_ids, WordType.INTERROGATIVE)):
        for i in ids:
            if not 0 <= i < size:
                raise RangeError(f"token id {i} outside vocabulary of size {size}")
            types[i] = int(word_type)
    return TypePartition(types)


def sample_gumbel(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """i.i.d. Gumbel(0, 1) noise."""
    return rng.gumbel(0.0, 1.0, size=shape)


def _gumbel_softmax_from_log(log_pi: Tensor, tau: float, g) -> Tensor:
    return softmax(scalar_mul(add(log_pi, g), 1.0 / tau), axis=-1)


def gumbel_softmax(pi, tau: float, g) -> Tensor:
    """GS(π)_i = exp((log π_i + g_i)/τ) / Σ_j exp((log π_j + g_j)/τ)."""
    global gs_clamp_count
    if tau <= 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    pi = as_tensor(pi)
    zeros = pi.values < GS_CLAMP
    if np.any(zeros):
        gs_clamp_count += int(np.sum(zeros))
        logger.debug(f"gumbel_softmax: clamped {int(np.sum(zeros))} probabilities (total {gs_clamp_count})")
        pi = add(pi, np.where(zeros, GS_CLAMP - pi.values, 0.0))
    return _gumbel_softmax_from_log(log(pi), tau, g)


@dataclass
class HtdStep:
    """Intermediate quantities of one HTD decoding step."""

    final: Tensor
    generation: Tensor
    type_dist: Tensor
    mask: Tensor
    mass: Tensor


def _partition_tensor(partition, batch: int) -> np.ndarray:
    if isinstance(partition, TypePartition):
        return np.broadcast_to(partition.one_hot(), (batch,) + (partition.size, NUM_TYPES))
    arr = np.asarray(partition, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.broadcast_to(arr, (batch,) + arr.shape)
    return arr


def _htd_parts(params: ModelParams, s_t: Tensor, partition, tau: float, rng: Optional[np.random.Generator],
               mode: str, step: int):
    _require_variant(params, "htd")
    if not 0.0 < tau <= 1.0:
        raise InvalidInputError(f"tau must lie in (0, 1], got {tau}")
    if mode not in ("train", "infer"):
        raise InvalidInputError(f"mode must be 'train' or 'infer', got '{mode}'")
    B = s_t.shape[0]
    log_p = log_softmax(_affine(params, "htd.out", s_t), axis=-1)
    generation = exp(log_p)
    type_logits = _affine(params, "htd.type", s_t)
    type_dist = softmax(type_logits, axis=-1)
    if mode == "train":
        if rng is None:
            raise InvalidInputError("train mode needs an RNG for Gumbel noise")
        g = sample_gumbel(rng, (B, NUM_TYPES))
    else:
        g = np.zeros((B, NUM_TYPES))
    gs = _gumbel_softmax_from_log(log_softmax(type_logits, axis=-1), tau, g)
    onehot = _partition_tensor(partition, B)
    word_mask = reshape(matmul(onehot, reshape(gs, (B, NUM_TYPES, 1))), (B, onehot.shape[1]))
    modulated = mul(generation, word_mask)
    mass = tsum(modulated, axis=-1, keepdims=True)
    lowest = float(np.min(mass.values))
    if lowest < UNDERFLOW_LIMIT:
        raise UnderflowError(f"HTD step {step}: modulated probability mass {lowest:.3e} below {UNDERFLOW_LIMIT}")
    return log_p, generation, type_dist, word_mask, modulated, mass


def htd_step_dist(params: ModelParams, s_t: Tensor, partition, tau: float,
                  rng: Optional[np.random.Generator] = None, mode: str = "infer", step: int = 0) -> HtdStep:
    """
    P* = P ⊙ m / Σ(P ⊙ m) with m(y) = GS(π)_{c(y)}.

    Gumbel noise is sampled in train mode and zero in infer mode.
    """
    _, generation, type_dist, word_mask, modulated, mass = _htd_parts(params, s_t, partition, tau, rng, mode, step)
    final = mul(modulated, exp(scalar_mul(log(mass), -1.0)))
    return HtdStep(final=final, generation=generation, type_dist=type_dist, mask=word_mask, mass=mass)


# ---------------------------------------------------------------------------
# Batching and loss
# ---------------------------------------------------------------------------

@dataclass
class Seq2SeqBatch:
    post_ids: np.ndarray
    post_mask: np.ndarray
    prev_ids: np.ndarray
    target_ids: np.ndarray
    target_mask: np.ndarray
    target_types: np.ndarray
    partition: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.post_ids.shape[0]

    @property
    def n_tokens(self) -> int:
        return int(self.target_mask.sum())


def training_partition(vocab: Vocabulary, pair: CorpusPair, interrogative_ids: Iterable[int]) -> TypePartition:
    """Dynamic vocabulary from the reference response's tagged topic words."""
    topics = {vocab.id_of(tok) for tok, ty in zip(pair.target, pair.response_types) if ty == WordType.TOPIC}
    topics.discard(UNK_ID)
    return make_partition(vocab, interrogative_ids, topics)


def batch_pairs(pairs: Sequence[CorpusPair], vocab: Vocabulary, interrogative_ids: Iterable[int],
                pad_to: Optional[int] = None, with_partition: bool = True,
                partitions: Optional[Sequence[TypePartition]] = None) -> Seq2SeqBatch:
    """
    Pad typed pairs into one teacher-forcing batch; OOV targets become UNK typed Ordinary.

    The HTD partition comes from each reference's tags unless explicit
    per-pair partitions are given (test-time scoring passes PMI predictions).
    """
    if not pairs:
        raise InvalidInputError("cannot batch zero pairs")
    if partitions is not None and len(partitions) != len(pairs):
        raise InvalidInputError(f"{len(partitions)} partitions for {len(pairs)} pairs")
    interrogative_ids = set(interrogative_ids)
    B = len(pairs)
    m = max(len(p.post) for p in pairs)
    n = max(len(p.target) for p in pairs)
    if pad_to is not None:
        n = max(n, pad_to)
    post_ids = np.full((B, m), PAD_ID, dtype=np.int64)
    post_mask = np.zeros((B, m))
    prev_ids = np.full((B, n), PAD_ID, dtype=np.int64)
    target_ids = np.full((B, n), PAD_ID, dtype=np.int64)
    target_mask = np.zeros((B, n))
    target_types = np.full((B, n), int(WordType.ORDINARY), dtype=np.int64)
    partition = np.zeros((B, len(vocab), NUM_TYPES)) if with_partition else None

    for b, pair in enumerate(pairs):
        if pair.response_types is None:
            raise InvalidInputError("batch_pairs needs typed pairs; run tag_pairs first")
        ids = vocab.encode(pair.post)
        post_ids[b, :len(ids)] = ids
        post_mask[b, :len(ids)] = 1.0
        tgt = vocab.encode(pair.target)
        types = [int(WordType.ORDINARY) if i == UNK_ID else int(t) for i, t in zip(tgt, pair.response_types)]
        target_ids[b, :len(tgt)] = tgt
        target_mask[b, :len(tgt)] = 1.0
        target_types[b, :len(tgt)] = types
        prev_ids[b, 0] = BOS_ID
        prev_ids[b, 1:len(tgt)] = tgt[:-1]
        if partition is not None:
            chosen = partitions[b] if partitions is not None else training_partition(vocab, pair, interrogative_ids)
            if chosen.size != len(vocab):
                raise InvalidInputError(f"partition covers {chosen.size} ids, vocabulary has {len(vocab)}")
            partition[b] = chosen.one_hot()
    return Seq2SeqBatch(post_ids, post_mask, prev_ids, target_ids, target_mask, target_types, partition)


@dataclass
class LossResult:
    """Φ = Φ1 + λ Φ2 summed over the batch's real (non-PAD) positions."""

    total: Tensor
    phi1: Tensor
    phi2: Tensor
    n_tokens: int


def _one_hot(ids: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(ids), width))
    out[np.arange(len(ids)), ids] = 1.0
    return out


def _pick(values: Tensor, onehot: np.ndarray) -> Tensor:
    return tsum(mul(values, onehot), axis=-1, keepdims=True)


def loss(params: ModelParams, batch: Seq2SeqBatch, tau: float = 0.8, lam: float = 0.8,
         rng: Optional[np.random.Generator] = None, mode: str = "train") -> LossResult:
    """Teacher-forced Φ1 (word NLL, P* for HTD) and Φ2 (type NLL)."""
    if lam < 0:
        raise InvalidInputError(f"lambda must be non-negative, got {lam}")
    V = params.config.vocab_size
    if batch.target_ids.max() >= V or batch.post_ids.max() >= V:
        raise RangeError("batch holds ids outside the model vocabulary; map OOV tokens to UNK first")
    variant = params.variant
    B, n = batch.target_ids.shape

    enc = encode(params, batch.post_ids, batch.post_mask)
    state = initial_decoder_state(enc)
    word_terms: List[Tensor] = []
    type_terms: List[Tensor] = []
    for t in range(n):
        context, _ = attend(params, state[-1], enc)
        state = decoder_step(params, state, batch.prev_ids[:, t], context)
        s_t = state[-1]
        y_onehot = _one_hot(batch.target_ids[:, t], V)
        ty_onehot = _one_hot(batch.target_types[:, t], NUM_TYPES)

        if variant == "plain":
            word_terms.append(_pick(log_softmax(_affine(params, "plain.out", s_t), axis=-1), y_onehot))
        elif variant == "std":
            type_logits = _affine(params, "std.type", s_t)
            type_terms.append(_pick(log_softmax(type_logits, axis=-1), ty_onehot))
            mixture = std_generation_dist(params, s_t, softmax(type_logits, axis=-1))
            word_terms.append(log(_pick(mixture, y_onehot)))
        else:
            if batch.partition is None:
                raise InvalidInputError("HTD loss needs the batch's dynamic-vocabulary partition")
            log_p, _, _, word_mask, _, mass = _htd_parts(params, s_t, batch.partition, tau, rng, mode, t)
            # log P*(y) = log P(y) + log m(y) - log Z
            log_p_star = add(add(_pick(log_p, y_onehot), log(_pick(word_mask, y_onehot))),
                             scalar_mul(log(mass), -1.0))
            word_terms.append(log_p_star)
            type_logits = _affine(params, "htd.type", s_t)
            type_terms.append(_pick(log_softmax(type_logits, axis=-1), ty_onehot))

    mask = batch.target_mask
    phi1 = scalar_mul(tsum(mul(concat(word_terms, axis=1), mask)), -1.0)
    if type_terms:
        phi2 = scalar_mul(tsum(mul(concat(type_terms, axis=1), mask)), -1.0)
        total = add(phi1, scalar_mul(phi2, lam))
    else:
        phi2 = Tensor(0.0)
        total = phi1
    return LossResult(total=total, phi1=phi1, phi2=phi2, n_tokens=batch.n_tokens)


# ---------------------------------------------------------------------------
# Greedy decoding
# ---------------------------------------------------------------------------

@dataclass
class TraceStep:
    step: int
    type_probs: Optional[np.ndarray]
    top: List[Tuple[int, float]]
    token_id: int
    token_type: WordType


@dataclass
class DecoderTrace:
    steps: List[TraceStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def to_lines(self, vocab: Vocabulary) -> List[str]:
        """One tab-separated line per step: step, P(I), P(T), P(O), token, type."""
        lines = []
        for s in self.steps:
            probs = ["-"] * NUM_TYPES if s.type_probs is None else [f"{p:.4f}" for p in s.type_probs]
            lines.append("\t".join([str(s.step)] + probs + [vocab.token_of(s.token_id), s.token_type.label]))
        return lines


def step_distribution(params: ModelParams, s_t: Tensor, partition: Optional[TypePartition], tau: float,
                      rng: Optional[np.random.Generator] = None, mode: str = "infer",
                      step: int = 0) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Final generation distribution and type distribution (None for plain) at one step, batch of 1."""
    if params.variant == "plain":
        return plain_generation_dist(params, s_t).values[0], None
    if params.variant == "std":
        type_dist = std_type_dist(params, s_t)
        return std_generation_dist(params, s_t, type_dist).values[0], type_dist.values[0]
    htd = htd_step_dist(params, s_t, partition, tau, rng, mode, step)
    return htd.final.values[0], htd.type_dist.values[0]


def greedy_decode(params: ModelParams, post_ids: Sequence[int], partition: TypePartition, tau: float = 0.8,
                  max_len: int = DEFAULT_MAX_GEN_LEN, rng: Optional[np.random.Generator] = None,
                  sample_noise: bool = False) -> Tuple[List[int], DecoderTrace]:
    """
    Argmax decoding until EOS or max_len tokens; PAD and BOS are never emitted.

    Returns the emitted ids without EOS and the per-step trace (EOS step included).
    """
    mode = "train" if sample_noise and params.variant == "htd" else "infer"
    enc = encode(params, list(post_ids))
    state = initial_decoder_state(enc)
    prev = BOS_ID
    emitted: List[int] = []
    trace = DecoderTrace()
    for t in range(max_len):
        context, _ = attend(params, state[-1], enc)
        state = decoder_step(params, state, [prev], context)
        dist, type_probs = step_distribution(params, state[-1], partition, tau, rng, mode, t)
        scores = dist.copy()
        scores[[PAD_ID, BOS_ID]] = -1.0
        token = int(np.argmax(scores))
        top_ids = np.argsort(-dist, kind="stable")[:TRACE_TOP]
        trace.steps.append(TraceStep(
            step=t,
            type_probs=None if type_probs is None else type_probs.copy(),
            top=[(int(i), float(dist[i])) for i in top_ids],
            token_id=token,
            token_type=partition.type_of(token),
        ))
        if token == EOS_ID:
            break
        emitted.append(token)
        prev = token
    return emitted, trace
