#!/usr/bin/env python3
"""
Dense float64 tensors with define-by-run reverse-mode differentiation.

A ComputationTape records every primitive applied while it is active and
replays the local gradient rules in reverse order. Outside a tape nothing is
recorded, which is the inference path.
"""

import logging
import struct
import threading
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from typedq.errors import (
    CheckpointFormatError,
    InvalidInputError,
    NumericError,
    RangeError,
    ShapeError,
    StateError,
)

logger = logging.getLogger(__name__)

DTYPE = np.float64


class Tensor:
    """A dense float64 array, optionally tracked for gradients."""

    __slots__ = ("values", "requires_grad", "grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(values, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.values = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise InvalidInputError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, scalar_mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, scalar_mul(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    """Wrap arrays and scalars as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(values, name: Optional[str] = None) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.array(values, dtype=DTYPE), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_local = threading.local()


def _tape_stack() -> List["ComputationTape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape() -> Optional["ComputationTape"]:
    """The innermost tape open on this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass
class TapeNode:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ComputationTape:
    """Ordered record of primitive applications; inputs always precede their consumers."""

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._consumed = False

    def __enter__(self) -> "ComputationTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes = []
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every requires_grad tensor reachable from loss."""
        if loss.size != 1:
            raise InvalidInputError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise StateError("backward already ran on this tape; reset it first")
        if not self.nodes:
            raise StateError("backward called on an empty tape")

        seed = np.ones_like(loss.values)
        pending: Dict[int, Tuple[Tensor, np.ndarray]] = {id(loss): (loss, seed)}

        for node in reversed(self.nodes):
            entry = pending.pop(id(node.output), None)
            if entry is None:
                continue
            _, g = entry
            node.output.grad = g
            input_grads = node.backward_fn(g)
            for inp, ig in zip(node.inputs, input_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in pending:
                    # fan-out: contributions add up
                    pending[key] = (inp, pending[key][1] + ig)
                else:
                    pending[key] = (inp, ig)

        # whatever is left was never produced on this tape: leaves
        for tensor, g in pending.values():
            if tensor.grad is None or tensor is loss:
                tensor.grad = np.array(g, dtype=DTYPE)
            else:
                tensor.grad = tensor.grad + g

        self._consumed = True


def backward(loss: Tensor, tape: Optional[ComputationTape] = None) -> None:
    """Run backward on the given tape, or on the innermost active one."""
    tape = tape or active_tape()
    if tape is None:
        raise StateError("backward needs a tape; compute the loss inside `with ComputationTape()`")
    tape.backward(loss)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
_PRIMITIVES: Dict[str, Callable[..., Tuple[np.ndarray, BackwardFn]]] = {}


def _primitive(name: str):
    def register(fn):
        _PRIMITIVES[name] = fn
        return fn
    return register


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum grad down to shape, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


def _stable_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


@_primitive("matmul")
def _matmul(a: Tensor, b: Tensor):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions {a.shape[:-2]} and {b.shape[:-2]} do not conform") from None
    av, bv = a.values, b.values

    def grad_fn(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape) if b.requires_grad else None
        return ga, gb

    return np.matmul(av, bv), grad_fn


@_primitive("add")
def _add(a: Tensor, b: Tensor):
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return a.values + b.values, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))


@_primitive("mul")
def _mul(a: Tensor, b: Tensor):
    _broadcast_check("mul", a, b)
    av, bv = a.values, b.values
    return av * bv, lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))


@_primitive("concat")
def _concat(*xs: Tensor, axis: int = -1):
    if not xs:
        raise ShapeError("concat: no operands")
    ndim = xs[0].ndim
    ax = axis % ndim if ndim else 0
    for x in xs:
        if x.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch, {xs[0].shape} vs {x.shape}")
        for d in range(ndim):
            if d != ax and x.shape[d] != xs[0].shape[d]:
                raise ShapeError(f"concat: dim {d} differs, {xs[0].shape} vs {x.shape}")
    sizes = [x.shape[ax] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=ax))

    return np.concatenate([x.values for x in xs], axis=ax), grad_fn


@_primitive("tanh")
def _tanh(x: Tensor):
    y = np.tanh(x.values)
    return y, lambda g: (g * (1.0 - y * y),)


@_primitive("sigmoid")
def _sigmoid(x: Tensor):
    y = 0.5 * (1.0 + np.tanh(0.5 * x.values))
    return y, lambda g: (g * y * (1.0 - y),)


@_primitive("exp")
def _exp(x: Tensor):
    y = np.exp(x.values)
    return y, lambda g: (g * y,)


@_primitive("log")
def _log(x: Tensor):
    xv = x.values
    if np.any(xv <= 0.0):
        raise InvalidInputError("log: input has non-positive entries")
    return np.log(xv), lambda g: (g / xv,)


def _check_distribution_input(op: str, x: Tensor) -> None:
    if x.size == 0:
        raise InvalidInputError(f"{op}: empty input")
    if not np.all(np.isfinite(x.values)):
        raise InvalidInputError(f"{op}: non-finite input")


@_primitive("softmax")
def _softmax(x: Tensor, axis: int = -1):
    _check_distribution_input("softmax", x)
    y = _stable_softmax(x.values, axis)

    def grad_fn(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return y, grad_fn


@_primitive("log_softmax")
def _log_softmax(x: Tensor, axis: int = -1):
    _check_distribution_input("log_softmax", x)
    shifted = x.values - np.max(x.values, axis=axis, keepdims=True)
    y = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def grad_fn(g):
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    return y, grad_fn


@_primitive("gather_rows")
def _gather_rows(table: Tensor, ids=None):
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise RangeError(f"gather_rows: index out of range for {rows} rows")

    def grad_fn(g):
        if not table.requires_grad:
            return (None,)
        full = np.zeros_like(table.values)
        np.add.at(full, idx, g)
        return (full,)

    return table.values[idx], grad_fn


@_primitive("sum")
def _sum(x: Tensor, axis=None, keepdims: bool = False):
    shape = x.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.array(np.broadcast_to(g, shape)),)

    return np.asarray(np.sum(x.values, axis=axis, keepdims=keepdims)), grad_fn


@_primitive("scalar_mul")
def _scalar_mul(x: Tensor, c: float = 1.0):
    return x.values * c, lambda g: (g * c,)


@_primitive("reshape")
def _reshape(x: Tensor, shape=None):
    try:
        out = x.values.reshape(shape).copy()
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    src = x.shape
    return out, lambda g: (g.reshape(src),)


PRIMITIVE_OPS = tuple(_PRIMITIVES)


def primitive_forward(op: str, *inputs, **attrs) -> Tensor:
    """Apply a primitive, recording it on the active tape when gradients are needed."""
    fn = _PRIMITIVES.get(op)
    if fn is None:
        raise InvalidInputError(f"unknown primitive '{op}'")
    tensors = tuple(as_tensor(x) for x in inputs)
    values, grad_fn = fn(*tensors, **attrs)
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{op}: produced non-finite values")
    requires_grad = any(t.requires_grad for t in tensors)
    out = Tensor(values, requires_grad=requires_grad)
    tape = active_tape()
    if tape is not None and requires_grad:
        tape.record(TapeNode(op, tensors, out, grad_fn))
    return out


def matmul(a, b) -> Tensor:
    return primitive_forward("matmul", a, b)


def add(a, b) -> Tensor:
    return primitive_forward("add", a, b)


def mul(a, b) -> Tensor:
    return primitive_forward("mul", a, b)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    return primitive_forward("concat", *tensors, axis=axis)


def tanh(x) -> Tensor:
    return primitive_forward("tanh", x)


def sigmoid(x) -> Tensor:
    return primitive_forward("sigmoid", x)


def exp(x) -> Tensor:
    return primitive_forward("exp", x)


def log(x) -> Tensor:
    return primitive_forward("log", x)


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax along axis."""
    return primitive_forward("softmax", x, axis=axis)


def log_softmax(x, axis: int = -1) -> Tensor:
    """Fused log(softmax(x)); never takes the log of an underflowed probability."""
    return primitive_forward("log_softmax", x, axis=axis)


def gather_rows(table, ids) -> Tensor:
    """Embedding lookup: rows of a 2-D table at integer ids (any shape)."""
    return primitive_forward("gather_rows", table, ids=ids)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    return primitive_forward("sum", x, axis=axis, keepdims=keepdims)


def scalar_mul(x, c: float) -> Tensor:
    return primitive_forward("scalar_mul", x, c=float(c))


def reshape(x, shape: Tuple[int, ...]) -> Tensor:
    return primitive_forward("reshape", x, shape=tuple(shape))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def gradient_check(f: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-4) -> float:
    """
    Compare backward() against central finite differences.

    f is re-evaluated with each parameter entry nudged by ±epsilon, so it must
    read the parameters' current values every call. Returns the max over all
    entries of |analytic - numeric| / max(1, |analytic| + |numeric|).
    """
    if not 0.0 < epsilon <= 1e-2:
        raise InvalidInputError(f"epsilon must lie in (0, 1e-2], got {epsilon}")

    for p in params:
        p.grad = None
    with ComputationTape() as tape:
        objective = f()
        if objective.size != 1:
            raise InvalidInputError(f"gradient_check needs a scalar objective, got shape {objective.shape}")
        tape.backward(objective)
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.values.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            f_plus = f().item()
            flat[i] = original - epsilon
            f_minus = f().item()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]) + abs(numeric))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Adam moments keyed by parameter name."""

    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def global_grad_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def optimizer_step(state: OptimizerState, params: Mapping[str, Tensor]) -> Mapping[str, Tensor]:
    """Clip by global norm, apply one Adam update in place, then clear gradients."""
    if state.learning_rate < 0:
        raise InvalidInputError(f"learning rate must be non-negative, got {state.learning_rate}")
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise StateError(f"missing gradient for parameter(s): {', '.join(missing[:5])}")

    norm = global_grad_norm(p.grad for p in params.values())
    scale = state.clip_norm / norm if 0.0 < state.clip_norm < norm else 1.0

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad * scale
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None
    return params


# ---------------------------------------------------------------------------
# Serialization: u32 rank, u64 dims, little-endian f64 payload
# ---------------------------------------------------------------------------

def write_tensor(fh: BinaryIO, tensor) -> None:
    arr = tensor.values if isinstance(tensor, Tensor) else np.asarray(tensor, dtype=DTYPE)
    fh.write(struct.pack('<I', arr.ndim))
    if arr.ndim:
        fh.write(struct.pack(f'<{arr.ndim}Q', *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype='<f8').tobytes())


def read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointFormatError(f"truncated file while reading {what}")
    return data


def read_tensor(fh: BinaryIO, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    (rank,) = struct.unpack('<I', read_exact(fh, 4, "tensor rank"))
    if rank > 8:
        raise CheckpointFormatError(f"implausible tensor rank {rank}")
    dims = struct.unpack(f'<{rank}Q', read_exact(fh, 8 * rank, "tensor dims")) if rank else ()
    count = int(np.prod(dims)) if rank else 1
    payload = read_exact(fh, 8 * count, "tensor payload")
    values = np.frombuffer(payload, dtype='<f8').astype(DTYPE).reshape(dims)
    return Tensor(values, requires_grad=requires_grad, name=name)
