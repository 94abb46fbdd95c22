"""Minimal dense reverse-mode automatic differentiation.

Everything is a 2-d float64 matrix (scalars are 1x1). Forward ops record
their parents and a backward closure that maps the incoming gradient to
per-parent contributions; ``backward`` walks the graph in reverse
topological order and accumulates gradients additively into every tensor
with ``requires_grad`` (explicit zeroing happens at each optimizer step,
which lets the finite-difference checker re-evaluate freely).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .rng import RngStream

__all__ = [
    "Tensor", "RngStream", "tensor", "constant", "parameter",
    "matmul", "add", "hadamard", "transpose", "concat_cols", "scale",
    "reshape", "powf", "sum_all", "row_softmax", "masked_row_softmax",
    "relu", "leaky_relu", "elu", "sigmoid", "exp", "log", "select_rows",
    "dropout", "cross_entropy_loss", "backward", "zero_grad",
    "AdamState", "adam_step", "xavier_init", "xavier_simplex_init",
    "finite_difference_check", "save_checkpoint", "load_checkpoint",
]

CHECKPOINT_MAGIC = b"HAE1"


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "parents", "_backward", "name")

    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None, name=""):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ConfigError(f"tensors are 2-d matrices, got shape {arr.shape}")
        # a non-finite element always makes the sum non-finite, so this is a
        # complete single-pass check
        if __debug__ and not np.isfinite(arr.sum()):
            raise NumericError(f"non-finite values entering tensor {name!r}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self._backward = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ConfigError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.values[0, 0])

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(values, requires_grad=False, name="") -> Tensor:
    return Tensor(values, requires_grad=requires_grad, name=name)


def constant(values, name="") -> Tensor:
    return Tensor(values, requires_grad=False, name=name)


def parameter(values, name="") -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def _op(values, parents, backward_fn) -> Tensor:
    """Build an op output; the closure returns one gradient contribution per
    parent (None for parents that do not require grad)."""
    needs = any(p.requires_grad for p in parents)
    return Tensor(
        values,
        requires_grad=needs,
        parents=parents if needs else (),
        backward_fn=backward_fn if needs else None,
    )


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ConfigError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul: inner dims {a.shape} x {b.shape}")
    av, bv = a.values, b.values

    def bwd(g):
        return (
            g @ bv.T if a.requires_grad else None,
            av.T @ g if b.requires_grad else None,
        )

    return _op(av @ bv, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bwd(g):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    return _op(a.values + b.values, (a, b), bwd)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "hadamard")
    av, bv = a.values, b.values

    def bwd(g):
        return (
            g * bv if a.requires_grad else None,
            g * av if b.requires_grad else None,
        )

    return _op(av * bv, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    return _op(a.values.T.copy(), (a,), lambda g: (g.T,))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ConfigError("concat_cols of nothing")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ConfigError("concat_cols: row counts differ")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(
            g[:, lo:hi] if p.requires_grad else None
            for p, lo, hi in zip(parts, offsets, offsets[1:])
        )

    return _op(np.concatenate([p.values for p in parts], axis=1), tuple(parts), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _op(s * a.values, (a,), lambda g: (s * g,))


def outer_sum(col: Tensor, row: Tensor) -> Tensor:
    """Broadcast sum of a column vector and a row vector:
    ``out[i, j] = col[i, 0] + row[0, j]`` (attention-score plumbing)."""
    if col.shape[1] != 1 or row.shape[0] != 1:
        raise ConfigError(f"outer_sum needs (N,1) and (1,M), got {col.shape} {row.shape}")

    def bwd(g):
        return (
            g.sum(axis=1, keepdims=True) if col.requires_grad else None,
            g.sum(axis=0, keepdims=True) if row.requires_grad else None,
        )

    return _op(col.values + row.values, (col, row), bwd)


def reshape(a: Tensor, shape: tuple[int, int]) -> Tensor:
    return _op(a.values.reshape(shape), (a,), lambda g: (g.reshape(a.values.shape),))


def powf(a: Tensor, p: float) -> Tensor:
    """Elementwise power for strictly positive inputs (degree rescaling)."""
    if np.any(a.values <= 0):
        raise NumericError("powf requires strictly positive inputs")
    return _op(a.values ** p, (a,), lambda g: (p * a.values ** (p - 1.0) * g,))


def sum_all(a: Tensor) -> Tensor:
    return _op(
        np.array([[a.values.sum()]]),
        (a,),
        lambda g: (np.full_like(a.values, g[0, 0]),),
    )


def relu(a: Tensor) -> Tensor:
    return _op(np.maximum(a.values, 0.0), (a,), lambda g: ((a.values > 0) * g,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    dmask = np.where(a.values > 0, 1.0, slope)
    return _op(a.values * dmask, (a,), lambda g: (dmask * g,))


def elu(a: Tensor) -> Tensor:
    out = np.where(a.values > 0, a.values, np.expm1(a.values))
    return _op(out, (a,), lambda g: (np.where(a.values > 0, 1.0, out + 1.0) * g,))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.values))
    return _op(out, (a,), lambda g: (out * (1.0 - out) * g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _op(out, (a,), lambda g: (out * g,))


def log(a: Tensor) -> Tensor:
    if np.any(a.values <= 0):
        raise NumericError("log requires strictly positive inputs")
    return _op(np.log(a.values), (a,), lambda g: (g / a.values,))


def _masked_softmax_values(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # The sentinel keeps exp() on its fast path (no -inf / underflow inputs);
    # softmax is shift-invariant so any shift >= the row max is exact, and
    # the mask multiply forces exact zeros at masked positions.
    e = np.where(mask, x, -60.0)
    e -= e.max(axis=1, keepdims=True)
    np.exp(e, out=e)
    e *= mask
    e /= e.sum(axis=1, keepdims=True)
    return e


def masked_row_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax per row restricted to positions where ``mask`` is nonzero.

    Masked-out positions are exactly 0 and each row sums to 1 over its mask.
    """
    mask = np.asarray(mask).astype(bool)
    if mask.shape != a.shape:
        raise ConfigError(f"mask shape {mask.shape} vs tensor {a.shape}")
    if not mask.any(axis=1).all():
        raise ConfigError("masked_row_softmax: some row has an empty mask")
    out = _masked_softmax_values(a.values, mask)

    def bwd(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner),)

    return _op(out, (a,), bwd)


def row_softmax(a: Tensor) -> Tensor:
    return masked_row_softmax(a, np.ones(a.shape, dtype=bool))


def select_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        acc = np.zeros_like(a.values)
        np.add.at(acc, idx, g)
        return (acc,)

    return _op(a.values[idx], (a,), bwd)


def dropout(a: Tensor, p: float, training: bool, rng: RngStream | None = None) -> Tensor:
    """Inverted dropout: zero entries with probability ``p`` and scale the
    survivors by 1/(1-p) in training mode; identity in eval mode."""
    if not (0.0 <= p < 1.0):
        raise ConfigError(f"dropout rate {p} outside [0, 1)")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ConfigError("training-mode dropout needs an RngStream")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _op(a.values * keep, (a,), lambda g: (keep * g,))


def cross_entropy_loss(logits: Tensor, one_hot: np.ndarray, row_mask) -> Tensor:
    """Summed (not averaged) cross-entropy over the rows in ``row_mask``,
    computed in log-sum-exp stabilized form."""
    rows = np.asarray(row_mask, dtype=np.int64)
    if rows.size == 0:
        raise ConfigError("cross_entropy_loss: empty row mask")
    one_hot = np.asarray(one_hot, dtype=np.float64)
    if one_hot.shape != logits.shape:
        raise ConfigError(f"one-hot shape {one_hot.shape} vs logits {logits.shape}")
    z = logits.values[rows]
    y = one_hot[rows]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = float((lse - (z * y).sum(axis=1)).sum())

    def bwd(g):
        soft = np.exp(z - zmax)
        soft /= soft.sum(axis=1, keepdims=True)
        full = np.zeros_like(logits.values)
        np.add.at(full, rows, (soft - y) * g[0, 0])
        return (full,)

    return _op(np.array([[loss]]), (logits,), bwd)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor with
    ``requires_grad`` reachable from ``loss``. Repeated calls accumulate."""
    if loss.values.shape != (1, 1):
        raise ConfigError(f"backward needs a scalar loss, got {loss.shape}")
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 0 = on stack, 1 = done
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            state[id(node)] = 1
            order.append(node)
            continue
        st = state.get(id(node))
        if st == 1:
            continue
        if st == 0:
            raise ConfigError("cycle detected in recorded computation graph")
        state[id(node)] = 0
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and state.get(id(p)) != 1:
                stack.append((p, False))

    flow: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.accumulate(g)
        if node._backward is None:
            continue
        for parent, contrib in zip(node.parents, node._backward(g)):
            if contrib is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in flow:
                flow[key] = flow[key] + contrib
            else:
                flow[key] = contrib


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


@dataclass
class AdamState:
    """Adam optimizer state with the standard bias-corrected update."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @staticmethod
    def for_params(params: Sequence[Tensor], lr: float) -> "AdamState":
        return AdamState(
            lr=lr,
            m=[np.zeros_like(p.values) for p in params],
            v=[np.zeros_like(p.values) for p in params],
        )


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One Adam update over ``params``; gradients are zeroed afterwards."""
    if len(params) != len(state.m):
        raise ConfigError("AdamState does not match the parameter list")
    for p in params:
        if p.grad is None:
            raise ConfigError(f"missing gradient on parameter {p.name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.values -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.grad = None


def xavier_init(rows: int, cols: int, rng: RngStream, name: str = "") -> Tensor:
    if rows <= 0 or cols <= 0:
        raise ConfigError(f"xavier_init needs positive dims, got {rows}x{cols}")
    limit = np.sqrt(6.0 / (rows + cols))
    return parameter(rng.uniform(-limit, limit, (rows, cols)), name=name)


def xavier_simplex_init(m: int, rng: RngStream) -> np.ndarray:
    """Draw m Xavier values and softmax them: normalized weights summing
    to 1 at initialization."""
    if m <= 0:
        raise ConfigError("xavier_simplex_init needs m >= 1")
    limit = np.sqrt(6.0 / (1 + m))
    raw = rng.uniform(-limit, limit, (m,))
    e = np.exp(raw - raw.max())
    return e / e.sum()


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` must be deterministic (dropout disabled). Coordinates within
    10*eps of zero are skipped to stay clear of activation kinks.
    """
    zero_grad(params)
    loss = f()
    backward(loss)
    analytic = [
        np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params
    ]
    zero_grad(params)
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.values.reshape(-1)
        for k in range(flat.size):
            theta = flat[k]
            if abs(theta) < 10.0 * eps:
                continue
            flat[k] = theta + eps
            f_plus = f().item()
            flat[k] = theta - eps
            f_minus = f().item()
            flat[k] = theta
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = ana.reshape(-1)[k]
            rel = abs(numeric - a) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


def save_checkpoint(
    named_params: Sequence[tuple[str, Tensor | np.ndarray]], path: str | Path
) -> None:
    """Flat binary checkpoint: magic ``HAE1`` then per-parameter records of
    (u32 name length, name UTF-8, u32 rows, u32 cols, row-major f64 LE)."""
    blob = bytearray(CHECKPOINT_MAGIC)
    for name, p in named_params:
        arr = p.values if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        if arr.ndim != 2:
            raise ConfigError(f"checkpoint parameter {name!r} must be 2-d")
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb)) + nb
        blob += struct.pack("<II", arr.shape[0], arr.shape[1])
        blob += arr.astype("<f8").tobytes(order="C")
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    out: dict[str, np.ndarray] = {}
    pos = 4
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
            count = rows * cols
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
            if arr.size != count:
                raise DataError(f"{path}: truncated parameter {name!r}")
            pos += 8 * count
            out[name] = arr.reshape(rows, cols).astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: truncated or corrupt checkpoint: {e}") from e
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return out
