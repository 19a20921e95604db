# numeric_kernel.py
"""
Dense primitives with exact reverse-mode gradients.

Every primitive takes ``Tensor`` inputs and an optional ``Tape``. With a tape,
the primitive records a node holding its inputs, its output and a closure that
maps the output gradient to input gradients; ``Tape.backward`` replays the nodes
in exact reverse order and accumulates gradients additively into ``Tensor.grad``.
Without a tape nothing is recorded (evaluation, sampling).

dtype follows the inputs: float32 for training, float64 for gradient checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from errors import NonFiniteValue, OddHeadDim, ShapeMismatch, TargetOutOfRange, TokenOutOfRange

LN_EPS = 1e-5
ROPE_BASE = 10000.0


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    inputs: Tuple[Optional[Tensor], ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    op: str


class Tape:
    def __init__(self):
        self.nodes: List[Node] = []

    def record(self, op: str, inputs: Sequence[Optional[Tensor]], output: Tensor, backward) -> None:
        self.nodes.append(Node(tuple(inputs), output, backward, op))

    def backward(self, output: Tensor, seed: Optional[np.ndarray] = None) -> None:
        output.grad = np.ones_like(output.data) if seed is None else np.asarray(seed, dtype=output.data.dtype)
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            grads = node.backward(g)
            for tensor, grad in zip(node.inputs, grads):
                if tensor is None or grad is None or not tensor.requires_grad:
                    continue
                tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def _result(data: np.ndarray, inputs: Sequence[Optional[Tensor]]) -> Tensor:
    return Tensor(data, requires_grad=any(t is not None and t.requires_grad for t in inputs))


def _record(tape: Optional[Tape], op: str, inputs, out: Tensor, backward) -> Tensor:
    if tape is not None and out.requires_grad:
        tape.record(op, inputs, out, backward)
    return out


def check_finite(t: Tensor, what: str = "tensor") -> None:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteValue(f"{what} contains NaN or Inf")


# -----------------------------
# Structural helpers
# -----------------------------
def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    out = _result(a.data + b.data, (a, b))
    return _record(tape, "add", (a, b), out, lambda g: (g, g))


def embedding(table: Tensor, ids: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """Row gather ``table[ids]``; backward scatters with ``np.add.at``."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise TokenOutOfRange(f"token ids must lie in [0, {table.shape[0]})")
    out = _result(table.data[ids], (table,))

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(tape, "embedding", (table,), out, backward)


def split_heads(x: Tensor, n_heads: int, tape: Optional[Tape] = None) -> Tensor:
    """[B, T, d] -> [B, H, T, d/H]; head j owns columns [j*h, (j+1)*h)."""
    b, t, d = x.shape
    if d % n_heads:
        raise ShapeMismatch(f"width {d} not divisible by {n_heads} heads")
    h = d // n_heads
    out = _result(x.data.reshape(b, t, n_heads, h).transpose(0, 2, 1, 3), (x,))
    return _record(tape, "split_heads", (x,), out, lambda g: (g.transpose(0, 2, 1, 3).reshape(b, t, d),))


def merge_heads(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    b, n_heads, t, h = x.shape
    out = _result(x.data.transpose(0, 2, 1, 3).reshape(b, t, n_heads * h), (x,))
    return _record(tape, "merge_heads", (x,), out, lambda g: (g.reshape(b, t, n_heads, h).transpose(0, 2, 1, 3),))


# -----------------------------
# Primitives
# -----------------------------
def linear(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, tape: Optional[Tape] = None) -> Tensor:
    n, m = w.shape
    if x.shape[-1] != n:
        raise ShapeMismatch(f"linear: input width {x.shape[-1]} vs weight {w.shape}")
    if bias is not None and bias.shape != (m,):
        raise ShapeMismatch(f"linear: bias {bias.shape} vs output width {m}")
    y = x.data @ w.data
    if bias is not None:
        y = y + bias.data
    out = _result(y, (x, w, bias))

    def backward(g):
        g2 = g.reshape(-1, m)
        gx = g @ w.data.T
        gw = x.data.reshape(-1, n).T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    return _record(tape, "linear", (x, w, bias), out, backward)


def gelu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = ndtr(x.data)
    out = _result((x.data * cdf).astype(x.data.dtype, copy=False), (x,))

    def backward(g):
        return (g * (cdf + x.data * norm.pdf(x.data)).astype(x.data.dtype, copy=False),)

    return _record(tape, "gelu", (x,), out, backward)


def layer_norm(
    x: Tensor, gain: Tensor, shift: Tensor, eps: float = LN_EPS, tape: Optional[Tape] = None
) -> Tensor:
    n = x.shape[-1]
    if gain.shape != (n,) or shift.shape != (n,):
        raise ShapeMismatch(f"layer_norm: gain/shift must have shape ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = _result(xhat * gain.data + shift.data, (x, gain, shift))

    def backward(g):
        axes = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=axes)
        gshift = g.sum(axis=axes)
        dxhat = g * gain.data
        gx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gshift

    return _record(tape, "layer_norm", (x, gain, shift), out, backward)


def rope_angles(t: int, h: int, base: float = ROPE_BASE, dtype=np.float64) -> Tuple[np.ndarray, np.ndarray]:
    """cos/sin tables [T, h/2]; pair i at position p is rotated by p * base^(-2i/h)."""
    inv_freq = base ** (-np.arange(0, h, 2, dtype=np.float64) / h)
    theta = np.outer(np.arange(t, dtype=np.float64), inv_freq)
    return np.cos(theta).astype(dtype), np.sin(theta).astype(dtype)


def _rotate(data: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    even, odd = data[..., 0::2], data[..., 1::2]
    out = np.empty_like(data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope_rotate(x: Tensor, base: float = ROPE_BASE, tape: Optional[Tape] = None, offset: int = 0) -> Tensor:
    """Rotary positions on [B, H, T, h]; positions are ``offset .. offset+T-1``."""
    *_, t, h = x.shape
    if h % 2:
        raise OddHeadDim(f"head dim {h} is odd")
    cos, sin = rope_angles(offset + t, h, base, dtype=x.data.dtype)
    cos, sin = cos[offset:], sin[offset:]
    out = _result(_rotate(x.data, cos, sin), (x,))
    return _record(tape, "rope", (x,), out, lambda g: (_rotate(g, cos, -sin),))


def _causal_mask(t: int) -> np.ndarray:
    return np.triu(np.ones((t, t), dtype=bool), k=1)


def attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """softmax(q k^T / sqrt(h) + causal mask); strictly-upper entries are exactly 0."""
    h = q.shape[-1]
    scores = (q @ np.swapaxes(k, -1, -2)) / np.asarray(math.sqrt(h), dtype=q.dtype)
    scores = np.where(_causal_mask(q.shape[-2]), -np.inf, scores)
    scores = scores - scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    return p / p.sum(axis=-1, keepdims=True)


def causal_attention(q: Tensor, k: Tensor, v: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if not (q.shape == k.shape == v.shape) or len(q.shape) != 4:
        raise ShapeMismatch(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    scale = np.asarray(1.0 / math.sqrt(q.shape[-1]), dtype=q.data.dtype)
    p = attention_weights(q.data, k.data)
    out = _result(p @ v.data, (q, k, v))

    def backward(g):
        gv = np.swapaxes(p, -1, -2) @ g
        gp = g @ np.swapaxes(v.data, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True))
        gq = (gs @ k.data) * scale
        gk = (np.swapaxes(gs, -1, -2) @ q.data) * scale
        return gq, gk, gv

    return _record(tape, "attention", (q, k, v), out, backward)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """Mean next-token NLL over every position; returns a 0-d tensor."""
    targets = np.asarray(targets)
    v = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise TargetOutOfRange(f"targets must lie in [0, {v})")
    flat = logits.data.reshape(-1, v)
    tgt = targets.reshape(-1)
    count = tgt.size
    logp = log_softmax(flat)
    loss = -logp[np.arange(count), tgt].mean()
    out = _result(np.asarray(loss, dtype=logits.data.dtype), (logits,))

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(count), tgt] -= 1.0
        return ((grad * (g / count)).reshape(logits.shape).astype(logits.data.dtype, copy=False),)

    return _record(tape, "cross_entropy", (logits,), out, backward)


def perplexity(mean_loss: float) -> float:
    return math.exp(mean_loss)
