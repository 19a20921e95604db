# transformer_lm.py
"""
Decoder-only transformer with a pluggable input interface.

Input interfaces (the only thing that differs between compared variants):
  - LearnedTable   trainable [V, d] lookup, V*d parameters
  - FixedCode      canonical minimal code, tiled lift, computed on the fly
  - AffineRecoded  recoded minimal code A c(t) xor b, computed on the fly
  - FrozenLookup   non-trainable table exported from a CodeSpec (ablation parity)

Architecture: pre-norm blocks (LayerNorm -> causal attention with RoPE -> residual,
LayerNorm -> GELU MLP -> residual), final LayerNorm, untied output projection.
Optimizer: AdamW with decoupled weight decay, global-norm clipping, linear warmup
then cosine decay.
"""
from __future__ import annotations

import logging
import math
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

import numeric_kernel as nk
from errors import EmptyStream, InvalidConfig, NonFiniteLoss, ShapeMismatch, TokenOutOfRange
from gf2_linear import philox
from token_codes import (
    INPUT_KINDS,
    CodeSpec,
    FrozenTable,
    encode_batch,
    effective_rank,
    minimal_width,
    verify_injectivity,
)

logger = logging.getLogger(__name__)

INIT_STD = 0.02
REFERENCE_WARMUP_STEPS = 150
REFERENCE_RUN_STEPS = 5212


# -----------------------------
# Configuration
# -----------------------------
class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    vocab_size: int = 256
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    context_len: int = 256
    mlp_ratio: int = 4
    rope_base: float = nk.ROPE_BASE
    norm_eps: float = nk.LN_EPS
    input_kind: str = "fixed_code"

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "context_len", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"model.{name} must be positive")
        if self.input_kind not in INPUT_KINDS:
            raise InvalidConfig(f"model.input_kind must be one of {INPUT_KINDS}, got {self.input_kind!r}")
        if self.d_model % self.n_heads:
            raise InvalidConfig(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.head_dim % 2:
            raise InvalidConfig(f"head dim {self.head_dim} must be even for rotary positions")
        if self.input_kind != "learned" and self.d_model % self.code_width:
            raise InvalidConfig(f"d_model {self.d_model} is not divisible by K={self.code_width}")
        if self.norm_eps <= 0:
            raise InvalidConfig("model.norm_eps must be positive")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def code_width(self) -> int:
        return minimal_width(self.vocab_size)


class OptimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    lr: float = 1e-3
    lr_floor: float = 0.0
    warmup_steps: Optional[int] = None
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1
    grad_clip: float = 1.0
    decay_input_table: bool = True

    @model_validator(mode="after")
    def _check(self) -> "OptimConfig":
        if self.lr <= 0 or self.lr_floor < 0 or self.lr_floor > self.lr:
            raise InvalidConfig("train.lr must be positive and train.lr_floor in [0, lr]")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidConfig("AdamW betas must lie in [0, 1)")
        if self.grad_clip <= 0:
            raise InvalidConfig("train.grad_clip must be positive")
        return self


# -----------------------------
# Input interfaces
# -----------------------------
class InputInterface(ABC):
    kind: str

    @abstractmethod
    def trainable_params(self, config: ModelConfig) -> int: ...

    @abstractmethod
    def embed(self, leaves: Dict[str, nk.Tensor], ids: np.ndarray, dtype, tape: Optional[nk.Tape]) -> nk.Tensor: ...

    def input_matrix(self, dtype=np.float32) -> Optional[np.ndarray]:
        """All V input vectors stacked, for fixed interfaces; None when trained."""
        return None


class LearnedTable(InputInterface):
    kind = "learned"
    param_name = "input.table"

    def trainable_params(self, config: ModelConfig) -> int:
        return config.vocab_size * config.d_model

    def embed(self, leaves, ids, dtype, tape):
        return nk.embedding(leaves[self.param_name], ids, tape=tape)


class FixedCode(InputInterface):
    """Table-free minimal code; nothing is stored or trained on the input side."""

    kind = "fixed_code"

    def __init__(self, spec: CodeSpec):
        self.spec = spec

    def trainable_params(self, config: ModelConfig) -> int:
        return 0

    def embed(self, leaves, ids, dtype, tape):
        return nk.Tensor(encode_batch(ids, self.spec, dtype=dtype))

    def input_matrix(self, dtype=np.float32):
        return encode_batch(np.arange(self.spec.vocab_size), self.spec, dtype=dtype)


class AffineRecoded(FixedCode):
    kind = "affine_recoded"

    def __init__(self, spec: CodeSpec):
        if spec.recoder is None:
            raise InvalidConfig("affine_recoded interface needs a recoder")
        super().__init__(spec)


class FrozenLookup(InputInterface):
    kind = "frozen_lookup"

    def __init__(self, table: FrozenTable):
        self.table = table

    def trainable_params(self, config: ModelConfig) -> int:
        return 0

    def embed(self, leaves, ids, dtype, tape):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.table.vocab_size):
            raise TokenOutOfRange(f"token ids must lie in [0, {self.table.vocab_size})")
        return nk.Tensor(self.table.rows[ids].astype(dtype, copy=False))

    def input_matrix(self, dtype=np.float32):
        return self.table.rows.astype(dtype, copy=False)


def build_interface(config: ModelConfig, recoder_seed: Optional[int] = None, spec: Optional[CodeSpec] = None) -> InputInterface:
    if config.input_kind == "learned":
        return LearnedTable()
    if spec is None:
        seed = recoder_seed if config.input_kind == "affine_recoded" else None
        if config.input_kind == "affine_recoded" and seed is None:
            raise InvalidConfig("affine_recoded runs need a recoder seed")
        spec = CodeSpec.build(config.vocab_size, config.d_model, recoder_seed=seed)
    if spec.vocab_size != config.vocab_size or spec.lift_width != config.d_model:
        raise InvalidConfig("code spec does not match model vocab_size/d_model")
    if config.input_kind == "fixed_code" and spec.recoder is not None:
        raise InvalidConfig("fixed_code runs use the canonical code; drop the recoder or use affine_recoded")
    interface = AffineRecoded(spec) if config.input_kind == "affine_recoded" else FixedCode(spec)
    report = verify_injectivity(spec)
    if not report.ok:
        raise InvalidConfig(f"input interface collides on tokens {report.colliding_pair}")
    return interface


def check_input_rank(interface: InputInterface) -> Optional[int]:
    """Asserts the effective-rank ceiling of a code interface before training."""
    if not isinstance(interface, FixedCode):
        return None
    spec = interface.spec
    rank = effective_rank(spec)
    if rank > spec.code_width or (spec.is_full_vocabulary and rank != spec.code_width):
        raise InvalidConfig(f"input rank {rank} violates the K={spec.code_width} ceiling")
    return rank


def head_tile_map(config: ModelConfig) -> List[List[int]]:
    """Tile indices covering each head's input slice; raises unless every slice holds whole tiles."""
    k, h = config.code_width, config.head_dim
    if h % k:
        raise InvalidConfig(f"head dim {h} does not hold whole {k}-bit tiles")
    tiles = []
    for head in range(config.n_heads):
        cols = range(head * h, (head + 1) * h)
        tiles.append(sorted({c // k for c in cols}))
    return tiles


# -----------------------------
# Parameters
# -----------------------------
def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    d, v, hidden = config.d_model, config.vocab_size, config.mlp_ratio * config.d_model
    shapes: Dict[str, Tuple[int, ...]] = {}
    if config.input_kind == "learned":
        shapes[LearnedTable.param_name] = (v, d)
    for i in range(config.n_layers):
        p = f"blocks.{i}"
        shapes.update({
            f"{p}.ln1.gain": (d,), f"{p}.ln1.shift": (d,),
            f"{p}.attn.wq": (d, d), f"{p}.attn.bq": (d,),
            f"{p}.attn.wk": (d, d), f"{p}.attn.bk": (d,),
            f"{p}.attn.wv": (d, d), f"{p}.attn.bv": (d,),
            f"{p}.attn.wo": (d, d), f"{p}.attn.bo": (d,),
            f"{p}.ln2.gain": (d,), f"{p}.ln2.shift": (d,),
            f"{p}.mlp.w_in": (d, hidden), f"{p}.mlp.b_in": (hidden,),
            f"{p}.mlp.w_out": (hidden, d), f"{p}.mlp.b_out": (d,),
        })
    shapes["ln_f.gain"] = (d,)
    shapes["ln_f.shift"] = (d,)
    shapes["head.w"] = (d, v)
    return shapes


def parameter_census(config: ModelConfig) -> int:
    return sum(math.prod(s) for s in parameter_shapes(config).values())


def is_decayed(name: str, shape: Tuple[int, ...], decay_input_table: bool = True) -> bool:
    if name == LearnedTable.param_name:
        return decay_input_table
    return len(shape) == 2


@dataclass
class Parameters:
    config: ModelConfig
    arrays: Dict[str, np.ndarray]

    def count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: a.copy() for k, a in self.arrays.items()})


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(np.float32)


def init_model(config: ModelConfig, seed: int) -> Parameters:
    """Each array draws from its own stream keyed by (seed, name), so arrays shared
    between variants start identical."""
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            arrays[name] = np.ones(shape, dtype=np.float32)
        elif len(shape) == 1:
            arrays[name] = np.zeros(shape, dtype=np.float32)
        else:
            arrays[name] = _truncated_normal(philox(seed, zlib.crc32(name.encode())), shape, INIT_STD)
    return Parameters(config, arrays)


# -----------------------------
# Forward
# -----------------------------
def leaves_of(params: Parameters, requires_grad: bool = False) -> Dict[str, nk.Tensor]:
    return {k: nk.Tensor(a, requires_grad=requires_grad, name=k) for k, a in params.arrays.items()}


def _block(x: nk.Tensor, leaves: Dict[str, nk.Tensor], p: str, config: ModelConfig, tape: Optional[nk.Tape]) -> nk.Tensor:
    H = config.n_heads
    h = nk.layer_norm(x, leaves[p + "ln1.gain"], leaves[p + "ln1.shift"], config.norm_eps, tape=tape)
    q = nk.linear(h, leaves[p + "attn.wq"], leaves[p + "attn.bq"], tape)
    k = nk.linear(h, leaves[p + "attn.wk"], leaves[p + "attn.bk"], tape)
    v = nk.linear(h, leaves[p + "attn.wv"], leaves[p + "attn.bv"], tape)
    q = nk.rope_rotate(nk.split_heads(q, H, tape), config.rope_base, tape)
    k = nk.rope_rotate(nk.split_heads(k, H, tape), config.rope_base, tape)
    att = nk.causal_attention(q, k, nk.split_heads(v, H, tape), tape)
    att = nk.linear(nk.merge_heads(att, tape), leaves[p + "attn.wo"], leaves[p + "attn.bo"], tape)
    x = nk.add(x, att, tape)
    h = nk.layer_norm(x, leaves[p + "ln2.gain"], leaves[p + "ln2.shift"], config.norm_eps, tape=tape)
    m = nk.gelu(nk.linear(h, leaves[p + "mlp.w_in"], leaves[p + "mlp.b_in"], tape), tape)
    return nk.add(x, nk.linear(m, leaves[p + "mlp.w_out"], leaves[p + "mlp.b_out"], tape), tape)


def forward_leaves(
    leaves: Dict[str, nk.Tensor],
    config: ModelConfig,
    interface: InputInterface,
    tokens: np.ndarray,
    tape: Optional[nk.Tape] = None,
) -> nk.Tensor:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeMismatch(f"tokens must be [B, T], got {tokens.shape}")
    if tokens.shape[1] > config.context_len:
        raise ShapeMismatch(f"sequence length {tokens.shape[1]} exceeds context {config.context_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= config.vocab_size):
        raise TokenOutOfRange(f"token ids must lie in [0, {config.vocab_size})")
    dtype = leaves["head.w"].data.dtype
    x = interface.embed(leaves, tokens, dtype, tape)
    for i in range(config.n_layers):
        x = _block(x, leaves, f"blocks.{i}.", config, tape)
    x = nk.layer_norm(x, leaves["ln_f.gain"], leaves["ln_f.shift"], config.norm_eps, tape=tape)
    return nk.linear(x, leaves["head.w"], None, tape)


def forward(params: Parameters, interface: InputInterface, tokens: np.ndarray) -> nk.Tensor:
    return forward_leaves(leaves_of(params), params.config, interface, tokens)


def loss_and_grads(
    params: Parameters, interface: InputInterface, tokens: np.ndarray, targets: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray]]:
    tape = nk.Tape()
    leaves = leaves_of(params, requires_grad=True)
    logits = forward_leaves(leaves, params.config, interface, tokens, tape)
    loss = nk.softmax_cross_entropy(logits, targets, tape)
    tape.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    return float(loss.data), grads


# -----------------------------
# Optimizer and schedule
# -----------------------------
def warmup_steps_for(total_steps: int) -> int:
    """The 150-of-5212 warmup fraction, at least 10 steps, always leaving a decay phase."""
    warmup = max(10, round(total_steps * REFERENCE_WARMUP_STEPS / REFERENCE_RUN_STEPS))
    return max(1, min(warmup, total_steps - 1))


def lr_at(step: int, peak: float, warmup: int, total: int, floor: float = 0.0) -> float:
    """Linear warmup reaching ``peak`` at step warmup-1, cosine to ``floor`` at step total-1."""
    if step < warmup:
        return peak * (step + 1) / warmup
    span = max(1, (total - 1) - (warmup - 1))
    progress = min(1.0, (step - (warmup - 1)) / span)
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainState:
    params: Parameters
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    optim: OptimConfig
    total_steps: int
    warmup_steps: int
    seed: int
    step: int = 0
    tokens_seen: int = 0


def init_train_state(params: Parameters, optim: OptimConfig, total_steps: int, seed: int) -> TrainState:
    if total_steps < 1:
        raise InvalidConfig("train.total_steps must be positive")
    warmup = optim.warmup_steps if optim.warmup_steps is not None else warmup_steps_for(total_steps)
    return TrainState(
        params=params,
        m={k: np.zeros_like(a) for k, a in params.arrays.items()},
        v={k: np.zeros_like(a) for k, a in params.arrays.items()},
        optim=optim,
        total_steps=total_steps,
        warmup_steps=warmup,
        seed=seed,
    )


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float, float]:
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm, norm
    scale = max_norm / (norm + 1e-6)
    clipped = {k: (g * np.float32(scale)).astype(g.dtype, copy=False) for k, g in grads.items()}
    return clipped, norm, global_norm(clipped)


def train_step(state: TrainState, interface: InputInterface, batch: Dict[str, np.ndarray]) -> Tuple[TrainState, Dict[str, float]]:
    tokens, targets = batch["tokens"], batch["targets"]
    loss, grads = loss_and_grads(state.params, interface, tokens, targets)
    if not math.isfinite(loss):
        raise NonFiniteLoss(state.step, loss)

    o = state.optim
    grads, norm, clipped_norm = clip_by_global_norm(grads, o.grad_clip)
    lr = lr_at(state.step, o.lr, state.warmup_steps, state.total_steps, o.lr_floor)
    t = state.step + 1
    c1, c2 = 1.0 - o.beta1 ** t, 1.0 - o.beta2 ** t
    lr32, b1, b2 = np.float32(lr), np.float32(o.beta1), np.float32(o.beta2)

    arrays, m_new, v_new = {}, {}, {}
    for name, p in state.params.arrays.items():
        g = grads[name]
        m = b1 * state.m[name] + (np.float32(1) - b1) * g
        v = b2 * state.v[name] + (np.float32(1) - b2) * g * g
        update = (m / np.float32(c1)) / (np.sqrt(v / np.float32(c2)) + np.float32(o.eps))
        if o.weight_decay and is_decayed(name, p.shape, o.decay_input_table):
            p = p * (np.float32(1) - lr32 * np.float32(o.weight_decay))
        arrays[name] = (p - lr32 * update).astype(np.float32, copy=False)
        m_new[name], v_new[name] = m, v

    new_state = TrainState(
        params=Parameters(state.params.config, arrays),
        m=m_new,
        v=v_new,
        optim=o,
        total_steps=state.total_steps,
        warmup_steps=state.warmup_steps,
        seed=state.seed,
        step=state.step + 1,
        tokens_seen=state.tokens_seen + int(np.asarray(tokens).size),
    )
    metrics = {
        "loss": loss,
        "lr": lr,
        "grad_norm": norm,
        "clipped_grad_norm": clipped_norm,
    }
    return new_state, metrics


# -----------------------------
# Evaluation and sampling
# -----------------------------
@dataclass(frozen=True)
class EvalResult:
    val_loss: float
    val_ppl: float
    tokens_evaluated: int


def evaluate(params: Parameters, interface: InputInterface, val_stream: Iterable[Dict[str, np.ndarray]]) -> EvalResult:
    total, count = 0.0, 0
    for batch in val_stream:
        logits = forward(params, interface, batch["tokens"])
        loss = nk.softmax_cross_entropy(logits, batch["targets"])
        n = int(np.asarray(batch["targets"]).size)
        total += float(loss.data) * n
        count += n
    if count == 0:
        raise EmptyStream("validation stream produced no tokens")
    val_loss = total / count
    return EvalResult(val_loss=val_loss, val_ppl=nk.perplexity(val_loss), tokens_evaluated=count)


def sample_text(
    params: Parameters,
    interface: InputInterface,
    prompt: Sequence[int],
    n_tokens: int,
    temperature: float = 1.0,
    seed: int = 0,
) -> List[int]:
    """Autoregressive sampling; temperature 0 means greedy argmax."""
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    out = list(prompt)
    if n_tokens == 0:
        return out
    if not out:
        raise ValueError("prompt must contain at least one token")
    rng = philox(seed)
    ctx = params.config.context_len
    for _ in range(n_tokens):
        window = np.asarray(out[-ctx:], dtype=np.int64)[None, :]
        logits = forward(params, interface, window).data[0, -1].astype(np.float64)
        if temperature == 0:
            nxt = int(np.argmax(logits))
        else:
            probs = np.exp(nk.log_softmax(logits / temperature))
            nxt = int(rng.choice(len(probs), p=probs / probs.sum()))
        out.append(nxt)
    return out
