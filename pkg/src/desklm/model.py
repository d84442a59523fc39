"""Decoder-only transformer: pre-norm RMSNorm blocks, rotary positions,
grouped-query attention, SwiGLU MLP, bias-free linears, untied embeddings.

Everything is built from the reverse-mode tensor ops in ``desklm.tensor``;
no parameter has a bias, and the input embedding and output head are
independent matrices.  The attention keeps heads as slices of the last
dimension (no transpose-to-head-major step), which keeps the op set small.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .rng import Rng
from .tokenizer.vocab import EOS_ID

_CONFIG_DEFAULTS = {
    "hidden": 128,
    "intermediate": 352,
    "n_heads": 8,
    "n_kv_heads": 1,
    "n_layers": 4,
    "context_len": 256,
    "rope_base": 500000.0,
    "rmsnorm_eps": 1e-5,
}

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden: int = _CONFIG_DEFAULTS["hidden"]
    intermediate: int = _CONFIG_DEFAULTS["intermediate"]
    n_heads: int = _CONFIG_DEFAULTS["n_heads"]
    n_kv_heads: int = _CONFIG_DEFAULTS["n_kv_heads"]
    n_layers: int = _CONFIG_DEFAULTS["n_layers"]
    context_len: int = _CONFIG_DEFAULTS["context_len"]
    rope_base: float = _CONFIG_DEFAULTS["rope_base"]
    rmsnorm_eps: float = _CONFIG_DEFAULTS["rmsnorm_eps"]

    def __post_init__(self):
        ints = ("vocab_size", "hidden", "intermediate", "n_heads",
                "n_kv_heads", "n_layers", "context_len")
        for name in ints:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("rope_base", "rmsnorm_eps"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v <= 0:
                raise ValueError(f"{name} must be positive, got {v!r}")
        object.__setattr__(self, "rope_base", float(self.rope_base))
        object.__setattr__(self, "rmsnorm_eps", float(self.rmsnorm_eps))
        if self.hidden % self.n_heads:
            raise ValueError(
                f"hidden {self.hidden} not divisible by n_heads {self.n_heads}")
        if self.n_heads % self.n_kv_heads:
            raise ValueError(f"n_heads {self.n_heads} not divisible by "
                             f"n_kv_heads {self.n_kv_heads}")
        if self.head_dim % 2:
            raise ValueError(f"head_dim {self.head_dim} must be even "
                             "(rotary positions act on coordinate pairs)")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        if not isinstance(obj, dict):
            raise ValueError("model config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(
                f"unknown model config keys: {sorted(unknown)}")
        if "vocab_size" not in obj:
            raise ValueError("model config requires vocab_size")
        return cls(**obj)


def init_params(config: ModelConfig, seed: int = 0,
                dtype=np.float64) -> dict:
    """Fresh parameters: normal(0, 0.02); the residual-writing projections
    (attention output, MLP down) are scaled by 1/sqrt(2·n_layers); norm
    gains start at 1.  Each tensor draws from its own named RNG stream."""
    rng = Rng(seed)
    h, inter, v = config.hidden, config.intermediate, config.vocab_size
    kv = config.n_kv_heads * config.head_dim
    resid_std = INIT_STD / math.sqrt(2.0 * config.n_layers)

    def normal(name, shape, std):
        data = rng.derive("init", name).normal(shape, std).astype(dtype)
        return T.tensor(data, requires_grad=True)

    def ones(shape):
        return T.tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    params = {"token_embedding": normal("token_embedding", (v, h), INIT_STD)}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        params[p + "attn_norm"] = ones((h,))
        params[p + "wq"] = normal(p + "wq", (h, h), INIT_STD)
        params[p + "wk"] = normal(p + "wk", (h, kv), INIT_STD)
        params[p + "wv"] = normal(p + "wv", (h, kv), INIT_STD)
        params[p + "wo"] = normal(p + "wo", (h, h), resid_std)
        params[p + "mlp_norm"] = ones((h,))
        params[p + "gate"] = normal(p + "gate", (h, inter), INIT_STD)
        params[p + "up"] = normal(p + "up", (h, inter), INIT_STD)
        params[p + "down"] = normal(p + "down", (inter, h), resid_std)
    params["final_norm"] = ones((h,))
    params["lm_head"] = normal("lm_head", (h, v), INIT_STD)
    return params


def param_names(config: ModelConfig) -> list:
    """The parameter-name layout init_params produces, without building it."""
    names = ["token_embedding"]
    for i in range(config.n_layers):
        prefix = f"layers.{i}."
        names.extend(prefix + k for k in ("attn_norm", "wq", "wk", "wv",
                                          "wo", "mlp_norm", "gate", "up",
                                          "down"))
    names.extend(["final_norm", "lm_head"])
    return names


def rms_norm(x: T.Tensor, gain: T.Tensor, eps: float) -> T.Tensor:
    """y = x / sqrt(mean(x², last dim) + eps) · gain (output not re-normalized)."""
    if eps <= 0:
        raise ValueError(f"rms_norm eps must be positive, got {eps}")
    ms = T.mean_lastdim(T.mul(x, x))                       # [.., 1]
    inv = T.rsqrt(T.add(ms, T.tensor(np.asarray(eps, dtype=x.dtype))))
    return T.mul(T.mul(x, inv), gain)


def _rope_tables(positions, head_dim: int, base: float, like_shape, dtype):
    """cos/sin constants pre-broadcast to ``like_shape`` ([.., S, n, d/2])."""
    positions = np.asarray(positions, dtype=np.float64)
    half = head_dim // 2
    inv_freq = base ** (-2.0 * np.arange(half) / head_dim)   # [d/2]
    angles = positions[:, None] * inv_freq[None, :]          # [S, d/2]
    cos = np.cos(angles)[:, None, :]                         # [S, 1, d/2]
    sin = np.sin(angles)[:, None, :]
    cos = np.broadcast_to(cos, like_shape).astype(dtype).copy()
    sin = np.broadcast_to(sin, like_shape).astype(dtype).copy()
    return T.tensor(cos), T.tensor(sin)


def rope_apply(x: T.Tensor, positions, base: float) -> T.Tensor:
    """Rotates consecutive coordinate pairs (x_{2i}, x_{2i+1}) of the last
    dim by pos · base^(−2i/d).  x is [.., seq, n, head_dim]."""
    d = x.shape[-1]
    if d % 2:
        raise ValueError(f"rope_apply: head_dim {d} must be even")
    if len(positions) != x.shape[-3]:
        raise ValueError("rope_apply: positions length must equal seq dim")
    lead = (slice(None),) * (x.ndim - 1)
    even = T.slice_tensor(x, lead + (slice(0, None, 2),))   # [.., S, n, d/2]
    odd = T.slice_tensor(x, lead + (slice(1, None, 2),))
    cos, sin = _rope_tables(positions, d, base, even.shape, x.dtype)
    r_even = T.add(T.mul(even, cos), T.scale(T.mul(odd, sin), -1.0))
    r_odd = T.add(T.mul(even, sin), T.mul(odd, cos))
    # interleave back: [.., d/2, 2] pairs flattened to [.., d]
    pair_shape = r_even.shape + (1,)
    stacked = T.concat([T.reshape(r_even, pair_shape),
                        T.reshape(r_odd, pair_shape)], axis=-1)
    return T.reshape(stacked, x.shape)


def gqa_attention(x: T.Tensor, layer: dict, config: ModelConfig) -> T.Tensor:
    """Causal grouped-query attention; query head h reads KV group
    h // (n_heads / n_kv_heads).  RoPE is applied to q and k before scores."""
    b, s, h = x.shape
    nh, nkv, d = config.n_heads, config.n_kv_heads, config.head_dim
    q = T.matmul(x, layer["wq"])                    # [B, S, nh·d]
    k = T.matmul(x, layer["wk"])                    # [B, S, nkv·d]
    v = T.matmul(x, layer["wv"])
    positions = np.arange(s)
    q4 = rope_apply(T.reshape(q, (b, s, nh, d)), positions, config.rope_base)
    k4 = rope_apply(T.reshape(k, (b, s, nkv, d)), positions, config.rope_base)
    v3 = T.reshape(v, (b, s, nkv, d))

    causal = np.tril(np.ones((s, s), dtype=bool))
    fill = T.tensor(np.asarray(-1e30, dtype=x.dtype))
    rep = nh // nkv
    head_outs = []
    kv_cache = {}
    for head in range(nh):
        g = head // rep
        if g not in kv_cache:
            kg = T.reshape(T.slice_tensor(
                k4, (slice(None), slice(None), slice(g, g + 1))), (b, s, d))
            vg = T.reshape(T.slice_tensor(
                v3, (slice(None), slice(None), slice(g, g + 1))), (b, s, d))
            kv_cache[g] = (T.transpose2d(kg), vg)   # [B, d, S], [B, S, d]
        kt, vg = kv_cache[g]
        qh = T.reshape(T.slice_tensor(
            q4, (slice(None), slice(None), slice(head, head + 1))), (b, s, d))
        scores = T.scale(T.matmul(qh, kt), 1.0 / math.sqrt(d))  # [B, S, S]
        scores = T.where_mask(causal, scores, fill)
        attn = T.softmax_lastdim(scores)
        head_outs.append(T.matmul(attn, vg))        # [B, S, d]
    merged = T.concat(head_outs, axis=-1)           # [B, S, nh·d]
    return T.matmul(merged, layer["wo"])


def swiglu_mlp(x: T.Tensor, layer: dict) -> T.Tensor:
    """down( silu(gate(x)) ⊙ up(x) )"""
    gated = T.silu(T.matmul(x, layer["gate"]))
    return T.matmul(T.mul(gated, T.matmul(x, layer["up"])), layer["down"])


def _layer_view(params: dict, i: int) -> dict:
    p = f"layers.{i}."
    return {name: params[p + name]
            for name in ("attn_norm", "wq", "wk", "wv", "wo",
                         "mlp_norm", "gate", "up", "down")}


def forward(params: dict, config: ModelConfig, tokens) -> T.Tensor:
    """Token ids [batch, seq] → logits [batch, seq, vocab] (float64)."""
    ids = np.asarray(tokens)
    if ids.ndim != 2:
        raise ValueError(f"tokens must be [batch, seq], got shape {ids.shape}")
    b, s = ids.shape
    if s > config.context_len:
        raise ValueError(f"sequence length {s} exceeds context_len "
                         f"{config.context_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ValueError(f"token id out of range [0, {config.vocab_size})")
    x = T.embedding_lookup(params["token_embedding"], ids)
    eps = config.rmsnorm_eps
    for i in range(config.n_layers):
        layer = _layer_view(params, i)
        x = T.add(x, gqa_attention(rms_norm(x, layer["attn_norm"], eps),
                                   layer, config))
        x = T.add(x, swiglu_mlp(rms_norm(x, layer["mlp_norm"], eps), layer))
    x = rms_norm(x, params["final_norm"], eps)
    logits = T.matmul(x, params["lm_head"])
    if logits.dtype != np.float64:
        logits = T.cast(logits, np.float64)  # stable loss comparisons
    return logits


def lm_loss(logits: T.Tensor, targets, mask) -> T.Tensor:
    """Mean of −log softmax(logits)[target] over mask==1 positions."""
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=np.float64)
    if logits.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape}, targets "
                         f"{targets.shape}, mask {mask.shape}")
    total = mask.sum()
    if total == 0:
        raise ValueError("lm_loss: mask selects no positions")
    v = logits.shape[-1]
    rows = T.cross_entropy_rows(T.reshape(logits, (-1, v)),
                                targets.reshape(-1))
    masked = T.mul(rows, T.tensor(mask.reshape(-1)))
    return T.scale(T.sum_all(masked), 1.0 / float(total))


class Model:
    """Convenience wrapper pairing params with a config."""

    def __init__(self, config: ModelConfig, params: dict | None = None,
                 seed: int = 0, dtype=np.float64):
        self.config = config
        self.params = init_params(config, seed, dtype) if params is None \
            else params

    def forward(self, tokens) -> T.Tensor:
        return forward(self.params, self.config, tokens)

    def loss(self, batch) -> T.Tensor:
        logits = self.forward(batch.tokens)
        return lm_loss(logits, batch.targets, batch.loss_mask)

    def logits(self, ids) -> np.ndarray:
        """Single-sequence logits [len, vocab] (the eval-harness protocol)."""
        out = self.forward(np.asarray(ids, dtype=np.int64)[None, :])
        return out.data[0]

    def generate_greedy(self, prompt_ids, max_new_tokens: int = 10,
                        eos_id: int = EOS_ID) -> list:
        """Argmax continuation (ties → lowest id); stops at eos or budget."""
        ids = list(prompt_ids)
        if len(ids) + max_new_tokens > self.config.context_len:
            raise ValueError(
                f"prompt of {len(ids)} tokens + {max_new_tokens} new exceeds "
                f"context_len {self.config.context_len}")
        out = []
        for _ in range(max_new_tokens):
            logits = self.logits(ids)
            nxt = int(np.argmax(logits[-1]))  # first max = lowest id on ties
            out.append(nxt)
            ids.append(nxt)
            if nxt == eos_id:
                break
        return out
