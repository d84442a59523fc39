"""Training loop: AdamW, warmup→cosine→exponential LR, clipping,
gradient accumulation, validation, and bit-exact checkpoint/resume.

The LR cosine is evaluated in blend form (w·peak + (1−w)·floor) so the
boundary values are exact in floating point; the exponential branch starts
from the cosine's value at its start step, making the schedule continuous
there by construction.  Decoupled weight decay is one multiply,
p ← p·(1 − lr·wd), applied before the moment update; norm gains and the
token embedding are excluded.  The gradient norm accumulates per-parameter
sums in sorted name order so the clip decision never depends on dict order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .corpus.batching import TokenBatch
from .model import Model, ModelConfig, lm_loss, param_names
from .tokenizer.vocab import BOS_ID, EOS_ID

# ------------------------------------------------------------ schedule ----

_SCHED_DEFAULTS = {
    "peak": 6e-4,
    "floor": 2e-5,
    "warmup_steps": 2000,
    "total_steps": 600_000,
    "exp_start_fraction": 478_000 / 600_000,
    "exp_half_life_fraction": 0.05,
}


@dataclass(frozen=True)
class LRSchedule:
    peak: float = _SCHED_DEFAULTS["peak"]
    floor: float = _SCHED_DEFAULTS["floor"]
    warmup_steps: int = _SCHED_DEFAULTS["warmup_steps"]
    total_steps: int = _SCHED_DEFAULTS["total_steps"]
    exp_start_fraction: float = _SCHED_DEFAULTS["exp_start_fraction"]
    exp_half_life_fraction: float = _SCHED_DEFAULTS["exp_half_life_fraction"]

    def __post_init__(self):
        if not 0 < self.floor < self.peak:
            raise ValueError(f"need 0 < floor < peak, got {self.floor} / {self.peak}")
        if not 0 <= self.warmup_steps < self.exp_start_step < self.total_steps:
            raise ValueError(
                f"need warmup < exp_start < total, got {self.warmup_steps} / "
                f"{self.exp_start_step} / {self.total_steps}")
        if self.exp_half_life_fraction <= 0:
            raise ValueError("exp_half_life_fraction must be positive")

    @property
    def exp_start_step(self) -> int:
        return int(round(self.exp_start_fraction * self.total_steps))

    @property
    def half_life_steps(self) -> float:
        return self.exp_half_life_fraction * self.total_steps

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "LRSchedule":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown LR schedule keys: {sorted(unknown)}")
        return cls(**obj)


def lr_at(schedule: LRSchedule, step: int) -> float:
    """Learning rate at an update index: linear warmup from zero, cosine
    from peak toward floor over [warmup, total], overridden from
    exp_start by a half-life decay starting at the cosine's value there."""
    s = schedule
    if not 0 <= step <= s.total_steps:
        raise ValueError(f"step {step} outside [0, {s.total_steps}]")
    if step < s.warmup_steps:
        return s.peak * (step / s.warmup_steps)

    def cosine(at: int) -> float:
        span = s.total_steps - s.warmup_steps
        w = 0.5 * (1.0 + math.cos(math.pi * (at - s.warmup_steps) / span))
        return w * s.peak + (1.0 - w) * s.floor

    if step < s.exp_start_step:
        return cosine(step)
    decay = 0.5 ** ((step - s.exp_start_step) / s.half_life_steps)
    return cosine(s.exp_start_step) * decay


# -------------------------------------------------------------- config ----

_TRAIN_DEFAULTS = {
    "micro_batch": 4,
    "accum_steps": 30,
    "workers": 1,
    "seq_len": 256,
    "weight_decay": 0.1,
    "clip_norm": 1.0,
    "beta1": 0.9,
    "beta2": 0.95,
    "adam_eps": 1e-8,
    "seed": 0,
    "precision": "fp64",
}


@dataclass(frozen=True)
class TrainConfig:
    micro_batch: int = _TRAIN_DEFAULTS["micro_batch"]
    accum_steps: int = _TRAIN_DEFAULTS["accum_steps"]
    workers: int = _TRAIN_DEFAULTS["workers"]
    seq_len: int = _TRAIN_DEFAULTS["seq_len"]
    weight_decay: float = _TRAIN_DEFAULTS["weight_decay"]
    clip_norm: float = _TRAIN_DEFAULTS["clip_norm"]
    beta1: float = _TRAIN_DEFAULTS["beta1"]
    beta2: float = _TRAIN_DEFAULTS["beta2"]
    adam_eps: float = _TRAIN_DEFAULTS["adam_eps"]
    seed: int = _TRAIN_DEFAULTS["seed"]
    precision: str = _TRAIN_DEFAULTS["precision"]

    def __post_init__(self):
        for name in ("micro_batch", "accum_steps", "workers", "seq_len"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.precision not in ("fp64", "fp32"):
            raise ValueError(f"precision must be fp64 or fp32, got {self.precision!r}")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    @property
    def global_batch(self) -> int:
        return self.micro_batch * self.accum_steps * self.workers

    @property
    def tokens_per_iter(self) -> int:
        return self.global_batch * self.seq_len

    @property
    def dtype(self):
        return np.float64 if self.precision == "fp64" else np.float32

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**obj)


# ------------------------------------------------------------ optimizer ----

def is_decayed(name: str) -> bool:
    """Weight decay hits projections only: norm gains and the token
    embedding are exempt (the untied output head is a projection)."""
    return not (name.endswith("norm") or name == "token_embedding")


class AdamW:
    """Adam with bias correction and decoupled decay (one multiply)."""

    def __init__(self, params: dict, config: TrainConfig):
        self.params = params
        self.config = config
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, grads: dict, lr: float) -> None:
        cfg = self.config
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = grads[name]
            if cfg.weight_decay and is_decayed(name):
                p.data *= 1.0 - lr * cfg.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, t: int, m: dict, v: dict) -> None:
        if set(m) != set(self.params) or set(v) != set(self.params):
            raise ValueError("optimizer state names do not match parameters")
        self.t = int(t)
        for name in self.params:
            self.m[name] = m[name].astype(self.m[name].dtype, copy=True)
            self.v[name] = v[name].astype(self.v[name].dtype, copy=True)


def clip_gradients(grads: dict, threshold: float):
    """Global-L2 clip; returns (grads, pre-clip norm).  Below the threshold
    the arrays pass through bitwise unchanged."""
    if threshold <= 0:
        raise ValueError("clip threshold must be positive")
    total = math.fsum(float(np.sum(grads[name] * grads[name]))
                      for name in sorted(grads))
    norm = math.sqrt(total)
    if norm > threshold:
        factor = threshold / norm
        for name in grads:
            grads[name] = grads[name] * factor
    return grads, norm


# -------------------------------------------------------------- trainer ----

def pack_rows(texts, tokenizer, seq_len: int, batch_size: int) -> list:
    """Chops BOS/EOS-framed documents into full [batch, seq_len] batches
    (tail tokens that cannot fill a row are dropped)."""
    stream = []
    for text in texts:
        stream.extend([BOS_ID] + tokenizer.encode(text) + [EOS_ID])
    n_rows = (len(stream) - 1) // seq_len
    if n_rows == 0:
        raise ValueError(
            f"corpus too small: {len(stream)} tokens cannot fill one row of "
            f"seq_len {seq_len}")
    batches = []
    for lo in range(0, n_rows, batch_size):
        rows = range(lo, min(lo + batch_size, n_rows))
        tokens = np.stack([np.array(stream[r * seq_len:(r + 1) * seq_len])
                           for r in rows])
        targets = np.stack(
            [np.array(stream[r * seq_len + 1:(r + 1) * seq_len + 1])
             for r in rows])
        batches.append(TokenBatch(tokens.astype(np.int64),
                                  targets.astype(np.int64),
                                  np.ones(tokens.shape, dtype=np.float64)))
    return batches


def validate(model: Model, val_batches) -> float:
    """Mask-weighted mean cross-entropy; parameters are left untouched."""
    val_batches = list(val_batches)
    if not val_batches:
        raise ValueError("validation set is empty")
    loss_sum = 0.0
    count = 0.0
    for batch in val_batches:
        n = float(np.asarray(batch.loss_mask).sum())
        loss = lm_loss(model.forward(batch.tokens), batch.targets,
                       batch.loss_mask)
        loss_sum += loss.item() * n
        count += n
    return loss_sum / count


def load_model(path):
    """Rebuilds the Model held in a checkpoint (optimizer state ignored);
    returns (model, meta, configs)."""
    tensors, meta, configs = ckpt.load_checkpoint(path)
    model_json = configs.get("model")
    if model_json is None:
        raise ckpt.CheckpointError("checkpoint carries no model config")
    config = ModelConfig.from_json(model_json)
    params = {name: T.tensor(arr, requires_grad=True)
              for name, arr in tensors.items()
              if not name.startswith((ckpt.OPT_M, ckpt.OPT_V))}
    expected = set(param_names(config))
    if set(params) != expected:
        missing = sorted(expected - set(params))
        extra = sorted(set(params) - expected)
        raise ckpt.CheckpointError(
            f"checkpoint parameters do not match the model config "
            f"(missing {missing}, unexpected {extra})")
    return Model(config, params=params), meta, configs


class Trainer:
    """Owns a model's optimization state and the step/token bookkeeping."""

    def __init__(self, model: Model, config: TrainConfig,
                 schedule: LRSchedule, sampler=None):
        self.model = model
        self.config = config
        self.schedule = schedule
        self.sampler = sampler
        self.optimizer = AdamW(model.params, config)
        self.step = 0
        self.tokens_seen = 0
        self.metrics = []

    def _grads_for(self, batch: TokenBatch):
        cfg = self.config
        if batch.tokens.shape != (cfg.micro_batch, cfg.seq_len):
            raise ValueError(
                f"micro-batch shape {batch.tokens.shape} != "
                f"({cfg.micro_batch}, {cfg.seq_len})")
        loss = self.model.loss(batch)
        leaf_grads = T.backward(T.scale(loss, 1.0 / cfg.accum_steps))
        by_name = {}
        for name, p in self.model.params.items():
            got = leaf_grads.get(p)
            by_name[name] = got.data if got is not None \
                else np.zeros_like(p.data)
        return by_name, loss.item()

    def accumulate_gradients(self, micro_batches):
        """Sums loss-scaled gradients over the micro-batches; returns the
        per-name gradient dict and the mean micro-batch loss."""
        cfg = self.config
        micro_batches = list(micro_batches)
        if len(micro_batches) != cfg.accum_steps:
            raise ValueError(f"expected {cfg.accum_steps} micro-batches, "
                             f"got {len(micro_batches)}")
        acc = {n: np.zeros_like(p.data) for n, p in self.model.params.items()}
        loss_total = 0.0
        for batch in micro_batches:
            grads, loss = self._grads_for(batch)
            loss_total += loss
            for name in acc:
                acc[name] += grads[name]
        return acc, loss_total / cfg.accum_steps

    def train_step(self, micro_batches) -> dict:
        cfg = self.config
        acc, loss_mean = self.accumulate_gradients(micro_batches)
        acc, grad_norm = clip_gradients(acc, cfg.clip_norm)
        lr = lr_at(self.schedule, self.step)
        self.optimizer.step(acc, lr)
        self.step += 1
        self.tokens_seen += cfg.tokens_per_iter
        row = {"step": self.step, "lr": lr, "train_loss": loss_mean,
               "grad_norm": grad_norm, "tokens_seen": self.tokens_seen}
        self.metrics.append(row)
        return row

    def next_micro_batches(self) -> list:
        if self.sampler is None:
            raise ValueError("trainer has no sampler attached")
        return [self.sampler.sample_batch(min(self.step, self.sampler.total_steps))
                for _ in range(self.config.accum_steps)]

    # ---------------------------------------------------------- persist ----

    def save(self, path) -> None:
        tensors = {n: p.data for n, p in self.model.params.items()}
        for name, arr in self.optimizer.m.items():
            tensors[ckpt.OPT_M + name] = arr
        for name, arr in self.optimizer.v.items():
            tensors[ckpt.OPT_V + name] = arr
        meta = {
            "step": self.step,
            "tokens_seen": self.tokens_seen,
            "adam_t": self.optimizer.t,
            "sampler": self.sampler.get_state() if self.sampler else None,
        }
        configs = {
            "model": self.model.config.to_json(),
            "train": self.config.to_json(),
            "schedule": self.schedule.to_json(),
        }
        ckpt.save_checkpoint(path, tensors, meta, configs)

    def load(self, path) -> None:
        tensors, meta, configs = ckpt.load_checkpoint(path)
        if configs.get("model") != self.model.config.to_json():
            raise ckpt.CheckpointError(
                "checkpoint model config does not match this model")
        m, v, params = {}, {}, {}
        for name, arr in tensors.items():
            if name.startswith(ckpt.OPT_M):
                m[name[len(ckpt.OPT_M):]] = arr
            elif name.startswith(ckpt.OPT_V):
                v[name[len(ckpt.OPT_V):]] = arr
            else:
                params[name] = arr
        if set(params) != set(self.model.params):
            raise ckpt.CheckpointError("checkpoint parameter names mismatch")
        for name, p in self.model.params.items():
            if tuple(params[name].shape) != p.shape:
                raise ckpt.CheckpointError(
                    f"checkpoint tensor {name} has shape "
                    f"{params[name].shape}, expected {p.shape}")
            p.data = params[name].astype(p.data.dtype, copy=True)
            p.grad = None
        self.optimizer.load_state(meta["adam_t"], m, v)
        self.step = int(meta["step"])
        self.tokens_seen = int(meta["tokens_seen"])
        if meta.get("sampler") is not None:
            if self.sampler is None:
                raise ckpt.CheckpointError(
                    "checkpoint carries sampler state but no sampler attached")
            self.sampler.set_state(meta["sampler"])
