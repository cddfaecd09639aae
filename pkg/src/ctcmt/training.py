"""Optimization loop: warmup/decay schedule, Adam, clipping, step logs.

The learning rate climbs linearly for `warmup_steps` steps and then decays
with the inverse square root of the step index; a single constant controls
both phases so the curve is continuous at the warmup boundary.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ctc, model as model_mod, numerics
from .data import Batch
from .errors import CheckpointError, ConfigError, ContractViolation, TrainingDiverged


@dataclass(frozen=True)
class TrainingConfig:
    max_steps: int
    base_lr: float = 1e-4
    warmup_steps: int = 8000
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    threads: int = 1
    log_every: int = 50

    def __post_init__(self):
        if self.max_steps < 0 or self.warmup_steps < 1:
            raise ConfigError("max_steps must be >= 0 and warmup_steps >= 1")
        if self.base_lr <= 0 or self.clip_norm <= 0 or self.eps <= 0:
            raise ConfigError("base_lr, clip_norm and eps must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")


def lr_schedule(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup to base_lr, then inverse-sqrt decay from the same point."""
    if step < 1:
        raise ContractViolation(f"schedule is defined for steps >= 1, got {step}")
    if step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * math.sqrt(warmup_steps / step)


def grad_global_norm(params) -> float:
    total = 0.0
    for p in params:
        g = p.grad.astype(np.float64, copy=False)
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    return math.sqrt(total)


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm.

    Returns the norm measured before clipping.
    """
    norm = grad_global_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            p.grad *= np.asarray(factor, dtype=p.grad.dtype)
    return norm


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def fresh(cls, params) -> "AdamState":
        state = cls()
        for p in params:
            state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        return state


def adam_update(params, state: AdamState, lr: float, config: TrainingConfig) -> None:
    """One bias-corrected Adam step, in place, and advances the step counter."""
    t = state.step + 1
    c1 = 1.0 - config.beta1**t
    c2 = 1.0 - config.beta2**t
    for p in params:
        m = state.m[p.name]
        v = state.v[p.name]
        m *= config.beta1
        m += (1.0 - config.beta1) * p.grad
        v *= config.beta2
        v += (1.0 - config.beta2) * (p.grad * p.grad)
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        p.value -= np.asarray(lr, dtype=p.value.dtype) * update.astype(p.value.dtype)
    state.step = t


def batch_loss(net: model_mod.CtcTransformer, batch: Batch, threads: int = 1) -> numerics.Tensor:
    """Summed CTC loss over a batch, normalized per target token.

    Each sentence contributes the loss of its own k*length frame slice; rows
    the padding produced never enter a lattice.
    """
    log_probs = net.forward_batch(batch.ids, batch.lengths)
    k = net.config.k
    slices, nodes = [], []
    for b in range(batch.size):
        frames = k * int(batch.lengths[b])
        node = numerics.take(log_probs, (b, slice(0, frames)))
        nodes.append(node)
        slices.append(np.ascontiguousarray(node.data, dtype=np.float64))
    pairs = ctc.batch_loss_occupancy(slices, batch.targets, threads=threads)
    total = None
    for node, y, pair in zip(nodes, batch.targets, pairs):
        term = ctc.loss_node(node, y, precomputed=pair)
        total = term if total is None else numerics.add(total, term)
    denom = max(1, batch.target_tokens())
    return numerics.scale(total, 1.0 / denom)


def train_step(net: model_mod.CtcTransformer, batch: Batch, state: AdamState,
               config: TrainingConfig) -> dict:
    """Forward, backward, clip, Adam. Returns the step's scalar metrics."""
    step = state.step + 1
    lr = lr_schedule(step, config.base_lr, config.warmup_steps)
    numerics.zero_grads(net.parameters())
    loss = batch_loss(net, batch, threads=config.threads)
    loss_value = float(loss.data)
    if not math.isfinite(loss_value):
        raise TrainingDiverged(f"step {step}: loss is {loss_value}")
    numerics.backward(loss)
    grad_norm = clip_gradients(net.parameters(), config.clip_norm)
    adam_update(net.parameters(), state, lr, config)
    return {
        "step": step,
        "loss": loss_value,
        "lr": lr,
        "grad_norm": grad_norm,
        "source_tokens": batch.source_tokens(),
        "target_tokens": batch.target_tokens(),
    }


def train(net: model_mod.CtcTransformer, batches: list, config: TrainingConfig,
          state: AdamState | None = None, log_fh=None,
          checkpoint_path=None, checkpoint_every: int = 0,
          vocab_hash: str = "") -> tuple[AdamState, list]:
    """Run steps state.step+1 .. max_steps, cycling the batch list in order.

    Batch selection depends only on the step index, so a run resumed from a
    checkpoint consumes exactly the batches the uninterrupted run would have.
    Emits one JSON object per logged step; returns the optimizer state and
    the logged records.
    """
    if not batches:
        raise ConfigError("cannot train on an empty batch list")
    if state is None:
        state = AdamState.fresh(net.parameters())
    records = []
    started = time.perf_counter()
    while state.step < config.max_steps:
        batch = batches[state.step % len(batches)]
        metrics = train_step(net, batch, state, config)
        last = metrics["step"] == config.max_steps
        if last or metrics["step"] % config.log_every == 0:
            metrics = dict(metrics, elapsed=round(time.perf_counter() - started, 3))
            records.append(metrics)
            if log_fh is not None:
                log_fh.write(json.dumps(metrics) + "\n")
                log_fh.flush()
        if checkpoint_path and checkpoint_every and (
            metrics["step"] % checkpoint_every == 0 or last
        ):
            save_training_checkpoint(checkpoint_path, net, state, vocab_hash)
    return state, records


# ---------------------------------------------------------------------------
# optimizer-aware checkpoints
# ---------------------------------------------------------------------------

def save_training_checkpoint(path, net: model_mod.CtcTransformer, state: AdamState,
                             vocab_hash: str = "") -> None:
    extras = {}
    for name, arr in state.m.items():
        extras[f"optimizer.m.{name}"] = arr
    for name, arr in state.v.items():
        extras[f"optimizer.v.{name}"] = arr
    model_mod.save_checkpoint(path, net, vocab_hash=vocab_hash, step=state.step,
                              extras=extras)


def load_training_checkpoint(path) -> tuple[model_mod.LoadedCheckpoint, AdamState]:
    """Rebuild both the model and its optimizer state from one file."""
    loaded = model_mod.load_checkpoint(path)
    state = AdamState(step=loaded.step)
    dtype = loaded.model.dtype
    for p in loaded.model.parameters():
        for kind, store in (("m", state.m), ("v", state.v)):
            key = f"optimizer.{kind}.{p.name}"
            if key not in loaded.extras:
                raise CheckpointError(f"checkpoint lacks optimizer state {key}")
            arr = loaded.extras[key].astype(dtype)
            if arr.shape != p.value.shape:
                raise CheckpointError(
                    f"optimizer state {key} has shape {arr.shape}, parameter is {p.value.shape}"
                )
            store[p.name] = arr
    return loaded, state
