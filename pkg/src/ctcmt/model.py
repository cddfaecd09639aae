"""The parallel-decoding translation model.

A Transformer encoder reads the source sentence; a splitting layer projects
each encoder state to k times the model width and reshapes it into k
consecutive states, fixing the output length at k times the source length;
a non-causal decoder self-attends over the split sequence and cross-attends
back to the split states, and every output position is scored in one pass
over the vocabulary plus the blank class consumed by the CTC loss.

Also holds the checkpoint container: a structured-text header (config,
vocabulary hash, parameter manifest) followed by raw little-endian float32
arrays.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import numerics
from .errors import (
    CheckpointError,
    ConfigError,
    EmptyInputError,
    InputTooLongError,
    VocabularyError,
)
from .numerics import Parameter, Tensor

ATTENTION_MASK_BIAS = -1e9

CHECKPOINT_MAGIC = "CTCMT-CKPT-1"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    `vocab_size` counts every token id except the blank; the embedding table
    and the output projection both span vocab_size + 1 ids (blank is id 0).
    """

    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    k: int = 3
    max_source_len: int = 256
    seed: int = 0
    split_position_encoding: bool = True

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be at least 2, got {self.vocab_size}")
        if self.d_model < 2 or self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be >= 2 and divisible by n_heads ({self.n_heads})"
            )
        if self.k < 1:
            raise ConfigError(f"split factor k must be >= 1, got {self.k}")
        if min(self.d_ff, self.max_source_len) < 1 or min(self.enc_layers, self.dec_layers) < 0:
            raise ConfigError("d_ff and max_source_len must be positive, layer counts >= 0")

    @property
    def full_vocab(self) -> int:
        return self.vocab_size + 1


def _attention_shapes(prefix: str, d: int) -> Iterator[tuple[str, tuple, str]]:
    for name in ("wq", "wk", "wv", "wo"):
        yield f"{prefix}.{name}", (d, d), "weight"
    for name in ("bq", "bk", "bv", "bo"):
        yield f"{prefix}.{name}", (d,), "bias"


def _norm_shapes(prefix: str, d: int) -> Iterator[tuple[str, tuple, str]]:
    yield f"{prefix}.gain", (d,), "gain"
    yield f"{prefix}.bias", (d,), "bias"


def _ff_shapes(prefix: str, d: int, d_ff: int) -> Iterator[tuple[str, tuple, str]]:
    yield f"{prefix}.w1", (d, d_ff), "weight"
    yield f"{prefix}.b1", (d_ff,), "bias"
    yield f"{prefix}.w2", (d_ff, d), "weight"
    yield f"{prefix}.b2", (d,), "bias"


def parameter_shapes(config: ModelConfig) -> Iterator[tuple[str, tuple, str]]:
    """Every learned array of the model: (name, shape, init kind), in build order."""
    d, d_ff = config.d_model, config.d_ff
    yield "embedding.table", (config.full_vocab, d), "weight"
    for i in range(config.enc_layers):
        p = f"encoder.layer{i}"
        yield from _norm_shapes(f"{p}.norm1", d)
        yield from _attention_shapes(f"{p}.attn", d)
        yield from _norm_shapes(f"{p}.norm2", d)
        yield from _ff_shapes(f"{p}.ff", d, d_ff)
    if config.enc_layers > 0:
        yield from _norm_shapes("encoder.final_norm", d)
    yield "split.weight", (d, config.k * d), "weight"
    yield "split.bias", (config.k * d,), "bias"
    for i in range(config.dec_layers):
        p = f"decoder.layer{i}"
        yield from _norm_shapes(f"{p}.norm1", d)
        yield from _attention_shapes(f"{p}.self_attn", d)
        yield from _norm_shapes(f"{p}.norm2", d)
        yield from _attention_shapes(f"{p}.cross_attn", d)
        yield from _norm_shapes(f"{p}.norm3", d)
        yield from _ff_shapes(f"{p}.ff", d, d_ff)
    if config.dec_layers > 0:
        yield from _norm_shapes("decoder.final_norm", d)
    yield "output.weight", (d, config.full_vocab), "weight"
    yield "output.bias", (config.full_vocab,), "bias"


def parameter_count(config: ModelConfig) -> int:
    """Total learned scalars, as a pure function of the configuration."""
    return sum(int(np.prod(shape)) for _, shape, _ in parameter_shapes(config))


def sinusoid_table(n_positions: int, d: int) -> np.ndarray:
    """Fixed sin/cos position encodings, float64."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, (2.0 * np.floor(idx / 2.0)) / d)
    table = np.zeros((n_positions, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


@dataclass
class EncoderStates:
    """Per-position source representations (T, d) with validity flags (T,)."""

    states: Tensor
    mask: np.ndarray


@dataclass
class SplitStates:
    """Widened-then-reshaped states (k*T, d); mask replicates each source flag k times."""

    states: Tensor
    mask: np.ndarray


class CtcTransformer:
    """Encoder + state splitting + non-causal decoder + per-position output scores."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.dtype = numerics.default_dtype()
        self._params: dict[str, Parameter] = {}
        rng = np.random.default_rng(config.seed)
        for name, shape, kind in parameter_shapes(config):
            if kind == "weight":
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                value = rng.uniform(-limit, limit, size=shape)
            elif kind == "gain":
                value = np.ones(shape)
            else:
                value = np.zeros(shape)
            self._params[name] = Parameter(value.astype(self.dtype), name)
        n_pos = max(config.max_source_len, config.k * config.max_source_len)
        self._positions = sinusoid_table(n_pos, config.d_model).astype(self.dtype)

    # -- parameter access -------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def param(self, name: str) -> Parameter:
        return self._params[name]

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    # -- batched core (B, T, d) -------------------------------------------

    def _const(self, arr: np.ndarray) -> Tensor:
        return numerics.tensor(arr, dtype=self.dtype)

    def _mask_bias(self, mask: np.ndarray) -> Tensor:
        bias = np.where(mask, 0.0, ATTENTION_MASK_BIAS).astype(self.dtype)
        return self._const(bias[:, None, None, :])

    def _heads(self, x: Tensor) -> Tensor:
        B, T, d = x.shape
        h = self.config.n_heads
        return numerics.transpose(numerics.reshape(x, (B, T, h, d // h)), (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        B, h, T, dh = x.shape
        return numerics.reshape(numerics.transpose(x, (0, 2, 1, 3)), (B, T, h * dh))

    def _attention(self, prefix: str, q_in: Tensor, kv_in: Tensor, bias: Tensor) -> Tensor:
        P = self._params
        q = self._heads(numerics.affine(q_in, P[f"{prefix}.wq"], P[f"{prefix}.bq"]))
        k = self._heads(numerics.affine(kv_in, P[f"{prefix}.wk"], P[f"{prefix}.bk"]))
        v = self._heads(numerics.affine(kv_in, P[f"{prefix}.wv"], P[f"{prefix}.bv"]))
        dh = self.config.d_model // self.config.n_heads
        scores = numerics.scale(numerics.matmul(q, numerics.transpose(k, (0, 1, 3, 2))), dh**-0.5)
        weights = numerics.softmax_rows(numerics.add(scores, bias))
        return numerics.affine(
            self._merge_heads(numerics.matmul(weights, v)),
            P[f"{prefix}.wo"],
            P[f"{prefix}.bo"],
        )

    def _feed_forward(self, prefix: str, x: Tensor) -> Tensor:
        P = self._params
        hidden = numerics.relu(numerics.affine(x, P[f"{prefix}.w1"], P[f"{prefix}.b1"]))
        return numerics.affine(hidden, P[f"{prefix}.w2"], P[f"{prefix}.b2"])

    def _norm(self, prefix: str, x: Tensor) -> Tensor:
        return numerics.layer_norm(x, self._params[f"{prefix}.gain"], self._params[f"{prefix}.bias"])

    def _embed_batch(self, ids: np.ndarray) -> Tensor:
        T = ids.shape[1]
        scaled = numerics.scale(
            numerics.embedding(self._params["embedding.table"], ids),
            float(np.sqrt(self.config.d_model)),
        )
        return numerics.add(scaled, self._const(self._positions[None, :T, :]))

    def _encode_batch(self, x: Tensor, mask: np.ndarray) -> Tensor:
        if self.config.enc_layers == 0:
            return x
        bias = self._mask_bias(mask)
        for i in range(self.config.enc_layers):
            p = f"encoder.layer{i}"
            normed = self._norm(f"{p}.norm1", x)
            x = numerics.add(x, self._attention(f"{p}.attn", normed, normed, bias))
            x = numerics.add(x, self._feed_forward(f"{p}.ff", self._norm(f"{p}.norm2", x)))
        return self._norm("encoder.final_norm", x)

    def _split_batch(self, x: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        B, T, d = x.shape
        k = self.config.k
        wide = numerics.affine(x, self._params["split.weight"], self._params["split.bias"])
        split = numerics.reshape(wide, (B, k * T, d))
        if self.config.split_position_encoding:
            split = numerics.add(split, self._const(self._positions[None, : k * T, :]))
        return split, np.repeat(mask, k, axis=1)

    def _decode_batch(self, s: Tensor, mask: np.ndarray) -> Tensor:
        if self.config.dec_layers == 0:
            return s
        bias = self._mask_bias(mask)
        y = s
        for i in range(self.config.dec_layers):
            p = f"decoder.layer{i}"
            normed = self._norm(f"{p}.norm1", y)
            y = numerics.add(y, self._attention(f"{p}.self_attn", normed, normed, bias))
            y = numerics.add(
                y, self._attention(f"{p}.cross_attn", self._norm(f"{p}.norm2", y), s, bias)
            )
            y = numerics.add(y, self._feed_forward(f"{p}.ff", self._norm(f"{p}.norm3", y)))
        return self._norm("decoder.final_norm", y)

    def _project_batch(self, x: Tensor) -> Tensor:
        return numerics.affine(x, self._params["output.weight"], self._params["output.bias"])

    def _validate_ids(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.full_vocab):
            raise VocabularyError(
                f"token id out of range [0, {self.config.full_vocab}): "
                f"min {ids.min()}, max {ids.max()}"
            )

    def forward_batch(self, ids: np.ndarray, lengths: Sequence[int]) -> Tensor:
        """Log-probabilities (B, k*T_max, V+1); rows beyond k*length are padding noise."""
        ids = np.asarray(ids)
        if ids.ndim != 2 or ids.shape[0] == 0 or ids.shape[1] == 0:
            raise EmptyInputError(f"need a non-empty (B, T) id matrix, got shape {ids.shape}")
        if ids.shape[1] > self.config.max_source_len:
            raise InputTooLongError(ids.shape[1], self.config.max_source_len)
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.min() < 1:
            raise EmptyInputError("every sentence in a batch must have at least one token")
        self._validate_ids(ids)
        mask = np.arange(ids.shape[1])[None, :] < lengths[:, None]
        x = self._embed_batch(ids)
        h = self._encode_batch(x, mask)
        s, smask = self._split_batch(h, mask)
        dec = self._decode_batch(s, smask)
        return numerics.log_softmax_rows(self._project_batch(dec))

    # -- single-sentence surface -------------------------------------------

    def _as_batch(self, states: Tensor) -> Tensor:
        return numerics.reshape(states, (1,) + states.shape)

    def embed(self, tokens: Sequence[int]) -> EncoderStates:
        """Token lookup scaled by sqrt(d) plus sinusoidal position encoding."""
        tokens = list(tokens)
        if not tokens:
            raise EmptyInputError("cannot embed an empty sentence")
        if len(tokens) > self.config.max_source_len:
            raise InputTooLongError(len(tokens), self.config.max_source_len)
        ids = np.asarray([tokens], dtype=np.int64)
        self._validate_ids(ids)
        states = numerics.reshape(self._embed_batch(ids), (len(tokens), self.config.d_model))
        return EncoderStates(states=states, mask=np.ones(len(tokens), dtype=bool))

    def encode(self, enc: EncoderStates) -> EncoderStates:
        """Self-attention + feed-forward stack; identity when no layers are configured."""
        out = self._encode_batch(self._as_batch(enc.states), enc.mask[None, :])
        return EncoderStates(states=numerics.reshape(out, enc.states.shape), mask=enc.mask)

    def split_states(self, enc: EncoderStates) -> SplitStates:
        """Widen each state k-fold, reshape to a k-times longer sequence of width d."""
        out, mask = self._split_batch(self._as_batch(enc.states), enc.mask[None, :])
        T, d = enc.states.shape
        return SplitStates(
            states=numerics.reshape(out, (self.config.k * T, d)), mask=mask[0]
        )

    def decode_states(self, split: SplitStates) -> Tensor:
        """Non-causal decoding over the split sequence, cross-attending to it."""
        out = self._decode_batch(self._as_batch(split.states), split.mask[None, :])
        return numerics.reshape(out, split.states.shape)

    def project_logits(self, decoded: Tensor) -> Tensor:
        """Affine map to V+1 scores per position; column 0 is the blank."""
        return self._project_batch(decoded)

    def forward(self, tokens: Sequence[int]) -> Tensor:
        """Source ids -> (k*T_x, V+1) log-probabilities, in one parallel pass."""
        tokens = list(tokens)
        if not tokens:
            raise EmptyInputError("cannot translate an empty token sequence")
        ids = np.asarray([tokens], dtype=np.int64)
        out = self.forward_batch(ids, [len(tokens)])
        return out[0]


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

@dataclass
class LoadedCheckpoint:
    model: CtcTransformer
    vocab_hash: str
    step: int
    extras: dict[str, np.ndarray]


def save_checkpoint(
    path,
    model: CtcTransformer,
    vocab_hash: str = "",
    step: int = 0,
    extras: dict[str, np.ndarray] | None = None,
) -> None:
    """Write header (config, vocab hash, manifest) plus raw float32 arrays, atomically."""
    arrays: list[tuple[str, np.ndarray]] = [
        (p.name, p.value) for p in model.parameters()
    ]
    for name in sorted(extras or {}):
        arrays.append((f"extra.{name}", (extras or {})[name]))

    manifest = []
    chunks = []
    offset = 0
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)

    header = {
        "magic": CHECKPOINT_MAGIC,
        "config": dataclasses.asdict(model.config),
        "vocab_hash": vocab_hash,
        "step": int(step),
        "manifest": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {len(header_bytes)}\n".encode("ascii"))
        fh.write(header_bytes)
        fh.write(b"\n")
        for raw in chunks:
            fh.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path) -> LoadedCheckpoint:
    """Read a checkpoint; fails loudly on truncation or any shape mismatch."""
    with open(path, "rb") as fh:
        first = fh.readline().decode("ascii", errors="replace").strip()
        parts = first.split()
        if len(parts) != 2 or parts[0] != CHECKPOINT_MAGIC or not parts[1].isdigit():
            raise CheckpointError(f"not a recognized checkpoint file: {path}")
        header_len = int(parts[1])
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len or fh.read(1) != b"\n":
            raise CheckpointError(f"truncated checkpoint header: {path}")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable checkpoint header: {path}") from exc
        blob = fh.read()

    config = ModelConfig(**header["config"])
    manifest = {entry["name"]: entry for entry in header["manifest"]}

    needed = 0
    for entry in header["manifest"]:
        needed = max(needed, entry["offset"] + int(np.prod(entry["shape"])) * 4)
    if len(blob) < needed:
        raise CheckpointError(
            f"truncated checkpoint data: {path} has {len(blob)} bytes, needs {needed}"
        )

    def read_array(entry) -> np.ndarray:
        size = int(np.prod(entry["shape"]))
        start = entry["offset"]
        flat = np.frombuffer(blob, dtype="<f4", count=size, offset=start)
        return flat.reshape(entry["shape"])

    model = CtcTransformer(config)
    for p in model.parameters():
        entry = manifest.get(p.name)
        if entry is None:
            raise CheckpointError(f"checkpoint is missing parameter {p.name}")
        if tuple(entry["shape"]) != p.value.shape:
            raise CheckpointError(
                f"parameter {p.name}: checkpoint shape {tuple(entry['shape'])} "
                f"does not match configured shape {p.value.shape}"
            )
        np.copyto(p.value, read_array(entry).astype(model.dtype))

    extras = {
        name[len("extra."):]: read_array(entry).copy()
        for name, entry in manifest.items()
        if name.startswith("extra.")
    }
    return LoadedCheckpoint(
        model=model,
        vocab_hash=header.get("vocab_hash", ""),
        step=int(header.get("step", 0)),
        extras=extras,
    )
