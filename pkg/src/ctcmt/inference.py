"""End-to-end translation with the two timing disciplines.

Latency mode feeds the model one sentence per call and records each call's
duration; batched mode groups consecutive sentences into fixed-size batches
(no length sorting, so output order is trivially input order). Model loading
is always timed separately from translation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ctc, numerics
from .data import PAD_ID, Vocabulary, tokenize
from .errors import ConfigError, InputTooLongError, VocabularyError
from .model import CtcTransformer, load_checkpoint

MODES = ("latency", "batched")


@dataclass
class DecodeJob:
    lines: list
    checkpoint_path: str
    vocab_path: str
    mode: str = "latency"
    batch_size: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TimingTrace:
    """Wall-clock accounting for one translation run.

    `sentences` counts every line handled in the translation region, empty
    ones included; `per_call_seconds` has one entry per model invocation, so
    empty lines (which bypass the model) contribute nothing there.
    """

    mode: str
    batch_size: int
    load_seconds: float
    translate_seconds: float
    per_call_seconds: list = field(default_factory=list)
    sentences: int = 0
    source_tokens: int = 0

    def tokens_per_second(self) -> float:
        if self.translate_seconds <= 0:
            return 0.0
        return self.source_tokens / self.translate_seconds


def load_model_and_vocab(checkpoint_path, vocab_path) -> tuple[CtcTransformer, Vocabulary]:
    """Load both halves of a translation system and cross-check them."""
    loaded = load_checkpoint(checkpoint_path)
    vocab = Vocabulary.load(vocab_path)
    if loaded.vocab_hash and loaded.vocab_hash != vocab.content_hash():
        raise VocabularyError(
            f"vocabulary {vocab_path} does not match the one the checkpoint was trained with"
        )
    if vocab.model_vocab_size != loaded.model.config.vocab_size:
        raise VocabularyError(
            f"vocabulary has {vocab.model_vocab_size} non-blank tokens but the model "
            f"expects {loaded.model.config.vocab_size}"
        )
    return loaded.model, vocab


def translate_batch(net: CtcTransformer, vocab: Vocabulary, sentences: list) -> list:
    """Translate a group of sentences with a single model invocation.

    Empty sentences come back empty without touching the model; everything
    else is padded to a common length, decoded per frame by argmax, collapsed
    and detokenized.
    """
    outputs = [""] * len(sentences)
    encoded = []
    for pos, line in enumerate(sentences):
        toks = tokenize(line)
        if not toks:
            continue
        ids = vocab.encode(line)
        if len(ids) > net.config.max_source_len:
            raise InputTooLongError(len(ids), net.config.max_source_len,
                                    line_number=pos + 1)
        encoded.append((pos, ids))
    if not encoded:
        return outputs

    width = max(len(ids) for _, ids in encoded)
    batch = np.full((len(encoded), width), PAD_ID, dtype=np.int64)
    lengths = np.zeros(len(encoded), dtype=np.int64)
    for row, (_, ids) in enumerate(encoded):
        batch[row, : len(ids)] = ids
        lengths[row] = len(ids)

    with numerics.no_grad():
        log_probs = net.forward_batch(batch, lengths).data

    k = net.config.k
    for row, (pos, ids) in enumerate(encoded):
        frames = log_probs[row, : k * len(ids)].astype(np.float64)
        outputs[pos] = vocab.decode(ctc.greedy_decode(frames))
    return outputs


def _translate_lines(net, vocab, lines, mode, batch_size):
    """Core translation loop shared by run_job and the benchmark harness."""
    outputs = [""] * len(lines)
    per_call = []
    if mode == "latency":
        for i, line in enumerate(lines):
            if not tokenize(line):
                continue
            t0 = time.perf_counter()
            outputs[i] = translate_batch(net, vocab, [line])[0]
            per_call.append(time.perf_counter() - t0)
    else:
        occupied = [i for i, line in enumerate(lines) if tokenize(line)]
        for start in range(0, len(occupied), batch_size):
            group = occupied[start : start + batch_size]
            t0 = time.perf_counter()
            translated = translate_batch(net, vocab, [lines[i] for i in group])
            per_call.append(time.perf_counter() - t0)
            for i, out in zip(group, translated):
                outputs[i] = out
    tokens = sum(len(tokenize(line)) for line in lines)
    return outputs, per_call, tokens


def run_job(job: DecodeJob) -> tuple[list, TimingTrace]:
    """Load, validate, translate; returns output lines plus the timing trace."""
    t0 = time.perf_counter()
    net, vocab = load_model_and_vocab(job.checkpoint_path, job.vocab_path)
    load_seconds = time.perf_counter() - t0

    limit = net.config.max_source_len
    for i, line in enumerate(job.lines, start=1):
        n = len(tokenize(line))
        if n > limit:
            raise InputTooLongError(n, limit, line_number=i)

    t1 = time.perf_counter()
    outputs, per_call, tokens = _translate_lines(
        net, vocab, job.lines, job.mode, job.batch_size
    )
    translate_seconds = time.perf_counter() - t1
    trace = TimingTrace(
        mode=job.mode,
        batch_size=1 if job.mode == "latency" else job.batch_size,
        load_seconds=load_seconds,
        translate_seconds=translate_seconds,
        per_call_seconds=per_call,
        sentences=len(job.lines),
        source_tokens=tokens,
    )
    return outputs, trace
