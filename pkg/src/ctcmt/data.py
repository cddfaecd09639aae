"""Vocabulary, corpus loading, and batch construction.

Tokenization is whitespace splitting. Ids are assigned so the CTC blank is
always 0, padding 1, and the unknown-token fallback 2; real tokens follow in
frequency order with ties broken alphabetically, which keeps vocabulary
construction deterministic across runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import ctc
from .errors import CorpusError, VocabularyError

BLANK_TOKEN = "<blank>"
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
RESERVED = (BLANK_TOKEN, PAD_TOKEN, UNK_TOKEN)

BLANK_ID = 0
PAD_ID = 1
UNK_ID = 2


def tokenize(line: str) -> list[str]:
    return line.split()


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """Bidirectional token/id table with the three reserved ids up front."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:3] != list(RESERVED):
            raise VocabularyError(
                f"vocabulary must start with {RESERVED}, got {tokens[:3]}"
            )
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("vocabulary contains duplicate tokens")
        if any(t == "" or t.split() != [t] for t in tokens):
            raise VocabularyError("vocabulary tokens must be non-empty and whitespace-free")
        self.tokens = tokens
        # Reserved strings are deliberately absent from the lookup: a literal
        # "<blank>" in running text must become <unk>, never the blank id.
        self._ids = {t: i for i, t in enumerate(tokens) if i >= 3}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def model_vocab_size(self) -> int:
        """Token count excluding the blank, i.e. the model's vocab_size."""
        return len(self.tokens) - 1

    def encode(self, line: str) -> list[int]:
        return [self._ids.get(t, UNK_ID) for t in tokenize(line)]

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i < 0 or i >= len(self.tokens):
                raise VocabularyError(f"id {i} outside vocabulary of size {len(self.tokens)}")
            out.append(self.tokens[i])
        return detokenize(out)

    def content_hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            with open(path, encoding="utf-8") as fh:
                tokens = [line.rstrip("\n") for line in fh]
        except UnicodeDecodeError as exc:
            raise VocabularyError(f"vocabulary file {path} is not valid UTF-8") from exc
        if not tokens:
            raise VocabularyError(f"vocabulary file {path} is empty")
        return cls(tokens)


def build_vocabulary(lines: Iterable[str], max_size: int | None = None,
                     min_count: int = 1) -> Vocabulary:
    """Count whitespace tokens and keep the most frequent ones.

    `max_size` caps the total table including the three reserved entries.
    """
    counts: dict[str, int] = {}
    for line in lines:
        for tok in tokenize(line):
            counts[tok] = counts.get(tok, 0) + 1
    for r in RESERVED:
        counts.pop(r, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [t for t, c in ranked if c >= min_count]
    if max_size is not None:
        if max_size < 4:
            raise VocabularyError(f"max_size {max_size} leaves no room for real tokens")
        kept = kept[: max_size - 3]
    if not kept:
        raise VocabularyError("no tokens survived vocabulary construction")
    return Vocabulary(list(RESERVED) + kept)


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------

def read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh]
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path} is not valid UTF-8") from exc


def load_corpus(src_path, tgt_path) -> list[tuple[str, str]]:
    """Parallel corpus as (source, target) line pairs.

    Line counts must agree and every source line must contain at least one
    token; an empty target is allowed (the loss treats it as all-blank).
    """
    src = read_lines(src_path)
    tgt = read_lines(tgt_path)
    if len(src) != len(tgt):
        raise CorpusError(
            f"line counts differ: {src_path} has {len(src)}, {tgt_path} has {len(tgt)}"
        )
    if not src:
        raise CorpusError(f"{src_path} is empty")
    for i, line in enumerate(src, start=1):
        if not tokenize(line):
            raise CorpusError(f"{src_path} line {i}: source sentence is empty")
    return list(zip(src, tgt))


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Padded source ids plus per-sentence targets.

    ids is (B, T_max) int64 padded with PAD_ID; lengths gives the true source
    lengths; targets holds one int64 vector per sentence (possibly empty);
    line_numbers are 1-based positions in the corpus the sentences came from.
    """

    ids: np.ndarray
    lengths: np.ndarray
    targets: list = field(default_factory=list)
    line_numbers: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])

    def source_tokens(self) -> int:
        return int(self.lengths.sum())

    def target_tokens(self) -> int:
        return int(sum(len(t) for t in self.targets))


@dataclass
class SkippedSentence:
    line_number: int
    reason: str


def encode_pairs(pairs: Sequence[tuple[str, str]], vocab: Vocabulary):
    """(src_ids, tgt_ids, line_number) triples in corpus order."""
    out = []
    for i, (src, tgt) in enumerate(pairs, start=1):
        out.append((np.asarray(vocab.encode(src), dtype=np.int64),
                    np.asarray(vocab.encode(tgt), dtype=np.int64), i))
    return out


def make_batches(examples, max_tokens: int, k: int, max_source_len: int,
                 seed: int = 0, shuffle: bool = True):
    """Length-bucketed batches under a padded token budget.

    Sentences are sorted by source length and packed greedily so that
    batch_size * longest_source <= max_tokens. Sentences whose source is
    overlong, or whose target cannot be reached from k * source_len frames,
    are skipped and reported rather than silently dropped. Batch order is
    shuffled with the given seed; contents of each batch are deterministic.
    """
    if max_tokens < 1:
        raise CorpusError(f"max_tokens must be positive, got {max_tokens}")
    usable = []
    skipped: list[SkippedSentence] = []
    for src_ids, tgt_ids, line_no in examples:
        if len(src_ids) > max_source_len:
            skipped.append(SkippedSentence(
                line_no, f"source has {len(src_ids)} tokens, limit {max_source_len}"))
            continue
        frames = k * len(src_ids)
        if not ctc.feasible(tgt_ids, frames):
            need = len(tgt_ids) + ctc.adjacent_repeats(tgt_ids)
            skipped.append(SkippedSentence(
                line_no, f"target needs {need} frames but k*source gives {frames}"))
            continue
        if len(src_ids) > max_tokens:
            skipped.append(SkippedSentence(
                line_no, f"source has {len(src_ids)} tokens, over the {max_tokens} budget"))
            continue
        usable.append((src_ids, tgt_ids, line_no))

    usable.sort(key=lambda ex: (len(ex[0]), ex[2]))
    batches: list[Batch] = []
    current: list = []
    longest = 0
    for ex in usable:
        t = max(longest, len(ex[0]))
        if current and (len(current) + 1) * t > max_tokens:
            batches.append(_pack(current))
            current, longest = [], 0
        current.append(ex)
        longest = max(longest, len(ex[0]))
    if current:
        batches.append(_pack(current))

    if shuffle and batches:
        order = np.random.default_rng(seed).permutation(len(batches))
        batches = [batches[i] for i in order]
    return batches, skipped


def _pack(examples) -> Batch:
    width = max(len(src) for src, _, _ in examples)
    ids = np.full((len(examples), width), PAD_ID, dtype=np.int64)
    lengths = np.zeros(len(examples), dtype=np.int64)
    targets, line_numbers = [], []
    for row, (src, tgt, line_no) in enumerate(examples):
        ids[row, : len(src)] = src
        lengths[row] = len(src)
        targets.append(tgt)
        line_numbers.append(line_no)
    return Batch(ids=ids, lengths=lengths, targets=targets, line_numbers=line_numbers)


# ---------------------------------------------------------------------------
# synthetic practice task
# ---------------------------------------------------------------------------

def synthetic_pairs(n: int, seed: int = 0, min_len: int = 3, max_len: int = 8,
                    alphabet: Sequence[str] | None = None) -> list[tuple[str, str]]:
    """Copy-task corpus: the target repeats the source verbatim.

    Small enough to train in minutes yet exercises the whole pipeline,
    including repeated symbols (which force blank emissions in the loss).
    """
    if alphabet is None:
        alphabet = [chr(ord("a") + i) for i in range(20)]
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        toks = [alphabet[int(j)] for j in rng.integers(0, len(alphabet), size=length)]
        line = detokenize(toks)
        pairs.append((line, line))
    return pairs
