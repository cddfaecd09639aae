"""Connectionist temporal classification over a fixed frame budget.

The loss marginalizes, by log-space dynamic programming, over every
frame-level labelling (including blanks) that collapses to the target
sentence.  Collapse semantics: merge adjacent repeated ids, then delete
blanks; `collapse(..., merge_repeats=False)` is the single switch point
for the blank-removal-only variant.  The blank id is fixed at 0.

`brute_force_loss` is the independent oracle: it enumerates every frame
sequence and never touches the lattice code.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels, numerics
from .errors import (
    ContractViolation,
    FeasibilityError,
    InvalidLabelError,
    OracleTooLargeError,
)

BLANK_ID = 0

ROW_SUM_TOL = 1e-5
BRUTE_FORCE_PATH_GUARD = 10**6


def extend_labels(y: Sequence[int]) -> np.ndarray:
    """Interleave blanks around the labels: [b, y1, b, y2, ..., b]."""
    y = list(y)
    if any(t == BLANK_ID for t in y):
        raise InvalidLabelError(f"label sequence contains the blank id {BLANK_ID}")
    ext = np.full(2 * len(y) + 1, BLANK_ID, dtype=np.intc)
    ext[1::2] = y
    return ext


def collapse(frames: Sequence[int], merge_repeats: bool = True) -> list[int]:
    """Frame labels -> sentence: merge adjacent duplicates, then drop blanks."""
    out: list[int] = []
    prev = None
    for f in frames:
        if merge_repeats and f == prev:
            continue
        prev = f
        if f != BLANK_ID:
            out.append(f)
    return out


def adjacent_repeats(y: Sequence[int]) -> int:
    return sum(1 for a, b in zip(y, y[1:]) if a == b)


def feasible(y: Sequence[int], frames: int) -> bool:
    """True when `y` is producible from `frames` output positions."""
    y = list(y)
    return frames >= len(y) + adjacent_repeats(y)


def _validate_log_probs(log_probs: np.ndarray) -> np.ndarray:
    lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    if lp.ndim != 2:
        raise ContractViolation(f"log_probs must be (frames, classes), got {lp.shape}")
    if lp.shape[0] > 0:
        row_sums = np.exp(lp).sum(axis=1)
        worst = float(np.max(np.abs(row_sums - 1.0)))
        if worst > ROW_SUM_TOL:
            raise ContractViolation(
                f"log_probs rows are not normalized (max deviation {worst:.3g})"
            )
    return lp


def _check_feasible(y: Sequence[int], frames: int) -> None:
    if not feasible(y, frames):
        raise FeasibilityError(len(list(y)), frames)


@dataclass
class ForwardTable:
    """The alignment lattice: alpha/beta grids of shape (T, 2|y|+1)."""

    alpha: np.ndarray
    beta: np.ndarray
    total_log_prob: float

    def consistency_gap(self) -> float:
        """max_t |logsumexp_s(alpha[t]+beta[t]) - total|; ~0 on a correct lattice."""
        joint = self.alpha + self.beta
        m = joint.max(axis=1, keepdims=True)
        per_t = m[:, 0] + np.log(np.exp(joint - m).sum(axis=1))
        return float(np.max(np.abs(per_t - self.total_log_prob)))


def forward_table(log_probs: np.ndarray, y: Sequence[int]) -> ForwardTable:
    """Build the full DP lattice for inspection and invariant checks."""
    lp = _validate_log_probs(log_probs)
    _check_feasible(y, lp.shape[0])
    ext = extend_labels(y)
    alpha, total = kernels.lattice_forward(lp, ext)
    beta = kernels.lattice_backward(lp, ext)
    return ForwardTable(alpha=alpha, beta=beta, total_log_prob=total)


def ctc_loss(log_probs: np.ndarray, y: Sequence[int]) -> float:
    """-log p(y | x) summed over all alignments; log_probs is (T, V+1)."""
    lp = _validate_log_probs(log_probs)
    T = lp.shape[0]
    _check_feasible(y, T)
    y = list(y)
    if T == 0:
        return 0.0  # only the empty target is feasible at T=0
    ext = extend_labels(y)
    _, total = kernels.lattice_forward(lp, ext)
    if total == -np.inf:
        raise FeasibilityError(len(y), T)
    return -total


def ctc_loss_and_occupancy(log_probs: np.ndarray, y: Sequence[int]) -> tuple[float, np.ndarray]:
    """(loss, occupancy) where occupancy[t, v] is the posterior label mass."""
    lp = _validate_log_probs(log_probs)
    T = lp.shape[0]
    _check_feasible(y, T)
    y = list(y)
    if T == 0:
        return 0.0, np.zeros_like(lp)
    ext = extend_labels(y)
    total, occ = kernels.lattice_loss_grad(lp, ext)
    if total == -np.inf:
        raise FeasibilityError(len(y), T)
    return -total, occ


def ctc_grad(log_probs: np.ndarray, y: Sequence[int]) -> np.ndarray:
    """d(loss)/d(logits) for pre-softmax scores: softmax - occupancy, per frame."""
    lp = _validate_log_probs(log_probs)
    _, occ = ctc_loss_and_occupancy(lp, y)
    return np.exp(lp) - occ


def greedy_decode(log_probs: np.ndarray) -> list[int]:
    """Per-frame argmax (ties break to the lowest id), then collapse."""
    lp = np.asarray(log_probs)
    if lp.shape[0] == 0:
        return []
    return collapse(np.argmax(lp, axis=1).tolist())


def brute_force_loss(log_probs: np.ndarray, y: Sequence[int]) -> float:
    """Oracle: enumerate all (V+1)^T frame sequences and sum the ones collapsing to y.

    Independent of the lattice kernels; guarded to at most 10^6 paths.
    """
    lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    T, C = lp.shape
    if C**T > BRUTE_FORCE_PATH_GUARD:
        raise OracleTooLargeError(f"{C}^{T} paths exceed the {BRUTE_FORCE_PATH_GUARD} guard")
    target = list(y)
    if T == 0:
        if not target:
            return 0.0
        raise FeasibilityError(len(target), 0)

    grids = np.meshgrid(*([np.arange(C)] * T), indexing="ij")
    paths = np.stack(grids, axis=-1).reshape(-1, T)  # (C^T, T)
    path_logp = lp[np.arange(T), paths].sum(axis=1)

    matching = [i for i, path in enumerate(paths) if collapse(path.tolist()) == target]
    if not matching:
        raise FeasibilityError(len(target), T)
    vals = path_logp[matching]
    m = vals.max()
    return float(-(m + np.log(np.exp(vals - m).sum())))


def loss_node(
    log_probs: numerics.Tensor,
    y: Sequence[int],
    precomputed: tuple[float, np.ndarray] | None = None,
) -> numerics.Tensor:
    """Scalar loss tensor wired into the autodiff graph.

    The adjoint of the lattice w.r.t. the input log-probabilities is the
    negated occupancy; composed with the upstream log-softmax this yields the
    usual softmax-minus-occupancy gradient at the logits.
    """
    loss, occ = precomputed if precomputed is not None else ctc_loss_and_occupancy(
        log_probs.data, y
    )
    data = np.asarray(loss, dtype=log_probs.dtype)
    node = log_probs
    grad_piece = -occ.astype(log_probs.dtype)

    def back(g):
        numerics._accumulate(node, g * grad_piece)

    return numerics._make(data, (node,), back)


def batch_loss_occupancy(
    slices: list[np.ndarray], targets: list[Sequence[int]], threads: int = 1
) -> list[tuple[float, np.ndarray]]:
    """Per-sentence (loss, occupancy) pairs; threaded when the compiled backend is active.

    The compiled kernels release the GIL, so threads buy real parallelism
    there; with the pure backend this stays serial.
    """
    if threads > 1 and kernels.active_backend() == "cython" and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(ctc_loss_and_occupancy, slices, targets))
    return [ctc_loss_and_occupancy(lp, y) for lp, y in zip(slices, targets)]
