"""Pure-numpy CTC lattice kernels (fallback backend).

Log-space forward/backward dynamic programming over the extended label
sequence (blanks interleaved).  Same contract as the compiled backend in
`_ctclat.pyx`; -inf marks impossible lattice states.  Inputs: `lp` is a
(T, C) float64 array of per-frame log-distributions, `ext` is the int32
extended label sequence whose first entry is the blank id.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -np.inf


def _skip_allowed(ext: np.ndarray) -> np.ndarray:
    """allow[s] is True when the s-2 -> s transition exists (distinct non-blank labels)."""
    L = ext.shape[0]
    blank = ext[0]
    allow = np.zeros(L, dtype=bool)
    if L > 2:
        allow[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return allow


def lattice_forward(lp: np.ndarray, ext: np.ndarray):
    """Forward pass; returns (alpha grid (T, L), total log-probability)."""
    T = lp.shape[0]
    L = ext.shape[0]
    emit = lp[:, ext]  # (T, L)
    allow = _skip_allowed(ext)

    alpha = np.full((T, L), NEG_INF, dtype=np.float64)
    alpha[0, 0] = emit[0, 0]
    if L > 1:
        alpha[0, 1] = emit[0, 1]

    shifted1 = np.empty(L, dtype=np.float64)
    shifted2 = np.full(L, NEG_INF, dtype=np.float64)
    for t in range(1, T):
        prev = alpha[t - 1]
        shifted1[0] = NEG_INF
        shifted1[1:] = prev[:-1]
        if L > 2:
            shifted2[2:] = np.where(allow[2:], prev[:-2], NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(prev, shifted1), shifted2) + emit[t]

    if L > 1:
        total = float(np.logaddexp(alpha[T - 1, L - 1], alpha[T - 1, L - 2]))
    else:
        total = float(alpha[T - 1, 0])
    return alpha, total


def lattice_backward(lp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """Backward pass; beta[t, s] covers emissions after frame t plus the end constraint."""
    T = lp.shape[0]
    L = ext.shape[0]
    emit = lp[:, ext]
    allow = _skip_allowed(ext)

    beta = np.full((T, L), NEG_INF, dtype=np.float64)
    beta[T - 1, L - 1] = 0.0
    if L > 1:
        beta[T - 1, L - 2] = 0.0

    shifted1 = np.empty(L, dtype=np.float64)
    shifted2 = np.full(L, NEG_INF, dtype=np.float64)
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        shifted1[: L - 1] = nxt[1:]
        shifted1[L - 1] = NEG_INF
        if L > 2:
            shifted2[: L - 2] = np.where(allow[2:], nxt[2:], NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(nxt, shifted1), shifted2)
    return beta


def lattice_loss_grad(lp: np.ndarray, ext: np.ndarray):
    """Returns (total log-probability, occupancy (T, C)).

    occupancy[t, v] sums the posterior probability of being at any lattice
    state labelled v at frame t; each row sums to 1 for a reachable target.
    """
    alpha, total = lattice_forward(lp, ext)
    if total == NEG_INF:
        return total, np.zeros_like(lp)
    beta = lattice_backward(lp, ext)
    gamma = np.exp(alpha + beta - total)  # (T, L)
    occ = np.zeros_like(lp)
    for s in range(ext.shape[0]):
        occ[:, ext[s]] += gamma[:, s]
    return total, occ
