"""Backend selection for the CTC lattice kernels.

The compiled extension (`_ctclat`, Cython) is preferred; the pure-numpy
backend (`_ctclat_py`) is the fallback and the reference for parity tests.
Set CTCMT_PURE_PYTHON=1 to force the fallback.  `benchmarks/ctc_backends.py`
compares the two.
"""

from __future__ import annotations

import os

FORCE_PURE_ENV = "CTCMT_PURE_PYTHON"


def _load_backend():
    if os.environ.get(FORCE_PURE_ENV, "") not in ("", "0"):
        from . import _ctclat_py as impl

        return impl, "python"
    try:
        from . import _ctclat as impl  # compiled extension

        return impl, "cython"
    except ImportError:
        from . import _ctclat_py as impl

        return impl, "python"


_impl, BACKEND = _load_backend()

lattice_forward = _impl.lattice_forward
lattice_backward = _impl.lattice_backward
lattice_loss_grad = _impl.lattice_loss_grad


def active_backend() -> str:
    """Which lattice backend is in use: "cython" or "python"."""
    return BACKEND


_thread_cap = 1


def set_thread_cap(n: int) -> None:
    """Cap worker parallelism everywhere (per-sentence lattices in a batch)."""
    global _thread_cap
    _thread_cap = max(1, int(n))


def thread_cap() -> int:
    return _thread_cap
