"""Time the compiled lattice kernel against the pure-numpy fallback.

Each cell first checks that both backends agree (loss and occupancy), then
times `lattice_loss_grad` over the same inputs.  Run from the repo root:

    python3 benchmarks/ctc_backends.py
    python3 benchmarks/ctc_backends.py --labels 8 32 128 --classes 64
"""

import argparse
import time

import numpy as np

from ctcmt import ctc
from ctcmt import _ctclat_py

try:
    from ctcmt import _ctclat
except ImportError:
    _ctclat = None


def make_instance(rng, n_labels, frames_per_label, classes):
    y = rng.integers(1, classes, size=n_labels)
    T = frames_per_label * n_labels
    logits = rng.normal(size=(T, classes))
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return np.ascontiguousarray(lp), ctc.extend_labels(y)


def time_backend(impl, lp, ext, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        impl.lattice_loss_grad(lp, ext)
        best = min(best, time.perf_counter() - t0)
    return best


def check_parity(lp, ext):
    loss_c, occ_c = _ctclat.lattice_loss_grad(lp, ext)
    loss_p, occ_p = _ctclat_py.lattice_loss_grad(lp, ext)
    return max(abs(loss_c - loss_p), float(np.abs(occ_c - occ_p).max()))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--labels", type=int, nargs="+", default=[4, 8, 16, 32, 64],
                    help="target lengths to sweep")
    ap.add_argument("--frames-per-label", type=int, default=3)
    ap.add_argument("--classes", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if _ctclat is None:
        print("compiled backend not built; nothing to compare "
              "(pip install -e . --no-build-isolation)")
        return 1

    rng = np.random.default_rng(args.seed)
    header = f"{'T':>6} {'|y|':>5} {'classes':>8} {'python ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>10}"
    print(header)
    print("-" * len(header))
    for n in args.labels:
        lp, ext = make_instance(rng, n, args.frames_per_label, args.classes)
        diff = check_parity(lp, ext)
        if diff > 1e-10:
            print(f"backend disagreement at |y|={n}: {diff:.3e}")
            return 1
        py = time_backend(_ctclat_py, lp, ext, args.repeats)
        cy = time_backend(_ctclat, lp, ext, args.repeats)
        print(f"{lp.shape[0]:>6} {n:>5} {args.classes:>8} {py * 1e3:>10.3f} "
              f"{cy * 1e3:>10.3f} {py / cy:>7.1f}x {diff:>10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
