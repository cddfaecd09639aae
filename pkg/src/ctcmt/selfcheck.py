"""Self-verification suites behind the `selfcheck` subcommand.

Everything here checks the implementation against an independent reference:
exhaustive path enumeration for the lattice loss, central finite differences
for gradients, and closed-form values for the schedule. Seeds are fixed so a
pass is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ctc, kernels, numerics
from .model import CtcTransformer, ModelConfig
from .training import lr_schedule


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _random_log_probs(rng, T: int, C: int) -> np.ndarray:
    logits = rng.normal(size=(T, C))
    lse = np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return np.ascontiguousarray(logits - lse)


def check_oracle_equivalence(seed: int = 0) -> CheckResult:
    """Lattice loss equals brute-force enumeration over all frame paths."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    cases = 0
    for T in range(1, 6):
        for target_len in range(0, 4):
            for _ in range(4):
                lp = _random_log_probs(rng, T, 4)
                y = rng.integers(1, 4, size=target_len)
                if not ctc.feasible(y, T):
                    continue
                got = ctc.ctc_loss(lp, y)
                want = ctc.brute_force_loss(lp, y)
                worst = max(worst, abs(got - want))
                cases += 1
    ok = worst < 1e-10 and cases > 30
    return CheckResult("ctc-oracle-equivalence", ok,
                       f"{cases} cases, worst |diff| {worst:.3e}")


def check_lattice_consistency(seed: int = 1) -> CheckResult:
    """Forward and backward recursions agree on the total log-probability."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        T = int(rng.integers(3, 9))
        lp = _random_log_probs(rng, T, 5)
        y = rng.integers(1, 5, size=int(rng.integers(1, 4)))
        if not ctc.feasible(y, T):
            continue
        worst = max(worst, ctc.forward_table(lp, y).consistency_gap())
    return CheckResult("lattice-consistency", worst < 1e-10,
                       f"worst forward/backward gap {worst:.3e}")


def check_occupancy_rows(seed: int = 2) -> CheckResult:
    """State-occupancy rows are probability distributions over classes."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        lp = _random_log_probs(rng, 6, 4)
        y = rng.integers(1, 4, size=2)
        _, occ = ctc.ctc_loss_and_occupancy(lp, y)
        worst = max(worst, float(np.max(np.abs(occ.sum(axis=1) - 1.0))))
    return CheckResult("occupancy-rows", worst < 1e-10,
                       f"worst row-sum error {worst:.3e}")


def check_loss_gradient(seed: int = 3) -> CheckResult:
    """Analytic gradient at the logits matches central finite differences."""
    rng = np.random.default_rng(seed)
    T, C = 4, 4
    logits0 = rng.normal(size=(T, C))
    y = np.array([2, 1, 1], dtype=np.int64)

    def f(x):
        lse = np.log(np.exp(x).sum(axis=1, keepdims=True))
        return ctc.ctc_loss(np.ascontiguousarray(x - lse), y)

    numeric = numerics.fd_gradient(f, logits0, h=1e-5)
    with numerics.precision("float64"):
        t = numerics.tensor(logits0)
        t.needs_grad = True
        loss = ctc.loss_node(numerics.log_softmax_rows(t), y)
        numerics.backward(loss)
        analytic = t.grad
    rel = numerics.max_relative_difference(analytic, numeric)
    return CheckResult("ctc-gradient", rel < 1e-6, f"relative error {rel:.3e}")


def check_model_gradient(seed: int = 4) -> CheckResult:
    """End-to-end gradient through the network on a few sampled coordinates."""
    with numerics.precision("float64"):
        cfg = ModelConfig(vocab_size=6, d_model=8, n_heads=2, d_ff=16,
                          enc_layers=1, dec_layers=1, k=2, max_source_len=8, seed=seed)
        net = CtcTransformer(cfg)
        tokens = [3, 5, 4]
        y = np.array([2, 2, 4], dtype=np.int64)

        numerics.zero_grads(net.parameters())
        loss = ctc.loss_node(net.forward(tokens), y)
        numerics.backward(loss)

        rng = np.random.default_rng(seed)
        worst = 0.0
        for pname in ("split.weight", "output.bias", "embedding.table"):
            p = net.param(pname)
            flat = p.value.reshape(-1)
            for idx in rng.choice(flat.size, size=3, replace=False):
                saved = flat[idx]
                h = 1e-5
                flat[idx] = saved + h
                up = float(ctc.loss_node(net.forward(tokens), y).data)
                flat[idx] = saved - h
                down = float(ctc.loss_node(net.forward(tokens), y).data)
                flat[idx] = saved
                fd = (up - down) / (2 * h)
                got = p.grad.reshape(-1)[idx]
                scale = max(abs(fd), abs(got), 1e-8)
                worst = max(worst, abs(fd - got) / scale)
    return CheckResult("model-gradient", worst < 1e-4,
                       f"worst sampled relative error {worst:.3e}")


def check_schedule() -> CheckResult:
    """Warmup midpoint and the 4x-warmup step hit exact closed-form values."""
    base, warm = 7e-4, 8000
    exact = (
        lr_schedule(warm // 2, base, warm) == base / 2
        and lr_schedule(warm, base, warm) == base
        and lr_schedule(4 * warm, base, warm) == base / 2
    )
    peak = max(lr_schedule(s, base, warm) for s in (1, 10, warm - 1, warm, warm + 1, 10 * warm))
    return CheckResult("lr-schedule", exact and peak == base,
                       f"exact checkpoints {'hold' if exact else 'FAIL'}, peak {peak:.1e}")


def check_collapse(seed: int = 5) -> CheckResult:
    """Interleaving blanks into any label sequence collapses back to it."""
    rng = np.random.default_rng(seed)
    for _ in range(50):
        y = [int(v) for v in rng.integers(1, 6, size=int(rng.integers(0, 6)))]
        frames = []
        for v in y:
            frames.extend([0] * int(rng.integers(0, 3)))
            frames.extend([v] * int(rng.integers(1, 3)))
            frames.append(0)
        if ctc.collapse(frames) != y:
            return CheckResult("collapse-roundtrip", False, f"failed on {y}")
    return CheckResult("collapse-roundtrip", True, "50 random round trips")


def check_backend_parity(seed: int = 6) -> CheckResult:
    """Compiled and pure lattice kernels agree to near machine precision."""
    from . import _ctclat_py
    try:
        from . import _ctclat  # type: ignore[attr-defined]
    except ImportError:
        return CheckResult("backend-parity", True,
                           "skipped: compiled kernels not built (pure backend active)")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        T = int(rng.integers(2, 10))
        lp = _random_log_probs(rng, T, 6)
        y = rng.integers(1, 6, size=int(rng.integers(1, 4)))
        if not ctc.feasible(y, T):
            continue
        ext = ctc.extend_labels(y)
        a1, t1 = _ctclat.lattice_forward(lp, ext)
        a2, t2 = _ctclat_py.lattice_forward(lp, ext)
        b1 = _ctclat.lattice_backward(lp, ext)
        b2 = _ctclat_py.lattice_backward(lp, ext)
        l1, o1 = _ctclat.lattice_loss_grad(lp, ext)
        l2, o2 = _ctclat_py.lattice_loss_grad(lp, ext)
        if not (np.array_equal(np.isfinite(a1), np.isfinite(a2))
                and np.array_equal(np.isfinite(b1), np.isfinite(b2))):
            return CheckResult("backend-parity", False,
                               "backends disagree on unreachable lattice cells")
        fa, fb = np.isfinite(a2), np.isfinite(b2)
        worst = max(worst,
                    float(np.max(np.abs(a1[fa] - a2[fa]))),
                    abs(t1 - t2),
                    float(np.max(np.abs(b1[fb] - b2[fb]))),
                    abs(l1 - l2),
                    float(np.max(np.abs(o1 - o2))))
    return CheckResult("backend-parity", worst < 1e-12,
                       f"backend {kernels.active_backend()}, worst |diff| {worst:.3e}")


ALL_CHECKS = (
    check_oracle_equivalence,
    check_lattice_consistency,
    check_occupancy_rows,
    check_loss_gradient,
    check_model_gradient,
    check_schedule,
    check_collapse,
    check_backend_parity,
)


def run_all() -> list[CheckResult]:
    results = []
    for fn in ALL_CHECKS:
        try:
            results.append(fn())
        except Exception as exc:  # a crash is a failure, not an abort
            results.append(CheckResult(fn.__name__, False, f"raised {exc!r}"))
    return results
