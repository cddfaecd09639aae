"""Benchmark harness and corpus BLEU.

Speed reports are structured text with a stable key order so that runs can
be diffed and compared; quality is corpus-level BLEU-4 without smoothing.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass

from .data import tokenize
from .errors import ContractViolation
from .inference import DecodeJob, _translate_lines, load_model_and_vocab

REPORT_FIELDS = (
    "mode", "batch_size", "sentence_count", "load_seconds", "translate_seconds",
    "sentences_per_second", "tokens_per_second", "p50_ms", "p90_ms", "p99_ms",
    "hardware", "config_hash",
)

_INT_FIELDS = {"batch_size", "sentence_count"}
_STR_FIELDS = {"mode", "hardware", "config_hash"}


def config_digest(mapping: dict) -> str:
    """Stable 16-hex digest of a configuration mapping."""
    blob = json.dumps(mapping, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def percentile_nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile; q in (0, 100]."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


@dataclass
class BenchReport:
    mode: str
    batch_size: int
    sentence_count: int
    load_seconds: float
    translate_seconds: float
    sentences_per_second: float
    tokens_per_second: float
    p50_ms: float
    p90_ms: float
    p99_ms: float
    hardware: str = ""
    config_hash: str = ""

    def validate(self) -> None:
        if self.translate_seconds <= 0:
            raise ContractViolation("translate_seconds must be positive")
        if self.sentences_per_second != self.sentence_count / self.translate_seconds:
            raise ContractViolation("sentences_per_second is not count/seconds")
        if not (self.p50_ms <= self.p90_ms <= self.p99_ms):
            raise ContractViolation("per-call percentiles must be nondecreasing")


def run_bench(job: DecodeJob, warmup_sentences: int = 16,
              hardware: str = "") -> tuple[BenchReport, list]:
    """Translate the corpus, timing everything after the warmup prefix.

    The first `warmup_sentences` lines are translated but not timed; the rest
    form the measured region. Returns the report and the timed translations
    (warmup outputs are discarded).
    """
    if len(job.lines) < warmup_sentences + 1:
        raise ContractViolation(
            f"benchmark needs at least {warmup_sentences + 1} lines, got {len(job.lines)}"
        )
    t0 = time.perf_counter()
    net, vocab = load_model_and_vocab(job.checkpoint_path, job.vocab_path)
    load_seconds = time.perf_counter() - t0

    warmup = job.lines[:warmup_sentences]
    timed = job.lines[warmup_sentences:]
    if warmup:
        _translate_lines(net, vocab, warmup, job.mode, job.batch_size)

    t1 = time.perf_counter()
    outputs, per_call, tokens = _translate_lines(net, vocab, timed, job.mode, job.batch_size)
    translate_seconds = time.perf_counter() - t1

    per_call_ms = [s * 1000.0 for s in per_call]
    report = BenchReport(
        mode=job.mode,
        batch_size=1 if job.mode == "latency" else job.batch_size,
        sentence_count=len(timed),
        load_seconds=load_seconds,
        translate_seconds=translate_seconds,
        sentences_per_second=len(timed) / translate_seconds,
        tokens_per_second=tokens / translate_seconds,
        p50_ms=percentile_nearest_rank(per_call_ms, 50),
        p90_ms=percentile_nearest_rank(per_call_ms, 90),
        p99_ms=percentile_nearest_rank(per_call_ms, 99),
        hardware=hardware,
        config_hash=config_digest(dataclasses.asdict(net.config)),
    )
    report.validate()
    return report, outputs


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def format_report(report: BenchReport) -> str:
    lines = []
    for name in REPORT_FIELDS:
        value = getattr(report, name)
        if name in _STR_FIELDS:
            text = str(value).replace("\n", " ")
        elif name in _INT_FIELDS:
            text = str(int(value))
        else:
            text = repr(float(value))
        lines.append(f"{name}: {text}")
    return "\n".join(lines) + "\n"


def write_report(report: BenchReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_report(report))


def parse_report(text: str) -> BenchReport:
    """Inverse of format_report; float fields round-trip exactly via repr."""
    values = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if ":" not in line:
            raise ContractViolation(f"malformed report line: {raw!r}")
        key, _, val = line.partition(":")
        values[key.strip()] = val.strip()
    missing = [f for f in REPORT_FIELDS if f not in values]
    if missing:
        raise ContractViolation(f"report is missing fields: {missing}")
    kwargs = {}
    for name in REPORT_FIELDS:
        raw = values[name]
        if name in _STR_FIELDS:
            kwargs[name] = raw
        elif name in _INT_FIELDS:
            kwargs[name] = int(raw)
        else:
            kwargs[name] = float(raw)
    return BenchReport(**kwargs)


def read_report(path) -> BenchReport:
    with open(path, encoding="utf-8") as fh:
        return parse_report(fh.read())


# ---------------------------------------------------------------------------
# run comparison
# ---------------------------------------------------------------------------

def compare_runs(reports) -> list:
    """Each report as a row, with throughput ratios against the first one."""
    if len(reports) < 2:
        raise ContractViolation("need at least two reports to compare")
    base = reports[0]
    rows = []
    for r in reports:
        rows.append({
            "mode": r.mode,
            "batch_size": r.batch_size,
            "sentences_per_second": r.sentences_per_second,
            "tokens_per_second": r.tokens_per_second,
            "p50_ms": r.p50_ms,
            "p90_ms": r.p90_ms,
            "p99_ms": r.p99_ms,
            "speedup": r.sentences_per_second / base.sentences_per_second,
        })
    return rows


def render_comparison(rows) -> str:
    headers = ["mode", "batch_size", "sentences_per_second", "tokens_per_second",
               "p50_ms", "p90_ms", "p99_ms", "speedup"]
    table = [headers]
    for row in rows:
        cells = []
        for h in headers:
            v = row[h]
            cells.append(f"{v:.3f}" if isinstance(v, float) else str(v))
        table.append(cells)
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    out = []
    for r in table:
        out.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# corpus BLEU
# ---------------------------------------------------------------------------

def _ngram_counts(tokens, n: int) -> dict:
    counts: dict = {}
    for i in range(len(tokens) - n + 1):
        g = tuple(tokens[i : i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


def bleu(hypotheses, references) -> float:
    """Corpus BLEU-4 on whitespace tokens, in [0, 100].

    Clipped modified n-gram precisions for n = 1..4, geometric mean, brevity
    penalty exp(1 - r/c) when the hypothesis corpus is shorter. No smoothing:
    a zero precision at any order zeroes the score.
    """
    if len(hypotheses) != len(references):
        raise ContractViolation(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    refs_tok = [tokenize(r) for r in references]
    if not any(refs_tok):
        raise ContractViolation("need at least one non-empty reference")
    hyps_tok = [tokenize(h) for h in hypotheses]

    matched = [0] * 4
    total = [0] * 4
    c = sum(len(h) for h in hyps_tok)
    r = sum(len(t) for t in refs_tok)
    for hyp, ref in zip(hyps_tok, refs_tok):
        for n in range(1, 5):
            hc = _ngram_counts(hyp, n)
            if not hc:
                continue
            rc = _ngram_counts(ref, n)
            total[n - 1] += sum(hc.values())
            matched[n - 1] += sum(min(cnt, rc.get(g, 0)) for g, cnt in hc.items())

    if c == 0 or any(t == 0 for t in total) or any(m == 0 for m in matched):
        return 0.0
    log_mean = sum(math.log(m / t) for m, t in zip(matched, total)) / 4.0
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_mean)
