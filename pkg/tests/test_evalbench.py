"""BLEU arithmetic, report files, and the timing harness."""

import math
import random

import pytest

from ctcmt import evalbench
from ctcmt.errors import ContractViolation
from ctcmt.inference import DecodeJob


# -- BLEU -----------------------------------------------------------------------

def test_bleu_identical_is_100():
    refs = ["der hund rennt schnell davon", "die katze schläft"]
    assert evalbench.bleu(refs, refs) == 100.0


def test_bleu_brevity_penalty_hand_value():
    score = evalbench.bleu(["a b c d"], ["a b c d e"])
    assert abs(score - 100.0 * math.exp(1.0 - 5.0 / 4.0)) < 1e-9
    assert abs(score - 77.88) < 0.01


def test_bleu_no_fourgram_match_is_zero():
    assert evalbench.bleu(["a b c x"], ["a b c d e"]) == 0.0


def test_bleu_clips_repeated_ngrams():
    # unigram precision must be 1/4, so with other orders empty the score is 0;
    # check the clipping through a corpus where higher orders still match
    hyps = ["a a a a b c d e"]
    refs = ["a b c d e f g h"]
    score_repeat = evalbench.bleu(hyps, refs)
    score_clean = evalbench.bleu(["a b c d e"], refs)
    assert score_repeat < score_clean


def test_bleu_permutation_invariance():
    rng = random.Random(7)
    words = "ein zwei drei vier fünf sechs sieben acht".split()
    pairs = []
    for _ in range(100):
        n = rng.randint(4, 8)
        ref = [rng.choice(words) for _ in range(n)]
        hyp = list(ref)
        if rng.random() < 0.5:
            hyp[rng.randrange(n)] = rng.choice(words)
        pairs.append((" ".join(hyp), " ".join(ref)))
    hyps = [h for h, _ in pairs]
    refs = [r for _, r in pairs]
    base = evalbench.bleu(hyps, refs)
    order = list(range(100))
    rng.shuffle(order)
    shuffled = evalbench.bleu([hyps[i] for i in order], [refs[i] for i in order])
    assert base == shuffled
    assert base > 0


def test_bleu_empty_hypothesis_never_helps():
    hyps = ["der hund rennt schnell davon", "die katze schläft tief"]
    refs = ["der hund rennt schnell davon", "die katze schläft fest"]
    base = evalbench.bleu(hyps, refs)
    worse = evalbench.bleu(["", hyps[1]], refs)
    assert base > 0
    assert worse <= base


def test_bleu_contract_errors():
    with pytest.raises(ContractViolation):
        evalbench.bleu(["a"], ["a", "b"])
    with pytest.raises(ContractViolation):
        evalbench.bleu(["a"], [""])


# -- report plumbing ---------------------------------------------------------------

def sample_report(**overrides):
    values = dict(mode="batched", batch_size=32, sentence_count=100,
                  load_seconds=0.5, translate_seconds=2.0,
                  sentences_per_second=50.0, tokens_per_second=300.0,
                  p50_ms=1.5, p90_ms=2.5, p99_ms=4.0,
                  hardware="test rig", config_hash="abcd1234abcd1234")
    values.update(overrides)
    return evalbench.BenchReport(**values)


def test_percentile_nearest_rank():
    vals = [5.0, 1.0, 3.0, 2.0, 4.0]
    assert evalbench.percentile_nearest_rank(vals, 50) == 3.0
    assert evalbench.percentile_nearest_rank(vals, 90) == 5.0
    assert evalbench.percentile_nearest_rank(vals, 99) == 5.0
    assert evalbench.percentile_nearest_rank([], 50) == 0.0


def test_report_validation():
    sample_report().validate()
    with pytest.raises(ContractViolation):
        sample_report(translate_seconds=0.0).validate()
    with pytest.raises(ContractViolation):
        sample_report(sentences_per_second=49.0).validate()
    with pytest.raises(ContractViolation):
        sample_report(p90_ms=5.0).validate()


def test_report_field_order_is_stable():
    text = evalbench.format_report(sample_report())
    keys = [line.split(":")[0] for line in text.strip().splitlines()]
    assert keys == list(evalbench.REPORT_FIELDS)


def test_report_roundtrip_is_exact(tmp_path):
    report = sample_report(translate_seconds=2.0000000001,
                           sentences_per_second=100 / 2.0000000001)
    path = tmp_path / "run.report"
    evalbench.write_report(report, path)
    back = evalbench.read_report(path)
    assert back == report


def test_report_parse_errors():
    with pytest.raises(ContractViolation, match="missing"):
        evalbench.parse_report("mode: batched\n")
    with pytest.raises(ContractViolation, match="malformed"):
        evalbench.parse_report("just some words\n")


def test_compare_runs_ratios_and_rows():
    r = sample_report()
    rows = evalbench.compare_runs([r, r])
    assert len(rows) == 2
    assert rows[0]["speedup"] == 1.0 and rows[1]["speedup"] == 1.0
    faster = sample_report(sentences_per_second=100.0, translate_seconds=1.0)
    rows = evalbench.compare_runs([r, faster])
    assert rows[1]["speedup"] == 100.0 / 50.0
    with pytest.raises(ContractViolation):
        evalbench.compare_runs([r])


def test_render_comparison_has_header_and_rows():
    rows = evalbench.compare_runs([sample_report(), sample_report(mode="latency")])
    text = evalbench.render_comparison(rows)
    lines = text.strip().splitlines()
    assert len(lines) == 3
    assert "speedup" in lines[0]


# -- the harness -------------------------------------------------------------------

def test_run_bench_excludes_warmup_and_keeps_invariants(small_system):
    lines = small_system.lines[:60]
    job = DecodeJob(lines, small_system.checkpoint_path, small_system.vocab_path,
                    mode="batched", batch_size=8)
    report, outputs = evalbench.run_bench(job, warmup_sentences=10, hardware="desk")
    assert report.sentence_count == 50
    assert len(outputs) == 50
    assert report.sentences_per_second == report.sentence_count / report.translate_seconds
    assert report.p50_ms <= report.p90_ms <= report.p99_ms
    assert report.hardware == "desk"
    assert len(report.config_hash) == 16
    report.validate()


def test_run_bench_needs_enough_lines(small_system):
    job = DecodeJob(small_system.lines[:5], small_system.checkpoint_path,
                    small_system.vocab_path)
    with pytest.raises(ContractViolation):
        evalbench.run_bench(job, warmup_sentences=16)


def test_run_bench_translations_match_plain_inference(small_system):
    from ctcmt import inference
    lines = small_system.lines[:30]
    job = DecodeJob(lines, small_system.checkpoint_path, small_system.vocab_path,
                    mode="latency")
    _, timed_outputs = evalbench.run_bench(job, warmup_sentences=10)
    direct, _ = inference.run_job(
        DecodeJob(lines[10:], small_system.checkpoint_path,
                  small_system.vocab_path, mode="latency"))
    assert timed_outputs == direct
