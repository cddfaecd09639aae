"""Command-line entry point.

Subcommands: vocab, train, translate, bench, score, selfcheck. Effective
settings come from built-in defaults, overridden by a flat dotted-key config
file (`model.k = 3` style), overridden by command-line flags; every value
remembers where it came from.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass

from . import data, evalbench, inference, kernels, model, numerics, selfcheck, training
from .errors import ConfigError, CtcmtError

CONFIG_ENV_VAR = "CTCMT_CONFIG"

DEFAULTS = {
    "model.d_model": 64,
    "model.n_heads": 4,
    "model.d_ff": 256,
    "model.enc_layers": 2,
    "model.dec_layers": 2,
    "model.k": 3,
    "model.max_source_len": 256,
    "model.seed": 0,
    "model.split_position_encoding": True,
    "training.base_lr": 1e-4,
    "training.warmup_steps": 8000,
    "training.max_steps": 1000,
    "training.clip_norm": 1.0,
    "training.beta1": 0.9,
    "training.beta2": 0.98,
    "training.eps": 1e-9,
    "training.log_every": 50,
    "training.threads": 1,
    "training.seed": 0,
    "training.batch_max_tokens": 512,
    "training.checkpoint_every": 0,
    "vocab.max_size": 0,
    "vocab.min_count": 1,
}


@dataclass
class RunConfig:
    """Effective settings plus where each value came from."""

    values: dict
    sources: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def describe(self) -> str:
        lines = [f"{k} = {_render(v)}  # {self.sources[k]}" for k, v in sorted(self.values.items())]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        blob = json.dumps({k: _render(v) for k, v in self.values.items()},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def model_config(self, vocab_size: int) -> model.ModelConfig:
        v = self.values
        return model.ModelConfig(
            vocab_size=vocab_size,
            d_model=v["model.d_model"],
            n_heads=v["model.n_heads"],
            d_ff=v["model.d_ff"],
            enc_layers=v["model.enc_layers"],
            dec_layers=v["model.dec_layers"],
            k=v["model.k"],
            max_source_len=v["model.max_source_len"],
            seed=v["model.seed"],
            split_position_encoding=v["model.split_position_encoding"],
        )

    def training_config(self) -> training.TrainingConfig:
        v = self.values
        return training.TrainingConfig(
            max_steps=v["training.max_steps"],
            base_lr=v["training.base_lr"],
            warmup_steps=v["training.warmup_steps"],
            clip_norm=v["training.clip_norm"],
            beta1=v["training.beta1"],
            beta2=v["training.beta2"],
            eps=v["training.eps"],
            threads=v["training.threads"],
            log_every=v["training.log_every"],
        )


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from exc


def parse_config_file(path) -> dict:
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {i}: expected 'key = value', got {raw.rstrip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path} line {i}: unknown setting {key!r}")
            entries[key] = _coerce(key, value.strip())
    return entries


def build_run_config(config_path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then config file, then explicit flags. Last writer wins."""
    values = dict(DEFAULTS)
    sources = {k: "default" for k in DEFAULTS}
    path = config_path or os.environ.get(CONFIG_ENV_VAR)
    if path:
        for k, v in parse_config_file(path).items():
            values[k] = v
            sources[k] = f"file:{path}"
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in DEFAULTS:
            raise ConfigError(f"unknown setting {k!r}")
        values[k] = v
        sources[k] = "flag"
    return RunConfig(values=values, sources=sources)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _apply_global_flags(args) -> RunConfig:
    overrides = {key: getattr(args, attr, None) for key, attr in getattr(args, "_override_map", {}).items()}
    if getattr(args, "threads", None) is not None:
        overrides["training.threads"] = args.threads
    cfg = build_run_config(getattr(args, "config", None), overrides)
    kernels.set_thread_cap(cfg["training.threads"])
    if getattr(args, "precision", None):
        numerics.set_default_dtype(args.precision)
    return cfg


def cmd_vocab(args) -> int:
    cfg = _apply_global_flags(args)
    lines = data.read_lines(args.source)
    max_size = cfg["vocab.max_size"] or None
    vocab = data.build_vocabulary(lines, max_size=max_size, min_count=cfg["vocab.min_count"])
    vocab.save(args.output)
    print(f"vocabulary of {len(vocab)} tokens written to {args.output}")
    return 0


def cmd_train(args) -> int:
    cfg = _apply_global_flags(args)
    pairs = data.load_corpus(args.source, args.target)
    vocab = data.Vocabulary.load(args.vocab)
    examples = data.encode_pairs(pairs, vocab)
    tconf = cfg.training_config()

    if args.resume:
        loaded, state = training.load_training_checkpoint(args.checkpoint)
        if loaded.vocab_hash and loaded.vocab_hash != vocab.content_hash():
            raise ConfigError("vocabulary does not match the checkpoint being resumed")
        net = loaded.model
        print(f"resuming from step {state.step}", file=sys.stderr)
    else:
        net = model.CtcTransformer(cfg.model_config(vocab.model_vocab_size))
        state = None

    batches, skipped = data.make_batches(
        examples,
        max_tokens=cfg["training.batch_max_tokens"],
        k=net.config.k,
        max_source_len=net.config.max_source_len,
        seed=cfg["training.seed"],
    )
    for s in skipped[:10]:
        print(f"skipping line {s.line_number}: {s.reason}", file=sys.stderr)
    if len(skipped) > 10:
        print(f"... {len(skipped) - 10} more skipped sentences", file=sys.stderr)
    if not batches:
        raise ConfigError("no trainable sentences left after filtering")

    log_fh = open(args.log, "a", encoding="utf-8") if args.log else None
    try:
        state, records = training.train(
            net, batches, tconf, state=state, log_fh=log_fh,
            checkpoint_path=args.checkpoint,
            checkpoint_every=cfg["training.checkpoint_every"],
            vocab_hash=vocab.content_hash(),
        )
    finally:
        if log_fh:
            log_fh.close()
    training.save_training_checkpoint(args.checkpoint, net, state, vocab.content_hash())
    if records:
        print(f"step {state.step}: loss {records[-1]['loss']:.4f}, "
              f"checkpoint written to {args.checkpoint}")
    else:
        print(f"nothing to do at step {state.step}; checkpoint written to {args.checkpoint}")
    return 0


def _decode_args_to_job(args, lines) -> inference.DecodeJob:
    if args.batch is not None:
        mode, batch = "batched", args.batch
    else:
        mode, batch = "latency", 1
    return inference.DecodeJob(
        lines=lines,
        checkpoint_path=args.checkpoint,
        vocab_path=args.vocab,
        mode=mode,
        batch_size=batch,
    )


def cmd_translate(args) -> int:
    _apply_global_flags(args)
    lines = data.read_lines(args.input) if args.input else [
        line.rstrip("\n") for line in sys.stdin
    ]
    outputs, trace = inference.run_job(_decode_args_to_job(args, lines))
    text = "".join(out + "\n" for out in outputs)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(
        f"{trace.mode}: {trace.sentences} lines, load {trace.load_seconds:.3f}s, "
        f"translate {trace.translate_seconds:.3f}s, "
        f"{trace.tokens_per_second():.1f} source tokens/s",
        file=sys.stderr,
    )
    return 0


def cmd_bench(args) -> int:
    _apply_global_flags(args)
    if args.compare:
        reports = [evalbench.read_report(p) for p in args.compare]
        sys.stdout.write(evalbench.render_comparison(evalbench.compare_runs(reports)))
        return 0
    if not args.input:
        raise ConfigError("bench needs --input (or --compare with report files)")
    lines = data.read_lines(args.input)
    job = _decode_args_to_job(args, lines)
    report, outputs = evalbench.run_bench(job, warmup_sentences=args.warmup,
                                          hardware=args.hardware)
    if args.report:
        evalbench.write_report(report, args.report)
    if args.hypotheses:
        with open(args.hypotheses, "w", encoding="utf-8") as fh:
            fh.write("".join(out + "\n" for out in outputs))
    sys.stdout.write(evalbench.format_report(report))
    return 0


def cmd_score(args) -> int:
    _apply_global_flags(args)
    hyps = data.read_lines(args.hypotheses)
    refs = data.read_lines(args.references)
    score = evalbench.bleu(hyps, refs)
    print(f"BLEU = {score:.4f}")
    return 0


def cmd_selfcheck(args) -> int:
    _apply_global_flags(args)
    results = selfcheck.run_all()
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    passed = sum(r.ok for r in results)
    print(f"{passed}/{len(results)} checks passed")
    return 0 if passed == len(results) else 1


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

_TRAIN_OVERRIDES = {
    "model.d_model": "d_model",
    "model.n_heads": "n_heads",
    "model.d_ff": "d_ff",
    "model.enc_layers": "enc_layers",
    "model.dec_layers": "dec_layers",
    "model.k": "k",
    "model.max_source_len": "max_source_len",
    "model.seed": "model_seed",
    "training.base_lr": "base_lr",
    "training.warmup_steps": "warmup",
    "training.max_steps": "max_steps",
    "training.clip_norm": "clip_norm",
    "training.log_every": "log_every",
    "training.seed": "data_seed",
    "training.batch_max_tokens": "batch_tokens",
    "training.checkpoint_every": "checkpoint_every",
}

_VOCAB_OVERRIDES = {
    "vocab.max_size": "max_size",
    "vocab.min_count": "min_count",
}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"config file path (default: ${CONFIG_ENV_VAR})")
    common.add_argument("--threads", type=int, help="cap internal worker threads")
    common.add_argument("--precision", choices=("float32", "float64"),
                        help="arithmetic width (default float32)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctcmt",
        description="Parallel-decoding translation: train, translate, benchmark, score.",
    )
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vocab", parents=[common], help="build a vocabulary from a corpus")
    p.add_argument("--source", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--max-size", dest="max_size", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.set_defaults(func=cmd_vocab, _override_map=_VOCAB_OVERRIDES)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", help="JSONL step log path")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--enc-layers", dest="enc_layers", type=int)
    p.add_argument("--dec-layers", dest="dec_layers", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--max-source-len", dest="max_source_len", type=int)
    p.add_argument("--model-seed", dest="model_seed", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--batch-tokens", dest="batch_tokens", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.set_defaults(func=cmd_train, _override_map=_TRAIN_OVERRIDES)

    p = sub.add_parser("translate", parents=[common], help="translate a file or stdin")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input")
    p.add_argument("--output")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--latency", action="store_true",
                       help="one sentence per model call (the default)")
    group.add_argument("--batch", type=int, help="batched mode with this batch size")
    p.set_defaults(func=cmd_translate, _override_map={})

    p = sub.add_parser("bench", parents=[common], help="timed translation benchmark")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--input")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--latency", action="store_true")
    group.add_argument("--batch", type=int)
    p.add_argument("--warmup", type=int, default=16)
    p.add_argument("--report", help="write the report here")
    p.add_argument("--hypotheses", help="write timed translations here")
    p.add_argument("--hardware", default="", help="free-text hardware note")
    p.add_argument("--compare", nargs="+", metavar="REPORT",
                   help="compare existing report files instead of benchmarking")
    p.set_defaults(func=cmd_bench, _override_map={})

    p = sub.add_parser("score", parents=[common], help="corpus BLEU of hypotheses vs references")
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--references", required=True)
    p.set_defaults(func=cmd_score, _override_map={})

    p = sub.add_parser("selfcheck", parents=[common],
                       help="run the built-in verification suites")
    p.set_defaults(func=cmd_selfcheck, _override_map={})

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CtcmtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
