"""Shared fixtures: one small trained translation system per test session."""

from types import SimpleNamespace

import pytest

from ctcmt import data, model, training


@pytest.fixture(scope="session")
def small_system(tmp_path_factory):
    """A converged copy-task model small enough to train in a few seconds.

    Inference and benchmark tests need decisive argmax decisions (near-ties
    under float32 would make cross-mode comparisons flaky), so the fixture
    trains until the loss is far below the tie region and asserts that.
    """
    root = tmp_path_factory.mktemp("system")
    pairs = data.synthetic_pairs(120, seed=21, min_len=2, max_len=5)
    vocab = data.build_vocabulary([s for s, _ in pairs])
    cfg = model.ModelConfig(vocab_size=vocab.model_vocab_size, d_model=32,
                            n_heads=2, d_ff=64, enc_layers=1, dec_layers=1,
                            k=2, max_source_len=16, seed=3)
    net = model.CtcTransformer(cfg)
    examples = data.encode_pairs(pairs, vocab)
    batches, skipped = data.make_batches(examples, max_tokens=128, k=cfg.k,
                                         max_source_len=cfg.max_source_len, seed=9)
    assert not skipped
    conf = training.TrainingConfig(max_steps=250, base_lr=3e-3, warmup_steps=60,
                                   log_every=250)
    state, records = training.train(net, batches, conf)
    assert records[-1]["loss"] < 0.05, "fixture model failed to converge"

    checkpoint = root / "model.ckpt"
    vocab_path = root / "vocab.txt"
    training.save_training_checkpoint(checkpoint, net, state, vocab.content_hash())
    vocab.save(vocab_path)
    return SimpleNamespace(
        net=net,
        vocab=vocab,
        checkpoint_path=str(checkpoint),
        vocab_path=str(vocab_path),
        lines=[s for s, _ in pairs],
        root=root,
    )
