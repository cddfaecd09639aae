"""Network behavior: shapes, masking, splitting algebra, checkpoints."""

import json

import numpy as np
import pytest

from ctcmt import ctc, model as M, numerics
from ctcmt.errors import (
    CheckpointError,
    ConfigError,
    EmptyInputError,
    InputTooLongError,
    VocabularyError,
)


def tiny_config(**overrides):
    base = dict(vocab_size=11, d_model=16, n_heads=4, d_ff=32, enc_layers=2,
                dec_layers=2, k=3, max_source_len=32, seed=7)
    base.update(overrides)
    return M.ModelConfig(**base)


@pytest.fixture(scope="module")
def net():
    return M.CtcTransformer(tiny_config())


def test_output_shape_is_k_times_input(net):
    for T in (1, 4, 9):
        out = net.forward(list(range(3, 3 + T)))
        assert out.shape == (net.config.k * T, net.config.full_vocab)


def test_forward_rows_are_log_distributions(net):
    out = net.forward([3, 5, 2, 9]).data.astype(np.float64)
    np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-6)


def test_forward_is_deterministic(net):
    a = net.forward([4, 8, 6]).data
    b = net.forward([4, 8, 6]).data
    np.testing.assert_array_equal(a, b)


def test_public_ops_compose_to_forward(net):
    tokens = [3, 1, 7, 2]
    staged = numerics.log_softmax_rows(
        net.project_logits(net.decode_states(net.split_states(net.encode(net.embed(tokens)))))
    )
    np.testing.assert_array_equal(staged.data, net.forward(tokens).data)


def test_every_parameter_receives_gradient(net):
    numerics.zero_grads(net.parameters())
    loss = ctc.loss_node(net.forward([3, 5, 2, 9, 4]), np.array([3, 5, 5, 2]))
    numerics.backward(loss)
    dead = [p.name for p in net.parameters() if np.max(np.abs(p.grad)) == 0.0]
    assert dead == []


def test_batch_padding_does_not_change_results(net):
    short = [3, 5, 2]
    ids = np.ones((2, 6), dtype=np.int64)
    ids[0, :3] = short
    ids[1, :] = [7, 1, 9, 4, 8, 6]
    with numerics.no_grad():
        batched = net.forward_batch(ids, [3, 6]).data
        solo = net.forward(short).data
    k = net.config.k
    assert numerics.max_relative_difference(batched[0, : k * 3], solo) < 1e-5


def test_pad_embedding_row_gets_no_gradient(net):
    """With the loss on valid frames only, masked keys contribute exactly zero."""
    numerics.zero_grads(net.parameters())
    ids = np.ones((1, 5), dtype=np.int64)
    ids[0, :3] = [3, 5, 2]
    out = net.forward_batch(ids, [3])
    valid = numerics.take(out, (0, slice(0, net.config.k * 3)))
    numerics.backward(numerics.sum_all(valid))
    table_grad = net.param("embedding.table").grad
    np.testing.assert_array_equal(table_grad[1], np.zeros(net.config.d_model))


def test_identity_split_when_k1_and_identity_weight():
    cfg = tiny_config(enc_layers=0, dec_layers=0, k=1, d_model=8, n_heads=2,
                      split_position_encoding=False)
    net1 = M.CtcTransformer(cfg)
    net1.param("split.weight").value[...] = np.eye(8, dtype=net1.dtype)
    net1.param("split.bias").value[...] = 0
    enc = net1.embed([1, 2, 3])
    out = net1.split_states(enc)
    np.testing.assert_allclose(out.states.data, enc.states.data, atol=1e-6)
    assert out.states.shape == enc.states.shape


def test_zero_weight_split_replicates_bias_segments():
    cfg = tiny_config(enc_layers=0, dec_layers=0, k=3, d_model=8, n_heads=2,
                      split_position_encoding=False)
    net3 = M.CtcTransformer(cfg)
    net3.param("split.weight").value[...] = 0
    bias = np.arange(24, dtype=np.float64).astype(net3.dtype)
    net3.param("split.bias").value[...] = bias
    out = net3.split_states(net3.embed([1, 4]))
    np.testing.assert_array_equal(out.states.data, np.tile(bias.reshape(3, 8), (2, 1)))
    assert out.mask.all() and out.mask.shape == (6,)


def test_zero_embedding_row_leaves_position_vector():
    cfg = tiny_config(enc_layers=0, dec_layers=0, d_model=8, n_heads=2)
    net0 = M.CtcTransformer(cfg)
    net0.param("embedding.table").value[2, :] = 0
    got = net0.embed([2]).states.data
    np.testing.assert_array_equal(got, M.sinusoid_table(1, 8).astype(net0.dtype))


def test_decoder_sees_later_frames(net):
    """Perturbing a late split state moves earlier outputs: decoding is non-causal."""
    with numerics.no_grad():
        sp = net.split_states(net.encode(net.embed([3, 5, 2, 9, 4])))
        base = net.decode_states(sp).data.copy()
        bumped = sp.states.data.copy()
        bumped[-1, :] += 1.0
        moved = net.decode_states(
            M.SplitStates(states=numerics.tensor(bumped, dtype=net.dtype), mask=sp.mask)
        ).data
    assert np.max(np.abs(moved[0] - base[0])) > 0


def test_zero_layer_stacks_are_identities():
    cfg = tiny_config(enc_layers=0, dec_layers=0)
    net0 = M.CtcTransformer(cfg)
    enc = net0.embed([1, 2, 3])
    np.testing.assert_array_equal(net0.encode(enc).states.data, enc.states.data)
    dec = net0.decode_states(M.SplitStates(states=enc.states, mask=enc.mask))
    np.testing.assert_array_equal(dec.data, enc.states.data)


def test_parameter_count_matches_materialized_model(net):
    assert M.parameter_count(net.config) == net.parameter_count()
    assert M.parameter_count(net.config) == sum(p.value.size for p in net.parameters())


def test_initialization_is_reproducible():
    a = M.CtcTransformer(tiny_config())
    b = M.CtcTransformer(tiny_config())
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.value, q.value)


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_config(d_model=15)  # not divisible by heads
    with pytest.raises(ConfigError):
        tiny_config(k=0)
    with pytest.raises(ConfigError):
        tiny_config(vocab_size=1)


def test_input_validation(net):
    with pytest.raises(EmptyInputError):
        net.forward([])
    with pytest.raises(InputTooLongError):
        net.forward([3] * (net.config.max_source_len + 1))
    with pytest.raises(VocabularyError):
        net.forward([net.config.full_vocab])
    with pytest.raises(VocabularyError):
        net.forward([-1])


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_roundtrip_is_bit_exact(net, tmp_path):
    path = tmp_path / "model.ckpt"
    extras = {"optimizer.m.split.weight": np.ones((2, 3), np.float32)}
    M.save_checkpoint(path, net, vocab_hash="deadbeef", step=17, extras=extras)
    loaded = M.load_checkpoint(path)
    assert loaded.step == 17 and loaded.vocab_hash == "deadbeef"
    for p, q in zip(net.parameters(), loaded.model.parameters()):
        assert p.name == q.name
        np.testing.assert_array_equal(p.value, q.value)
    np.testing.assert_array_equal(
        loaded.extras["optimizer.m.split.weight"], extras["optimizer.m.split.weight"])
    with numerics.no_grad():
        np.testing.assert_array_equal(
            loaded.model.forward([5, 2, 8]).data, net.forward([5, 2, 8]).data)


def test_truncated_checkpoint_fails_loudly(net, tmp_path):
    path = tmp_path / "model.ckpt"
    M.save_checkpoint(path, net)
    raw = path.read_bytes()
    path.write_bytes(raw[:-64])
    with pytest.raises(CheckpointError, match="truncated"):
        M.load_checkpoint(path)


def test_wrong_magic_fails(net, tmp_path):
    path = tmp_path / "model.ckpt"
    M.save_checkpoint(path, net)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(CheckpointError):
        M.load_checkpoint(path)


def _rewrite_header(path, mutate):
    raw = path.read_bytes()
    nl = raw.index(b"\n")
    header_len = int(raw[:nl].split()[1])
    header = json.loads(raw[nl + 1 : nl + 1 + header_len])
    blob = raw[nl + 2 + header_len :]
    mutate(header)
    out = json.dumps(header, sort_keys=True).encode()
    path.write_bytes(f"{M.CHECKPOINT_MAGIC} {len(out)}\n".encode() + out + b"\n" + blob)


def test_manifest_shape_mismatch_is_rejected(net, tmp_path):
    path = tmp_path / "model.ckpt"
    M.save_checkpoint(path, net)

    def mutate(header):
        entry = next(e for e in header["manifest"] if e["name"] == "split.bias")
        entry["shape"] = [entry["shape"][0] - 1]

    _rewrite_header(path, mutate)
    with pytest.raises(CheckpointError, match="split.bias"):
        M.load_checkpoint(path)


def test_missing_parameter_is_rejected(net, tmp_path):
    path = tmp_path / "model.ckpt"
    M.save_checkpoint(path, net)
    _rewrite_header(
        path, lambda h: h["manifest"].remove(
            next(e for e in h["manifest"] if e["name"] == "output.bias"))
    )
    with pytest.raises(CheckpointError, match="output.bias"):
        M.load_checkpoint(path)
