import math
import struct

import numpy as np
import pytest
import torch

from polyglot_probe.errors import InputError
from polyglot_probe.model import (
    CheckpointError,
    ModelConfig,
    ShapeMismatchError,
    TrainConfig,
    forward_batch,
    forward_with_taps,
    gradient_check,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from polyglot_probe.model.checkpoint import checkpoint_bytes, load_checkpoint_bytes
from polyglot_probe.synthetic import training_sequences, translation_tasks


def test_same_seed_same_weights():
    a = init_model(ModelConfig(seed=7))
    b = init_model(ModelConfig(seed=7))
    for (n1, p1), (n2, p2) in zip(a.named_parameters(), b.named_parameters()):
        assert n1 == n2
        assert torch.equal(p1, p2)


def test_different_seed_differs():
    a = init_model(ModelConfig(seed=7))
    b = init_model(ModelConfig(seed=8))
    assert any(not torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


def test_init_ranges():
    cfg = ModelConfig(d_model=16, n_heads=2, d_ff=8, vocab_size=10, seed=2)
    m = init_model(cfg)
    bound = 1 / math.sqrt(16)
    for name, p in m.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("W_"):
            assert p.abs().max() <= bound
        elif leaf == "w":
            assert torch.all(p == 1)
        else:
            assert torch.all(p == 0)


@pytest.mark.parametrize(
    "kwargs, needle",
    [
        ({"d_model": 10, "n_heads": 3}, "n_heads"),
        ({"n_layers": 0}, "n_layers"),
        ({"vocab_size": 1}, "vocab_size"),
        ({"ffn_kind": "gelu"}, "ffn_kind"),
        ({"seed": -1}, "seed"),
    ],
)
def test_config_rejects(kwargs, needle):
    with pytest.raises(InputError, match=needle):
        init_model(ModelConfig(**kwargs))


def test_zero_model_is_uniform():
    cfg = ModelConfig(n_layers=1, d_model=2, n_heads=1, d_ff=2, vocab_size=5, max_seq_len=4)
    m = init_model(cfg)
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()
    out = forward_with_taps(m, [0, 3, 1])
    np.testing.assert_allclose(out.probs, 1 / 5, atol=1e-12)


def test_trace_shapes(tiny_model):
    cfg = tiny_model.config
    out = forward_with_taps(tiny_model, [1, 5, 6, 7])
    assert out.residual.resid.shape == (cfg.n_layers + 1, 4, cfg.d_model)
    assert out.residual.final.shape == (4, cfg.d_model)
    assert out.activations.values.shape == (cfg.n_layers, 4, cfg.d_ff)
    np.testing.assert_allclose(out.probs.sum(-1), 1.0, atol=1e-9)


def test_padding_does_not_leak(tiny_model):
    short = [1, 5, 6]
    alone = forward_with_taps(tiny_model, short)
    batched = forward_batch(tiny_model, [short, [1, 5, 6, 7, 8, 9]])[0]
    np.testing.assert_allclose(alone.probs, batched.probs, rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(alone.residual.resid, batched.residual.resid, rtol=1e-5, atol=1e-6)


def test_content_mask(tiny_model):
    out = forward_batch(tiny_model, [[1, 5, 6]], content_from=1)[0]
    assert out.activations.mask.tolist() == [False, True, True]


@pytest.mark.parametrize("tokens, needle", [([], "empty"), ([1, 10_000], "out of range"), ([1] * 65, "max_seq_len")])
def test_forward_rejects(tiny_model, tokens, needle):
    with pytest.raises(InputError, match=needle):
        forward_with_taps(tiny_model, tokens)


def test_gated_ffn_runs():
    m = init_model(ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=4, vocab_size=6, ffn_kind="gated-silu"))
    out = forward_with_taps(m, [0, 1, 2])
    assert out.activations.gate.shape == out.activations.values.shape
    assert not np.array_equal(out.activations.gate, out.activations.values)


# --- checkpoint -------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, tiny_model):
    path = tmp_path / "m.ttlm"
    save_checkpoint(tiny_model, path)
    back = load_checkpoint(path)
    assert back.config == tiny_model.config
    for p, q in zip(tiny_model.parameters(), back.parameters()):
        assert torch.equal(p, q)
    assert checkpoint_bytes(back) == path.read_bytes()


def test_checkpoint_bad_magic(tiny_model):
    data = b"XXXX" + checkpoint_bytes(tiny_model)[4:]
    with pytest.raises(CheckpointError, match="TTLM"):
        load_checkpoint_bytes(data)


def _drop_tensor(data: bytes, cfg: ModelConfig, victim: int) -> bytes:
    """Rewrite a checkpoint without its ``victim``-th tensor."""
    pos = 8
    (clen,) = struct.unpack_from("<I", data, pos)
    pos += 4 + clen
    (count,) = struct.unpack_from("<I", data, pos)
    head = data[:pos] + struct.pack("<I", count - 1)
    pos += 4
    chunks = []
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4 + nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        dims = struct.unpack_from(f"<{ndim}I", data, pos + 4)
        pos += 4 + 4 * ndim + 4 * int(np.prod(dims))
        chunks.append(data[start:pos])
    del chunks[victim]
    return head + b"".join(chunks)


def test_checkpoint_missing_tensor_named(tiny_model):
    names = [n for n, _ in tiny_model.named_parameters()]
    data = _drop_tensor(checkpoint_bytes(tiny_model), tiny_model.config, 3)
    with pytest.raises(ShapeMismatchError, match=names[3]):
        load_checkpoint_bytes(data)


def test_checkpoint_missing_last_tensor(tiny_model):
    names = [n for n, _ in tiny_model.named_parameters()]
    data = _drop_tensor(checkpoint_bytes(tiny_model), tiny_model.config, len(names) - 1)
    with pytest.raises(ShapeMismatchError, match=f"missing tensor {names[-1]}"):
        load_checkpoint_bytes(data)


def test_checkpoint_truncated(tiny_model):
    with pytest.raises(CheckpointError):
        load_checkpoint_bytes(checkpoint_bytes(tiny_model)[:-3])


def test_checkpoint_trailing_bytes(tiny_model):
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint_bytes(checkpoint_bytes(tiny_model) + b"\0")


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(InputError):
        load_checkpoint(tmp_path / "nope.ttlm")


# --- training ---------------------------------------------------------------


def test_training_reduces_heldout_loss(lexicon):
    langs = list(lexicon.lexicons)
    seqs = training_sequences(translation_tasks(langs, 12, 300, seed=4), lexicon.lexicons, lexicon.vocab)
    cfg = ModelConfig(n_layers=2, d_model=32, n_heads=2, d_ff=64, vocab_size=len(lexicon.vocab), seed=0)
    res = train(init_model(cfg), seqs, TrainConfig(steps=150, lr=3e-3, batch=16, seed=0, warmup=20))
    assert res.final_heldout_loss < res.initial_heldout_loss
    assert len(res.losses) == 150


def test_training_is_reproducible(lexicon):
    langs = list(lexicon.lexicons)
    seqs = training_sequences(translation_tasks(langs, 12, 50, seed=4), lexicon.lexicons, lexicon.vocab)
    cfg = ModelConfig(n_layers=1, d_model=16, n_heads=2, d_ff=16, vocab_size=len(lexicon.vocab), seed=0)
    hyper = TrainConfig(steps=10, batch=4, seed=9)
    a = train(init_model(cfg), seqs, hyper)
    b = train(init_model(cfg), seqs, hyper)
    assert checkpoint_bytes(a.model) == checkpoint_bytes(b.model)
    assert a.losses == b.losses


def test_zero_steps_returns_unchanged(tiny_model, lexicon):
    seqs = [[1, 5, 6, 7]] * 4
    res = train(tiny_model, seqs, TrainConfig(steps=0))
    assert checkpoint_bytes(res.model) == checkpoint_bytes(tiny_model)
    assert res.losses == []


@pytest.mark.parametrize("corpus", [[], [[1]], [[1, 10_000]]])
def test_training_rejects_bad_corpus(tiny_model, corpus):
    with pytest.raises(InputError):
        train(tiny_model, corpus, TrainConfig(steps=1))


@pytest.mark.parametrize("kind", ["relu", "gated-silu"])
def test_gradient_check(kind):
    cfg = ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=16, vocab_size=12, max_seq_len=8, ffn_kind=kind, seed=5)
    res = gradient_check(init_model(cfg), [1, 4, 7, 2, 9], n_samples=48)
    assert res.applicable
    assert res.max_rel_error < 1e-4


def test_gradient_check_single_token():
    res = gradient_check(init_model(ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=8, vocab_size=5)), [1])
    assert not res.applicable and res.max_rel_error is None
