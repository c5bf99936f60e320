import math

import numpy as np
import pytest

from pianist import model as M
from pianist import tokenizer as tk
from pianist.model import checkpoint
from pianist.model import layers as L

from conftest import random_piece


def toy(dtype=np.float64, seed=7, **kw):
    return M.init(M.ModelConfig(**kw), seed, dtype=dtype)


def random_example(rng, notes=3, ratio=0.3):
    seq = tk.encode(random_piece(rng, n_notes=notes))
    return tk.corrupt_for_pretraining(seq, ratio, int(rng.integers(1 << 30)))


def finite_difference(model, example, name, idx, h=1e-4):
    w = model.params[name]
    old = w[idx]
    w[idx] = old + h
    up = M.example_loss(model, example).loss
    w[idx] = old - h
    down = M.example_loss(model, example).loss
    w[idx] = old
    return (up - down) / (2 * h)


def test_init_deterministic():
    a, b = toy(seed=7), toy(seed=7)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = toy(seed=8)
    assert not np.array_equal(a.params["embed"], c.params["embed"])


def test_init_invalid_config():
    with pytest.raises(M.InvalidConfig):
        M.init(M.ModelConfig(hidden_size=30, head_dim=8))
    with pytest.raises(M.InvalidConfig):
        M.init(M.ModelConfig(compression_factor=4))


def test_full_config_initializes():
    m = M.init(M.FULL_CONFIG, 0)
    assert sum(v.size for v in m.params.values()) == M.count_parameters(M.FULL_CONFIG)
    assert all(np.isfinite(v).all() for v in m.params.values())


def test_aggregate_zero_and_identity():
    d = 5
    assert np.all(M.aggregate_notes(np.zeros((2, 8, d)), np.ones((8, d, d))) == 0)
    emb = np.random.default_rng(0).standard_normal((1, 8, d))
    eye = np.stack([np.eye(d)] * 8)
    np.testing.assert_allclose(M.aggregate_notes(emb, eye)[0], emb[0].sum(axis=0))


def test_aggregate_matches_dense_oracle():
    rng = np.random.default_rng(1)
    n, d = 3, 4
    emb = rng.standard_normal((n, 8, d))
    slots = rng.standard_normal((8, d, d))
    # concatenate-then-project with one (8d x d) matrix, element by element
    big = slots.reshape(8 * d, d)
    oracle = np.zeros((n, d))
    for i in range(n):
        flat = emb[i].reshape(-1)
        for e in range(d):
            oracle[i, e] = sum(flat[j] * big[j, e] for j in range(8 * d))
    np.testing.assert_allclose(M.aggregate_notes(emb, slots), oracle, atol=1e-12, rtol=0)


def test_aggregate_bad_shape():
    with pytest.raises(M.BadShape):
        M.aggregate_notes(np.zeros((12, 4)), np.zeros((8, 4, 4)))


def test_forward_shape():
    m = toy(np.float32)
    logits = M.forward(m, tk.encode(random_piece(np.random.default_rng(0), n_notes=2)), [tk.BOS, 5, 261, 133, 261])
    assert logits.shape == (5, 5389)


def test_forward_bad_shapes():
    m = toy(np.float32)
    with pytest.raises(M.BadShape):
        M.forward(m, np.arange(12) + 5, [tk.BOS])
    with pytest.raises(M.BadShape):
        M.forward(m, np.arange(16) + 5, [])
    with pytest.raises(M.BadShape):
        M.forward(m, np.arange(16) + 5, [9999])


def test_causality(rng):
    m = toy()
    enc = tk.encode(random_piece(rng, n_notes=3))
    dec = np.concatenate([[tk.BOS], enc[:11]])
    base = M.forward(m, enc, dec)
    changed = dec.copy()
    changed[7:] = tk.PEDAL_BASE + 100
    other = M.forward(m, enc, changed)
    np.testing.assert_array_equal(base[:7], other[:7])
    assert not np.allclose(base[7:], other[7:])


def test_memory_rows_follow_note_frames(rng):
    m = toy(encoder_layers=0)
    enc = tk.encode(random_piece(rng, n_notes=4))
    frames = enc.reshape(-1, 8)
    swapped = frames[[2, 1, 0, 3]].reshape(-1)
    # without encoder layers there is no positional term before the memory
    a, b = M.encode_memory(m, enc), M.encode_memory(m, swapped)
    np.testing.assert_allclose(b, a[[2, 1, 0, 3]], rtol=1e-12, atol=1e-12)
    assert a.shape == (4, m.config.hidden_size)


@pytest.mark.parametrize("notes", [1, 2, 5, 9])
def test_memory_rows_equal_notes(notes):
    m = toy(np.float32)
    enc = tk.encode(random_piece(np.random.default_rng(notes), n_notes=notes))
    assert M.encode_memory(m, enc).shape[0] == len(enc) // 8


def test_attention_rows_sum_to_one(rng):
    m = toy(np.float32)
    enc = tk.encode(random_piece(rng, n_notes=4))
    for p in M.attention_maps(m, enc, np.concatenate([[tk.BOS], enc])):
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)


def test_uniform_logits_loss():
    logits = np.zeros((6, 5389))
    report = M.loss(logits, np.arange(6) + 10, np.array([1, 0, 1, 1, 0, 1], bool))
    assert report.loss == pytest.approx(math.log(5389), abs=1e-12)
    assert report.count == 4
    assert math.log(5389) == pytest.approx(8.592, abs=1e-3)


def test_loss_empty_mask():
    with pytest.raises(M.EmptyMask):
        M.loss(np.zeros((2, 5389)), [0, 1], [False, False])


def test_loss_confident_limit():
    logits = np.zeros((3, 5389))
    targets = [7, 8, 9]
    logits[np.arange(3), targets] = 1e4
    assert M.loss(logits, targets, [True] * 3).loss < 1e-12


def test_loss_ignores_unmasked_positions(rng):
    logits = rng.standard_normal((5, 5389))
    mask = np.array([0, 1, 0, 1, 1], bool)
    ref = M.loss(logits, [1, 2, 3, 4, 5], mask).loss
    logits[~mask] = rng.standard_normal((2, 5389)) * 50
    assert M.loss(logits, [1, 2, 3, 4, 5], mask).loss == ref


def test_gradient_matches_finite_differences(rng):
    m = toy()
    ex = random_example(rng)
    _, grads = M.backward(m, ex)
    names = list(m.params)
    worst = 0.0
    for _ in range(60):
        name = names[rng.integers(len(names))]
        idx = tuple(int(rng.integers(s)) for s in m.params[name].shape)
        fd = finite_difference(m, ex, name, idx)
        an = grads[name][idx]
        scale = max(abs(fd), abs(an))
        if scale > 1e-9:
            worst = max(worst, abs(fd - an) / scale)
    assert worst <= 1e-4


def test_unused_rows_have_zero_gradient(rng):
    m = toy()
    ex = random_example(rng)
    _, grads = M.backward(m, ex)
    assert tk.PLAY not in ex.encoder_input and tk.PLAY not in ex.decoder_target
    assert np.all(grads["embed"][tk.PLAY] == 0)
    assert np.all(grads["embed"][tk.PAD] == 0)


def test_loss_scale_doubles_gradients(rng):
    m = toy()
    ex = random_example(rng)
    _, g1 = M.backward(m, ex)
    _, g2 = M.backward(m, ex, loss_scale=2.0)
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=0)


def test_layer_gradients_standalone(rng):
    # each primitive checked on its own with random upstream gradients
    x = rng.standard_normal((4, 6))
    g = rng.standard_normal(6)
    dy = rng.standard_normal((4, 6))

    def num(f, arr, eps=1e-6):
        out = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + eps
            up = f()
            arr[i] = old - eps
            down = f()
            arr[i] = old
            out[i] = (up - down) / (2 * eps)
        return out

    y, cache = L.rms_norm_forward(x, g)
    dx, dg = L.rms_norm_backward(dy, cache)
    np.testing.assert_allclose(dx, num(lambda: np.sum(L.rms_norm_forward(x, g)[0] * dy), x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dg, num(lambda: np.sum(L.rms_norm_forward(x, g)[0] * dy), g), rtol=1e-6, atol=1e-8)

    a = rng.standard_normal(20) * 3
    np.testing.assert_allclose(L.gelu_grad(a), (L.gelu(a + 1e-6) - L.gelu(a - 1e-6)) / 2e-6, rtol=1e-6, atol=1e-8)

    cos, sin = L.rope_tables(np.arange(4), 4, np.float64)
    h = rng.standard_normal((4, 2, 4))
    dh = rng.standard_normal((4, 2, 4))
    np.testing.assert_allclose(L.rope_unapply(dh, cos, sin),
                               num(lambda: np.sum(L.rope_apply(h, cos, sin) * dh), h), rtol=1e-6, atol=1e-8)


def test_checkpoint_roundtrip(tmp_path):
    m = toy(np.float32)
    path = tmp_path / "toy.ckpt"
    checkpoint.save(m, path)
    data = path.read_bytes()
    assert data[:4] == b"PTCK" and data[4] == 1
    back = checkpoint.load(path)
    assert back.config == m.config
    assert list(back.params) == list(m.params)
    assert all(np.array_equal(back.params[k], m.params[k]) for k in m.params)


def test_checkpoint_bad_magic():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"NOPE" + b"\x00" * 20)
