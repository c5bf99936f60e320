"""Note-compressing asymmetric encoder-decoder in plain numpy.

The encoder never attends over tokens: each note's eight token embeddings are
projected per slot and summed into one vector, so encoder self-attention runs
over ``N / 8`` positions. The decoder is token-level and causal, and
cross-attends to the note-level memory.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tokenizer import TOKENS_PER_NOTE, VOCAB_SIZE
from . import layers as L


class ModelError(ValueError):
    pass


class InvalidConfig(ModelError):
    pass


class BadShape(ModelError):
    pass


class EmptyMask(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 32
    ffn_size: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 1
    head_dim: int = 8
    vocab_size: int = VOCAB_SIZE
    max_seq_len: int = 4096
    compression_factor: int = TOKENS_PER_NOTE
    seed: int = 0

    @property
    def heads(self) -> int:
        return self.hidden_size // self.head_dim

    def validate(self) -> None:
        for name in ("hidden_size", "ffn_size", "head_dim", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.encoder_layers < 0 or self.decoder_layers < 1:
            raise InvalidConfig("need encoder_layers >= 0 and decoder_layers >= 1")
        if self.hidden_size % self.head_dim:
            raise InvalidConfig(f"hidden_size {self.hidden_size} not divisible by head_dim {self.head_dim}")
        if self.head_dim % 2:
            raise InvalidConfig("head_dim must be even for rotary positions")
        if self.compression_factor != TOKENS_PER_NOTE:
            raise InvalidConfig(f"compression_factor must equal {TOKENS_PER_NOTE}")
        if self.vocab_size != VOCAB_SIZE:
            raise InvalidConfig(f"vocab_size must equal {VOCAB_SIZE}")


TOY_CONFIG = ModelConfig()
FULL_CONFIG = ModelConfig(hidden_size=768, ffn_size=3072, encoder_layers=10, decoder_layers=2, head_dim=128)

_ATTN = ("wq", "wk", "wv", "wo")
_FFN = ("w_gate", "w_up", "w_down")


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter tensor in declaration order (also the checkpoint order)."""
    d, f, v = config.hidden_size, config.ffn_size, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "embed": (v, d),
        "aggregate": (TOKENS_PER_NOTE, d, d),
    }
    for i in range(config.encoder_layers):
        p = f"enc.{i}."
        shapes[p + "attn_norm"] = (d,)
        shapes.update({p + "attn." + w: (d, d) for w in _ATTN})
        shapes[p + "ffn_norm"] = (d,)
        shapes.update({p + "ffn.w_gate": (d, f), p + "ffn.w_up": (d, f), p + "ffn.w_down": (f, d)})
    shapes["enc.final_norm"] = (d,)
    for i in range(config.decoder_layers):
        p = f"dec.{i}."
        shapes[p + "self_norm"] = (d,)
        shapes.update({p + "self." + w: (d, d) for w in _ATTN})
        shapes[p + "cross_norm"] = (d,)
        shapes.update({p + "cross." + w: (d, d) for w in _ATTN})
        shapes[p + "ffn_norm"] = (d,)
        shapes.update({p + "ffn.w_gate": (d, f), p + "ffn.w_up": (d, f), p + "ffn.w_down": (f, d)})
    shapes["dec.final_norm"] = (d,)
    shapes["lm_head"] = (d, v)
    return shapes


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(repr=False)

    @property
    def dtype(self):
        return self.params["embed"].dtype

    def astype(self, dtype) -> "Model":
        return Model(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})


def init(config: ModelConfig, seed: int | None = None, dtype=np.float32) -> Model:
    """Seeded initialization; identical (config, seed) gives identical tensors.

    Norm gains start at 1, the token embedding at unit variance, and every
    projection at variance ``1 / fan_in`` (the aggregation at ``1 / (8 d)``).
    """
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if len(shape) == 1:
            w = np.ones(shape)
        elif name == "embed":
            w = rng.standard_normal(shape)
        elif name == "aggregate":
            w = rng.standard_normal(shape) / np.sqrt(shape[0] * shape[1])
        else:
            w = rng.standard_normal(shape) / np.sqrt(shape[0])
        params[name] = w.astype(dtype)
    return Model(config, params)


def aggregate_notes(embeddings: np.ndarray, slot_matrices: np.ndarray) -> np.ndarray:
    """Sum of per-slot projections: ``memory[n] = sum_s embeddings[n, s] @ slot_matrices[s]``."""
    embeddings = np.asarray(embeddings)
    if embeddings.ndim == 2:
        if embeddings.shape[0] % TOKENS_PER_NOTE:
            raise BadShape(f"{embeddings.shape[0]} token embeddings do not split into notes of 8")
        embeddings = embeddings.reshape(-1, TOKENS_PER_NOTE, embeddings.shape[-1])
    if embeddings.ndim != 3 or embeddings.shape[1] != TOKENS_PER_NOTE:
        raise BadShape(f"expected (N, 8, d) embeddings, got {embeddings.shape}")
    if slot_matrices.shape != (TOKENS_PER_NOTE, embeddings.shape[2], slot_matrices.shape[2]):
        raise BadShape(f"slot matrices {slot_matrices.shape} do not match embeddings {embeddings.shape}")
    return np.einsum("nsd,sde->ne", embeddings, slot_matrices)


def _check_tokens(model: Model, enc, dec):
    enc = np.asarray(enc, dtype=np.int64)
    dec = np.asarray(dec, dtype=np.int64)
    cfg = model.config
    if enc.ndim != 1 or len(enc) == 0 or len(enc) % TOKENS_PER_NOTE:
        raise BadShape(f"encoder length {enc.shape} must be a positive multiple of {TOKENS_PER_NOTE}")
    if len(enc) > cfg.max_seq_len:
        raise BadShape(f"encoder length {len(enc)} exceeds max_seq_len {cfg.max_seq_len}")
    if dec.ndim != 1 or len(dec) < 1:
        raise BadShape("decoder input needs at least one token")
    if len(dec) > cfg.max_seq_len + 2:
        raise BadShape(f"decoder length {len(dec)} exceeds max_seq_len + 2")
    for arr in (enc, dec):
        if arr.min() < 0 or arr.max() >= cfg.vocab_size:
            raise BadShape("token id outside the vocabulary")
    return enc, dec


def _forward(model: Model, enc, dec):
    p = model.params
    cfg = model.config
    heads = cfg.heads
    dt = model.dtype
    caches: dict = {}

    # encoder over note vectors
    emb = p["embed"][enc].reshape(-1, TOKENS_PER_NOTE, cfg.hidden_size)
    h = aggregate_notes(emb, p["aggregate"])
    caches["agg_in"] = emb
    n_notes = h.shape[0]
    rope_enc = L.rope_tables(np.arange(n_notes), cfg.head_dim, dt)
    attn_maps = []
    for i in range(cfg.encoder_layers):
        pre = f"enc.{i}."
        x1, c_n1 = L.rms_norm_forward(h, p[pre + "attn_norm"])
        a, c_a = L.attention_forward(
            x1, x1, *(p[pre + "attn." + w] for w in _ATTN), heads, rope_q=rope_enc, rope_k=rope_enc
        )
        attn_maps.append(c_a[5])
        h = h + a
        x2, c_n2 = L.rms_norm_forward(h, p[pre + "ffn_norm"])
        f, c_f = L.ffn_forward(x2, *(p[pre + "ffn." + w] for w in _FFN))
        h = h + f
        caches[pre] = (c_n1, c_a, c_n2, c_f)
    memory, caches["enc_final"] = L.rms_norm_forward(h, p["enc.final_norm"])

    # token-level causal decoder
    x = p["embed"][dec]
    rope_dec = L.rope_tables(np.arange(len(dec)), cfg.head_dim, dt)
    for i in range(cfg.decoder_layers):
        pre = f"dec.{i}."
        y1, c_n1 = L.rms_norm_forward(x, p[pre + "self_norm"])
        a, c_a = L.attention_forward(
            y1, y1, *(p[pre + "self." + w] for w in _ATTN), heads, causal=True, rope_q=rope_dec, rope_k=rope_dec
        )
        attn_maps.append(c_a[5])
        x = x + a
        y2, c_n2 = L.rms_norm_forward(x, p[pre + "cross_norm"])
        c, c_c = L.attention_forward(y2, memory, *(p[pre + "cross." + w] for w in _ATTN), heads)
        attn_maps.append(c_c[5])
        x = x + c
        y3, c_n3 = L.rms_norm_forward(x, p[pre + "ffn_norm"])
        f, c_f = L.ffn_forward(y3, *(p[pre + "ffn." + w] for w in _FFN))
        x = x + f
        caches[pre] = (c_n1, c_a, c_n2, c_c, c_n3, c_f)
    z, caches["dec_final"] = L.rms_norm_forward(x, p["dec.final_norm"])
    logits = z @ p["lm_head"]
    caches["z"] = z
    caches["attn_maps"] = attn_maps
    caches["memory"] = memory
    return logits, caches


def forward(model: Model, encoder_tokens, decoder_tokens) -> np.ndarray:
    """Logits of shape ``(len(decoder_tokens), vocab)``.

    Row ``t`` scores the token that follows ``decoder_tokens[: t + 1]``.
    """
    enc, dec = _check_tokens(model, encoder_tokens, decoder_tokens)
    return _forward(model, enc, dec)[0]


def encode_memory(model: Model, encoder_tokens) -> np.ndarray:
    """Note-level encoder output, one row per note."""
    enc, _ = _check_tokens(model, encoder_tokens, [0])
    return _forward(model, enc, np.zeros(1, dtype=np.int64))[1]["memory"]


def attention_maps(model: Model, encoder_tokens, decoder_tokens) -> list[np.ndarray]:
    """Softmax maps ``(heads, queries, keys)`` of every attention layer in execution order."""
    enc, dec = _check_tokens(model, encoder_tokens, decoder_tokens)
    return _forward(model, enc, dec)[1]["attn_maps"]


@dataclass(frozen=True)
class LossReport:
    loss: float
    nll: np.ndarray
    count: int


def loss(logits: np.ndarray, targets, loss_mask) -> LossReport:
    """Mean negative log-likelihood over positions where ``loss_mask`` is set.

    ``logits[t]`` is scored against ``targets[t]``; all three must align.
    """
    targets = np.asarray(targets, dtype=np.int64)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    if logits.ndim != 2 or logits.shape[0] != len(targets) or len(targets) != len(loss_mask):
        raise BadShape(f"logits {logits.shape}, targets {targets.shape}, mask {loss_mask.shape} disagree")
    count = int(loss_mask.sum())
    if count == 0:
        raise EmptyMask("loss mask selects no positions")
    logp = L.log_softmax(logits.astype(np.float64, copy=False))
    nll = -logp[np.arange(len(targets)), targets]
    return LossReport(float(nll[loss_mask].mean()), nll, count)


def teacher_forcing(decoder_target, loss_mask):
    """Split a BOS-framed target into (decoder input, labels, label mask)."""
    decoder_target = np.asarray(decoder_target, dtype=np.int64)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    return decoder_target[:-1], decoder_target[1:], loss_mask[1:]


def example_loss(model: Model, example) -> LossReport:
    dec_in, labels, mask = teacher_forcing(example.decoder_target, example.loss_mask)
    return loss(forward(model, example.encoder_input, dec_in), labels, mask)


def backward(model: Model, example, loss_scale: float = 1.0) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Loss and analytic gradients of ``loss_scale * loss`` for every parameter.

    ``example`` needs ``encoder_input``, ``decoder_target`` (BOS-framed) and
    ``loss_mask`` aligned with the target.
    """
    dec_in, labels, mask = teacher_forcing(example.decoder_target, example.loss_mask)
    enc, dec = _check_tokens(model, example.encoder_input, dec_in)
    logits, caches = _forward(model, enc, dec)
    report = loss(logits, labels, mask)

    p = model.params
    cfg = model.config
    dt = model.dtype
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    probs = np.exp(L.log_softmax(logits))
    probs[np.arange(len(labels)), labels] -= 1.0
    dlogits = (probs * (mask[:, None] * (loss_scale / report.count))).astype(dt)

    grads["lm_head"] = caches["z"].T @ dlogits
    dz = dlogits @ p["lm_head"].T
    dx, grads["dec.final_norm"] = L.rms_norm_backward(dz, caches["dec_final"])
    dmemory = np.zeros_like(caches["memory"])
    for i in reversed(range(cfg.decoder_layers)):
        pre = f"dec.{i}."
        c_n1, c_a, c_n2, c_c, c_n3, c_f = caches[pre]
        dy3, *dw = L.ffn_backward(dx, c_f)
        _accumulate(grads, pre + "ffn.", _FFN, dw)
        d, grads[pre + "ffn_norm"] = L.rms_norm_backward(dy3, c_n3)
        dx = dx + d
        dy2, dmem, *dw = L.attention_backward(dx, c_c)
        _accumulate(grads, pre + "cross.", _ATTN, dw)
        dmemory += dmem
        d, grads[pre + "cross_norm"] = L.rms_norm_backward(dy2, c_n2)
        dx = dx + d
        dq, dkv, *dw = L.attention_backward(dx, c_a)
        _accumulate(grads, pre + "self.", _ATTN, dw)
        d, grads[pre + "self_norm"] = L.rms_norm_backward(dq + dkv, c_n1)
        dx = dx + d
    np.add.at(grads["embed"], dec, dx)

    dh, grads["enc.final_norm"] = L.rms_norm_backward(dmemory, caches["enc_final"])
    for i in reversed(range(cfg.encoder_layers)):
        pre = f"enc.{i}."
        c_n1, c_a, c_n2, c_f = caches[pre]
        dy2, *dw = L.ffn_backward(dh, c_f)
        _accumulate(grads, pre + "ffn.", _FFN, dw)
        d, grads[pre + "ffn_norm"] = L.rms_norm_backward(dy2, c_n2)
        dh = dh + d
        dq, dkv, *dw = L.attention_backward(dh, c_a)
        _accumulate(grads, pre + "attn.", _ATTN, dw)
        d, grads[pre + "attn_norm"] = L.rms_norm_backward(dq + dkv, c_n1)
        dh = dh + d
    emb = caches["agg_in"]
    grads["aggregate"] = np.einsum("nsd,ne->sde", emb, dh)
    demb = np.einsum("ne,sde->nsd", dh, p["aggregate"]).reshape(-1, cfg.hidden_size)
    np.add.at(grads["embed"], enc, demb)
    return report, grads


def _accumulate(grads, prefix, names, values):
    for name, g in zip(names, values):
        grads[prefix + name] += g
