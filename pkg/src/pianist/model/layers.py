"""Forward/backward pairs for the transformer building blocks.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache and returns input and parameter
gradients. Arrays are 2-D ``(positions, features)`` unless noted.
"""
from __future__ import annotations

import math

import numpy as np

RMS_EPS = 1e-6
ROPE_BASE = 10000.0
_GELU_C = math.sqrt(2.0 / math.pi)


def rms_norm_forward(x, gain, eps=RMS_EPS):
    r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    xh = x / r
    return xh * gain, (xh, r, gain)


def rms_norm_backward(dy, cache):
    xh, r, gain = cache
    dgain = np.sum(dy * xh, axis=0)
    dxh = dy * gain
    dx = (dxh - xh * np.mean(dxh * xh, axis=-1, keepdims=True)) / r
    return dx, dgain


def gelu(a):
    return 0.5 * a * (1.0 + np.tanh(_GELU_C * (a + 0.044715 * a**3)))


def gelu_grad(a):
    t = np.tanh(_GELU_C * (a + 0.044715 * a**3))
    return 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * a * a)


def ffn_forward(x, w_gate, w_up, w_down):
    """Gated feed-forward: ``(gelu(x W_gate) * (x W_up)) W_down``."""
    a = x @ w_gate
    b = x @ w_up
    ga = gelu(a)
    h = ga * b
    return h @ w_down, (x, a, b, ga, h, w_gate, w_up, w_down)


def ffn_backward(dy, cache):
    x, a, b, ga, h, w_gate, w_up, w_down = cache
    dw_down = h.T @ dy
    dh = dy @ w_down.T
    da = dh * b * gelu_grad(a)
    db = dh * ga
    dx = da @ w_gate.T + db @ w_up.T
    return dx, x.T @ da, x.T @ db, dw_down


def rope_tables(positions, head_dim, dtype):
    half = head_dim // 2
    inv_freq = ROPE_BASE ** (-np.arange(half, dtype=np.float64) / half)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq
    return np.cos(ang)[:, None, :].astype(dtype), np.sin(ang)[:, None, :].astype(dtype)


def rope_apply(x, cos, sin):
    """Rotate (T, H, hd) vectors; first and second halves form the pairs."""
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


def rope_unapply(dy, cos, sin):
    return rope_apply(dy, cos, -sin)


def attention_forward(xq, xkv, wq, wk, wv, wo, heads, causal=False, rope_q=None, rope_k=None):
    """Multi-head scaled dot-product attention with optional rotary positions.

    ``rope_q``/``rope_k`` are ``(cos, sin)`` tables or None.
    """
    tq, tk = xq.shape[0], xkv.shape[0]
    hd = wq.shape[1] // heads
    q = (xq @ wq).reshape(tq, heads, hd)
    k = (xkv @ wk).reshape(tk, heads, hd)
    v = (xkv @ wv).reshape(tk, heads, hd)
    if rope_q is not None:
        q = rope_apply(q, *rope_q)
    if rope_k is not None:
        k = rope_apply(k, *rope_k)
    scale = 1.0 / math.sqrt(hd)
    s = np.einsum("qhd,khd->hqk", q, k) * scale
    if causal:
        s = np.where(np.tri(tq, tk, dtype=bool), s, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    o = np.einsum("hqk,khd->qhd", p, v).reshape(tq, heads * hd)
    cache = (xq, xkv, q, k, v, p, o, wq, wk, wv, wo, heads, scale, rope_q, rope_k)
    return o @ wo, cache


def attention_backward(dy, cache):
    xq, xkv, q, k, v, p, o, wq, wk, wv, wo, heads, scale, rope_q, rope_k = cache
    tq, tk = xq.shape[0], xkv.shape[0]
    hd = q.shape[-1]
    dwo = o.T @ dy
    do = (dy @ wo.T).reshape(tq, heads, hd)
    dp = np.einsum("qhd,khd->hqk", do, v)
    dv = np.einsum("hqk,qhd->khd", p, do)
    ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) * scale
    dq = np.einsum("hqk,khd->qhd", ds, k)
    dk = np.einsum("hqk,qhd->khd", ds, q)
    if rope_q is not None:
        dq = rope_unapply(dq, *rope_q)
    if rope_k is not None:
        dk = rope_unapply(dk, *rope_k)
    dq = dq.reshape(tq, -1)
    dk = dk.reshape(tk, -1)
    dv = dv.reshape(tk, -1)
    dxq = dq @ wq.T
    dxkv = dk @ wk.T + dv @ wv.T
    return dxq, dxkv, xq.T @ dq, xkv.T @ dk, xkv.T @ dv, dwo


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
