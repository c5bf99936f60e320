"""Pitch-constrained autoregressive rendering and overlapped block-wise stitching.

Any object with ``next_logits(encoder_tokens, decoder_prefix) -> (vocab,)``
can drive generation. ``decoder_prefix`` always starts with BOS and its
position ``1 + j`` corresponds to encoder token ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import model as M
from .tokenizer import (
    BOS,
    PEDAL_BASE,
    SLOT_RANGES,
    TIMING_BASE,
    TOKENS_PER_NOTE,
    VELOCITY_BASE,
    VOCAB_SIZE,
    strip_framing,
    validate_frames,
)


class IllegalLogits(ValueError):
    pass


class ModelFailure(RuntimeError):
    pass


class PerformanceModel(Protocol):
    def next_logits(self, encoder_tokens: np.ndarray, decoder_prefix: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class SamplingConfig:
    """``greedy`` (or ``top_k=1``) takes the arg-max, the temperature -> 0 limit."""

    temperature: float = 1.0
    top_k: int = 32
    seed: int = 0
    greedy: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError("temperature must be finite and positive")
        if not 1 <= self.top_k <= VOCAB_SIZE:
            raise ValueError(f"top_k must lie in 1..{VOCAB_SIZE}")


@dataclass(frozen=True)
class BlockConfig:
    window: int = 4096
    stride: int = 2048
    tail_drop_notes: int = 2

    def __post_init__(self):
        if self.window % TOKENS_PER_NOTE or self.stride % TOKENS_PER_NOTE:
            raise ValueError("window and stride must be multiples of 8")
        if not 0 < self.stride < self.window:
            raise ValueError("need 0 < stride < window")
        if self.tail_drop_notes < 0 or self.tail_drop_notes * TOKENS_PER_NOTE >= self.window - self.stride:
            raise ValueError("tail drop must be shorter than the overlap")

    @property
    def prompt_tokens(self) -> int:
        return self.window - self.stride - self.tail_drop_notes * TOKENS_PER_NOTE


class StubPerformer:
    """Context-free mechanical performer.

    Copies pitch, IOI and duration from the score, plays every note at
    velocity 64 and never touches the pedal. Logits are one-hot (0 on the
    chosen id, -1e9 elsewhere).
    """

    VELOCITY = 64

    def next_logits(self, encoder_tokens, decoder_prefix):
        pos = len(decoder_prefix) - 1
        frame, slot = divmod(pos, TOKENS_PER_NOTE)
        score_frame = np.asarray(encoder_tokens[frame * TOKENS_PER_NOTE:(frame + 1) * TOKENS_PER_NOTE])
        logits = np.full(VOCAB_SIZE, -1e9)
        logits[stub_predict(score_frame)[slot]] = 0.0
        return logits


def stub_predict(score_frame: Sequence[int]) -> np.ndarray:
    """Performance frame (ids) for one score frame under the stub rules."""
    pitch, ioi, _, dur = (int(t) for t in score_frame[:4])
    return np.array([pitch, ioi, VELOCITY_BASE + StubPerformer.VELOCITY, dur] + [PEDAL_BASE] * 4, dtype=np.int64)


def stub_render(score) -> np.ndarray:
    """Single-pass closed-form stub output for a whole score."""
    body = strip_framing(score)
    validate_frames(body)
    return np.concatenate([stub_predict(f) for f in body.reshape(-1, TOKENS_PER_NOTE)]) if len(body) else body


class TransformerPerformer:
    """Adapter exposing a :class:`pianist.model.Model` as a PerformanceModel."""

    def __init__(self, model: M.Model):
        self.model = model

    def next_logits(self, encoder_tokens, decoder_prefix):
        return M.forward(self.model, encoder_tokens, decoder_prefix)[-1]


def sample_token(logits: np.ndarray, slot: int, sampling: SamplingConfig, rng: np.random.Generator) -> int:
    """Sample an id restricted to the legal range of ``slot``."""
    lo, hi = SLOT_RANGES[slot]
    z = np.asarray(logits[lo:hi + 1], dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise IllegalLogits(f"non-finite logits for slot {slot}")
    if sampling.greedy or sampling.top_k == 1:
        return lo + int(np.argmax(z))
    k = min(sampling.top_k, len(z))
    idx = np.argpartition(-z, k - 1)[:k]
    idx.sort()
    zk = z[idx] / sampling.temperature
    p = np.exp(zk - zk.max())
    p /= p.sum()
    return lo + int(idx[rng.choice(k, p=p)])


def _continue(model, encoder, prefix: list[int], n_frames: int, sampling, rng) -> np.ndarray:
    """Extend ``prefix`` (BOS + whole frames) until it covers ``n_frames`` frames."""
    total = n_frames * TOKENS_PER_NOTE
    buf = np.empty(total + 1, dtype=np.int64)
    n = len(prefix)
    buf[:n] = prefix
    while n - 1 < total:
        pos = n - 1
        slot = pos % TOKENS_PER_NOTE
        if slot == 0:
            buf[n] = encoder[pos]
            n += 1
            continue
        view = buf[:n]
        view.flags.writeable = False
        try:
            logits = model.next_logits(encoder, view)
        except (IllegalLogits, ModelFailure):
            raise
        except Exception as exc:  # surface model errors uniformly
            raise ModelFailure(str(exc)) from exc
        buf[n] = sample_token(np.asarray(logits), slot, sampling, rng)
        n += 1
    return buf


def constrained_generate(model: PerformanceModel, score, sampling: SamplingConfig = SamplingConfig()) -> np.ndarray:
    """One performance frame per score frame; pitch slots copied from the score."""
    body = strip_framing(score)
    validate_frames(body)
    rng = np.random.default_rng(sampling.seed)
    prefix = _continue(model, body, [BOS], len(body) // TOKENS_PER_NOTE, sampling, rng)
    return prefix[1:]


def block_starts(n_tokens: int, block: BlockConfig) -> list[int]:
    """Token offsets of the encoder windows used for a score of ``n_tokens``."""
    starts = [0]
    while starts[-1] + block.window < n_tokens:
        starts.append(starts[-1] + block.stride)
    return starts


def blockwise_generate(
    model: PerformanceModel,
    score,
    block: BlockConfig = BlockConfig(),
    sampling: SamplingConfig = SamplingConfig(),
) -> np.ndarray:
    """Generate long scores window by window.

    Each later window starts ``stride`` tokens on; its decoder prompt is the
    output already produced for the overlap minus the last
    ``tail_drop_notes`` frames, and only frames past the prompt are kept.
    """
    body = strip_framing(score)
    validate_frames(body)
    if len(body) <= block.window:
        return constrained_generate(model, body, sampling)
    rng = np.random.default_rng(sampling.seed)
    out: list[int] = []
    for start in block_starts(len(body), block):
        encoder = body[start:start + block.window]
        if start == 0:
            prompt = []
        else:
            prompt = out[start:start + block.prompt_tokens]
            del out[start + block.prompt_tokens:]
        prefix = _continue(model, encoder, [BOS] + prompt, len(encoder) // TOKENS_PER_NOTE, sampling, rng)
        out.extend(prefix[1 + len(prompt):].tolist())
    return np.asarray(out, dtype=np.int64)
