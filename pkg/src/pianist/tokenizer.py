"""Eight-tokens-per-note vocabulary, encoding/decoding and training examples.

Each note becomes ``[Pitch, IOI, Velocity, Duration, Pedal1..Pedal4]``. Ids:

=========  =====  ======
block      base   size
=========  =====  ======
special    0      5 (PAD, MASK, BOS, EOS, PLAY)
PITCH      5      128
VELOCITY   133    128
TIMING     261    5000 (Duration 0..4999, IOI 0..4990)
PEDAL      5261   128
=========  =====  ======
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .midi import NormalizedPiece, TimedNote

PAD, MASK, BOS, EOS, PLAY = 0, 1, 2, 3, 4
SPECIAL_NAMES = ("PAD", "MASK", "BOS", "EOS", "PLAY")

PITCH_BASE, VELOCITY_BASE, TIMING_BASE, PEDAL_BASE = 5, 133, 261, 5261
VOCAB_SIZE = 5389
TOKENS_PER_NOTE = 8
MAX_DURATION = 4999
MAX_IOI = 4990

# (kind, base, size) in id order
BLOCKS = (
    ("SPECIAL", 0, 5),
    ("PITCH", PITCH_BASE, 128),
    ("VELOCITY", VELOCITY_BASE, 128),
    ("TIMING", TIMING_BASE, 5000),
    ("PEDAL", PEDAL_BASE, 128),
)

# legal [lo, hi] id range for each frame slot
SLOT_KINDS = ("PITCH", "IOI", "VELOCITY", "DURATION", "PEDAL", "PEDAL", "PEDAL", "PEDAL")
SLOT_RANGES = (
    (PITCH_BASE, PITCH_BASE + 127),
    (TIMING_BASE, TIMING_BASE + MAX_IOI),
    (VELOCITY_BASE, VELOCITY_BASE + 127),
    (TIMING_BASE, TIMING_BASE + MAX_DURATION),
    (PEDAL_BASE, PEDAL_BASE + 127),
    (PEDAL_BASE, PEDAL_BASE + 127),
    (PEDAL_BASE, PEDAL_BASE + 127),
    (PEDAL_BASE, PEDAL_BASE + 127),
)
SLOT_BASES = np.array([PITCH_BASE, TIMING_BASE, VELOCITY_BASE, TIMING_BASE] + [PEDAL_BASE] * 4)


class TokenError(ValueError):
    pass


class EmptyPiece(TokenError):
    pass


class SlotViolation(TokenError):
    def __init__(self, position: int, expected: str, token: int):
        super().__init__(f"token {token} at position {position} is not a valid {expected} id")
        self.position = position
        self.expected = expected
        self.token = token


class LengthMismatch(TokenError):
    pass


class PitchMismatch(TokenError):
    def __init__(self, frame: int, score_pitch: int, perf_pitch: int):
        super().__init__(f"frame {frame}: score pitch {score_pitch} != performance pitch {perf_pitch}")
        self.frame = frame


def id_to_token(i: int) -> tuple[str, int]:
    """Map an id to ``(kind, value)``; specials map to their own name and 0."""
    if not 0 <= i < VOCAB_SIZE:
        raise ValueError(f"id {i} outside vocabulary")
    if i < PITCH_BASE:
        return SPECIAL_NAMES[i], 0
    for kind, base, size in BLOCKS[1:]:
        if i < base + size:
            return kind, i - base
    raise AssertionError("unreachable")


def token_to_id(kind: str, value: int = 0) -> int:
    if kind in SPECIAL_NAMES:
        return SPECIAL_NAMES.index(kind)
    for name, base, size in BLOCKS[1:]:
        if name == kind:
            if not 0 <= value < size:
                raise ValueError(f"{kind} value {value} out of range")
            return base + value
    raise ValueError(f"unknown token kind {kind!r}")


def vocabulary_checksum() -> bytes:
    """8-byte digest of the id layout; changes whenever the layout does."""
    layout = ";".join(f"{k}:{b}:{s}" for k, b, s in BLOCKS) + f";total:{VOCAB_SIZE}"
    return hashlib.blake2b(layout.encode(), digest_size=8).digest()


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def encode(piece: NormalizedPiece) -> np.ndarray:
    """Tokenize a normalized piece into a flat int array of 8 ids per note."""
    notes = piece.notes
    if not notes:
        raise EmptyPiece("cannot encode a piece with no notes")
    n = len(notes)
    out = np.empty((n, TOKENS_PER_NOTE), dtype=np.int64)
    for i, note in enumerate(notes):
        ioi = 0 if i == 0 else _round_half_up(note.onset_ms - notes[i - 1].onset_ms)
        dur = _round_half_up(note.duration_ms)
        if i + 1 < n:
            window = notes[i + 1].onset_ms - note.onset_ms
        else:
            window = note.duration_ms
        pedals = piece.pedal_at_many([note.onset_ms + k * window / 4 for k in range(1, 5)])
        out[i, 0] = PITCH_BASE + note.pitch
        out[i, 1] = TIMING_BASE + min(max(ioi, 0), MAX_IOI)
        out[i, 2] = VELOCITY_BASE + note.velocity
        out[i, 3] = TIMING_BASE + min(max(dur, 0), MAX_DURATION)
        out[i, 4:] = [PEDAL_BASE + v for v in pedals]
    return out.reshape(-1)


def strip_framing(seq: Sequence[int]) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.int64)
    if len(seq) and seq[0] == BOS:
        seq = seq[1:]
    if len(seq) and seq[-1] == EOS:
        seq = seq[:-1]
    return seq


def validate_frames(seq: Sequence[int]) -> np.ndarray:
    """Check body length and per-slot id ranges; return frames as (N, 8) values."""
    seq = np.asarray(seq, dtype=np.int64)
    if len(seq) % TOKENS_PER_NOTE:
        raise TokenError(f"body length {len(seq)} is not a multiple of {TOKENS_PER_NOTE}")
    frames = seq.reshape(-1, TOKENS_PER_NOTE)
    lo = np.array([r[0] for r in SLOT_RANGES])
    hi = np.array([r[1] for r in SLOT_RANGES])
    bad = (frames < lo) | (frames > hi)
    if bad.any():
        pos = int(np.flatnonzero(bad.reshape(-1))[0])
        slot = pos % TOKENS_PER_NOTE
        raise SlotViolation(pos, SLOT_KINDS[slot], int(seq[pos]))
    return frames - SLOT_BASES


def decode(seq: Sequence[int]) -> NormalizedPiece:
    """Inverse of :func:`encode`.

    The first note lands at 0 ms. The pedal step function is rebuilt from the
    four samples of each note, each value holding until the next sample.
    """
    values = validate_frames(strip_framing(seq))
    notes = []
    pedal: dict[float, int] = {}
    onset = 0
    for i, (pitch, ioi, vel, dur, *pedals) in enumerate(values.tolist()):
        onset += ioi if i else 0
        notes.append((pitch, vel, onset, dur))
    for i, (pitch, vel, onset, dur) in enumerate(notes):
        window = notes[i + 1][2] - onset if i + 1 < len(notes) else dur
        for k, v in enumerate(values[i, 4:].tolist(), start=1):
            pedal[onset + k * window / 4] = v
    points = []
    last = 0
    for t in sorted(pedal):
        if pedal[t] != last:
            points.append((t, pedal[t]))
            last = pedal[t]
    return NormalizedPiece(
        tuple(TimedNote(p, v, float(o), float(max(d, 1))) for p, v, o, d in notes),
        tuple(points),
    )


def frames(seq: Sequence[int]) -> np.ndarray:
    """Slot values of a (possibly framed) sequence as an (N, 8) array."""
    return validate_frames(strip_framing(seq))


@dataclass(frozen=True)
class PretrainExample:
    encoder_input: np.ndarray
    decoder_target: np.ndarray
    loss_mask: np.ndarray


def corrupt_for_pretraining(seq: Sequence[int], ratio: float = 0.3, seed: int = 0) -> PretrainExample:
    """Replace ``floor(ratio * len)`` uniformly chosen positions with MASK."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    seq = np.asarray(seq, dtype=np.int64)
    if len(seq) == 0:
        raise ValueError("cannot corrupt an empty sequence")
    count = int(math.floor(ratio * len(seq)))
    rng = np.random.default_rng(seed)
    positions = rng.choice(len(seq), size=count, replace=False)
    corrupted = seq.copy()
    corrupted[positions] = MASK
    target = np.concatenate([[BOS], seq, [EOS]])
    mask = np.zeros(len(target), dtype=bool)
    mask[positions + 1] = True
    return PretrainExample(corrupted, target, mask)


def build_sft_example(score: Sequence[int], perf: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    score = strip_framing(score)
    perf = strip_framing(perf)
    if len(score) != len(perf):
        raise LengthMismatch(
            f"score has {len(score) // TOKENS_PER_NOTE} notes, performance has {len(perf) // TOKENS_PER_NOTE}"
        )
    s, p = validate_frames(score), validate_frames(perf)
    diff = np.flatnonzero(s[:, 0] != p[:, 0])
    if len(diff):
        i = int(diff[0])
        raise PitchMismatch(i, int(s[i, 0]), int(p[i, 0]))
    return score.copy(), np.concatenate([[BOS], perf, [EOS]])


def sft_loss_mask(decoder_target: Sequence[int]) -> np.ndarray:
    """All-true over the target body, false on the BOS and EOS frame ends."""
    mask = np.ones(len(decoder_target), dtype=bool)
    mask[0] = mask[-1] = False
    return mask
