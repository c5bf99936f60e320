import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pianist import tokenizer as tk
from pianist.midi import NormalizedPiece, TimedNote

from conftest import random_piece, sample_points

TWO_NOTES = NormalizedPiece((TimedNote(60, 80, 0.0, 500.0), TimedNote(64, 70, 500.0, 250.0)))
TWO_NOTES_IDS = [65, 261, 213, 761, 5261, 5261, 5261, 5261, 69, 761, 203, 511, 5261, 5261, 5261, 5261]


def oracle_decode_id(i):
    """Independent table lookup written from the block sizes alone."""
    edges = [("SPECIAL", 5), ("PITCH", 128), ("VELOCITY", 128), ("TIMING", 5000), ("PEDAL", 128)]
    base = 0
    for kind, size in edges:
        if i < base + size:
            return kind, i - base
        base += size
    raise IndexError(i)


def test_vocabulary_layout():
    assert tk.VOCAB_SIZE == 5 + 128 + 128 + 5000 + 128 == 5389
    assert (tk.PAD, tk.MASK, tk.BOS, tk.EOS, tk.PLAY) == (0, 1, 2, 3, 4)
    covered = []
    for _, base, size in tk.BLOCKS:
        covered.extend(range(base, base + size))
    assert covered == list(range(tk.VOCAB_SIZE))


def test_vocabulary_bijective():
    for i in range(tk.VOCAB_SIZE):
        kind, value = tk.id_to_token(i)
        assert tk.token_to_id(kind, value) == i
        o_kind, o_value = oracle_decode_id(i)
        if o_kind != "SPECIAL":
            assert (kind, value) == (o_kind, o_value)


def test_encode_two_notes():
    assert tk.encode(TWO_NOTES).tolist() == TWO_NOTES_IDS
    decoded = [oracle_decode_id(i) for i in TWO_NOTES_IDS[:8]]
    assert decoded[:4] == [("PITCH", 60), ("TIMING", 0), ("VELOCITY", 80), ("TIMING", 500)]


def test_decode_two_notes():
    assert tk.decode(TWO_NOTES_IDS) == TWO_NOTES
    assert tk.decode([tk.BOS] + TWO_NOTES_IDS + [tk.EOS]) == TWO_NOTES


def test_encode_empty_piece_raises():
    with pytest.raises(tk.EmptyPiece):
        tk.encode(NormalizedPiece())


def test_decode_empty_body():
    assert tk.decode([]) == NormalizedPiece()


def test_decode_slot_violation():
    ids = list(TWO_NOTES_IDS)
    ids[1] = tk.PITCH_BASE + 3
    with pytest.raises(tk.SlotViolation) as info:
        tk.decode(ids)
    assert info.value.position == 1 and info.value.expected == "IOI"


def test_ioi_above_4990_rejected_on_decode():
    ids = list(TWO_NOTES_IDS)
    ids[9] = tk.TIMING_BASE + 4995
    with pytest.raises(tk.SlotViolation):
        tk.decode(ids)


def test_clamping():
    piece = NormalizedPiece((TimedNote(60, 80, 0.0, 6000.0), TimedNote(61, 80, 5500.0, 10.0)))
    v = tk.frames(tk.encode(piece))
    assert v[0, 3] == 4999
    assert v[1, 1] == 4990


def test_rounding_half_up():
    piece = NormalizedPiece((TimedNote(60, 80, 0.0, 2.5), TimedNote(61, 80, 0.5, 1.49)))
    v = tk.frames(tk.encode(piece))
    assert v[0, 3] == 3 and v[1, 1] == 1 and v[1, 3] == 1


def test_pedal_sampling_points():
    # pedal down 100..300 ms; note 0 window 0..400 samples at 100, 200, 300, 400
    piece = NormalizedPiece(
        (TimedNote(60, 80, 0.0, 100.0), TimedNote(62, 80, 400.0, 80.0)),
        ((100.0, 127), (300.0, 0), (440.0, 90)),
    )
    v = tk.frames(tk.encode(piece))
    assert v[0, 4:].tolist() == [127, 127, 0, 0]
    # final note uses its own duration: samples at 420, 440, 460, 480
    assert v[1, 4:].tolist() == [0, 90, 90, 90]


def test_roundtrip_randomized(rng):
    for _ in range(100):
        p = random_piece(rng)
        q = tk.decode(tk.encode(p))
        assert q.notes == p.notes
        pts = sample_points(p)
        assert q.pedal_at_many(pts) == p.pedal_at_many(pts)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_encode_length_and_slots(seed):
    p = random_piece(np.random.default_rng(seed))
    seq = tk.encode(p)
    assert len(seq) == 8 * len(p.notes)
    tk.validate_frames(seq)


@pytest.mark.parametrize("ratio, length, expected", [(0.3, 16, 4), (0.45, 80, 36), (0.3, 32, 9)])
def test_corrupt_counts(ratio, length, expected):
    assert math.floor(ratio * length) == expected
    seq = np.arange(length) + tk.TIMING_BASE
    ex = tk.corrupt_for_pretraining(seq, ratio, seed=3)
    assert int((ex.encoder_input == tk.MASK).sum()) == expected
    assert int(ex.loss_mask.sum()) == expected
    assert len(ex.encoder_input) == length
    assert ex.decoder_target.tolist() == [tk.BOS] + seq.tolist() + [tk.EOS]
    masked = np.flatnonzero(ex.encoder_input == tk.MASK)
    assert np.flatnonzero(ex.loss_mask).tolist() == (masked + 1).tolist()


def test_corrupt_deterministic():
    seq = tk.encode(TWO_NOTES)
    a = tk.corrupt_for_pretraining(seq, 0.3, 11)
    b = tk.corrupt_for_pretraining(seq, 0.3, 11)
    assert np.array_equal(a.encoder_input, b.encoder_input)
    assert np.array_equal(a.loss_mask, b.loss_mask)


@pytest.mark.parametrize("ratio", [0.0, 1.0, -0.1])
def test_corrupt_bad_ratio(ratio):
    with pytest.raises(ValueError):
        tk.corrupt_for_pretraining(tk.encode(TWO_NOTES), ratio, 0)


def test_sft_example():
    score = tk.encode(TWO_NOTES)
    perf = score.copy()
    perf[2] = tk.VELOCITY_BASE + 99
    enc, target = tk.build_sft_example(score, perf)
    assert len(enc) == 16 and len(target) == 18
    assert target[0] == tk.BOS and target[-1] == tk.EOS
    mask = tk.sft_loss_mask(target)
    assert mask.sum() == 16 and not mask[0] and not mask[-1]


def test_sft_length_mismatch():
    three = NormalizedPiece(TWO_NOTES.notes + (TimedNote(65, 10, 900.0, 10.0),))
    with pytest.raises(tk.LengthMismatch):
        tk.build_sft_example(tk.encode(three), tk.encode(TWO_NOTES))


def test_sft_pitch_mismatch():
    perf = tk.encode(TWO_NOTES)
    perf[8] = tk.PITCH_BASE + 65
    with pytest.raises(tk.PitchMismatch) as info:
        tk.build_sft_example(tk.encode(TWO_NOTES), perf)
    assert info.value.frame == 1
