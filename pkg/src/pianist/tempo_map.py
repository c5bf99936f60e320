"""Expressive tempo mapping: millisecond performances to tempo-mapped MIDI.

The score's musical grid (ticks at 120 BPM) is kept, and the performance's
timing is moved into a tempo track. Local tempo between consecutive distinct
score onsets is ``120 * score_interval / performance_interval``.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

from .midi import (
    CANONICAL_QUARTER_MS,
    DEFAULT_PPQ,
    SUSTAIN_CC,
    Control,
    MidiPiece,
    Note,
    NormalizedPiece,
    Track,
)

MIN_BPM, MAX_BPM = 20.0, 400.0
CANONICAL_BPM = 120.0


class TempoMapError(ValueError):
    pass


@dataclass(frozen=True)
class TempoCurve:
    """Piecewise-constant tempo; ``breakpoints`` are ``(tick, bpm)``, first at tick 0."""

    breakpoints: tuple[tuple[float, float], ...]
    ppq: int = DEFAULT_PPQ

    def __post_init__(self):
        bp = tuple((t, float(b)) for t, b in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        if not bp or bp[0][0] != 0:
            raise TempoMapError("tempo curve must start at tick 0")
        if any(b[0] <= a[0] for a, b in zip(bp, bp[1:])):
            raise TempoMapError("breakpoint ticks must be strictly increasing")
        if any(not MIN_BPM <= b <= MAX_BPM for _, b in bp):
            raise TempoMapError("bpm outside [20, 400]")

    def _segments(self):
        # (start_tick, start_ms, ms_per_tick)
        out = []
        ms = 0.0
        for i, (tick, bpm) in enumerate(self.breakpoints):
            if i:
                prev_tick, prev_bpm = self.breakpoints[i - 1]
                ms += (tick - prev_tick) * 60000.0 / (prev_bpm * self.ppq)
            out.append((tick, ms, 60000.0 / (bpm * self.ppq)))
        return out

    def ticks_to_ms(self, tick: float) -> float:
        segs = self._segments()
        i = max(bisect.bisect_right([s[0] for s in segs], tick) - 1, 0)
        t0, ms0, rate = segs[i]
        return ms0 + (tick - t0) * rate

    def ms_to_ticks_exact(self, t_ms: float) -> float:
        segs = self._segments()
        i = max(bisect.bisect_right([s[1] for s in segs], t_ms) - 1, 0)
        t0, ms0, rate = segs[i]
        return t0 + (t_ms - ms0) / rate

    def tempo_events(self) -> tuple[tuple[int, int], ...]:
        """``(tick, microseconds-per-quarter)`` meta events."""
        return tuple((int(t), int(round(60_000_000 / b))) for t, b in self.breakpoints)

    def quantized(self) -> "TempoCurve":
        """The curve a MIDI file can actually store: integer ticks and integer microseconds."""
        merged: dict[int, float] = {}
        for t, b in self.breakpoints:
            merged[_round_half_up(t)] = 60_000_000 / round(60_000_000 / b)
        return TempoCurve(tuple(_merge_equal(sorted(merged.items()))), self.ppq)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _merge_equal(points):
    out = []
    for t, b in points:
        if not out or out[-1][1] != b:
            out.append((t, b))
    return out


@dataclass(frozen=True)
class AlignedPair:
    score: NormalizedPiece
    perf: NormalizedPiece

    def __post_init__(self):
        if len(self.score.notes) != len(self.perf.notes):
            raise TempoMapError(
                f"score has {len(self.score.notes)} notes, performance has {len(self.perf.notes)}"
            )
        for i, (s, p) in enumerate(zip(self.score.notes, self.perf.notes)):
            if s.pitch != p.pitch:
                raise TempoMapError(f"pitch mismatch at note {i}: {s.pitch} vs {p.pitch}")


def estimate_tempo_curve(pair: AlignedPair, ppq: int = DEFAULT_PPQ) -> TempoCurve:
    """Per-segment tempo between consecutive distinct score onsets.

    Chords collapse onto their first member. A non-positive performance
    interval repeats the previous segment's tempo (120 for the first), and
    every value is clamped to [20, 400]. Fewer than two distinct onsets give
    a constant 120 BPM curve.
    """
    score, perf = pair.score.notes, pair.perf.notes
    anchors = [i for i, n in enumerate(score) if i == 0 or n.onset_ms > score[i - 1].onset_ms]
    if len(anchors) < 2:
        return TempoCurve(((0, CANONICAL_BPM),), ppq)
    points = []
    bpm = CANONICAL_BPM
    for a, b in zip(anchors, anchors[1:]):
        d_score = score[b].onset_ms - score[a].onset_ms
        d_perf = perf[b].onset_ms - perf[a].onset_ms
        if d_perf > 0:
            bpm = min(max(CANONICAL_BPM * d_score / d_perf, MIN_BPM), MAX_BPM)
        points.append((score[a].onset_ms * ppq / CANONICAL_QUARTER_MS, bpm))
    points[0] = (0, points[0][1])
    return TempoCurve(tuple(_merge_equal(points)), ppq)


def ms_to_ticks(t_ms: float, curve: TempoCurve) -> int:
    """Inverse time integration of the curve, rounded half-up to a tick."""
    if t_ms < 0:
        raise TempoMapError("time must be non-negative")
    return _round_half_up(curve.ms_to_ticks_exact(t_ms))


def expressive_tempo_map(pair: AlignedPair, ppq: int = DEFAULT_PPQ) -> MidiPiece:
    """Tempo-mapped MIDI: score pitches, performance velocities and timing.

    Event times are converted through the curve as stored in the file
    (integer ticks and microseconds), so re-rendering the file through its
    own tempo map lands every onset within a tick.
    """
    curve = estimate_tempo_curve(pair, ppq).quantized()
    notes = []
    for s, p in zip(pair.score.notes, pair.perf.notes):
        on = ms_to_ticks(p.onset_ms, curve)
        off = ms_to_ticks(p.onset_ms + p.duration_ms, curve)
        notes.append(Note(s.pitch, min(max(p.velocity, 1), 127), on, max(off - on, 1)))
    controls = [Control(SUSTAIN_CC, v, ms_to_ticks(t, curve)) for t, v in pair.perf.pedal]
    return MidiPiece((Track(tuple(notes), tuple(controls)),), ppq, curve.tempo_events())
