"""Standard MIDI File reading/writing and wall-clock normalization.

Times inside a :class:`MidiPiece` are integer ticks. :func:`normalize` turns a
piece into a :class:`NormalizedPiece`: one merged note stream in milliseconds
at the canonical 120 BPM scale (one quarter note = 500 ms).
"""
from __future__ import annotations

import bisect
import struct
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

SUSTAIN_CC = 64
DEFAULT_PPQ = 480
DEFAULT_TEMPO = 500_000  # microseconds per quarter, 120 BPM
CANONICAL_QUARTER_MS = 500.0


class MidiError(ValueError):
    """Base class for SMF decoding errors."""


class MalformedHeader(MidiError):
    pass


class UnsupportedFormat(MidiError):
    pass


class TruncatedChunk(MidiError):
    pass


class Note(NamedTuple):
    pitch: int
    velocity: int
    onset: int
    duration: int
    channel: int = 0


class Control(NamedTuple):
    controller: int
    value: int
    tick: int
    channel: int = 0


def _note_key(n: Note):
    return (n.onset, n.channel, n.pitch, n.duration, n.velocity)


@dataclass(frozen=True)
class Track:
    """Note and control events of one track, kept in canonical order.

    Notes are sorted by (onset, channel, pitch, duration, velocity); controls
    are stably sorted by tick so same-tick events keep their file order.
    """

    notes: tuple[Note, ...] = ()
    controls: tuple[Control, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "notes", tuple(sorted((Note(*n) for n in self.notes), key=_note_key)))
        object.__setattr__(
            self, "controls", tuple(sorted((Control(*c) for c in self.controls), key=lambda c: c.tick))
        )


@dataclass(frozen=True)
class MidiPiece:
    tracks: tuple[Track, ...] = ()
    ppq: int = DEFAULT_PPQ
    tempo_events: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        object.__setattr__(self, "tempo_events", tuple((int(t), int(u)) for t, u in self.tempo_events))
        self.validate()

    def validate(self) -> None:
        if self.ppq <= 0 or self.ppq > 0x7FFF:
            raise ValueError(f"ppq must be in 1..32767, got {self.ppq}")
        ticks = [t for t, _ in self.tempo_events]
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise ValueError("tempo events must be sorted with at most one per tick")
        for t, us in self.tempo_events:
            if t < 0 or not 0 < us < 1 << 24:
                raise ValueError(f"bad tempo event ({t}, {us})")
        for track in self.tracks:
            for n in track.notes:
                if not (0 <= n.pitch <= 127 and 1 <= n.velocity <= 127):
                    raise ValueError(f"note out of range: {n}")
                if n.onset < 0 or n.duration < 1 or not 0 <= n.channel <= 15:
                    raise ValueError(f"bad note timing/channel: {n}")
            for c in track.controls:
                if not (0 <= c.controller <= 127 and 0 <= c.value <= 127) or c.tick < 0:
                    raise ValueError(f"control out of range: {c}")

    @property
    def notes(self) -> list[Note]:
        return [n for tr in self.tracks for n in tr.notes]


class TimedNote(NamedTuple):
    pitch: int
    velocity: int
    onset_ms: float
    duration_ms: float


@dataclass(frozen=True)
class NormalizedPiece:
    """Single note stream in milliseconds plus a sustain-pedal step function.

    ``pedal`` holds ``(time_ms, value)`` change points sorted by time, at most
    one per instant; the pedal value is 0 before the first point.
    """

    notes: tuple[TimedNote, ...] = ()
    pedal: tuple[tuple[float, int], ...] = ()

    def __post_init__(self):
        notes = tuple(sorted((TimedNote(*n) for n in self.notes), key=lambda n: (n.onset_ms, n.pitch)))
        object.__setattr__(self, "notes", notes)
        object.__setattr__(self, "pedal", tuple((t, int(v)) for t, v in self.pedal))
        keys = [(n.onset_ms, n.pitch) for n in notes]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (onset_ms, pitch) in NormalizedPiece")
        for n in notes:
            if n.onset_ms < 0 or n.duration_ms < 1:
                raise ValueError(f"bad note timing: {n}")
        times = [t for t, _ in self.pedal]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("pedal change points must be strictly increasing in time")

    def pedal_at(self, t_ms: float) -> int:
        i = bisect.bisect_right([t for t, _ in self.pedal], t_ms)
        return self.pedal[i - 1][1] if i else 0

    def pedal_at_many(self, times: Sequence[float]) -> list[int]:
        pts = [t for t, _ in self.pedal]
        out = []
        for t in times:
            i = bisect.bisect_right(pts, t)
            out.append(self.pedal[i - 1][1] if i else 0)
        return out


# --------------------------------------------------------------------------
# reading


def _read_vlq(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise TruncatedChunk("variable-length quantity runs past chunk end")
        b = data[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos
    raise MidiError("variable-length quantity longer than 4 bytes")


def _parse_track(data: bytes, pos: int, end: int):
    notes: list[Note] = []
    controls: list[Control] = []
    tempos: list[tuple[int, int]] = []
    pending: dict[tuple[int, int], deque] = defaultdict(deque)
    tick = 0
    status = None
    while pos < end:
        delta, pos = _read_vlq(data, pos, end)
        tick += delta
        if pos >= end:
            raise TruncatedChunk("event runs past chunk end")
        b = data[pos]
        if b & 0x80:
            pos += 1
            if b < 0xF0:
                status = b
        elif status is None:
            raise MidiError(f"running status without a prior status byte at offset {pos}")
        else:
            b = status

        if b == 0xFF:
            if pos >= end:
                raise TruncatedChunk("meta event runs past chunk end")
            mtype = data[pos]
            length, pos = _read_vlq(data, pos + 1, end)
            if pos + length > end:
                raise TruncatedChunk("meta event runs past chunk end")
            payload = data[pos:pos + length]
            pos += length
            status = None
            if mtype == 0x51 and length == 3:
                tempos.append((tick, int.from_bytes(payload, "big")))
            elif mtype == 0x2F:
                break
            continue
        if b in (0xF0, 0xF7):
            length, pos = _read_vlq(data, pos, end)
            pos += length
            status = None
            continue
        if b >= 0xF0:
            raise MidiError(f"unexpected system message 0x{b:02X} in track")

        kind, channel = b & 0xF0, b & 0x0F
        nbytes = 1 if kind in (0xC0, 0xD0) else 2
        if pos + nbytes > end:
            raise TruncatedChunk("channel event runs past chunk end")
        d1 = data[pos]
        d2 = data[pos + 1] if nbytes == 2 else 0
        pos += nbytes
        if kind == 0x90 and d2 > 0:
            pending[(channel, d1)].append((tick, d2))
        elif kind == 0x80 or kind == 0x90:
            queue = pending.get((channel, d1))
            if queue:
                on_tick, vel = queue.popleft()
                notes.append(Note(d1, vel, on_tick, max(tick - on_tick, 1), channel))
        elif kind == 0xB0:
            controls.append(Control(d1, d2, tick, channel))

    for (channel, pitch), queue in pending.items():
        for on_tick, vel in queue:
            notes.append(Note(pitch, vel, on_tick, max(tick - on_tick, 1), channel))
    return notes, controls, tempos


def parse_smf(data: bytes) -> MidiPiece:
    """Decode SMF bytes (format 0 or 1).

    Tracks without note or control events (e.g. a tempo-only conductor track)
    are not kept; tempo events from every track are merged, later events
    winning on a shared tick.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedHeader("missing or short MThd header chunk")
    hlen = struct.unpack(">I", data[4:8])[0]
    if hlen < 6 or 8 + hlen > len(data):
        raise MalformedHeader(f"header chunk length {hlen} is invalid")
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt == 2:
        raise UnsupportedFormat("SMF format 2 is not supported")
    if fmt not in (0, 1):
        raise MalformedHeader(f"unknown SMF format {fmt}")
    if division & 0x8000:
        raise UnsupportedFormat("SMPTE time division is not supported")
    if division == 0:
        raise MalformedHeader("ticks per quarter note is zero")

    pos = 8 + hlen
    tracks = []
    tempo_map: dict[int, int] = {}
    found = 0
    while pos < len(data) and found < ntracks:
        if pos + 8 > len(data):
            raise TruncatedChunk("chunk header runs past end of data")
        ctype = data[pos:pos + 4]
        clen = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        start = pos + 8
        if start + clen > len(data):
            raise TruncatedChunk(f"chunk declares {clen} bytes, only {len(data) - start} remain")
        pos = start + clen
        if ctype != b"MTrk":
            continue
        found += 1
        notes, controls, tempos = _parse_track(data, start, start + clen)
        for t, us in tempos:
            tempo_map[t] = us
        if notes or controls:
            tracks.append(Track(tuple(notes), tuple(controls)))
    return MidiPiece(tuple(tracks), division, tuple(sorted(tempo_map.items())))


# --------------------------------------------------------------------------
# writing


def _vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def _track_chunk(events: Iterable[tuple[int, int, bytes]]) -> bytes:
    # events: (tick, order, payload); order breaks same-tick ties.
    body = bytearray()
    last = 0
    for tick, _, payload in sorted(events, key=lambda e: (e[0], e[1])):
        body += _vlq(tick - last) + payload
        last = tick
    body += b"\x00\xFF\x2F\x00"
    return b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def write_smf(piece: MidiPiece) -> bytes:
    """Encode a piece as SMF format 1.

    Track 0 is a conductor track holding the tempo events; each piece track
    follows. Note-offs use explicit 0x80 status and precede note-ons and
    controls on the same tick.
    """
    conductor = [(t, 0, b"\xFF\x51\x03" + us.to_bytes(3, "big")) for t, us in piece.tempo_events]
    chunks = [_track_chunk(conductor)]
    for track in piece.tracks:
        events = []
        for n in track.notes:
            events.append((n.onset + n.duration, 0, bytes([0x80 | n.channel, n.pitch, 0x40])))
        for c in track.controls:
            events.append((c.tick, 1, bytes([0xB0 | c.channel, c.controller, c.value])))
        for n in track.notes:
            events.append((n.onset, 2, bytes([0x90 | n.channel, n.pitch, n.velocity])))
        chunks.append(_track_chunk(events))
    header = b"MThd" + struct.pack(">IHHH", 6, 1, len(chunks), piece.ppq)
    return header + b"".join(chunks)


# --------------------------------------------------------------------------
# time conversion and normalization


def render_wallclock(tick: float, tempo_events: Sequence[tuple[int, int]], ppq: int) -> float:
    """Milliseconds elapsed at ``tick`` under a tempo map.

    The tempo is 120 BPM until the first tempo event.
    """
    ms = 0.0
    prev_tick, us = 0, DEFAULT_TEMPO
    for t, next_us in tempo_events:
        if t >= tick:
            break
        ms += (t - prev_tick) * us / (ppq * 1000.0)
        prev_tick, us = t, next_us
    return ms + (tick - prev_tick) * us / (ppq * 1000.0)


def _wallclock_fn(piece: MidiPiece, mode: str):
    if mode == "score":
        return lambda tick: tick * CANONICAL_QUARTER_MS / piece.ppq
    if mode == "performance":
        events = piece.tempo_events
        return lambda tick: render_wallclock(tick, events, piece.ppq)
    raise ValueError(f"mode must be 'score' or 'performance', got {mode!r}")


def normalize(piece: MidiPiece, mode: str = "score") -> NormalizedPiece:
    """Merge all tracks and convert to milliseconds.

    ``mode="score"`` ignores the file's tempo map and uses a constant 120 BPM
    (``t_ms = tick * 500 / ppq``); ``mode="performance"`` integrates the file's
    tempo map. Notes sharing pitch and onset tick collapse to the one with the
    larger velocity, then the longer duration.
    """
    to_ms = _wallclock_fn(piece, mode)
    best: dict[tuple[int, int], Note] = {}
    for n in piece.notes:
        key = (n.pitch, n.onset)
        cur = best.get(key)
        if cur is None or (n.velocity, n.duration) > (cur.velocity, cur.duration):
            best[key] = n
    notes = []
    for n in best.values():
        on = to_ms(n.onset)
        if mode == "score":
            dur = to_ms(n.duration)
        else:
            dur = to_ms(n.onset + n.duration) - on
        notes.append(TimedNote(n.pitch, n.velocity, on, max(dur, 1.0)))

    pedal_events = sorted(
        (c for tr in piece.tracks for c in tr.controls if c.controller == SUSTAIN_CC),
        key=lambda c: c.tick,
    )
    by_tick: dict[int, int] = {}
    for c in pedal_events:
        by_tick[c.tick] = c.value
    pedal = tuple((to_ms(t), v) for t, v in sorted(by_tick.items()))
    return NormalizedPiece(tuple(notes), pedal)


def to_midi(piece: NormalizedPiece, ppq: int = DEFAULT_PPQ) -> MidiPiece:
    """Re-express a normalized piece as a one-track 120 BPM MidiPiece."""
    scale = ppq / CANONICAL_QUARTER_MS

    def tick(ms: float) -> int:
        return int(ms * scale + 0.5)

    notes = []
    for n in piece.notes:
        on = tick(n.onset_ms)
        notes.append(Note(n.pitch, min(max(n.velocity, 1), 127), on, max(tick(n.onset_ms + n.duration_ms) - on, 1)))
    controls = {}
    for t, v in piece.pedal:
        controls[tick(t)] = v
    ctrl = tuple(Control(SUSTAIN_CC, v, t) for t, v in sorted(controls.items()))
    tracks = (Track(tuple(notes), ctrl),) if notes or ctrl else ()
    return MidiPiece(tracks, ppq, ((0, DEFAULT_TEMPO),))


def read_midi_file(path) -> MidiPiece:
    with open(path, "rb") as fh:
        return parse_smf(fh.read())


def write_midi_file(piece: MidiPiece, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_smf(piece))
