"""Standard MIDI File parsing/writing and the note-table CSV interchange format.

Performances are reduced to per-note events with absolute times in seconds.
Only what the downstream pipeline needs is kept: onset, offset, pitch and
dynamic level (note-on velocity). Sustain pedal (CC64) is ignored, so offsets
are key-release times.
"""

from __future__ import annotations

import csv
import io
import struct
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass
from typing import Sequence

NOTE_TABLE_HEADER = ("onset", "offset", "pitch", "dynamic")

#: Microseconds per quarter note when an SMF carries no tempo event (120 BPM).
DEFAULT_TEMPO = 500_000
DEFAULT_DIVISION = 480


class SmfParseError(ValueError):
    """Malformed SMF content; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True, slots=True)
class NoteEvent:
    """One performed note: times in seconds, pitch and dynamic as MIDI ints."""

    onset: float
    offset: float
    pitch: int
    dynamic: int

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError(f"onset must be non-negative, got {self.onset}")
        if not self.offset > self.onset:
            raise ValueError(
                f"offset must exceed onset, got onset={self.onset} offset={self.offset}"
            )
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch out of MIDI range 0..127: {self.pitch}")
        if not 1 <= self.dynamic <= 127:
            raise ValueError(f"dynamic out of range 1..127: {self.dynamic}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True)
class Performance:
    """An ordered note list for one performer; notes sorted by (onset, pitch)."""

    performer_id: str
    piece_id: str
    notes: tuple[NoteEvent, ...]

    def __post_init__(self):
        ordered = tuple(sorted(self.notes, key=lambda n: (n.onset, n.pitch)))
        object.__setattr__(self, "notes", ordered)

    def __len__(self) -> int:
        return len(self.notes)

    def pitch_sequence(self) -> list[int]:
        return [n.pitch for n in self.notes]


class TempoMap:
    """Piecewise-linear, monotone tick-to-seconds conversion.

    ``changes`` are (tick, microseconds-per-quarter) pairs; the default tempo
    applies from tick 0 until the first change.
    """

    def __init__(self, division: int, changes: Sequence[tuple[int, int]] = ()):
        if division <= 0:
            raise ValueError(f"division must be positive, got {division}")
        self.division = division
        ticks = [0]
        tempos = [DEFAULT_TEMPO]
        for tick, tempo in sorted(changes, key=lambda c: c[0]):
            if tick == ticks[-1]:
                tempos[-1] = tempo
            else:
                ticks.append(tick)
                tempos.append(tempo)
        seconds = [0.0]
        for i in range(1, len(ticks)):
            span = (ticks[i] - ticks[i - 1]) * tempos[i - 1] / (division * 1_000_000)
            seconds.append(seconds[i - 1] + span)
        self._ticks = ticks
        self._tempos = tempos
        self._seconds = seconds

    def to_seconds(self, tick: int) -> float:
        i = bisect_right(self._ticks, tick) - 1
        return self._seconds[i] + (tick - self._ticks[i]) * self._tempos[i] / (
            self.division * 1_000_000
        )


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SmfParseError("truncated data", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.read(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.read(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.read(4))[0]

    def vlq(self) -> int:
        total = 0
        for _ in range(4):
            byte = self.u8()
            total = (total << 7) | (byte & 0x7F)
            if not byte & 0x80:
                return total
        raise SmfParseError("variable-length quantity longer than 4 bytes", self.pos)


def parse_smf(data: bytes, *, performer_id: str = "", piece_id: str = "") -> Performance:
    """Parse an SMF (format 0 or 1) into a Performance; warnings discarded."""
    performance, _ = parse_smf_with_warnings(
        data, performer_id=performer_id, piece_id=piece_id
    )
    return performance


def parse_smf_with_warnings(
    data: bytes, *, performer_id: str = "", piece_id: str = ""
) -> tuple[Performance, list[str]]:
    """Parse an SMF and also return non-fatal anomalies (e.g. dangling note-ons).

    Note-on with velocity 0 counts as note-off. Overlapping same-pitch notes
    pair each note-off with the earliest open note-on of that pitch (per track
    and channel). A note-on still open at end of track is closed at the track's
    final tick and reported as a warning.
    """
    rdr = _Reader(data)
    if rdr.read(4) != b"MThd":
        raise SmfParseError("missing MThd header", 0)
    header_len = rdr.u32()
    if header_len < 6:
        raise SmfParseError(f"header chunk too short ({header_len} bytes)", rdr.pos - 4)
    fmt_offset = rdr.pos
    smf_format = rdr.u16()
    n_tracks = rdr.u16()
    division_offset = rdr.pos
    division = rdr.u16()
    if smf_format not in (0, 1):
        raise SmfParseError(f"unsupported SMF format {smf_format}", fmt_offset)
    if division & 0x8000:
        raise SmfParseError("SMPTE time division is not supported", division_offset)
    if division == 0:
        raise SmfParseError("time division must be positive", division_offset)
    rdr.read(header_len - 6)  # ignore any header extension bytes

    warnings: list[str] = []
    tempo_changes: list[tuple[int, int]] = []
    # (tick, file_order, is_on, pitch, velocity); file_order keeps pairing FIFO
    raw_notes: list[tuple[int, int, int, int, int]] = []

    tracks_seen = 0
    while tracks_seen < n_tracks:
        if rdr.pos >= len(rdr.data):
            raise SmfParseError(
                f"expected {n_tracks} tracks, found {tracks_seen}", rdr.pos
            )
        chunk_start = rdr.pos
        chunk_id = rdr.read(4)
        chunk_len = rdr.u32()
        if chunk_id != b"MTrk":
            rdr.read(chunk_len)  # alien chunks are skipped per the SMF spec
            continue
        _parse_track(
            rdr, chunk_start, chunk_len, tracks_seen, tempo_changes, raw_notes, warnings
        )
        tracks_seen += 1

    tempo_map = TempoMap(division, tempo_changes)
    notes = [
        NoteEvent(
            onset=tempo_map.to_seconds(on_tick),
            offset=tempo_map.to_seconds(off_tick),
            pitch=pitch,
            dynamic=velocity,
        )
        for on_tick, off_tick, pitch, velocity in _pair_notes(raw_notes, warnings)
    ]
    performance = Performance(performer_id, piece_id, tuple(notes))
    return performance, warnings


def _parse_track(rdr, chunk_start, chunk_len, track_index, tempo_changes, raw_notes, warnings):
    end = rdr.pos + chunk_len
    if end > len(rdr.data):
        raise SmfParseError("track chunk length runs past end of file", chunk_start + 4)
    tick = 0
    running_status: int | None = None
    order_base = len(raw_notes)
    while rdr.pos < end:
        tick += rdr.vlq()
        status = rdr.u8()
        if status < 0x80:
            if running_status is None:
                raise SmfParseError("data byte without running status", rdr.pos - 1)
            rdr.pos -= 1
            status = running_status
        if status == 0xFF:
            running_status = None
            meta_type = rdr.u8()
            length = rdr.vlq()
            payload = rdr.read(length)
            if meta_type == 0x51:
                if length != 3:
                    raise SmfParseError("tempo event must carry 3 bytes", rdr.pos - length)
                tempo_changes.append((tick, int.from_bytes(payload, "big")))
            elif meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):
            running_status = None
            rdr.read(rdr.vlq())
        elif status >= 0xF0:
            raise SmfParseError(f"unsupported system message 0x{status:02X}", rdr.pos - 1)
        else:
            running_status = status
            kind = status & 0xF0
            channel = status & 0x0F
            if kind in (0x80, 0x90):
                pitch = rdr.u8()
                velocity = rdr.u8()
                if pitch > 127 or velocity > 127:
                    raise SmfParseError("note data byte out of range", rdr.pos - 1)
                is_on = kind == 0x90 and velocity > 0
                key = track_index * 16 + channel
                raw_notes.append((tick, len(raw_notes), key * 256 + (1 if is_on else 0), pitch, velocity))
            elif kind in (0xA0, 0xB0, 0xE0):
                rdr.read(2)
            elif kind in (0xC0, 0xD0):
                rdr.read(1)
        if rdr.pos > end:
            raise SmfParseError("event runs past its track chunk boundary", rdr.pos)
    # skip any bytes after an early End of Track meta event
    rdr.pos = end
    _close_dangling(raw_notes, order_base, tick, warnings)


def _close_dangling(raw_notes, order_base, final_tick, warnings):
    open_count: dict[tuple[int, int], int] = {}
    for tick, _, tag, pitch, _ in raw_notes[order_base:]:
        key = (tag // 256, pitch)
        if tag % 256:
            open_count[key] = open_count.get(key, 0) + 1
        elif open_count.get(key, 0) > 0:
            open_count[key] -= 1
    for (stream_key, pitch), count in sorted(open_count.items()):
        for _ in range(count):
            warnings.append(
                f"dangling note-on (pitch {pitch}) closed at final tick {final_tick}"
            )
            raw_notes.append((final_tick, len(raw_notes), stream_key * 256, pitch, 0))


def _pair_notes(raw_notes, warnings):
    """FIFO-pair note-ons with note-offs per (track, channel, pitch)."""
    paired: list[tuple[int, int, int, int]] = []
    open_notes: dict[tuple[int, int], deque] = {}
    for tick, order, tag, pitch, velocity in sorted(raw_notes, key=lambda e: (e[0], e[1])):
        key = (tag // 256, pitch)
        if tag % 256:
            open_notes.setdefault(key, deque()).append((tick, velocity))
        else:
            queue = open_notes.get(key)
            if not queue:
                continue  # stray note-off; harmless
            on_tick, on_velocity = queue.popleft()
            off_tick = tick
            if off_tick <= on_tick:
                off_tick = on_tick + 1
                warnings.append(
                    f"zero-length note (pitch {pitch}) at tick {on_tick} extended by one tick"
                )
            paired.append((on_tick, off_tick, pitch, on_velocity))
    return paired


# ---------------------------------------------------------------------------
# note-table CSV interchange


def to_note_table(performance: Performance) -> str:
    """Serialize to CSV with header onset,offset,pitch,dynamic (UTF-8, LF).

    Times are written with shortest round-trip decimal text, so parsing the
    output back reproduces every field bit-exactly.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(NOTE_TABLE_HEADER)
    for note in performance.notes:
        writer.writerow([repr(note.onset), repr(note.offset), note.pitch, note.dynamic])
    return buf.getvalue()


def from_note_table(
    text: str, *, performer_id: str = "", piece_id: str = ""
) -> Performance:
    """Parse note-table CSV produced by :func:`to_note_table`."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != NOTE_TABLE_HEADER:
        raise ValueError(
            f"note table must start with header {','.join(NOTE_TABLE_HEADER)}"
        )
    notes = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ValueError(f"line {lineno}: expected 4 fields, got {len(row)}")
        notes.append(
            NoteEvent(
                onset=float(row[0]),
                offset=float(row[1]),
                pitch=int(row[2]),
                dynamic=int(row[3]),
            )
        )
    return Performance(performer_id, piece_id, tuple(notes))


# ---------------------------------------------------------------------------
# SMF writing


def _vlq_bytes(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def write_smf(
    performance: Performance,
    *,
    division: int = DEFAULT_DIVISION,
    tempo: int = DEFAULT_TEMPO,
) -> bytes:
    """Serialize as a single-track format-0 SMF at a fixed tempo.

    Onsets/offsets are rounded to the tick grid; zero-length notes after
    rounding are extended by one tick. At equal ticks note-offs precede
    note-ons so FIFO pairing on re-parse reconstructs the same notes.
    """
    ticks_per_second = division * 1_000_000 / tempo
    # (tick, kind, pitch, payload); kind: 0 tempo, 1 note-off, 2 note-on
    events: list[tuple[int, int, int, int]] = [(0, 0, 0, tempo)]
    for note in performance.notes:
        on_tick = round(note.onset * ticks_per_second)
        off_tick = round(note.offset * ticks_per_second)
        if off_tick <= on_tick:
            off_tick = on_tick + 1
        events.append((on_tick, 2, note.pitch, note.dynamic))
        events.append((off_tick, 1, note.pitch, 0))
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    body = bytearray()
    previous_tick = 0
    for tick, kind, pitch, payload in events:
        body += _vlq_bytes(tick - previous_tick)
        previous_tick = tick
        if kind == 0:
            body += b"\xff\x51\x03" + payload.to_bytes(3, "big")
        elif kind == 1:
            body += bytes((0x80, pitch, 0))
        else:
            body += bytes((0x90, pitch, payload))
    body += b"\x00\xff\x2f\x00"  # End of Track

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def quantize_performance(
    performance: Performance,
    *,
    division: int = DEFAULT_DIVISION,
    tempo: int = DEFAULT_TEMPO,
) -> Performance:
    """Snap a performance to the SMF tick grid.

    Defined as write-then-parse so the result is exactly what re-reading the
    written file yields.
    """
    return parse_smf(
        write_smf(performance, division=division, tempo=tempo),
        performer_id=performance.performer_id,
        piece_id=performance.piece_id,
    )
