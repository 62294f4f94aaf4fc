"""Shared fixtures: hand-built SMF bytes and tiny aligned tables."""

from __future__ import annotations

import struct

import pytest

from pianist_id.alignment import build_table
from pianist_id.midi_io import NoteEvent, Performance


def vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def smf_bytes(track_events: list[bytes], division: int = 480, fmt: int = 0) -> bytes:
    """Assemble a single-track SMF from raw event byte strings."""
    body = b"".join(track_events)
    return (
        b"MThd"
        + struct.pack(">IHHH", 6, fmt, 1, division)
        + b"MTrk"
        + struct.pack(">I", len(body))
        + body
    )


def tempo_event(delta: int, tempo: int) -> bytes:
    return vlq(delta) + b"\xff\x51\x03" + tempo.to_bytes(3, "big")


def note_on(delta: int, pitch: int, velocity: int, channel: int = 0) -> bytes:
    return vlq(delta) + bytes((0x90 | channel, pitch, velocity))


def note_off(delta: int, pitch: int, channel: int = 0) -> bytes:
    return vlq(delta) + bytes((0x80 | channel, pitch, 0))


END_OF_TRACK = b"\x00\xff\x2f\x00"


def simple_performance(
    onsets, pitches=None, durations=0.3, dynamics=64, performer_id="p", piece_id="piece"
) -> Performance:
    """Build a performance from plain lists with broadcastable scalars."""
    n = len(onsets)
    if pitches is None:
        pitches = [60 + (i % 12) for i in range(n)]
    if not hasattr(durations, "__len__"):
        durations = [durations] * n
    if not hasattr(dynamics, "__len__"):
        dynamics = [dynamics] * n
    notes = tuple(
        NoteEvent(float(o), float(o) + float(d), int(p), int(v))
        for o, d, p, v in zip(onsets, durations, pitches, dynamics)
    )
    return Performance(performer_id, piece_id, notes)


@pytest.fixture
def identical_trio():
    """Three performers playing byte-identical note lists."""
    onsets = [0.0, 0.5, 1.0, 1.75, 2.5]
    pitches = [60, 64, 67, 65, 62]
    return [
        simple_performance(onsets, pitches, performer_id=f"p{i}") for i in range(1, 4)
    ]


@pytest.fixture
def identical_table(identical_trio):
    table, _ = build_table(identical_trio)
    return table
