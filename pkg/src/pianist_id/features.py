"""Norm performance and the five note-level deviation features.

Quantities per note stream: OT (onset time), DL (dynamic level), ND (note
duration = offset - onset), IOI (inter-onset interval to the next note) and
OTD (gap between a note's offset and the next onset; negative means legato
overlap). Deviations subtract the performer's quantity from the norm's: plain
difference for OT/DL/ND, difference of absolute values for IOI/OTD.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .alignment import AlignedNoteTable

KINDS = ("OT", "IOI", "OTD", "DL", "ND")
POINT_KINDS = frozenset({"OT", "DL", "ND"})
PAIR_KINDS = frozenset({"IOI", "OTD"})

NORM_LABEL = "norm"


class UndefinedCorrelationError(ValueError):
    """Pearson correlation is undefined (constant input or length < 2)."""


def _check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise ValueError(f"unknown feature kind {kind!r}; expected one of {KINDS}")
    return kind


@dataclass(frozen=True)
class NoteStream:
    """Position-indexed note quantities for one table column or the norm."""

    label: str
    positions: np.ndarray
    onsets: np.ndarray
    offsets: np.ndarray
    dynamics: np.ndarray
    segments: np.ndarray

    def __post_init__(self):
        n = len(self.positions)
        for name in ("onsets", "offsets", "dynamics", "segments"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")
        if np.any(np.diff(self.positions) <= 0):
            raise ValueError("positions must be strictly increasing")

    def __len__(self) -> int:
        return len(self.positions)

    def restrict(self, positions: np.ndarray) -> "NoteStream":
        idx = np.searchsorted(self.positions, positions)
        if np.any(idx >= len(self.positions)) or np.any(
            self.positions[idx] != positions
        ):
            raise ValueError("stream does not cover the requested positions")
        return NoteStream(
            label=self.label,
            positions=self.positions[idx],
            onsets=self.onsets[idx],
            offsets=self.offsets[idx],
            dynamics=self.dynamics[idx],
            segments=self.segments[idx],
        )


@dataclass(frozen=True)
class NormPerformance:
    """Across-performer mean onset/offset/dynamic per aligned position."""

    positions: np.ndarray
    mean_onset: np.ndarray
    mean_offset: np.ndarray
    mean_dynamic: np.ndarray
    coverage: np.ndarray
    segments: np.ndarray

    def __post_init__(self):
        if np.any(self.mean_offset <= self.mean_onset):
            raise ValueError("norm offsets must exceed norm onsets")
        if np.any(self.coverage < 1):
            raise ValueError("norm coverage must be positive everywhere")

    def __len__(self) -> int:
        return len(self.positions)

    def stream(self) -> NoteStream:
        return NoteStream(
            label=NORM_LABEL,
            positions=self.positions,
            onsets=self.mean_onset,
            offsets=self.mean_offset,
            dynamics=self.mean_dynamic,
            segments=self.segments,
        )


@dataclass(frozen=True)
class QuantitySeries:
    """One derived quantity over a stream; pair kinds anchor on the first note."""

    kind: str
    label: str
    positions: np.ndarray
    end_positions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        _check_kind(self.kind)
        if not len(self.positions) == len(self.end_positions) == len(self.values):
            raise ValueError("positions/end_positions/values length mismatch")


@dataclass(frozen=True)
class DeviationSeries:
    """Per-note deviations of one performer from the norm, for one feature."""

    kind: str
    performer_id: str
    values: np.ndarray
    positions: np.ndarray
    end_positions: np.ndarray

    def __post_init__(self):
        _check_kind(self.kind)
        if not len(self.positions) == len(self.end_positions) == len(self.values):
            raise ValueError("positions/end_positions/values length mismatch")
        if len(self.values) and not np.all(np.isfinite(self.values)):
            raise ValueError("deviation values must be finite")

    def __len__(self) -> int:
        return len(self.values)


def compute_norm(table: AlignedNoteTable) -> NormPerformance:
    """Arithmetic mean of onset, offset and dynamic over present cells."""
    coverage = table.coverage()
    if np.any(coverage < 1):
        raise ValueError("every position needs at least one present cell")
    return NormPerformance(
        positions=np.arange(table.n_positions, dtype=np.int64),
        mean_onset=np.nanmean(table.onsets, axis=1),
        mean_offset=np.nanmean(table.offsets, axis=1),
        mean_dynamic=np.nanmean(table.dynamics, axis=1),
        coverage=coverage.astype(np.int64),
        segments=table.segments.copy(),
    )


def performer_stream(table: AlignedNoteTable, performer_id: str) -> NoteStream:
    """The present cells of one performer column, in position order."""
    col = table.performer_ids.index(performer_id)
    mask = table.present_mask()[:, col]
    positions = np.nonzero(mask)[0].astype(np.int64)
    return NoteStream(
        label=performer_id,
        positions=positions,
        onsets=table.onsets[mask, col],
        offsets=table.offsets[mask, col],
        dynamics=table.dynamics[mask, col],
        segments=table.segments[mask],
    )


def derive_quantity(stream: NoteStream, kind: str) -> QuantitySeries:
    """Per-position quantity of one stream.

    IOI and OTD run between consecutive present notes of the stream and never
    across a segment boundary; streams with fewer than 2 notes yield an empty
    result for those kinds.
    """
    _check_kind(kind)
    if kind in POINT_KINDS:
        if kind == "OT":
            values = stream.onsets
        elif kind == "DL":
            values = stream.dynamics
        else:
            values = stream.offsets - stream.onsets
        return QuantitySeries(kind, stream.label, stream.positions, stream.positions, values)

    if len(stream) < 2:
        empty = np.empty(0)
        return QuantitySeries(kind, stream.label, empty.astype(np.int64), empty.astype(np.int64), empty)
    same_segment = stream.segments[1:] == stream.segments[:-1]
    if kind == "IOI":
        values = (stream.onsets[1:] - stream.onsets[:-1])[same_segment]
    else:  # OTD
        values = (stream.onsets[1:] - stream.offsets[:-1])[same_segment]
    return QuantitySeries(
        kind,
        stream.label,
        stream.positions[:-1][same_segment],
        stream.positions[1:][same_segment],
        values,
    )


def deviations(
    performer: Union[NoteStream, QuantitySeries],
    norm: Union[NoteStream, QuantitySeries],
    kind: str | None = None,
) -> DeviationSeries:
    """Deviation series of a performer from the norm for one feature kind.

    With note streams, both are first restricted to their common positions so
    IOI/OTD run between the performer's consecutive present notes and the norm
    quantity spans the same two positions. Pre-derived QuantitySeries inputs
    must agree on kind and are matched on identical (start, end) positions.

    The sign convention is norm minus performer: x - y for OT/DL/ND and
    |x| - |y| for IOI/OTD, with x the norm quantity.
    """
    if isinstance(performer, QuantitySeries) != isinstance(norm, QuantitySeries):
        raise ValueError("mix of derived and raw streams is not supported")
    if isinstance(performer, QuantitySeries):
        if performer.kind != norm.kind:
            raise ValueError(f"kind mismatch between streams: {performer.kind} vs {norm.kind}")
        if kind is not None and kind != performer.kind:
            raise ValueError(f"kind mismatch: requested {kind}, streams carry {performer.kind}")
        kind = performer.kind
        perf_q, norm_q = performer, norm
        keys_p = np.stack([perf_q.positions, perf_q.end_positions], axis=1)
        keys_n = np.stack([norm_q.positions, norm_q.end_positions], axis=1)
        # match on identical (start, end) spans
        idx_p, idx_n = _match_rows(keys_p, keys_n)
        x = norm_q.values[idx_n]
        y = perf_q.values[idx_p]
        positions = perf_q.positions[idx_p]
        end_positions = perf_q.end_positions[idx_p]
    else:
        if kind is None:
            raise ValueError("kind is required for raw note streams")
        _check_kind(kind)
        common = np.intersect1d(performer.positions, norm.positions, assume_unique=True)
        perf_r = performer.restrict(common)
        norm_r = norm.restrict(common)
        if not np.array_equal(perf_r.segments, norm_r.segments):
            raise ValueError("streams disagree on segment ids at shared positions")
        perf_q = derive_quantity(perf_r, kind)
        norm_q = derive_quantity(norm_r, kind)
        x = norm_q.values
        y = perf_q.values
        positions = perf_q.positions
        end_positions = perf_q.end_positions

    if kind in PAIR_KINDS:
        values = np.abs(x) - np.abs(y)
    else:
        values = x - y
    return DeviationSeries(
        kind=kind,
        performer_id=performer.label,
        values=values,
        positions=positions,
        end_positions=end_positions,
    )


def _match_rows(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of rows common to both (start, end) key arrays, in a's order."""
    a_keys = {tuple(row): i for i, row in enumerate(a.tolist())}
    idx_a, idx_b = [], []
    for j, row in enumerate(b.tolist()):
        i = a_keys.get(tuple(row))
        if i is not None:
            idx_a.append(i)
            idx_b.append(j)
    order = np.argsort(idx_a, kind="stable")
    return np.asarray(idx_a, dtype=np.int64)[order], np.asarray(idx_b, dtype=np.int64)[order]


def extract_deviations(
    table: AlignedNoteTable,
    norm: NormPerformance | None = None,
    kinds: Iterable[str] = KINDS,
) -> dict[str, dict[str, DeviationSeries]]:
    """All requested deviation series for every performer in the table."""
    if norm is None:
        norm = compute_norm(table)
    norm_stream = norm.stream()
    out: dict[str, dict[str, DeviationSeries]] = {}
    for pid in table.performer_ids:
        stream = performer_stream(table, pid)
        out[pid] = {kind: deviations(stream, norm_stream, kind) for kind in kinds}
    return out


def pearson_r(a, b) -> float:
    """Sample Pearson correlation; errors on constant input or length < 2."""
    x = np.asarray(a.values if hasattr(a, "values") else a, dtype=np.float64)
    y = np.asarray(b.values if hasattr(b, "values") else b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise UndefinedCorrelationError("need at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    r = float(np.dot(dx, dy)) / denom
    return max(-1.0, min(1.0, r))


def dump_features_csv(series: Iterable[DeviationSeries]) -> str:
    """CSV dump with columns performer,kind,position,value (UTF-8, LF)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["performer", "kind", "position", "value"])
    for s in series:
        for pos, value in zip(s.positions.tolist(), s.values.tolist()):
            writer.writerow([s.performer_id, s.kind, pos, repr(float(value))])
    return buf.getvalue()
