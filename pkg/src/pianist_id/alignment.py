"""Note-to-note alignment of performances against a reference.

A global dynamic program over pitch sequences (Needleman-Wunsch style,
minimizing cost) yields matched pairs plus inserted/deleted notes; wrong-pitch
matches are kept as pairs but flagged as substitutions, which is how
performance errors are marked. Aligning every performance to one reference
produces the position-by-performer note table the norm performance is
averaged from.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .midi_io import Performance

log = logging.getLogger(__name__)

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency, but stay usable
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@dataclass(frozen=True)
class AlignmentCosts:
    """DP costs; a pitch match is free. Defaults prefer marking a wrong-pitch
    note as a substitution pair over an insertion+deletion (1.0 < 0.6 + 0.6)."""

    cost_sub: float = 1.0
    cost_ins: float = 0.6
    cost_del: float = 0.6

    def __post_init__(self):
        if min(self.cost_sub, self.cost_ins, self.cost_del) <= 0:
            raise ValueError("alignment costs must be positive")


@dataclass(frozen=True)
class NoteAlignment:
    """Monotone correspondence between reference and performance note indices.

    Every reference index lands in exactly one of pairs/deletions, every
    performance index in exactly one of pairs/insertions. ``substitutions``
    is the subset of pairs whose pitches differ (the marked errors).
    """

    pairs: tuple[tuple[int, int], ...]
    insertions: tuple[int, ...]
    deletions: tuple[int, ...]
    substitutions: tuple[tuple[int, int], ...]
    n_reference: int
    n_performance: int
    total_cost: float

    def __post_init__(self):
        last_r, last_p = -1, -1
        for r, p in self.pairs:
            if r <= last_r or p <= last_p:
                raise ValueError("pairs must be strictly increasing in both coordinates")
            last_r, last_p = r, p
        ref_used = {r for r, _ in self.pairs}
        perf_used = {p for _, p in self.pairs}
        if ref_used | set(self.deletions) != set(range(self.n_reference)) or ref_used & set(
            self.deletions
        ):
            raise ValueError("pairs and deletions must partition reference indices")
        if perf_used | set(self.insertions) != set(range(self.n_performance)) or perf_used & set(
            self.insertions
        ):
            raise ValueError("pairs and insertions must partition performance indices")


@njit(cache=True)
def _nw_moves(ref, perf, cost_sub, cost_ins, cost_del):  # pragma: no cover - jitted
    n = ref.shape[0]
    m = perf.shape[0]
    moves = np.empty((n + 1, m + 1), dtype=np.uint8)
    prev = np.empty(m + 1, dtype=np.float64)
    cur = np.empty(m + 1, dtype=np.float64)
    prev[0] = 0.0
    moves[0, 0] = 0
    for j in range(1, m + 1):
        prev[j] = prev[j - 1] + cost_ins
        moves[0, j] = 2
    for i in range(1, n + 1):
        cur[0] = prev[0] + cost_del
        moves[i, 0] = 1
        rp = ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0.0 if rp == perf[j - 1] else cost_sub)
            up = prev[j] + cost_del
            left = cur[j - 1] + cost_ins
            if diag <= up and diag <= left:
                cur[j] = diag
                moves[i, j] = 0
            elif up <= left:
                cur[j] = up
                moves[i, j] = 1
            else:
                cur[j] = left
                moves[i, j] = 2
        prev, cur = cur, prev
    return moves, prev[m]


def align_pair(
    reference: Performance,
    performance: Performance,
    costs: AlignmentCosts = AlignmentCosts(),
) -> NoteAlignment:
    """Globally optimal monotone alignment of the two pitch sequences.

    Ties prefer pairing over deletion over insertion, which makes the result
    deterministic. Identical pitch sequences short-circuit to the identity
    mapping (cost 0, which is the DP optimum).
    """
    if not reference.notes or not performance.notes:
        raise ValueError("alignment requires non-empty performances")
    ref = np.asarray(reference.pitch_sequence(), dtype=np.int16)
    perf = np.asarray(performance.pitch_sequence(), dtype=np.int16)

    if ref.shape == perf.shape and np.array_equal(ref, perf):
        pairs = tuple((i, i) for i in range(len(ref)))
        return NoteAlignment(pairs, (), (), (), len(ref), len(perf), 0.0)

    moves, total_cost = _nw_moves(
        ref, perf, costs.cost_sub, costs.cost_ins, costs.cost_del
    )
    pairs: list[tuple[int, int]] = []
    insertions: list[int] = []
    deletions: list[int] = []
    i, j = len(ref), len(perf)
    while i > 0 or j > 0:
        move = moves[i, j]
        if move == 0:
            i -= 1
            j -= 1
            pairs.append((i, j))
        elif move == 1:
            i -= 1
            deletions.append(i)
        else:
            j -= 1
            insertions.append(j)
    pairs.reverse()
    substitutions = tuple((r, p) for r, p in pairs if ref[r] != perf[p])
    return NoteAlignment(
        tuple(pairs),
        tuple(reversed(insertions)),
        tuple(reversed(deletions)),
        substitutions,
        len(ref),
        len(perf),
        float(total_cost),
    )


@dataclass(frozen=True)
class AlignedNoteTable:
    """Dense position-by-performer note table; NaN/-1 mark missing cells.

    ``segments`` tags each position with the piece/movement it came from;
    successor-based features never straddle a segment boundary.
    """

    performer_ids: tuple[str, ...]
    onsets: np.ndarray
    offsets: np.ndarray
    dynamics: np.ndarray
    pitches: np.ndarray
    segments: np.ndarray

    def __post_init__(self):
        n, k = self.onsets.shape
        if len(self.performer_ids) != k:
            raise ValueError("performer_ids must match table width")
        for name in ("offsets", "dynamics"):
            if getattr(self, name).shape != (n, k):
                raise ValueError(f"{name} shape mismatch")
        if self.pitches.shape != (n, k) or self.segments.shape != (n,):
            raise ValueError("pitches/segments shape mismatch")
        present = ~np.isnan(self.onsets)
        for col in range(k):
            # monotone within each segment; segments restart the clock
            for seg in np.unique(self.segments):
                rows = present[:, col] & (self.segments == seg)
                onsets = self.onsets[rows, col]
                if np.any(np.diff(onsets) < 0):
                    raise ValueError(
                        f"column {self.performer_ids[col]} onsets decrease with position"
                    )

    @property
    def n_positions(self) -> int:
        return self.onsets.shape[0]

    def present_mask(self) -> np.ndarray:
        return ~np.isnan(self.onsets)

    def coverage(self) -> np.ndarray:
        return self.present_mask().sum(axis=1)


@dataclass(frozen=True)
class TableReport:
    """Alignment bookkeeping for diagnostics and the JSON report."""

    reference_id: str
    n_positions: int
    per_performer: dict[str, dict[str, int]]
    dropped_positions: tuple[int, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "reference": self.reference_id,
            "n_positions": self.n_positions,
            "per_performer": {k: dict(v) for k, v in sorted(self.per_performer.items())},
            "dropped_positions": list(self.dropped_positions),
        }


def median_reference(performances: list[Performance]) -> Performance:
    """The performance with median note count (ties broken by performer_id)."""
    ordered = sorted(performances, key=lambda p: (len(p.notes), p.performer_id))
    return ordered[len(ordered) // 2]


def build_table(
    performances: list[Performance],
    *,
    reference: Performance | None = None,
    costs: AlignmentCosts = AlignmentCosts(),
    min_coverage: int = 2,
) -> tuple[AlignedNoteTable, TableReport]:
    """Align every performance to the reference and assemble the note table.

    With ``reference=None`` the median-note-count performance is used (and is
    a table column like any other; it aligns to itself as the identity). An
    explicit reference, e.g. a score rendering, only serves as alignment
    target. Positions matched by fewer than ``min_coverage`` performers are
    dropped and reported.
    """
    if len(performances) < 2:
        raise ValueError("need at least 2 performances to build a table")
    if min_coverage < 2:
        raise ValueError("min_coverage must be at least 2")
    if reference is None:
        reference = median_reference(performances)

    performer_ids = tuple(p.performer_id for p in performances)
    if len(set(performer_ids)) != len(performer_ids):
        raise ValueError("performer ids must be unique")

    n_ref = len(reference.notes)
    k = len(performances)
    onsets = np.full((n_ref, k), np.nan)
    offsets = np.full((n_ref, k), np.nan)
    dynamics = np.full((n_ref, k), np.nan)
    pitches = np.full((n_ref, k), -1, dtype=np.int16)
    per_performer: dict[str, dict[str, int]] = {}

    for col, perf in enumerate(performances):
        al = align_pair(reference, perf, costs)
        per_performer[perf.performer_id] = {
            "pairs": len(al.pairs),
            "substitutions": len(al.substitutions),
            "insertions": len(al.insertions),
            "deletions": len(al.deletions),
        }
        for r, p in al.pairs:
            note = perf.notes[p]
            onsets[r, col] = note.onset
            offsets[r, col] = note.offset
            dynamics[r, col] = note.dynamic
            pitches[r, col] = note.pitch

    coverage = (~np.isnan(onsets)).sum(axis=1)
    keep = coverage >= min_coverage
    dropped = tuple(int(i) for i in np.nonzero(~keep)[0])
    if dropped:
        log.info("dropping %d positions below coverage %d", len(dropped), min_coverage)

    table = AlignedNoteTable(
        performer_ids=performer_ids,
        onsets=onsets[keep],
        offsets=offsets[keep],
        dynamics=dynamics[keep],
        pitches=pitches[keep],
        segments=np.zeros(int(keep.sum()), dtype=np.int64),
    )
    report = TableReport(
        reference_id=reference.performer_id,
        n_positions=table.n_positions,
        per_performer=per_performer,
        dropped_positions=dropped,
    )
    return table, report


def concat_tables(tables: list[AlignedNoteTable]) -> AlignedNoteTable:
    """Stack tables of the same performers (e.g. movements of one sonata).

    Positions are renumbered sequentially and each input table gets fresh
    segment ids, so successor-based features reset at the joins.
    """
    if not tables:
        raise ValueError("need at least one table")
    ids = tables[0].performer_ids
    for t in tables[1:]:
        if t.performer_ids != ids:
            raise ValueError("all tables must list the same performers in the same order")
    segments = []
    offset = 0
    for t in tables:
        segments.append(t.segments + offset)
        offset += (int(t.segments.max()) + 1) if t.n_positions else 1
    return AlignedNoteTable(
        performer_ids=ids,
        onsets=np.vstack([t.onsets for t in tables]),
        offsets=np.vstack([t.offsets for t in tables]),
        dynamics=np.vstack([t.dynamics for t in tables]),
        pitches=np.vstack([t.pitches for t in tables]),
        segments=np.concatenate(segments),
    )
