"""Simulation output: per-rank piecewise-constant segments and the write log."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from ._num import fmt, frac, short

SEGMENT_COLUMNS = ("rank", "t0_us", "t1_us", "freq_ghz", "duty", "sleep", "phase_index",
                   "phase_kind")
SLEEP_STATES = ("active", "entering", "sleeping", "waking")


class SegmentsFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    t0_us: Fraction
    t1_us: Fraction
    freq_ghz: Fraction
    duty: Fraction
    sleep: str
    phase_index: int
    phase_kind: str

    @property
    def duration(self) -> Fraction:
        return self.t1_us - self.t0_us

    @property
    def asleep(self) -> bool:
        return self.sleep == "sleeping"


@dataclass(frozen=True)
class RegisterWrite:
    t_us: Fraction
    rank: int
    register: str  # "freq" or "duty"
    value: Fraction | str


@dataclass(frozen=True)
class SimResult:
    segments: tuple[tuple[Segment, ...], ...]
    tts_us: Fraction
    rank_end_us: tuple[Fraction, ...]
    executed_cycles: tuple[int, ...]
    writes: tuple[RegisterWrite, ...]
    workload_hash: str
    policy: object = field(default=None, compare=False)

    @property
    def n_ranks(self) -> int:
        return len(self.segments)


def canonical_writes(writes: Iterable[RegisterWrite]) -> tuple[RegisterWrite, ...]:
    """Order by (time, rank), keeping each rank's own issue order."""
    return tuple(sorted(writes, key=lambda w: (w.t_us, w.rank)))


class SegmentRecorder:
    """Accumulates one rank's segments.

    Several state changes at one instant collapse into a single boundary,
    except that a phase which starts and ends at the same instant keeps a
    zero-length segment so downstream analysis still sees it.  Such a segment
    reports the hardware state in force just before that instant; the
    transient values seen while the instant is being resolved depend on
    processing order and carry no time.
    """

    def __init__(self):
        self.done: list[Segment] = []
        self.t0: Fraction | None = None
        self.state: tuple | None = None
        self.hw_before: tuple | None = None  # (freq, duty, sleep) of the last real segment

    def _emit(self, t: Fraction) -> None:
        state = self.state
        if self.t0 == t:
            state = (*self.hw_before, *state[3:])
        else:
            self.hw_before = state[:3]
        self.done.append(Segment(self.t0, t, *state))

    def update(self, t: Fraction, state: tuple) -> None:
        if self.state == state:
            return
        if self.state is None:
            self.t0, self.state = t, state
            if self.hw_before is None:
                self.hw_before = state[:3]
            return
        if self.t0 == t and self.state[3] == state[3]:
            # same instant, same phase: overwrite the transient state
            self.state = state
            prev = self.done[-1] if self.done else None
            if prev is not None and prev.t1_us == t and _state_of(prev) == state:
                self.done.pop()
                self.t0 = prev.t0_us
            return
        if self.t0 == t and self.done and self.done[-1].phase_index == self.state[3]:
            # transient state of a phase that already has real extent
            self.t0, self.state = t, state
            return
        self._emit(t)
        self.t0, self.state = t, state

    def close(self, t: Fraction) -> tuple[Segment, ...]:
        if self.state is not None:
            transient = (self.t0 == t and self.done
                         and self.done[-1].phase_index == self.state[3])
            if not transient:
                self._emit(t)
            self.state = None
        return tuple(self.done)


def _state_of(seg: Segment) -> tuple:
    return (seg.freq_ghz, seg.duty, seg.sleep, seg.phase_index, seg.phase_kind)


def segments_to_csv(segments: Sequence[Sequence[Segment]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SEGMENT_COLUMNS)
    for rank, segs in enumerate(segments):
        for s in segs:
            w.writerow([rank, fmt(s.t0_us), fmt(s.t1_us), short(s.freq_ghz), short(s.duty),
                        s.sleep, s.phase_index, s.phase_kind])
    return buf.getvalue()


def write_segments_csv(segments, path) -> None:
    Path(path).write_text(segments_to_csv(segments), encoding="utf-8")


def read_segments_csv(path) -> tuple[tuple[Segment, ...], ...]:
    """Parse a segments CSV; ranks absent from the file get no segments."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SegmentsFormatError("row 1: missing header") from None
    if tuple(h.strip() for h in header) != SEGMENT_COLUMNS:
        raise SegmentsFormatError(f"row 1: expected header {','.join(SEGMENT_COLUMNS)}")
    per_rank: dict[int, list[Segment]] = {}
    for rowno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(SEGMENT_COLUMNS):
            raise SegmentsFormatError(f"row {rowno}: expected {len(SEGMENT_COLUMNS)} fields")
        try:
            rank = int(row[0])
            seg = Segment(frac(row[1]), frac(row[2]), frac(row[3]), frac(row[4]),
                          row[5].strip(), int(row[6]), row[7].strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise SegmentsFormatError(f"row {rowno}: {exc}") from None
        if rank < 0 or seg.t1_us < seg.t0_us or seg.sleep not in SLEEP_STATES \
                or seg.phase_kind not in ("app", "mpi"):
            raise SegmentsFormatError(f"row {rowno}: invalid field value")
        per_rank.setdefault(rank, []).append(seg)
    n = max(per_rank) + 1 if per_rank else 0
    return tuple(tuple(per_rank.get(r, ())) for r in range(n))
