"""Workloads: per-rank sequences of application and MPI phases.

Work is expressed in CPU cycles, never in time; how long a phase lasts is
decided by the simulated core's frequency and duty cycle.  MPI phases carry a
cycle count (work done inside the call) followed by a wait, either on a
collective sync group or for a fixed wall-clock ``extra_wait_us``.
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from ._num import frac, short


class PhaseKind(str, Enum):
    APP = "app"
    MPI = "mpi"


class WorkloadFormatError(ValueError):
    """A workload file could not be parsed; ``where`` locates the problem."""

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True)
class Phase:
    kind: PhaseKind
    cycles: int
    sync_id: str | None = None
    extra_wait_us: Fraction = Fraction(0)
    call_name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PhaseKind(self.kind))
        if isinstance(self.cycles, bool) or not isinstance(self.cycles, int):
            raise ValueError(f"cycles must be an integer, got {self.cycles!r}")
        if self.cycles < 0:
            raise ValueError("cycles must be >= 0")
        wait = frac(self.extra_wait_us)
        if wait < 0:
            raise ValueError("extra_wait_us must be >= 0")
        object.__setattr__(self, "extra_wait_us", wait)
        if self.kind is PhaseKind.APP:
            if self.sync_id is not None:
                raise ValueError("app phase cannot carry a sync id")
            if wait:
                raise ValueError("app phase cannot carry extra_wait_us")
            if self.call_name is not None:
                raise ValueError("app phase cannot carry a call name")
        elif self.sync_id is not None and wait:
            raise ValueError("mpi phase has both a sync id and extra_wait_us")

    @classmethod
    def app(cls, cycles: int) -> Phase:
        return cls(PhaseKind.APP, cycles)

    @classmethod
    def mpi(cls, cycles: int = 0, sync: str | None = None, extra_wait_us=0,
            call: str | None = None) -> Phase:
        return cls(PhaseKind.MPI, cycles, sync, frac(extra_wait_us), call)

    @property
    def is_app(self) -> bool:
        return self.kind is PhaseKind.APP


@dataclass(frozen=True)
class RankTrace:
    rank_id: int
    phases: tuple[Phase, ...]

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))


@dataclass(frozen=True)
class Workload:
    ranks: tuple[RankTrace, ...]
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ranks", tuple(self.ranks))
        object.__setattr__(self, "meta", dict(self.meta))

    @classmethod
    def from_phases(cls, per_rank: Sequence[Sequence[Phase]], meta=None) -> Workload:
        return cls(tuple(RankTrace(i, tuple(p)) for i, p in enumerate(per_rank)), meta or {})

    @property
    def n_ranks(self) -> int:
        return len(self.ranks)

    def digest(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()

    def sync_groups(self) -> dict[str, list[int]]:
        groups: dict[str, list[int]] = defaultdict(list)
        for rt in self.ranks:
            for ph in rt.phases:
                if ph.sync_id is not None and rt.rank_id not in groups[ph.sync_id]:
                    groups[ph.sync_id].append(rt.rank_id)
        return dict(groups)


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    rank: int | None
    phase: int | None
    message: str

    def __str__(self):
        loc = []
        if self.rank is not None:
            loc.append(f"rank {self.rank}")
        if self.phase is not None:
            loc.append(f"phase {self.phase}")
        return f"{', '.join(loc)}: {self.message}" if loc else self.message


def validate(workload: Workload) -> list[Violation]:
    """Return every invariant violation; an empty list means the workload
    simulates without deadlock."""
    out: list[Violation] = []
    if not workload.ranks:
        return [Violation(None, None, "workload has no ranks")]

    for i, rt in enumerate(workload.ranks):
        if rt.rank_id != i:
            out.append(Violation(i, None, f"rank id {rt.rank_id} out of order (expected {i})"))

    first_use: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for r, rt in enumerate(workload.ranks):
        seen: dict[str, int] = {}
        for p, ph in enumerate(rt.phases):
            if ph.sync_id is None:
                continue
            if ph.sync_id in seen:
                out.append(Violation(r, p, f"sync id {ph.sync_id!r} used twice in one rank"))
                continue
            seen[ph.sync_id] = p
            first_use[ph.sync_id].append((r, p))

    for sid, uses in first_use.items():
        if len(uses) < 2:
            r, p = uses[0]
            out.append(Violation(r, p, f"sync group size < 2 for {sid!r}"))

    # Sync ids are barrier nodes; each rank orders its own sync ids.  A global
    # schedule exists iff that graph is acyclic (Kahn's algorithm).
    succ: dict[str, set[str]] = defaultdict(set)
    indeg: dict[str, int] = {sid: 0 for sid in first_use}
    for rt in workload.ranks:
        order = [ph.sync_id for ph in rt.phases if ph.sync_id is not None]
        for a, b in zip(order, order[1:]):
            if a != b and b not in succ[a]:
                succ[a].add(b)
                indeg[b] += 1
    queue = deque(sorted(s for s, d in indeg.items() if d == 0))
    done = set()
    while queue:
        s = queue.popleft()
        done.add(s)
        for t in sorted(succ[s]):
            indeg[t] -= 1
            if indeg[t] == 0:
                queue.append(t)
    stuck = set(indeg) - done
    if stuck:
        for r, rt in enumerate(workload.ranks):
            for p, ph in enumerate(rt.phases):
                if ph.sync_id in stuck:
                    out.append(Violation(r, p, f"cyclic sync dependency at {ph.sync_id!r}"))
                    break
    return out


# --------------------------------------------------------------------------
# JSON file format

_PHASE_KEYS = {"kind", "cycles", "sync", "extra_wait_us", "call"}
_TOP_KEYS = {"meta", "ranks"}


def _phase_obj(ph: Phase) -> dict:
    obj: dict = {"kind": ph.kind.value, "cycles": ph.cycles}
    if ph.sync_id is not None:
        obj["sync"] = ph.sync_id
    if ph.extra_wait_us:
        w = ph.extra_wait_us
        if (w * 1000).denominator != 1:
            raise ValueError(f"extra_wait_us {w} has more than 3 fractional digits")
        obj["extra_wait_us"] = w.numerator if w.denominator == 1 else float(w)
    if ph.call_name is not None:
        obj["call"] = ph.call_name
    return obj


def dumps(workload: Workload) -> str:
    def row(rt):
        return ",".join(json.dumps(_phase_obj(ph), separators=(",", ":")) for ph in rt.phases)

    ranks = ",\n".join("  [" + row(rt) + "]" for rt in workload.ranks)
    meta = json.dumps(workload.meta, sort_keys=True)
    return f'{{"meta": {meta},\n "ranks": [\n{ranks}\n]}}\n'


def save_workload(workload: Workload, path) -> None:
    Path(path).write_text(dumps(workload), encoding="utf-8")


def _parse_phase(obj, where: str) -> Phase:
    if not isinstance(obj, dict):
        raise WorkloadFormatError("phase must be an object", where)
    unknown = set(obj) - _PHASE_KEYS
    if unknown:
        raise WorkloadFormatError(f"unknown key(s) {sorted(unknown)}", where)
    kind = obj.get("kind")
    if kind not in ("app", "mpi"):
        raise WorkloadFormatError(f"kind must be 'app' or 'mpi', got {kind!r}", f"{where}.kind")
    cycles = obj.get("cycles")
    if isinstance(cycles, bool) or not isinstance(cycles, int):
        raise WorkloadFormatError(f"cycles must be an integer, got {cycles!r}", f"{where}.cycles")
    sync = obj.get("sync")
    if sync is not None and not isinstance(sync, str):
        raise WorkloadFormatError("sync must be a string", f"{where}.sync")
    call = obj.get("call")
    if call is not None and not isinstance(call, str):
        raise WorkloadFormatError("call must be a string", f"{where}.call")
    wait = obj.get("extra_wait_us", 0)
    if isinstance(wait, bool) or not isinstance(wait, (int, Decimal)):
        raise WorkloadFormatError("extra_wait_us must be a number", f"{where}.extra_wait_us")
    wait = Fraction(wait)
    if (wait * 1000).denominator != 1:
        raise WorkloadFormatError("extra_wait_us allows at most 3 fractional digits",
                                  f"{where}.extra_wait_us")
    if kind == "app":
        for key in ("sync", "extra_wait_us", "call"):
            if key in obj:
                raise WorkloadFormatError(f"app phase cannot carry {key!r}", f"{where}.{key}")
    try:
        return Phase(PhaseKind(kind), cycles, sync, wait, call)
    except ValueError as exc:
        raise WorkloadFormatError(str(exc), where) from None


def loads(text: str) -> Workload:
    try:
        doc = json.loads(text, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise WorkloadFormatError(exc.msg, f"line {exc.lineno}, column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise WorkloadFormatError("top level must be an object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise WorkloadFormatError(f"unknown key(s) {sorted(unknown)}")
    meta = doc.get("meta", {})
    if not isinstance(meta, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
    ):
        raise WorkloadFormatError("meta must map strings to strings", "meta")
    ranks = doc.get("ranks")
    if not isinstance(ranks, list):
        raise WorkloadFormatError("ranks must be an array", "ranks")
    if not ranks:
        raise WorkloadFormatError("workload has no ranks", "ranks")
    per_rank = []
    for r, phases in enumerate(ranks):
        if not isinstance(phases, list):
            raise WorkloadFormatError("rank must be an array of phases", f"ranks[{r}]")
        per_rank.append([_parse_phase(obj, f"ranks[{r}][{p}]") for p, obj in enumerate(phases)])
    return Workload.from_phases(per_rank, meta)


def load_workload(path) -> Workload:
    return loads(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# generators


def _check_common(n_ranks: int, n_iters: int) -> None:
    if n_ranks < 2:
        raise ValueError("sync phases need at least 2 ranks")
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")


def _jittered(rng: random.Random | None, cycles: Fraction, jitter_pct: Fraction) -> int:
    if rng is None:
        return round(cycles)
    factor = 1 + Fraction(rng.uniform(-1.0, 1.0)) * jitter_pct / 100
    return round(cycles * factor)


def gen_balanced(n_ranks: int, n_iters: int, app_us, mpi_us, mpi_work_fraction=0,
                 jitter_pct=0, seed: int = 0, ref_freq_ghz="2.4") -> Workload:
    """Every rank alternates App / collective Mpi; all ranks share each sync.

    Cycle counts are sized so that at ``ref_freq_ghz`` the app phase lasts
    ``app_us`` and the MPI work lasts ``mpi_work_fraction * mpi_us``.
    """
    _check_common(n_ranks, n_iters)
    app_us, mpi_us = frac(app_us), frac(mpi_us)
    fraction, jitter, ref = frac(mpi_work_fraction), frac(jitter_pct), frac(ref_freq_ghz)
    if app_us <= 0 or mpi_us < 0:
        raise ValueError("app_us must be > 0 and mpi_us >= 0")
    if not 0 <= fraction <= 1:
        raise ValueError("mpi_work_fraction must lie in [0, 1]")
    if jitter < 0 or ref <= 0:
        raise ValueError("jitter_pct must be >= 0 and ref_freq_ghz > 0")
    per_us = ref * 1000
    rng = random.Random(seed) if jitter else None
    mpi_cycles = round(fraction * mpi_us * per_us)
    per_rank = []
    for _ in range(n_ranks):
        phases = []
        for it in range(n_iters):
            phases.append(Phase.app(_jittered(rng, app_us * per_us, jitter)))
            phases.append(Phase.mpi(mpi_cycles, sync=f"it{it}", call="Allreduce"))
        per_rank.append(phases)
    meta = {
        "generator": "balanced", "n_ranks": str(n_ranks), "n_iters": str(n_iters),
        "app_us": short(app_us), "mpi_us": short(mpi_us),
        "mpi_work_fraction": short(fraction), "jitter_pct": short(jitter),
        "ref_freq_ghz": short(ref),
    }
    if rng is not None:
        meta["seed"] = str(seed)
    return Workload.from_phases(per_rank, meta)


def gen_unbalanced(n_ranks: int, n_iters: int, diag_rank: int, diag_app_us, other_app_us,
                   seed: int = 0, ref_freq_ghz="2.4", jitter_pct=0) -> Workload:
    """One rank does a long kernel per iteration while the rest idle in a
    zero-work collective."""
    _check_common(n_ranks, n_iters)
    diag_us, other_us = frac(diag_app_us), frac(other_app_us)
    jitter, ref = frac(jitter_pct), frac(ref_freq_ghz)
    if not 0 <= diag_rank < n_ranks:
        raise ValueError(f"diag_rank {diag_rank} out of range")
    if other_us <= 0 or diag_us < other_us:
        raise ValueError("need diag_app_us >= other_app_us > 0")
    if jitter < 0 or ref <= 0:
        raise ValueError("jitter_pct must be >= 0 and ref_freq_ghz > 0")
    per_us = ref * 1000
    rng = random.Random(seed) if jitter else None
    per_rank = []
    for r in range(n_ranks):
        base = (diag_us if r == diag_rank else other_us) * per_us
        phases = []
        for it in range(n_iters):
            phases.append(Phase.app(_jittered(rng, base, jitter)))
            phases.append(Phase.mpi(0, sync=f"it{it}", call="Bcast"))
        per_rank.append(phases)
    meta = {
        "generator": "unbalanced", "n_ranks": str(n_ranks), "n_iters": str(n_iters),
        "diag_rank": str(diag_rank), "diag_app_us": short(diag_us),
        "other_app_us": short(other_us), "ref_freq_ghz": short(ref),
    }
    if rng is not None:
        meta["jitter_pct"] = short(jitter)
        meta["seed"] = str(seed)
    return Workload.from_phases(per_rank, meta)
