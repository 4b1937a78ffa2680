"""Power model, exact energy integration and run-comparison metrics.

All quantities stay exact: power is piecewise constant over segments, so
energy is a finite sum of ``duration * watts`` and needs no quadrature.
Times are microseconds, so ``W * us`` is scaled by 1e-6 to get joules.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence, Union

from ._num import fmt, frac, short
from .result import Segment, SimResult

MICRO = Fraction(1, 10**6)
REGIONS = ("I", "II", "III", "IV")
REPORT_COLUMNS = ("policy", "timeout_us", "tts_us", "overhead_pct", "energy_j",
                  "energy_saving_pct", "power_saving_pct", "avg_freq_ghz", "avg_load_pct")
QUADRANT_COLUMNS = ("rank", "region", "count", "time_share_pct", "mean_app_freq_ghz",
                    "mean_mpi_freq_ghz")
SPLIT_KEYS = ("app_long", "app_short", "mpi_long", "mpi_short")
SPLIT_COLUMNS = ("rank", "app_long_pct", "app_short_pct", "mpi_long_pct", "mpi_short_pct")

Segments = Sequence[Sequence[Segment]]


class MetricsError(ValueError):
    pass


def _default_table():
    return {Fraction("1.2"): Fraction(4), Fraction("2.4"): Fraction(10),
            Fraction("2.6"): Fraction("11.5"), Fraction("3.2"): Fraction(15)}


@dataclass(frozen=True)
class PowerModel:
    """Per-core power as a function of (frequency, duty, sleep state).

    Cores that are entering or leaving sleep draw active power; only a fully
    asleep core draws ``p_sleep_w``.
    """

    mode: str = "table"
    table: Mapping[Fraction, Fraction] = field(default_factory=_default_table)
    p_sleep_w: Fraction = Fraction(1)
    p_static_w: Fraction = Fraction(3)
    k_dyn: Fraction = Fraction(1, 2)
    alpha: Fraction = Fraction(3)
    uncore_w: Fraction = Fraction(20)
    cores_per_node: int = 16

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "table", {frac(k): frac(v) for k, v in sorted(self.table.items())})
        for name in ("p_sleep_w", "p_static_w", "k_dyn", "alpha", "uncore_w"):
            set_(self, name, frac(getattr(self, name)))
        if self.mode not in ("table", "parametric"):
            raise MetricsError(f"unknown power model mode {self.mode!r}")
        if self.cores_per_node < 1:
            raise MetricsError("cores_per_node must be >= 1")
        if self.p_sleep_w < 0 or self.uncore_w < 0:
            raise MetricsError("power values must be >= 0")
        if self.p_sleep_w > self.p_static_w:
            raise MetricsError("p_sleep_w must not exceed p_static_w")
        if self.mode == "table":
            watts = list(self.table.values())
            if not watts:
                raise MetricsError("power table is empty")
            if any(b <= a for a, b in zip(watts, watts[1:])):
                raise MetricsError("table power must increase strictly with frequency")
            if watts[0] < self.p_static_w:
                raise MetricsError("table power must be >= p_static_w")
        elif self.k_dyn <= 0 or self.alpha <= 0:
            raise MetricsError("k_dyn and alpha must be > 0")

    def active_w(self, freq_ghz, duty=1) -> Fraction:
        f, d = frac(freq_ghz), frac(duty)
        if self.mode == "table":
            try:
                full = self.table[f]
            except KeyError:
                raise MetricsError(f"frequency {short(f)} GHz missing from the power table") \
                    from None
            return self.p_static_w + d * (full - self.p_static_w)
        if self.alpha.denominator == 1:
            dyn = f ** int(self.alpha)
        else:
            dyn = Fraction(float(f) ** float(self.alpha))
        return self.p_static_w + d * self.k_dyn * dyn

    def watts(self, seg: Segment) -> Fraction:
        if seg.sleep == "sleeping":
            return self.p_sleep_w
        return self.active_w(seg.freq_ghz, seg.duty)

    def nodes(self, n_cores: int) -> int:
        return math.ceil(n_cores / self.cores_per_node)


@dataclass(frozen=True)
class Energy:
    total_j: Fraction
    per_rank_j: tuple[Fraction, ...]
    uncore_j: Fraction


def energy(result: SimResult, pm: PowerModel | None = None) -> Energy:
    pm = pm or PowerModel()
    per_rank = []
    for segs in result.segments:
        _check_well_formed(segs)
        per_rank.append(sum((s.duration * pm.watts(s) for s in segs), Fraction(0)) * MICRO)
    uncore = pm.uncore_w * pm.nodes(result.n_ranks) * result.tts_us * MICRO
    return Energy(sum(per_rank, Fraction(0)) + uncore, tuple(per_rank), uncore)


def energy_riemann(result: SimResult, pm: PowerModel | None = None, dt_us=1) -> Fraction:
    """Left-point sum on a fixed grid.

    Exact whenever every segment boundary lies on the grid, which holds for
    integer-microsecond timelines at ``dt_us=1``.
    """
    pm = pm or PowerModel()
    dt = frac(dt_us)
    total = Fraction(0)
    for segs in result.segments:
        live = [s for s in segs if s.duration]
        i = 0
        t = Fraction(0)
        while live and t < live[-1].t1_us:
            while live[i].t1_us <= t:
                i += 1
            if live[i].t0_us <= t:
                total += pm.watts(live[i]) * dt
            t += dt
    uncore = pm.uncore_w * pm.nodes(result.n_ranks) * result.tts_us
    return (total + uncore) * MICRO


def _check_well_formed(segs: Sequence[Segment]) -> None:
    for a, b in zip(segs, segs[1:]):
        if b.t0_us != a.t1_us:
            raise MetricsError(f"segments not contiguous at {a.t1_us} us")
    for s in segs:
        if s.t1_us < s.t0_us:
            raise MetricsError(f"segment ends before it starts at {s.t0_us} us")


def avg_freq_ghz(segments: Segments) -> Fraction:
    """Mean frequency over the time cores were not asleep."""
    num = den = Fraction(0)
    for segs in segments:
        for s in segs:
            if not s.asleep:
                num += s.freq_ghz * s.duration
                den += s.duration
    return num / den if den else Fraction(0)


def avg_load_pct(result: SimResult, mode: str = "time") -> Fraction:
    """Share of core-time spent awake; ``mode="duty"`` also discounts gated cycles."""
    if mode not in ("time", "duty"):
        raise MetricsError(f"unknown load mode {mode!r}")
    total = result.n_ranks * result.tts_us
    if not total:
        return Fraction(0)
    busy = Fraction(0)
    for segs in result.segments:
        for s in segs:
            if not s.asleep:
                busy += s.duration * (s.duty if mode == "duty" else 1)
    return busy / total * 100


@dataclass(frozen=True)
class RunMetrics:
    tts_us: Fraction
    energy_j: Fraction
    avg_power_w: Fraction
    avg_freq_ghz: Fraction
    avg_load_pct: Fraction


def run_metrics(result: SimResult, pm: PowerModel | None = None,
                load_mode: str = "time") -> RunMetrics:
    e = energy(result, pm).total_j
    power = e / (result.tts_us * MICRO) if result.tts_us else Fraction(0)
    return RunMetrics(result.tts_us, e, power, avg_freq_ghz(result.segments),
                      avg_load_pct(result, load_mode))


@dataclass(frozen=True)
class ComparisonReport:
    baseline: RunMetrics
    candidate: RunMetrics
    overhead_pct: Fraction
    energy_saving_pct: Fraction
    power_saving_pct: Fraction


def _pct(base: Fraction, new: Fraction) -> Fraction:
    return (base - new) / base * 100 if base else Fraction(0)


def compare(baseline: SimResult, candidate: SimResult, pm: PowerModel | None = None,
            load_mode: str = "time") -> ComparisonReport:
    if baseline.workload_hash != candidate.workload_hash:
        raise MetricsError("baseline and candidate were run on different workloads")
    b = run_metrics(baseline, pm, load_mode)
    c = run_metrics(candidate, pm, load_mode)
    return ComparisonReport(b, c, -_pct(b.tts_us, c.tts_us), _pct(b.energy_j, c.energy_j),
                            _pct(b.avg_power_w, c.avg_power_w))


def report_row(report: ComparisonReport, policy) -> dict[str, str]:
    """One report CSV row describing the candidate run."""
    c = report.candidate
    timeout = short(policy.timeout_us) if policy.uses_timeout else ""
    return {
        "policy": policy.name,
        "timeout_us": timeout,
        "tts_us": fmt(c.tts_us, 3),
        "overhead_pct": fmt(report.overhead_pct, 2),
        "energy_j": fmt(c.energy_j, 9),
        "energy_saving_pct": fmt(report.energy_saving_pct, 2),
        "power_saving_pct": fmt(report.power_saving_pct, 2),
        "avg_freq_ghz": fmt(c.avg_freq_ghz, 4),
        "avg_load_pct": fmt(c.avg_load_pct, 2),
    }


def write_csv(path, columns: Sequence[str], rows: Sequence[Mapping[str, object]]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# -- phase-level analyses


@dataclass(frozen=True)
class PhaseSpan:
    index: int
    kind: str
    t0_us: Fraction
    t1_us: Fraction
    freq_time: Fraction  # integral of frequency over awake time
    awake_us: Fraction

    @property
    def duration(self) -> Fraction:
        return self.t1_us - self.t0_us


def phase_spans(segs: Sequence[Segment]) -> list[PhaseSpan]:
    spans: list[PhaseSpan] = []
    for s in segs:
        ft = s.freq_ghz * s.duration if not s.asleep else Fraction(0)
        aw = s.duration if not s.asleep else Fraction(0)
        if spans and spans[-1].index == s.phase_index:
            p = spans[-1]
            spans[-1] = PhaseSpan(p.index, p.kind, p.t0_us, s.t1_us, p.freq_time + ft,
                                  p.awake_us + aw)
        else:
            spans.append(PhaseSpan(s.phase_index, s.phase_kind, s.t0_us, s.t1_us, ft, aw))
    return spans


@dataclass
class RegionStats:
    count: int = 0
    time_us: Fraction = Fraction(0)
    app_freq_time: Fraction = Fraction(0)
    app_awake_us: Fraction = Fraction(0)
    mpi_freq_time: Fraction = Fraction(0)
    mpi_awake_us: Fraction = Fraction(0)

    @property
    def mean_app_freq_ghz(self) -> Fraction | None:
        return self.app_freq_time / self.app_awake_us if self.app_awake_us else None

    @property
    def mean_mpi_freq_ghz(self) -> Fraction | None:
        return self.mpi_freq_time / self.mpi_awake_us if self.mpi_awake_us else None


@dataclass(frozen=True)
class QuadrantResult:
    threshold_us: Fraction
    per_rank: tuple[dict[str, RegionStats], ...]
    total: dict[str, RegionStats]

    def counts(self, rank: int | None = None) -> dict[str, int]:
        stats = self.total if rank is None else self.per_rank[rank]
        return {k: v.count for k, v in stats.items()}

    def time_shares_pct(self, rank: int | None = None) -> dict[str, Fraction]:
        stats = self.total if rank is None else self.per_rank[rank]
        whole = sum((v.time_us for v in stats.values()), Fraction(0))
        return {k: (v.time_us / whole * 100 if whole else Fraction(0)) for k, v in stats.items()}


def classify(app_us, mpi_us, threshold_us=500) -> str:
    long_app, long_mpi = frac(app_us) > threshold_us, frac(mpi_us) > threshold_us
    if long_app:
        return "I" if long_mpi else "II"
    return "III" if long_mpi else "IV"


def _segments_of(x: Union[SimResult, Segments]) -> Segments:
    return x.segments if isinstance(x, SimResult) else x


def quadrant_analysis(result: Union[SimResult, Segments], threshold_us=500) -> QuadrantResult:
    """Classify every App phase immediately followed by an MPI phase."""
    theta = frac(threshold_us)
    per_rank = []
    total = {k: RegionStats() for k in REGIONS}
    for segs in _segments_of(result):
        mine = {k: RegionStats() for k in REGIONS}
        spans = phase_spans(segs)
        for a, m in zip(spans, spans[1:]):
            if a.kind != "app" or m.kind != "mpi" or m.index != a.index + 1:
                continue
            region = classify(a.duration, m.duration, theta)
            for st in (mine[region], total[region]):
                st.count += 1
                st.time_us += a.duration + m.duration
                st.app_freq_time += a.freq_time
                st.app_awake_us += a.awake_us
                st.mpi_freq_time += m.freq_time
                st.mpi_awake_us += m.awake_us
        per_rank.append(mine)
    return QuadrantResult(theta, tuple(per_rank), total)


def quadrant_rows(q: QuadrantResult) -> list[dict[str, str]]:
    rows = []
    labelled = [(str(r), st) for r, st in enumerate(q.per_rank)] + [("all", q.total)]
    for label, stats in labelled:
        whole = sum((v.time_us for v in stats.values()), Fraction(0))
        for region in REGIONS:
            st = stats[region]
            rows.append({
                "rank": label,
                "region": region,
                "count": st.count,
                "time_share_pct": fmt(st.time_us / whole * 100 if whole else 0, 2),
                "mean_app_freq_ghz": fmt(st.mean_app_freq_ghz or 0, 4),
                "mean_mpi_freq_ghz": fmt(st.mean_mpi_freq_ghz or 0, 4),
            })
    return rows


def duration_split(result: Union[SimResult, Segments],
                   threshold_us=500) -> tuple[dict[str, Fraction], ...]:
    """Per rank, percentage of time in long/short App and MPI phases."""
    theta = frac(threshold_us)
    out = []
    for segs in _segments_of(result):
        acc = dict.fromkeys(SPLIT_KEYS, Fraction(0))
        for p in phase_spans(segs):
            acc[f"{p.kind}_{'long' if p.duration > theta else 'short'}"] += p.duration
        whole = sum(acc.values(), Fraction(0))
        out.append({k: (v / whole * 100 if whole else Fraction(0)) for k, v in acc.items()})
    return tuple(out)


def split_rows(split: Sequence[Mapping[str, Fraction]]) -> list[dict[str, str]]:
    return [{"rank": r, **{f"{k}_pct": fmt(v, 2) for k, v in shares.items()}}
            for r, shares in enumerate(split)]
