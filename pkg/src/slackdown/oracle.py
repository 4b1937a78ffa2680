"""Fixed-step replay used to cross-check the event engine.

This is a deliberately separate implementation of the same semantics: no
event queue, no lazy sampling and no shared policy objects.  Time walks a
fixed lattice of ``dt_us`` steps; at every lattice point on the sampling grid
the request registers are resolved by scanning the full write log for the
latest write strictly before that instant, and turbo frequency is recomputed
from the live count of awake cores whenever speed is needed.

Inside a step, rank-local completions (work exhausted, timers, latencies)
are located exactly rather than rounded to the lattice, so cycle accounting
stays exact and the result does not depend on ``dt_us``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from ._num import frac
from .hw import TURBO, HwConfig
from .policy import PolicySpec
from .result import RegisterWrite, SegmentRecorder, SimResult, canonical_writes
from .trace import Workload


@dataclass
class _R:
    phases: tuple
    idx: int = -1
    stage: str = "start"  # app | work | wait | exiting | done
    remaining: Fraction = Fraction(0)
    executed: list = field(default_factory=list)
    sleep: str = "active"
    sleep_t: Fraction | None = None  # entry or wake completion time
    wait_end: Fraction | None = None
    spin_at: Fraction | None = None
    sleep_delay: Fraction | None = None
    timer_at: Fraction | None = None
    fired: bool = False
    cost_until: Fraction = Fraction(0)
    exit_at: Fraction | None = None
    applied_freq: object = None
    applied_duty: Fraction = Fraction(1)
    freq_log: list = field(default_factory=list)
    duty_log: list = field(default_factory=list)
    end: Fraction | None = None
    rec: SegmentRecorder = field(default_factory=SegmentRecorder)
    segs: tuple = ()


def replay_oracle(workload: Workload, policy: PolicySpec, hw: HwConfig | None = None,
                  dt_us=1) -> SimResult:
    hw = hw or HwConfig()
    dt = frac(dt_us)
    P = hw.sample_period_us
    if dt <= 0 or (P / dt).denominator != 1:
        raise ValueError("dt_us must be positive and divide sample_period_us")
    name = policy.name
    high = policy.high_freq
    ranks = [_R(rt.phases, applied_freq=high) for rt in workload.ranks]
    members: dict[str, set[int]] = {}
    for i, r in enumerate(ranks):
        for ph in r.phases:
            if ph.sync_id is not None:
                members.setdefault(ph.sync_id, set()).add(i)
    arrived: dict[str, set[int]] = {s: set() for s in members}
    writes: list[RegisterWrite] = []

    def awake() -> int:
        return sum(r.sleep in ("active", "entering", "waking") for r in ranks)

    def freq_of(r: _R) -> Fraction:
        return hw.turbo(awake()) if r.applied_freq == TURBO else r.applied_freq

    def speed_of(r: _R) -> Fraction:
        if r.sleep != "active" or r.stage not in ("app", "work"):
            return Fraction(0)
        return freq_of(r) * 1000 * r.applied_duty

    def write(i: int, t: Fraction, register: str, value) -> None:
        r = ranks[i]
        if register == "freq":
            value = hw.check_freq(value)
            r.freq_log.append((t, value))
        else:
            value = hw.check_duty(value)
            r.duty_log.append((t, value))
        writes.append(RegisterWrite(t, i, register, value))

    def latch(t: Fraction) -> None:
        for r in ranks:
            for tw, v in reversed(r.freq_log):
                if tw < t:
                    r.applied_freq = v
                    break
            for tw, v in reversed(r.duty_log):
                if tw < t:
                    r.applied_duty = v
                    break

    def begin(i: int, t: Fraction) -> None:
        r = ranks[i]
        r.idx += 1
        r.spin_at = r.timer_at = r.wait_end = r.exit_at = None
        if r.idx == len(r.phases):
            r.stage, r.end, r.sleep = "done", t, "off"
            r.segs = r.rec.close(t)
            return
        ph = r.phases[r.idx]
        r.remaining = Fraction(ph.cycles)
        r.executed.append(Fraction(0))
        r.rec.update(t, (freq_of(r), r.applied_duty, r.sleep, r.idx, ph.kind.value))
        if ph.is_app:
            r.stage = "app"
            return
        r.stage = "work"
        r.sleep_delay = None
        r.fired = False
        if name == "naive_dvfs":
            write(i, t, "freq", policy.low_freq_ghz)
        elif name == "naive_throttle":
            write(i, t, "duty", policy.low_duty)
        elif name in ("countdown_dvfs", "countdown_throttle"):
            r.timer_at = t + policy.timeout_us
        elif name == "wait_mode":
            r.sleep_delay = Fraction(0)
        elif name == "spin_wait":
            r.sleep_delay = policy.spin_count * policy.spin_iteration_us

    def leave(i: int, t: Fraction) -> None:
        r = ranks[i]
        if name == "naive_dvfs":
            write(i, t, "freq", high)
        elif name == "naive_throttle":
            write(i, t, "duty", 1)
        elif name == "countdown_dvfs" and r.fired:
            write(i, t, "freq", high)
        elif name == "countdown_throttle" and r.fired:
            write(i, t, "duty", 1)
        begin(i, t)

    def released(i: int, t: Fraction) -> bool:
        r = ranks[i]
        ph = r.phases[r.idx]
        if ph.sync_id is not None:
            return arrived[ph.sync_id] == members[ph.sync_id]
        return r.wait_end is not None and r.wait_end <= t

    def settle(t: Fraction) -> None:
        if (t / P).denominator == 1:
            latch(t)
        while True:
            changed = True
            while changed:
                changed = False
                for i, r in enumerate(ranks):  # work exhausted
                    if r.stage in ("app", "work") and r.remaining == 0:
                        changed = True
                        if r.stage == "app":
                            begin(i, t)
                            continue
                        r.stage = "wait"
                        ph = r.phases[r.idx]
                        if ph.sync_id is not None:
                            arrived[ph.sync_id].add(i)
                        else:
                            r.wait_end = t + ph.extra_wait_us
                        if r.sleep_delay is not None:
                            r.spin_at = t + r.sleep_delay
                for i, r in enumerate(ranks):  # releases and deferred exits
                    if r.stage == "wait" and released(i, t):
                        changed = True
                        r.spin_at = None
                        if r.sleep in ("entering", "sleeping"):
                            r.sleep, r.sleep_t = "waking", t + hw.cstate_wake_us
                            r.stage = "exiting"
                            r.exit_at = None
                        else:
                            r.stage = "exiting"
                            r.exit_at = max(t, r.cost_until)
                    if r.stage == "exiting" and r.exit_at is not None and r.exit_at <= t:
                        changed = True
                        r.cost_until = Fraction(0)
                        leave(i, t)
                for r in ranks:  # entry latency over
                    if r.sleep == "entering" and r.sleep_t <= t:
                        changed = True
                        r.sleep, r.sleep_t = "sleeping", None
                for r in ranks:  # wake latency over
                    if r.sleep == "waking" and r.sleep_t <= t:
                        changed = True
                        r.sleep, r.sleep_t = "active", None
                        r.exit_at = max(t, r.cost_until)
            fired = False
            for i, r in enumerate(ranks):
                if r.timer_at is not None and r.timer_at <= t and r.stage in ("work", "wait"):
                    fired = True
                    r.timer_at = None
                    r.fired = True
                    if name == "countdown_dvfs":
                        write(i, t, "freq", policy.low_freq_ghz)
                    else:
                        write(i, t, "duty", policy.low_duty)
                    r.cost_until = max(r.cost_until, t) + policy.callback_cost_us
                if r.spin_at is not None and r.spin_at <= t and r.stage == "wait":
                    fired = True
                    r.spin_at = None
                    if hw.cstate_entry_us:
                        r.sleep, r.sleep_t = "entering", t + hw.cstate_entry_us
                    else:
                        r.sleep = "sleeping"
            if not fired:
                break
        for r in ranks:
            if r.stage != "done":
                ph = r.phases[r.idx]
                r.rec.update(t, (freq_of(r), r.applied_duty, r.sleep, r.idx, ph.kind.value))

    def next_due(t: Fraction) -> Fraction | None:
        cands = []
        for r in ranks:
            s = speed_of(r)
            if s:
                cands.append(t + r.remaining / s)
            for x in (r.sleep_t, r.wait_end if r.stage == "wait" else None, r.spin_at,
                      r.timer_at, r.exit_at):
                if x is not None and x > t:
                    cands.append(x)
        return min(cands) if cands else None

    per_grid = int(P / dt)
    last = Fraction(0)  # work integrated up to here

    def step_to(t: Fraction) -> None:
        nonlocal last
        span = t - last
        if span:
            for r in ranks:
                s = speed_of(r)
                if s:
                    r.remaining -= s * span
                    r.executed[r.idx] += s * span
        last = t
        settle(t)

    for i in range(len(ranks)):
        begin(i, Fraction(0))
    settle(Fraction(0))
    due = next_due(Fraction(0))
    k = 0
    idle_periods = 0
    while any(r.stage != "done" for r in ranks):
        k += 1
        tl = k * dt
        while due is not None and due <= tl:
            step_to(due)
            due = next_due(due)
            idle_periods = 0
        if k % per_grid == 0:
            if last != tl:
                step_to(tl)
                due = next_due(tl)
            if due is None:
                idle_periods += 1
                if idle_periods > 2:
                    stuck = [i for i, r in enumerate(ranks) if r.stage != "done"]
                    raise RuntimeError(f"oracle: ranks {stuck} can make no progress")

    totals = []
    for r in ranks:
        if any(done != ph.cycles for done, ph in zip(r.executed, r.phases)):
            raise RuntimeError("oracle: work not conserved")
        totals.append(sum(ph.cycles for ph in r.phases))
    ends = tuple(r.end for r in ranks)
    return SimResult(
        segments=tuple(r.segs for r in ranks),
        tts_us=max(ends),
        rank_end_us=ends,
        executed_cycles=tuple(totals),
        writes=canonical_writes(writes),
        workload_hash=workload.digest(),
        policy=policy,
    )
