"""Deterministic discrete-event simulation of a workload under a policy.

One simulated core per rank.  Time is exact (``Fraction`` microseconds) and
work is exact (``Fraction`` cycles), so a phase finishes precisely when its
cycle budget is exhausted no matter how many speed changes it straddles.

Events at the same instant are processed in this order: controller sample,
work completion, release (sync or fixed wait), sleep entry done, wake done,
timers.  Releases precede timers so that a phase ending exactly when its
timer expires does not fire it.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction

from ._num import frac
from .hw import HwConfig, HwModel, SleepState
from .policy import Policy, PolicySpec, make_policy
from .result import RegisterWrite, SegmentRecorder, SimResult, canonical_writes
from .trace import Workload, validate

log = logging.getLogger(__name__)

# event priorities
SAMPLE, WORK_DONE, RELEASE, SLEEP_ENTERED, WAKE_DONE, TIMER = range(6)


class SimulationError(RuntimeError):
    pass


@dataclass
class _Rank:
    rank: int
    phases: tuple
    policy: Policy
    idx: int = 0
    stage: str = "app"  # app | work | wait | done
    remaining: Fraction = Fraction(0)
    speed: Fraction = Fraction(0)
    executed: list = field(default_factory=list)
    sleep_after: Fraction | None = None
    busy_until: Fraction = Fraction(0)
    end: Fraction | None = None
    segments: tuple = ()
    tokens: dict = field(default_factory=lambda: dict.fromkeys(
        (WORK_DONE, RELEASE, SLEEP_ENTERED, WAKE_DONE, TIMER, "spin"), 0))
    recorder: SegmentRecorder = field(default_factory=SegmentRecorder)

    @property
    def phase(self):
        return self.phases[self.idx]


class _Ctx:
    """Capabilities handed to a policy while it handles one event."""

    def __init__(self, engine: _Engine, r: _Rank):
        self._engine = engine
        self._r = r
        self.rank = self.core = r.rank

    @property
    def now_us(self) -> Fraction:
        return self._engine.now

    def write_freq_request(self, ghz) -> None:
        self._engine.write(self._r, "freq", ghz)

    def write_duty_request(self, duty) -> None:
        self._engine.write(self._r, "duty", duty)

    def request_sleep_at_wait(self, after_us=0) -> None:
        self._r.sleep_after = frac(after_us)

    def arm_timer(self, delay_us) -> None:
        self._engine.schedule(self._engine.now + frac(delay_us), TIMER, self._r, TIMER)

    def disarm_timer(self) -> None:
        self._r.tokens[TIMER] += 1


class _Engine:
    def __init__(self, workload: Workload, spec: PolicySpec, hw: HwConfig):
        self.workload = workload
        self.spec = spec
        self.config = hw
        self.now = Fraction(0)
        self.heap: list = []
        self.seq = itertools.count()
        self.ranks = [_Rank(rt.rank_id, rt.phases, make_policy(spec)) for rt in workload.ranks]
        first = self.ranks[0].policy
        self.hw = HwModel(hw, len(self.ranks), first.initial_freq(), first.initial_duty())
        self.members = {sid: set(rs) for sid, rs in workload.sync_groups().items()}
        self.arrived: dict[str, set[int]] = {sid: set() for sid in self.members}
        self.writes: list[RegisterWrite] = []
        self.last_advance = Fraction(0)

    # -- scheduling

    def schedule(self, t: Fraction, prio: int, r: _Rank | None, token_key=None, payload=None):
        if r is not None:
            key = token_key if token_key is not None else prio
            r.tokens[key] += 1
            token = (key, r.tokens[key])
        else:
            token = None
        heapq.heappush(self.heap, (t, prio, next(self.seq), r.rank if r else -1, token, payload))

    def write(self, r: _Rank, register: str, value) -> None:
        if register == "freq":
            s = self.hw.write_freq_request(r.rank, value, self.now)
            value = self.config.check_freq(value)
        else:
            s = self.hw.write_duty_request(r.rank, value, self.now)
            value = self.config.check_duty(value)
        self.writes.append(RegisterWrite(self.now, r.rank, register, value))
        if s not in self._scheduled_samples:
            self._scheduled_samples.add(s)
            self.schedule(s, SAMPLE, None, payload=s)

    # -- main loop

    def run(self) -> SimResult:
        self._scheduled_samples: set[Fraction] = set()
        for r in self.ranks:
            self._start_phase(r)
        self._refresh_all()
        while self.heap:
            t, prio, _, rank, token, payload = heapq.heappop(self.heap)
            r = self.ranks[rank] if rank >= 0 else None
            if r is not None and r.tokens[token[0]] != token[1]:
                continue
            self._advance(t)
            self.now = t
            self._dispatch(prio, r, token, payload)
            self._refresh_all()
        stuck = [r.rank for r in self.ranks if r.stage != "done"]
        if stuck:
            raise SimulationError(f"deadlock: ranks {stuck} never finished")
        return self._result()

    def _dispatch(self, prio, r, token, payload):
        if prio == SAMPLE:
            self._scheduled_samples.discard(payload)
            self.hw.sample(payload)
        elif prio == WORK_DONE:
            if r.remaining != 0:
                raise SimulationError(f"rank {r.rank}: completion with {r.remaining} cycles left")
            if r.stage == "app":
                r.idx += 1
                self._start_phase(r)
            else:
                self._work_done(r)
        elif prio == RELEASE:
            if payload == "exit":
                self._exit(r)
            else:
                self._release(r)
        elif prio == SLEEP_ENTERED:
            self.hw.sleep_entered(r.rank, self.now)
        elif prio == WAKE_DONE:
            self.hw.wake_done(r.rank, self.now)
            self._exit_or_defer(r)
        elif prio == TIMER and token[0] == "spin":
            self.hw.sleep(r.rank, self.now)
            until = self.hw.cores[r.rank].sleep_until
            if until is not None:
                self.schedule(until, SLEEP_ENTERED, r)
        elif prio == TIMER:
            if r.stage not in ("work", "wait"):
                raise AssertionError(f"rank {r.rank}: timer fired outside an MPI phase")
            r.policy.on_timer(_Ctx(self, r))
            r.busy_until = max(r.busy_until, self.now) + self.spec.callback_cost_us

    def _advance(self, t: Fraction) -> None:
        dt = t - self.last_advance
        if dt:
            for r in self.ranks:
                if r.stage in ("app", "work") and r.speed:
                    done = r.speed * dt
                    r.remaining -= done
                    r.executed[r.idx] += done
        self.last_advance = t

    def _refresh_all(self) -> None:
        for r in self.ranks:
            self._refresh(r)

    def _refresh(self, r: _Rank) -> None:
        if r.stage == "done":
            return
        core = self.hw.cores[r.rank]
        r.recorder.update(self.now, (core.freq_effective_ghz, core.duty_effective,
                                     core.sleep.value, r.idx, r.phase.kind.value))
        if r.stage in ("app", "work") and r.remaining:
            speed = core.speed
            if speed != r.speed:
                if not speed:
                    raise SimulationError(f"rank {r.rank}: core stalled during work")
                r.speed = speed
                self.schedule(self.now + r.remaining / speed, WORK_DONE, r)

    # -- phase state machine

    def _start_phase(self, r: _Rank) -> None:
        while True:
            if r.idx == len(r.phases):
                r.stage = "done"
                r.end = self.now
                r.segments = r.recorder.close(self.now)
                self.hw.power_off(r.rank, self.now)
                return
            ph = r.phase
            r.executed.append(Fraction(0))
            r.remaining = Fraction(ph.cycles)
            r.speed = Fraction(0)
            if ph.is_app:
                r.stage = "app"
            else:
                r.stage = "work"
                r.sleep_after = None
                r.policy.on_mpi_enter(_Ctx(self, r))
            self._refresh(r)
            if ph.cycles:
                return
            if not ph.is_app:
                self._work_done(r)
                return
            r.idx += 1

    def _work_done(self, r: _Rank) -> None:
        r.tokens[WORK_DONE] += 1
        r.speed = Fraction(0)
        r.stage = "wait"
        ph = r.phase
        if ph.sync_id is not None:
            self.arrived[ph.sync_id].add(r.rank)
            if self.arrived[ph.sync_id] == self.members[ph.sync_id]:
                for m in sorted(self.members[ph.sync_id]):
                    self._release(self.ranks[m])
                return
        elif not ph.extra_wait_us:
            self._release(r)
            return
        else:
            self.schedule(self.now + ph.extra_wait_us, RELEASE, r)
        if r.sleep_after is not None:
            self.schedule(self.now + r.sleep_after, TIMER, r, "spin")

    def _release(self, r: _Rank) -> None:
        r.tokens["spin"] += 1
        r.tokens[SLEEP_ENTERED] += 1
        if self.hw.cores[r.rank].sleep in (SleepState.ENTERING, SleepState.SLEEPING):
            until = self.hw.wake(r.rank, self.now)
            if until > self.now:
                self.schedule(until, WAKE_DONE, r)
                return
        self._exit_or_defer(r)

    def _exit_or_defer(self, r: _Rank) -> None:
        if r.busy_until > self.now:
            self.schedule(r.busy_until, RELEASE, r, payload="exit")
        else:
            self._exit(r)

    def _exit(self, r: _Rank) -> None:
        r.policy.on_mpi_exit(_Ctx(self, r))
        r.tokens[TIMER] += 1
        r.busy_until = Fraction(0)
        if r.executed[r.idx] != r.phase.cycles:
            raise SimulationError(f"rank {r.rank} phase {r.idx}: work not conserved")
        r.idx += 1
        self._start_phase(r)

    def _result(self) -> SimResult:
        totals = []
        for r in self.ranks:
            for i, (done, ph) in enumerate(zip(r.executed, r.phases)):
                if done != ph.cycles:
                    raise SimulationError(f"rank {r.rank} phase {i}: work not conserved")
            totals.append(sum(ph.cycles for ph in r.phases))
        ends = tuple(r.end for r in self.ranks)
        return SimResult(
            segments=tuple(r.segments for r in self.ranks),
            tts_us=max(ends),
            rank_end_us=ends,
            executed_cycles=tuple(totals),
            writes=canonical_writes(self.writes),
            workload_hash=self.workload.digest(),
            policy=self.spec,
        )


def simulate(workload: Workload, policy: PolicySpec | None = None,
             hw: HwConfig | None = None) -> SimResult:
    """Run ``workload`` under ``policy`` on hardware ``hw``."""
    policy = policy or PolicySpec()
    hw = hw or HwConfig()
    problems = validate(workload)
    if problems:
        raise SimulationError("invalid workload: " + "; ".join(map(str, problems[:5])))
    log.debug("simulate %s ranks=%d policy=%s", workload.meta.get("generator", "?"),
              workload.n_ranks, policy.name)
    return _Engine(workload, policy, hw).run()
