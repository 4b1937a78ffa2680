"""Per-core power-state machine with sampled request registers.

Frequency and duty-cycle requests are latched into a register and only read
by the power controller on a global sampling grid (multiples of
``sample_period_us``).  A write at time ``t`` is served at the first grid
instant strictly after ``t``; if another write lands before that instant the
first one is never seen.  Sleep entry and wake-up take fixed latencies, and
cores requesting TURBO run at a frequency that depends on how many cores are
awake.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from ._num import frac, short

TURBO = "turbo"


class SleepState(str, Enum):
    ACTIVE = "active"
    ENTERING = "entering"
    SLEEPING = "sleeping"
    WAKING = "waking"
    OFF = "off"  # rank finished; the core idles and no longer counts as awake


class HwStateError(RuntimeError):
    pass


def _default_turbo():
    return {1: Fraction("3.2"), 2: Fraction("2.6")}


def _default_duty():
    return tuple(Fraction(k, 8) for k in range(1, 9))


@dataclass(frozen=True)
class HwConfig:
    sample_period_us: Fraction = Fraction(500)
    freq_levels_ghz: tuple[Fraction, ...] = (Fraction("1.2"), Fraction("2.4"))
    turbo_table_ghz: dict[int, Fraction] = field(default_factory=_default_turbo)
    duty_levels: tuple[Fraction, ...] = field(default_factory=_default_duty)
    cstate_entry_us: Fraction = Fraction(10)
    cstate_wake_us: Fraction = Fraction(10)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "sample_period_us", frac(self.sample_period_us))
        set_(self, "freq_levels_ghz", tuple(sorted(frac(f) for f in self.freq_levels_ghz)))
        set_(self, "turbo_table_ghz",
             {int(k): frac(v) for k, v in sorted(self.turbo_table_ghz.items())})
        set_(self, "duty_levels", tuple(sorted(frac(d) for d in self.duty_levels)))
        set_(self, "cstate_entry_us", frac(self.cstate_entry_us))
        set_(self, "cstate_wake_us", frac(self.cstate_wake_us))
        self.validate()

    def validate(self) -> None:
        if self.sample_period_us <= 0:
            raise ValueError("sample_period_us must be > 0")
        if not self.freq_levels_ghz or any(f <= 0 for f in self.freq_levels_ghz):
            raise ValueError("freq_levels_ghz must be non-empty and positive")
        if not self.turbo_table_ghz or min(self.turbo_table_ghz) < 1:
            raise ValueError("turbo table needs keys >= 1")
        top = max(self.freq_levels_ghz)
        if any(v < top for v in self.turbo_table_ghz.values()):
            raise ValueError("turbo frequencies must be >= the highest non-turbo level")
        if any(not 0 < d <= 1 for d in self.duty_levels) or Fraction(1) not in self.duty_levels:
            raise ValueError("duty levels must lie in (0, 1] and include 1.0")
        if self.cstate_entry_us < 0 or self.cstate_wake_us < 0:
            raise ValueError("C-state latencies must be >= 0")

    @property
    def all_freq_levels(self) -> tuple[Fraction, ...]:
        return tuple(sorted(set(self.freq_levels_ghz) | set(self.turbo_table_ghz.values())))

    def turbo(self, active_cores: int) -> Fraction:
        keys = [k for k in self.turbo_table_ghz if k <= active_cores]
        key = max(keys) if keys else min(self.turbo_table_ghz)
        return self.turbo_table_ghz[key]

    def next_sample(self, t) -> Fraction:
        """First grid instant strictly after ``t``."""
        p = self.sample_period_us
        return (math.floor(frac(t) / p) + 1) * p

    def check_freq(self, ghz):
        if ghz == TURBO:
            return TURBO
        f = frac(ghz)
        if f not in self.all_freq_levels:
            levels = ", ".join(short(v) for v in self.all_freq_levels)
            raise ValueError(f"unknown frequency {short(f)} GHz; valid levels: {levels}, turbo")
        return f

    def check_duty(self, duty) -> Fraction:
        d = frac(duty)
        if d not in self.duty_levels:
            levels = ", ".join(short(v) for v in self.duty_levels)
            raise ValueError(f"unknown duty level {short(d)}; valid levels: {levels}")
        return d


@dataclass
class CoreState:
    freq_request: Fraction | str
    freq_request_t: Fraction | None
    duty_request: Fraction
    duty_request_t: Fraction | None
    freq_applied: Fraction | str  # last request the controller picked up
    freq_effective_ghz: Fraction
    duty_effective: Fraction
    sleep: SleepState = SleepState.ACTIVE
    sleep_until: Fraction | None = None

    @property
    def speed(self) -> Fraction:
        """Cycles per microsecond."""
        if self.sleep is not SleepState.ACTIVE:
            return Fraction(0)
        return self.freq_effective_ghz * 1000 * self.duty_effective


class HwModel:
    """Owned by exactly one simulation; callers must present non-decreasing
    times.  ``sample`` at a grid instant must be called before any write made
    at that same instant (the engine guarantees this through event priority;
    ``advance_to`` does it for standalone use)."""

    def __init__(self, config: HwConfig, n_cores: int, initial_freq=TURBO,
                 initial_duty=1, t0=0):
        self.config = config
        f = config.check_freq(initial_freq)
        d = config.check_duty(initial_duty)
        self.cores = [
            CoreState(f, None, d, None, f, Fraction(0), d) for _ in range(n_cores)
        ]
        self.pending: set[Fraction] = set()
        self.turbo_ghz = config.turbo(n_cores)
        for c in self.cores:
            c.freq_effective_ghz = self._resolve(c.freq_applied)
        self.history: list[list[tuple]] = [[] for _ in range(n_cores)]
        self._commit(frac(t0))

    # -- helpers

    def _resolve(self, applied) -> Fraction:
        return self.turbo_ghz if applied == TURBO else applied

    def _snapshot(self, c: CoreState) -> tuple:
        return (c.freq_effective_ghz, c.duty_effective, c.sleep)

    def _commit(self, t: Fraction) -> None:
        for c, hist in zip(self.cores, self.history):
            snap = self._snapshot(c)
            if hist and hist[-1][0] == t:
                hist[-1] = (t, *snap)
                if len(hist) > 1 and hist[-2][1:] == snap:
                    hist.pop()
            elif not hist or hist[-1][1:] != snap:
                hist.append((t, *snap))

    def active_count(self) -> int:
        return sum(c.sleep not in (SleepState.SLEEPING, SleepState.OFF) for c in self.cores)

    def _rearbitrate(self) -> None:
        self.turbo_ghz = self.config.turbo(self.active_count())
        for c in self.cores:
            c.freq_effective_ghz = self._resolve(c.freq_applied)

    # -- request registers

    def write_freq_request(self, core: int, ghz, t) -> Fraction:
        """Latch a frequency request; returns the instant that will serve it."""
        t = frac(t)
        f = self.config.check_freq(ghz)
        c = self.cores[core]
        c.freq_request, c.freq_request_t = f, t
        s = self.config.next_sample(t)
        self.pending.add(s)
        return s

    def write_duty_request(self, core: int, duty, t) -> Fraction:
        t = frac(t)
        d = self.config.check_duty(duty)
        c = self.cores[core]
        c.duty_request, c.duty_request_t = d, t
        s = self.config.next_sample(t)
        self.pending.add(s)
        return s

    def sample(self, t) -> None:
        """Controller reads every core's request registers at grid instant t."""
        t = frac(t)
        if (t / self.config.sample_period_us).denominator != 1:
            raise HwStateError(f"sample at {t} is off the sampling grid")
        self.pending.discard(t)
        for c in self.cores:
            if c.freq_request_t is not None and c.freq_request_t < t:
                c.freq_applied = c.freq_request
            if c.duty_request_t is not None and c.duty_request_t < t:
                c.duty_effective = c.duty_request
        self._rearbitrate()
        self._commit(t)

    def advance_to(self, t) -> None:
        """Serve every pending sampling instant at or before t."""
        t = frac(t)
        for s in sorted(self.pending):
            if s > t:
                break
            self.sample(s)

    # -- sleep state machine

    def sleep(self, core: int, t) -> Fraction:
        """Start entering sleep; returns when the core is fully asleep."""
        t = frac(t)
        c = self.cores[core]
        if c.sleep is not SleepState.ACTIVE:
            raise HwStateError(f"core {core}: sleep requested while {c.sleep.value}")
        until = t + self.config.cstate_entry_us
        if until == t:
            c.sleep, c.sleep_until = SleepState.SLEEPING, None
        else:
            c.sleep, c.sleep_until = SleepState.ENTERING, until
        self._rearbitrate()
        self._commit(t)
        return until

    def sleep_entered(self, core: int, t) -> None:
        t = frac(t)
        c = self.cores[core]
        if c.sleep is not SleepState.ENTERING:
            raise HwStateError(f"core {core}: entry completion while {c.sleep.value}")
        c.sleep, c.sleep_until = SleepState.SLEEPING, None
        self._rearbitrate()
        self._commit(t)

    def wake(self, core: int, t) -> Fraction:
        """Start waking; returns the instant the core executes again."""
        t = frac(t)
        c = self.cores[core]
        if c.sleep not in (SleepState.ENTERING, SleepState.SLEEPING):
            raise HwStateError(f"core {core}: wake requested while {c.sleep.value}")
        until = t + self.config.cstate_wake_us
        if until == t:
            c.sleep, c.sleep_until = SleepState.ACTIVE, None
        else:
            c.sleep, c.sleep_until = SleepState.WAKING, until
        self._rearbitrate()
        self._commit(t)
        return until

    def wake_done(self, core: int, t) -> None:
        t = frac(t)
        c = self.cores[core]
        if c.sleep is not SleepState.WAKING:
            raise HwStateError(f"core {core}: wake completion while {c.sleep.value}")
        c.sleep, c.sleep_until = SleepState.ACTIVE, None
        self._rearbitrate()
        self._commit(t)

    def power_off(self, core: int, t) -> None:
        t = frac(t)
        self.cores[core].sleep = SleepState.OFF
        self._rearbitrate()
        self._commit(t)

    # -- queries

    def speed(self, core: int) -> Fraction:
        return self.cores[core].speed

    def freq_effective(self, core: int, t) -> Fraction:
        """Effective frequency at time t (standalone use: serves pending samples)."""
        self.advance_to(t)
        return self._at(core, frac(t))[1]

    def _at(self, core: int, t: Fraction) -> tuple:
        hist = self.history[core]
        i = bisect.bisect_right(hist, t, key=lambda h: h[0]) - 1
        if i < 0:
            raise ValueError(f"time {t} precedes the simulated horizon")
        return hist[i]

    def effective_speed(self, core: int, t) -> Fraction:
        """Cycles/us at time t; right-continuous at change instants."""
        _, f, d, sleep = self._at(core, frac(t))
        return f * 1000 * d if sleep is SleepState.ACTIVE else Fraction(0)

