"""Power-management policies driven by MPI prologue/epilogue/timer events.

A policy instance belongs to one core.  The engine calls ``on_mpi_enter``
when the rank enters an MPI phase, ``on_timer`` when a timer the policy armed
expires while still inside that phase, and ``on_mpi_exit`` once the phase has
completed (after any wake-up latency).  Policies act only through the
``PolicyContext`` they are handed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from fractions import Fraction
from typing import Protocol

from ._num import frac
from .hw import TURBO

POLICY_NAMES = (
    "busy_wait",
    "wait_mode",
    "spin_wait",
    "naive_dvfs",
    "naive_throttle",
    "countdown_dvfs",
    "countdown_throttle",
)


class PolicyContext(Protocol):
    rank: int
    core: int

    @property
    def now_us(self) -> Fraction: ...

    def write_freq_request(self, ghz) -> None: ...

    def write_duty_request(self, duty) -> None: ...

    def request_sleep_at_wait(self, after_us=0) -> None: ...

    def arm_timer(self, delay_us) -> None: ...

    def disarm_timer(self) -> None: ...


@dataclass(frozen=True)
class PolicySpec:
    name: str = "busy_wait"
    timeout_us: Fraction = Fraction(500)
    spin_count: int = 10_000
    spin_iteration_us: Fraction = Fraction(1, 20)
    low_freq_ghz: Fraction = Fraction("1.2")
    low_duty: Fraction = Fraction(1, 8)
    high_freq: Fraction | str = TURBO
    # Wall-clock cost of each timer callback, charged before the phase exits.
    callback_cost_us: Fraction = Fraction(0)

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.name!r}; choose from {', '.join(POLICY_NAMES)}")
        set_ = object.__setattr__
        for name in ("timeout_us", "spin_iteration_us", "low_freq_ghz", "low_duty",
                     "callback_cost_us"):
            set_(self, name, frac(getattr(self, name)))
        if isinstance(self.high_freq, str) and self.high_freq.strip().lower() == TURBO:
            set_(self, "high_freq", TURBO)
        else:
            set_(self, "high_freq", frac(self.high_freq))
        if isinstance(self.spin_count, bool) or int(self.spin_count) != self.spin_count:
            raise ValueError("spin_count must be an integer")
        set_(self, "spin_count", int(self.spin_count))
        if self.timeout_us <= 0:
            raise ValueError("timeout_us must be > 0")
        if self.spin_count < 0:
            raise ValueError("spin_count must be >= 0")
        if self.spin_iteration_us < 0 or self.callback_cost_us < 0:
            raise ValueError("spin_iteration_us and callback_cost_us must be >= 0")

    @classmethod
    def from_params(cls, name: str, params: dict | None = None) -> PolicySpec:
        known = {f.name for f in fields(cls)} - {"name"}
        params = dict(params or {})
        unknown = set(params) - known
        if unknown:
            raise ValueError(f"unknown policy parameter(s): {', '.join(sorted(unknown))}")
        return cls(name=name, **params)

    def with_(self, **changes) -> PolicySpec:
        return replace(self, **changes)

    @property
    def spin_time_us(self) -> Fraction:
        return self.spin_count * self.spin_iteration_us

    @property
    def uses_timeout(self) -> bool:
        return self.name.startswith("countdown")


class Policy:
    """Default behaviour is busy-waiting: run at the high level, never react."""

    def __init__(self, spec: PolicySpec):
        self.spec = spec

    def initial_freq(self):
        return self.spec.high_freq

    def initial_duty(self):
        return Fraction(1)

    def on_mpi_enter(self, ctx: PolicyContext) -> None:
        pass

    def on_timer(self, ctx: PolicyContext) -> None:
        raise AssertionError(f"{self.spec.name} never arms a timer")

    def on_mpi_exit(self, ctx: PolicyContext) -> None:
        pass


class BusyWait(Policy):
    pass


class WaitMode(Policy):
    def on_mpi_enter(self, ctx):
        ctx.request_sleep_at_wait(0)


class SpinWait(Policy):
    def on_mpi_enter(self, ctx):
        ctx.request_sleep_at_wait(self.spec.spin_time_us)


class NaiveDvfs(Policy):
    def on_mpi_enter(self, ctx):
        ctx.write_freq_request(self.spec.low_freq_ghz)

    def on_mpi_exit(self, ctx):
        ctx.write_freq_request(self.spec.high_freq)


class NaiveThrottle(Policy):
    def on_mpi_enter(self, ctx):
        ctx.write_duty_request(self.spec.low_duty)

    def on_mpi_exit(self, ctx):
        ctx.write_duty_request(1)


class _Countdown(Policy):
    fired = False

    def on_mpi_enter(self, ctx):
        self.fired = False
        ctx.arm_timer(self.spec.timeout_us)

    def on_timer(self, ctx):
        self.fired = True
        self.lower(ctx)

    def on_mpi_exit(self, ctx):
        ctx.disarm_timer()
        # Only undo what the callback did; short phases leave the register alone.
        if self.fired:
            self.restore(ctx)
            self.fired = False

    def lower(self, ctx):
        raise NotImplementedError

    def restore(self, ctx):
        raise NotImplementedError


class CountdownDvfs(_Countdown):
    def lower(self, ctx):
        ctx.write_freq_request(self.spec.low_freq_ghz)

    def restore(self, ctx):
        ctx.write_freq_request(self.spec.high_freq)


class CountdownThrottle(_Countdown):
    def lower(self, ctx):
        ctx.write_duty_request(self.spec.low_duty)

    def restore(self, ctx):
        ctx.write_duty_request(1)


_CLASSES = {
    "busy_wait": BusyWait,
    "wait_mode": WaitMode,
    "spin_wait": SpinWait,
    "naive_dvfs": NaiveDvfs,
    "naive_throttle": NaiveThrottle,
    "countdown_dvfs": CountdownDvfs,
    "countdown_throttle": CountdownThrottle,
}


def make_policy(spec: PolicySpec) -> Policy:
    return _CLASSES[spec.name](spec)
