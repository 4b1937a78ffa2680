from fractions import Fraction

import pytest

from slackdown.hw import TURBO
from slackdown.policy import POLICY_NAMES, PolicySpec, make_policy


class FakeCtx:
    def __init__(self):
        self.rank = self.core = 0
        self.now_us = Fraction(0)
        self.calls = []

    def write_freq_request(self, ghz):
        self.calls.append(("freq", ghz))

    def write_duty_request(self, duty):
        self.calls.append(("duty", duty))

    def request_sleep_at_wait(self, after_us=0):
        self.calls.append(("sleep", after_us))

    def arm_timer(self, delay_us):
        self.calls.append(("arm", delay_us))

    def disarm_timer(self):
        self.calls.append(("disarm",))


def run(name, fire, **params):
    p = make_policy(PolicySpec(name, **params))
    ctx = FakeCtx()
    p.on_mpi_enter(ctx)
    if fire:
        p.on_timer(ctx)
    p.on_mpi_exit(ctx)
    return ctx.calls


def test_defaults():
    spec = PolicySpec()
    assert spec.name == "busy_wait" and spec.high_freq == TURBO
    assert spec.timeout_us == 500 and spec.spin_count == 10_000
    assert spec.low_freq_ghz == Fraction("1.2") and spec.low_duty == Fraction(1, 8)
    assert spec.spin_time_us == 500


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown policy"):
        PolicySpec("sleepy")
    with pytest.raises(ValueError, match="timeout"):
        PolicySpec("countdown_dvfs", timeout_us=0)
    with pytest.raises(ValueError, match="spin_count"):
        PolicySpec("spin_wait", spin_count=-1)
    with pytest.raises(ValueError, match="unknown policy parameter"):
        PolicySpec.from_params("busy_wait", {"colour": 1})
    assert PolicySpec(high_freq=" Turbo ").high_freq == TURBO
    assert PolicySpec(high_freq=2.4).high_freq == Fraction("2.4")


def test_busy_wait_never_acts():
    assert run("busy_wait", False) == []
    with pytest.raises(AssertionError):
        make_policy(PolicySpec("busy_wait")).on_timer(FakeCtx())


def test_sleep_policies():
    assert run("wait_mode", False) == [("sleep", 0)]
    assert run("spin_wait", False, spin_count=200) == [("sleep", Fraction(10))]


def test_naive_policies_write_on_every_phase():
    assert run("naive_dvfs", False, high_freq="2.4") == [("freq", Fraction("1.2")),
                                                        ("freq", Fraction("2.4"))]
    assert run("naive_throttle", False) == [("duty", Fraction(1, 8)), ("duty", 1)]


@pytest.mark.parametrize("name, low, high", [
    ("countdown_dvfs", ("freq", Fraction("1.2")), ("freq", TURBO)),
    ("countdown_throttle", ("duty", Fraction(1, 8)), ("duty", 1)),
])
def test_countdown_restores_only_after_firing(name, low, high):
    assert run(name, False) == [("arm", Fraction(500)), ("disarm",)]
    assert run(name, True) == [("arm", Fraction(500)), low, ("disarm",), high]


def test_countdown_state_resets_between_phases():
    p = make_policy(PolicySpec("countdown_dvfs", timeout_us=50))
    ctx = FakeCtx()
    p.on_mpi_enter(ctx)
    p.on_timer(ctx)
    p.on_mpi_exit(ctx)
    ctx.calls.clear()
    p.on_mpi_enter(ctx)
    p.on_mpi_exit(ctx)
    assert ctx.calls == [("arm", Fraction(50)), ("disarm",)]


def test_factory_covers_all_names():
    assert {type(make_policy(PolicySpec(n))).__name__ for n in POLICY_NAMES} == {
        "BusyWait", "WaitMode", "SpinWait", "NaiveDvfs", "NaiveThrottle", "CountdownDvfs",
        "CountdownThrottle"}


def test_with_and_flags():
    spec = PolicySpec("countdown_throttle").with_(timeout_us=10)
    assert spec.timeout_us == 10 and spec.uses_timeout
    assert not PolicySpec("naive_dvfs").uses_timeout
