import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slackdown import POLICY_NAMES, PolicySpec, SimulationError, simulate
from slackdown.hw import HwConfig
from slackdown.oracle import replay_oracle
from slackdown.result import (RegisterWrite, Segment, SegmentsFormatError, read_segments_csv,
                              write_segments_csv)
from slackdown.trace import Phase, Workload
from _support import FIXED_HW, GHZ_24, flagship, random_hw, random_workload

HIGH = F("2.4")
LOW = F("1.2")


def spec(name, **kw):
    kw.setdefault("high_freq", "2.4")
    return PolicySpec(name, **kw)


def hw_fields(seg):
    return (seg.t0_us, seg.t1_us, seg.freq_ghz, seg.duty, seg.sleep, seg.phase_kind)


def test_busy_wait_flagship():
    res = simulate(flagship(), spec("busy_wait"), FIXED_HW)
    assert res.tts_us == 3000 and res.rank_end_us == (3000, 3000)
    assert res.writes == ()
    assert [hw_fields(s) for s in res.segments[0]] == [
        (0, 1000, HIGH, 1, "active", "app"), (1000, 3000, HIGH, 1, "active", "mpi")]
    # the last rank to arrive spends no time in the collective
    assert [hw_fields(s) for s in res.segments[1]] == [
        (0, 3000, HIGH, 1, "active", "app"), (3000, 3000, HIGH, 1, "active", "mpi")]


def test_countdown_dvfs_flagship_timeline():
    res = simulate(flagship(), spec("countdown_dvfs", timeout_us=500), FIXED_HW)
    assert res.writes == (RegisterWrite(F(1500), 0, "freq", LOW),
                          RegisterWrite(F(3000), 0, "freq", HIGH))
    assert [hw_fields(s) for s in res.segments[0]] == [
        (0, 1000, HIGH, 1, "active", "app"),
        (1000, 2000, HIGH, 1, "active", "mpi"),  # fired at 1500, served at 2000
        (2000, 3000, LOW, 1, "active", "mpi")]
    assert res.tts_us == 3000


def test_countdown_throttle_flagship_timeline():
    res = simulate(flagship(), spec("countdown_throttle"), FIXED_HW)
    assert [(s.t0_us, s.duty) for s in res.segments[0]] == [(0, 1), (1000, 1), (2000, F(1, 8))]


def test_naive_dvfs_writes_every_phase():
    res = simulate(flagship(), spec("naive_dvfs"), FIXED_HW)
    assert res.writes == (
        RegisterWrite(F(1000), 0, "freq", LOW), RegisterWrite(F(3000), 0, "freq", HIGH),
        RegisterWrite(F(3000), 1, "freq", LOW), RegisterWrite(F(3000), 1, "freq", HIGH))
    assert [(s.t0_us, s.freq_ghz) for s in res.segments[0]] == [(0, HIGH), (1000, HIGH),
                                                              (1500, LOW)]


def test_timer_expiring_at_release_does_not_fire():
    wl = Workload.from_phases([[Phase.app(1000 * GHZ_24), Phase.mpi(0, sync="s")],
                               [Phase.app(1500 * GHZ_24), Phase.mpi(0, sync="s")]])
    res = simulate(wl, spec("countdown_dvfs", timeout_us=500), FIXED_HW)
    assert res.writes == ()


def test_callback_cost_defers_exit():
    wl = Workload.from_phases([[Phase.app(1000 * GHZ_24), Phase.mpi(0, sync="s")],
                               [Phase.app(1502 * GHZ_24), Phase.mpi(0, sync="s")]])
    res = simulate(wl, spec("countdown_dvfs", timeout_us=500, callback_cost_us=5), FIXED_HW)
    assert res.rank_end_us == (1505, 1502)
    assert [w.t_us for w in res.writes] == [1500, 1505]
    free = simulate(wl, spec("countdown_dvfs", timeout_us=500), FIXED_HW)
    assert free.rank_end_us == (1502, 1502)


def test_wait_mode_turbo_timeline():
    # rank 0 finishes first and sleeps; once it is asleep rank 1 alone gets 3.2 GHz
    hw = HwConfig(cstate_entry_us=10, cstate_wake_us=10)
    res = simulate(flagship(), PolicySpec("wait_mode"), hw)
    arrive = F(1000 * GHZ_24, 2600)
    asleep = arrive + 10
    done1 = asleep + (3000 * GHZ_24 - 2600 * asleep) / 3200
    assert res.rank_end_us == (done1 + 10, done1)
    assert [(s.t0_us, s.sleep) for s in res.segments[0]] == [
        (0, "active"), (arrive, "entering"), (asleep, "sleeping"), (done1, "waking")]
    assert [(s.t0_us, s.freq_ghz) for s in res.segments[1]][:2] == [(0, F("2.6")),
                                                                    (asleep, F("3.2"))]


def test_fixed_wait_and_mpi_work():
    wl = Workload.from_phases([[Phase.app(1000 * GHZ_24),
                                Phase.mpi(500 * GHZ_24, extra_wait_us=F("100.5"))]])
    res = simulate(wl, spec("busy_wait"), FIXED_HW)
    assert res.tts_us == F("1600.5")
    assert res.executed_cycles == (1500 * GHZ_24,)


def test_single_rank_compute():
    wl = Workload.from_phases([[Phase.app(2_400_000)]])
    assert simulate(wl, spec("busy_wait"), FIXED_HW).tts_us == 1000


def test_mpi_work_runs_at_lowered_speed():
    # naive throttling applies 1/8 duty at 500us; the MPI work then crawls
    wl = Workload.from_phases([[Phase.app(250 * GHZ_24), Phase.mpi(500 * GHZ_24)]])
    res = simulate(wl, spec("naive_throttle"), FIXED_HW)
    assert res.tts_us == 500 + 250 * 8


def test_zero_length_phases_are_kept():
    wl = Workload.from_phases([[Phase.app(0), Phase.mpi(0), Phase.app(GHZ_24)],
                               [Phase.app(GHZ_24)]])
    res = simulate(wl, spec("busy_wait"), FIXED_HW)
    assert [(s.phase_index, s.t0_us, s.t1_us) for s in res.segments[0]] == [
        (0, 0, 0), (1, 0, 0), (2, 0, 1)]


def test_spin_longer_than_wait_never_sleeps():
    wl = flagship()
    spin = simulate(wl, PolicySpec("spin_wait", spin_count=50_000))
    busy = simulate(wl, PolicySpec("busy_wait"))
    assert spin == busy


def test_spin_wait_sleeps_after_spin_time():
    res = simulate(flagship(), spec("spin_wait", spin_count=10_000), FIXED_HW)
    assert [(s.t0_us, s.sleep) for s in res.segments[0]] == [
        (0, "active"), (1000, "active"), (1500, "entering"), (1510, "sleeping"),
        (3000, "waking")]
    assert res.tts_us == 3010


def test_invalid_workload_raises():
    wl = Workload.from_phases([[Phase.mpi(0, sync="a")], [Phase.app(1)]])
    with pytest.raises(SimulationError, match="size < 2"):
        simulate(wl)


def test_deterministic_and_policy_attached():
    a = simulate(flagship(), PolicySpec("naive_dvfs"))
    b = simulate(flagship(), PolicySpec("naive_dvfs"))
    assert a == b and a.policy.name == "naive_dvfs"


def check_segments(wl, res):
    for r, segs in enumerate(res.segments):
        if not segs:
            assert not wl.ranks[r].phases and res.rank_end_us[r] == 0
            continue
        assert segs[0].t0_us == 0 and segs[-1].t1_us == res.rank_end_us[r]
        for a, b in zip(segs, segs[1:]):
            assert a.t1_us == b.t0_us and a.phase_index <= b.phase_index
        assert sorted({s.phase_index for s in segs}) == list(range(len(wl.ranks[r].phases)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(POLICY_NAMES))
def test_engine_matches_oracle(seed, name):
    rng = random.Random(seed)
    wl = random_workload(rng, max_ranks=5, max_phases=40, max_us=300)
    hw = random_hw(rng)
    pol = PolicySpec(name, timeout_us=rng.choice((20, 100, 500)), spin_count=rng.choice((0, 2000)),
                     high_freq=rng.choice(("turbo", "2.4")), callback_cost_us=rng.choice((0, 3)))
    res = simulate(wl, pol, hw)
    assert res == replay_oracle(wl, pol, hw, dt_us=1)
    check_segments(wl, res)
    assert res.executed_cycles == tuple(sum(p.cycles for p in r.phases) for r in wl.ranks)


def test_oracle_independent_of_step():
    rng = random.Random(4)
    wl = random_workload(rng, max_ranks=4, max_phases=30)
    pol = PolicySpec("countdown_dvfs", timeout_us=50)
    hw = HwConfig(sample_period_us=100)
    results = [replay_oracle(wl, pol, hw, dt_us=dt) for dt in (F(1, 2), 1, 5, 25, 100)]
    assert all(r == results[0] for r in results)
    with pytest.raises(ValueError):
        replay_oracle(wl, pol, hw, dt_us=3)


def test_segments_csv_roundtrip(tmp_path):
    res = simulate(flagship(), PolicySpec("wait_mode"))
    path = tmp_path / "seg.csv"
    write_segments_csv(res.segments, path)
    back = read_segments_csv(path)
    # times are written with 6 decimals, so compare at that resolution
    for mine, theirs in zip(res.segments, back):
        assert len(mine) == len(theirs)
        for a, b in zip(mine, theirs):
            assert abs(a.t0_us - b.t0_us) <= F(1, 10**6)
            assert (a.freq_ghz, a.duty, a.sleep, a.phase_index) == (
                b.freq_ghz, b.duty, b.sleep, b.phase_index)


@pytest.mark.parametrize("body, row", [
    ("0,0,1,2.4,1,active,0\n", 2),
    ("0,0,1,2.4,1,active,0,app\n0,1,x,2.4,1,active,0,app\n", 3),
    ("0,5,1,2.4,1,active,0,app\n", 2),
    ("0,0,1,2.4,1,dozing,0,app\n", 2),
])
def test_segments_csv_errors_name_row(tmp_path, body, row):
    path = tmp_path / "bad.csv"
    path.write_text("rank,t0_us,t1_us,freq_ghz,duty,sleep,phase_index,phase_kind\n" + body)
    with pytest.raises(SegmentsFormatError, match=f"row {row}"):
        read_segments_csv(path)


def test_segments_csv_header_required(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n")
    with pytest.raises(SegmentsFormatError, match="row 1"):
        read_segments_csv(path)
    path.write_text("")
    with pytest.raises(SegmentsFormatError, match="row 1"):
        read_segments_csv(path)


def test_segment_properties():
    s = Segment(F(1), F(4), HIGH, F(1), "sleeping", 0, "mpi")
    assert s.duration == 3 and s.asleep
