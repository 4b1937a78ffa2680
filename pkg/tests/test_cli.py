import csv
import json
import subprocess
import sys

import pytest

from slackdown.cli import main
from slackdown.trace import load_workload, save_workload
from _support import flagship, pairs_workload


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def flag_wl(tmp_path):
    path = tmp_path / "flag.json"
    save_workload(flagship(), path)
    return path


FLAG_CONFIG = """\
# two-level machine
turbo_table = 1:2.4
high_freq = 2.4
power_table = 1.2:4, 2.4:10
p_sleep_w = 1
uncore_w = 0
"""


def test_generate_balanced(tmp_path, capsys):
    code = main(["generate", "balanced", "--ranks", "4", "--iters", "100", "--app-us", "200",
                 "--mpi-us", "50", "--out", str(tmp_path)])
    assert code == 0
    wl = load_workload(tmp_path / "workload.json")
    assert sum(len(r.phases) for r in wl.ranks) == 800
    assert "800 phases" in capsys.readouterr().out


def test_generate_is_deterministic_per_seed(tmp_path):
    args = ["generate", "unbalanced", "--ranks", "3", "--iters", "5", "--diag-app-us", "900",
            "--other-app-us", "300", "--jitter-pct", "10"]
    for sub, seed in (("a", "7"), ("b", "7"), ("c", "8")):
        assert main(args + ["--seed", seed, "--out", str(tmp_path / sub)]) == 0
    text = {s: (tmp_path / s / "workload.json").read_bytes() for s in "abc"}
    assert text["a"] == text["b"] != text["c"]


def test_generate_rejects_single_rank(tmp_path, capsys):
    code = main(["generate", "balanced", "--ranks", "1", "--iters", "2", "--app-us", "1",
                 "--mpi-us", "1", "--out", str(tmp_path)])
    assert code == 2 and "error" in capsys.readouterr().err


def test_simulate_flagship(tmp_path, flag_wl, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(FLAG_CONFIG)
    code = main(["simulate", "--config", str(cfg), "--workload", str(flag_wl),
                 "--policy", "countdown_dvfs", "--out", str(tmp_path / "o")])
    assert code == 0
    (row,) = rows(tmp_path / "o" / "report.csv")
    assert row["overhead_pct"] == "0.00" and row["energy_saving_pct"] == "10.00"
    assert row["energy_j"] == "0.054000000"
    assert (tmp_path / "o" / "summary.txt").read_text() == capsys.readouterr().out
    seg = rows(tmp_path / "o" / "segments.csv")
    assert [r["freq_ghz"] for r in seg if r["rank"] == "0"] == ["2.4", "2.4", "1.2"]


def test_simulate_against_itself_has_zero_deltas(tmp_path, flag_wl):
    code = main(["simulate", "--workload", str(flag_wl), "--policy", "wait_mode",
                 "--baseline", "wait_mode", "--out", str(tmp_path)])
    assert code == 0
    (row,) = rows(tmp_path / "report.csv")
    assert (row["overhead_pct"], row["energy_saving_pct"], row["power_saving_pct"]) == (
        "0.00", "0.00", "0.00")


def test_simulate_errors(tmp_path, flag_wl, capsys):
    assert main(["simulate", "--workload", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err
    assert main(["simulate", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["simulate", "--workload", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--workload", str(flag_wl), "--policy", "nap"]) == 2
    # an unreachable power table entry is a configuration error
    assert main(["simulate", "--workload", str(flag_wl), "--set", "power_table=1.2:4",
                 "--out", str(tmp_path)]) == 2


def test_sweep_rows_sorted_and_consistent(tmp_path, flag_wl):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(FLAG_CONFIG + "policy = countdown_dvfs\n")
    assert main(["sweep", "--config", str(cfg), "--workload", str(flag_wl),
                 "--timeouts", "5000,100,500,100", "--out", str(tmp_path / "s")]) == 0
    sweep = rows(tmp_path / "s" / "sweep.csv")
    assert [r["sweep_value"] for r in sweep] == ["100", "500", "5000"]
    assert sweep[-1]["overhead_pct"] == "0.00" and sweep[-1]["energy_saving_pct"] == "0.00"
    assert main(["simulate", "--config", str(cfg), "--workload", str(flag_wl),
                 "--timeout-us", "500", "--out", str(tmp_path / "one")]) == 0
    (single,) = rows(tmp_path / "one" / "report.csv")
    middle = {k: v for k, v in sweep[1].items() if k not in ("sweep_param", "sweep_value")}
    assert middle == single


def test_sweep_parallel_matches_serial(tmp_path, flag_wl):
    common = ["sweep", "--workload", str(flag_wl), "--policy", "spin_wait",
              "--spin-counts", "0,100,1000,20000"]
    assert main(common + ["--out", str(tmp_path / "a")]) == 0
    assert main(common + ["--jobs", "3", "--out", str(tmp_path / "b")]) == 0
    serial, parallel = (tmp_path / d / "sweep.csv" for d in "ab")
    assert serial.read_bytes() == parallel.read_bytes()


def test_sweep_parameter_policy_mismatch(tmp_path, flag_wl, capsys):
    assert main(["sweep", "--workload", str(flag_wl), "--policy", "busy_wait",
                 "--timeouts", "10", "--out", str(tmp_path)]) == 2
    assert "countdown" in capsys.readouterr().err
    assert main(["sweep", "--workload", str(flag_wl), "--policy", "countdown_dvfs",
                 "--sample-periods", "100,250", "--out", str(tmp_path)]) == 0
    assert len(rows(tmp_path / "sweep.csv")) == 2


def test_analyze_counts_regions(tmp_path):
    wl = tmp_path / "pairs.json"
    save_workload(pairs_workload([(600, 700), (600, 100), (100, 700), (100, 100)]), wl)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(FLAG_CONFIG)
    assert main(["simulate", "--config", str(cfg), "--workload", str(wl),
                 "--out", str(tmp_path)]) == 0
    assert main(["analyze", str(tmp_path / "segments.csv"), "--out", str(tmp_path / "a")]) == 0
    quad = rows(tmp_path / "a" / "quadrant.csv")
    assert [(r["region"], r["count"]) for r in quad if r["rank"] == "all"] == [
        ("I", "1"), ("II", "1"), ("III", "1"), ("IV", "1")]
    split = rows(tmp_path / "a" / "duration_split.csv")
    assert split[0]["rank"] == "0"


def test_analyze_empty_and_malformed(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("rank,t0_us,t1_us,freq_ghz,duty,sleep,phase_index,phase_kind\n")
    assert main(["analyze", str(empty), "--out", str(tmp_path / "e")]) == 0
    quad = rows(tmp_path / "e" / "quadrant.csv")
    assert quad and all(r["count"] == "0" for r in quad)
    bad = tmp_path / "bad.csv"
    bad.write_text(empty.read_text() + "0,0,1,2.4,1,active,0,app\n0,1,2,fast,1,active,0,app\n")
    assert main(["analyze", str(bad), "--out", str(tmp_path)]) == 2
    assert "row 3" in capsys.readouterr().err


def test_global_flags_before_subcommand(tmp_path, flag_wl):
    assert main(["--out", str(tmp_path / "x"), "simulate", "--workload", str(flag_wl)]) == 0
    assert (tmp_path / "x" / "report.csv").exists()


def test_config_errors_name_the_line(tmp_path, flag_wl, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("# ok\n\ntimeout_us = 100\ncolour = blue\n")
    assert main(["simulate", "--config", str(cfg), "--workload", str(flag_wl)]) == 2
    assert "bad.cfg:4" in capsys.readouterr().err


def test_flags_override_config(tmp_path, flag_wl):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(FLAG_CONFIG + "policy = naive_dvfs\ntimeout_us = 100\n")
    assert main(["simulate", "--config", str(cfg), "--workload", str(flag_wl),
                 "--policy", "countdown_dvfs", "--timeout-us", "250",
                 "--out", str(tmp_path)]) == 0
    (row,) = rows(tmp_path / "report.csv")
    assert row["policy"] == "countdown_dvfs" and row["timeout_us"] == "250"


def test_module_entry_point_and_log_level(tmp_path, flag_wl):
    env = {"SLACKDOWN_LOG": "info", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-m", "slackdown", "simulate", "--workload",
                           str(flag_wl), "--out", str(tmp_path)], capture_output=True,
                          text=True, env=env)
    assert proc.returncode == 0
    assert "INFO slackdown" in proc.stderr
    assert "overhead_pct" in proc.stdout


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out
    assert main([]) == 2


def test_workload_json_is_canonical(tmp_path):
    main(["generate", "balanced", "--ranks", "2", "--iters", "1", "--app-us", "10",
          "--mpi-us", "5", "--out", str(tmp_path)])
    data = json.loads((tmp_path / "workload.json").read_text())
    assert len(data["ranks"]) == 2
