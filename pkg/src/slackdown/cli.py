"""Command-line front end: generate, simulate, sweep, analyze.

Exit status is 0 on success, 1 when a simulation or model invariant fails
and 2 for usage, configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

from ._num import fmt, frac, short
from .config import CONFIG_KEYS, ConfigError, RunConfig, build_run_config, read_config
from .engine import SimulationError, simulate
from .metrics import (QUADRANT_COLUMNS, REPORT_COLUMNS, SPLIT_COLUMNS, MetricsError, compare,
                      duration_split, quadrant_analysis, quadrant_rows, report_row, split_rows,
                      write_csv)
from .policy import POLICY_NAMES, PolicySpec
from .result import SegmentsFormatError, read_segments_csv, write_segments_csv
from .trace import (Workload, WorkloadFormatError, gen_balanced, gen_unbalanced,
                    load_workload, save_workload)

log = logging.getLogger("slackdown")

EXIT_OK, EXIT_SIM, EXIT_USAGE = 0, 1, 2
LOG_ENV = "SLACKDOWN_LOG"
SWEEP_COLUMNS = ("sweep_param", "sweep_value") + REPORT_COLUMNS


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    level_name = os.environ.get(LOG_ENV, "error").strip().lower()
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(level_name)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("slackdown")
    root.handlers[:] = [handler]
    root.setLevel(level or logging.ERROR)
    root.propagate = False
    if level is None:
        log.error("ignoring %s=%r; expected error, info or debug", LOG_ENV, level_name)


def _number(text: str) -> Fraction:
    try:
        return frac(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _number_list(text: str) -> list[Fraction]:
    items = [x for x in text.split(",") if x.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return [_number(x) for x in items]


def _key_value(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or key.strip() not in CONFIG_KEYS:
        raise argparse.ArgumentTypeError(
            f"expected KEY=VALUE with KEY one of: {', '.join(CONFIG_KEYS)}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                        help="flat key = value settings file")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS,
                        help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="random seed for generators (default 0)")

    p = argparse.ArgumentParser(prog="slackdown", parents=[common],
                                description="Simulate power management of MPI slack.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("generate", parents=[common], help="write a synthetic workload")
    gsub = g.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in ("balanced", "unbalanced"):
        k = gsub.add_parser(kind, parents=[common])
        k.add_argument("--ranks", type=int, required=True)
        k.add_argument("--iters", type=int, required=True)
        k.add_argument("--jitter-pct", type=_number, default=Fraction(0))
        k.add_argument("--ref-freq-ghz", type=_number, default=Fraction("2.4"))
        k.add_argument("--name", default="workload.json", help="output file name")
        if kind == "balanced":
            k.add_argument("--app-us", type=_number, required=True)
            k.add_argument("--mpi-us", type=_number, required=True)
            k.add_argument("--mpi-work-fraction", type=_number, default=Fraction(0))
        else:
            k.add_argument("--diag-rank", type=int, default=0)
            k.add_argument("--diag-app-us", type=_number, required=True)
            k.add_argument("--other-app-us", type=_number, required=True)

    def run_flags(sp):
        sp.add_argument("--workload", metavar="PATH")
        sp.add_argument("--policy", choices=POLICY_NAMES)
        sp.add_argument("--baseline", choices=POLICY_NAMES)
        sp.add_argument("--timeout-us", type=_number)
        sp.add_argument("--set", dest="overrides", type=_key_value, action="append",
                        default=[], metavar="KEY=VALUE", help="override any config key")

    s = sub.add_parser("simulate", parents=[common], help="compare a policy with the baseline")
    run_flags(s)

    w = sub.add_parser("sweep", parents=[common], help="compare over a parameter list")
    run_flags(w)
    grid = w.add_mutually_exclusive_group(required=True)
    grid.add_argument("--timeouts", type=_number_list, metavar="LIST")
    grid.add_argument("--spin-counts", type=_number_list, metavar="LIST")
    grid.add_argument("--sample-periods", type=_number_list, metavar="LIST")
    w.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    a = sub.add_parser("analyze", parents=[common], help="quadrant and duration analyses")
    a.add_argument("segments", metavar="SEGMENTS_CSV")
    a.add_argument("--threshold-us", type=_number)
    return p


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", "."))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _run_config(args) -> RunConfig:
    values = read_config(args.config) if getattr(args, "config", None) else {}
    values.update(dict(getattr(args, "overrides", []) or []))
    for flag, key in (("workload", "workload"), ("policy", "policy"),
                      ("baseline", "baseline"), ("timeout_us", "timeout_us"),
                      ("threshold_us", "threshold_us")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = str(v)
    return build_run_config(values)


def _load(cfg: RunConfig) -> Workload:
    if cfg.workload is None:
        raise UsageError("no workload given (use --workload or 'workload =' in the config)")
    try:
        return load_workload(cfg.workload)
    except FileNotFoundError:
        raise UsageError(f"workload file not found: {cfg.workload}") from None
    except OSError as exc:
        raise UsageError(f"cannot read workload {cfg.workload}: {exc.strerror}") from None


def _label(spec: PolicySpec) -> str:
    if spec.uses_timeout:
        return f"{spec.name}(timeout_us={short(spec.timeout_us)})"
    if spec.name == "spin_wait":
        return f"{spec.name}(spin_count={spec.spin_count})"
    return spec.name


# -- generate


def cmd_generate(args) -> int:
    seed = getattr(args, "seed", 0)
    try:
        if args.kind == "balanced":
            wl = gen_balanced(args.ranks, args.iters, args.app_us, args.mpi_us,
                              args.mpi_work_fraction, args.jitter_pct, seed, args.ref_freq_ghz)
        else:
            wl = gen_unbalanced(args.ranks, args.iters, args.diag_rank, args.diag_app_us,
                                args.other_app_us, seed, args.ref_freq_ghz, args.jitter_pct)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    path = _out_dir(args) / args.name
    save_workload(wl, path)
    n_phases = sum(len(r.phases) for r in wl.ranks)
    ref = wl.meta.get("ref_freq_ghz", "2.4")
    print(f"wrote {path}: {wl.n_ranks} ranks, {n_phases} phases "
          f"({n_phases // wl.n_ranks} per rank), nominal durations at {ref} GHz")
    for key in sorted(wl.meta):
        print(f"  {key} = {wl.meta[key]}")
    return EXIT_OK


# -- simulate


def _summary(wl: Workload, cfg: RunConfig, report) -> str:
    b, c = report.baseline, report.candidate
    lines = [
        f"workload      {wl.digest()[:16]}  ranks={wl.n_ranks} "
        f"phases={sum(len(r.phases) for r in wl.ranks)}",
        f"hardware      sample_period_us={short(cfg.hw.sample_period_us)} "
        f"cstate_entry_us={short(cfg.hw.cstate_entry_us)} "
        f"cstate_wake_us={short(cfg.hw.cstate_wake_us)}",
        f"baseline      {_label(cfg.baseline)}",
        f"candidate     {_label(cfg.policy)}",
        "",
        f"{'':14}{'baseline':>16}{'candidate':>16}",
        f"{'tts_us':14}{fmt(b.tts_us, 3):>16}{fmt(c.tts_us, 3):>16}",
        f"{'energy_j':14}{fmt(b.energy_j, 6):>16}{fmt(c.energy_j, 6):>16}",
        f"{'avg_power_w':14}{fmt(b.avg_power_w, 3):>16}{fmt(c.avg_power_w, 3):>16}",
        f"{'avg_freq_ghz':14}{fmt(b.avg_freq_ghz, 4):>16}{fmt(c.avg_freq_ghz, 4):>16}",
        f"{'avg_load_pct':14}{fmt(b.avg_load_pct, 2):>16}{fmt(c.avg_load_pct, 2):>16}",
        "",
        f"overhead_pct       {fmt(report.overhead_pct, 2)}",
        f"energy_saving_pct  {fmt(report.energy_saving_pct, 2)}",
        f"power_saving_pct   {fmt(report.power_saving_pct, 2)}",
    ]
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    wl = _load(cfg)
    out = _out_dir(args)
    log.info("baseline %s on %d ranks", cfg.baseline.name, wl.n_ranks)
    base = simulate(wl, cfg.baseline, cfg.hw)
    log.info("candidate %s", _label(cfg.policy))
    cand = simulate(wl, cfg.policy, cfg.hw)
    report = compare(base, cand, cfg.power, cfg.load_mode)
    write_csv(out / "report.csv", REPORT_COLUMNS, [report_row(report, cfg.policy)])
    write_segments_csv(cand.segments, out / "segments.csv")
    write_segments_csv(base.segments, out / "baseline_segments.csv")
    text = _summary(wl, cfg, report)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- sweep

_SWEEPS = {
    "timeouts": ("timeout_us", "countdown"),
    "spin_counts": ("spin_count", "spin_wait"),
    "sample_periods": ("sample_period_us", None),
}


def _sweep_point(job: tuple) -> tuple[Fraction, dict]:
    value, wl, baseline, spec, hw, pm, load_mode = job
    base = simulate(wl, baseline, hw)
    cand = simulate(wl, spec, hw)
    return value, report_row(compare(base, cand, pm, load_mode), spec)


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    which = next(k for k in _SWEEPS if getattr(args, k) is not None)
    param, needs = _SWEEPS[which]
    if needs and not cfg.policy.name.startswith(needs):
        raise UsageError(f"--{which.replace('_', '-')} needs a {needs} policy, "
                         f"not {cfg.policy.name}")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    values = sorted(set(getattr(args, which)))
    wl = _load(cfg)
    jobs = []
    for v in values:
        spec, hw = cfg.policy, cfg.hw
        try:
            if param == "sample_period_us":
                hw = replace(cfg.hw, sample_period_us=v)
            elif param == "spin_count":
                if v.denominator != 1:
                    raise ValueError(f"spin count must be an integer, got {short(v)}")
                spec = spec.with_(spin_count=int(v))
            else:
                spec = spec.with_(timeout_us=v)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        jobs.append((v, wl, cfg.baseline, spec, hw, cfg.power, cfg.load_mode))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(args.jobs, len(jobs))) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows = [{"sweep_param": param, "sweep_value": short(v), **row} for v, row in results]
    out = _out_dir(args)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    print(f"wrote {out / 'sweep.csv'}: {len(rows)} rows over {param}")
    for row in rows:
        print(f"  {param}={row['sweep_value']:>8}  overhead_pct={row['overhead_pct']:>7}  "
              f"energy_saving_pct={row['energy_saving_pct']:>7}")
    return EXIT_OK


# -- analyze


def cmd_analyze(args) -> int:
    values = read_config(args.config) if getattr(args, "config", None) else {}
    theta = args.threshold_us if args.threshold_us is not None \
        else frac(values.get("threshold_us", "500"))
    try:
        segments = read_segments_csv(args.segments)
    except FileNotFoundError:
        raise UsageError(f"segments file not found: {args.segments}") from None
    except SegmentsFormatError as exc:
        raise UsageError(f"{args.segments}: {exc}") from None
    q = quadrant_analysis(segments, theta)
    split = duration_split(segments, theta)
    out = _out_dir(args)
    write_csv(out / "quadrant.csv", QUADRANT_COLUMNS, quadrant_rows(q))
    write_csv(out / "duration_split.csv", SPLIT_COLUMNS, split_rows(split))
    counts = q.counts()
    print(f"wrote {out / 'quadrant.csv'} and {out / 'duration_split.csv'} "
          f"(threshold {short(theta)} us)")
    print("  pairs by region: " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


_COMMANDS = {"generate": cmd_generate, "simulate": cmd_simulate, "sweep": cmd_sweep,
             "analyze": cmd_analyze}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError, WorkloadFormatError) as exc:
        print(f"slackdown: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"slackdown: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SimulationError, MetricsError) as exc:
        print(f"slackdown: simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
