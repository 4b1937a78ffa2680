"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Lists are comma separated and maps use ``key:value`` pairs, e.g.
``turbo_table = 1:3.2, 2:2.6``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from ._num import frac
from .hw import TURBO, HwConfig
from .metrics import PowerModel
from .policy import POLICY_NAMES, PolicySpec


class ConfigError(ValueError):
    pass


def _list(text: str) -> tuple:
    items = tuple(x.strip() for x in text.split(",") if x.strip())
    if not items:
        raise ValueError("empty list")
    return tuple(frac(x) for x in items)


def _map(text: str) -> dict:
    out = {}
    for item in filter(None, (x.strip() for x in text.split(","))):
        k, sep, v = item.partition(":")
        if not sep:
            raise ValueError(f"expected key:value, got {item!r}")
        out[frac(k)] = frac(v)
    if not out:
        raise ValueError("empty map")
    return out


def _int(text: str) -> int:
    return int(text.strip())


def _str(text: str) -> str:
    return text.strip()


# key -> (section, field name, parser)
_KEYS: dict[str, tuple[str, str, Callable]] = {
    "workload": ("run", "workload", _str),
    "policy": ("run", "policy", _str),
    "baseline": ("run", "baseline", _str),
    "load_mode": ("run", "load_mode", _str),
    "threshold_us": ("run", "threshold_us", frac),
    "timeout_us": ("policy", "timeout_us", frac),
    "spin_count": ("policy", "spin_count", _int),
    "spin_iteration_us": ("policy", "spin_iteration_us", frac),
    "low_freq_ghz": ("policy", "low_freq_ghz", frac),
    "low_duty": ("policy", "low_duty", frac),
    "high_freq": ("policy", "high_freq", _str),
    "callback_cost_us": ("policy", "callback_cost_us", frac),
    "sample_period_us": ("hw", "sample_period_us", frac),
    "freq_levels_ghz": ("hw", "freq_levels_ghz", _list),
    "turbo_table": ("hw", "turbo_table_ghz", _map),
    "duty_levels": ("hw", "duty_levels", _list),
    "cstate_entry_us": ("hw", "cstate_entry_us", frac),
    "cstate_wake_us": ("hw", "cstate_wake_us", frac),
    "power_mode": ("power", "mode", _str),
    "power_table": ("power", "table", _map),
    "p_sleep_w": ("power", "p_sleep_w", frac),
    "p_static_w": ("power", "p_static_w", frac),
    "k_dyn": ("power", "k_dyn", frac),
    "alpha": ("power", "alpha", frac),
    "uncore_w": ("power", "uncore_w", frac),
    "cores_per_node": ("power", "cores_per_node", _int),
}
CONFIG_KEYS = tuple(_KEYS)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def read_config(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(p))


@dataclass(frozen=True)
class RunConfig:
    workload: Path | None = None
    policy: PolicySpec = field(default_factory=PolicySpec)
    baseline: PolicySpec = field(default_factory=PolicySpec)
    hw: HwConfig = field(default_factory=HwConfig)
    power: PowerModel = field(default_factory=PowerModel)
    load_mode: str = "time"
    threshold_us: object = 500


def build_run_config(values: Mapping[str, str]) -> RunConfig:
    """Turn raw string settings into validated model objects."""
    sections: dict[str, dict] = {"run": {}, "policy": {}, "hw": {}, "power": {}}
    for key, raw in values.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        section, name, parse = _KEYS[key]
        try:
            sections[section][name] = parse(raw)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None
    run = sections["run"]
    for key in ("policy", "baseline"):
        if key in run and run[key] not in POLICY_NAMES:
            raise ConfigError(f"{key}: unknown policy {run[key]!r}; "
                              f"choose from {', '.join(POLICY_NAMES)}")
    if run.get("load_mode", "time") not in ("time", "duty"):
        raise ConfigError("load_mode must be 'time' or 'duty'")
    try:
        hw = HwConfig(**sections["hw"])
        policy = PolicySpec(name=run.get("policy", "busy_wait"), **sections["policy"])
        # Same knobs for the baseline so both runs start from one high level.
        baseline = PolicySpec(name=run.get("baseline", "busy_wait"), **sections["policy"])
        power = PowerModel(**sections["power"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    for spec in (policy, baseline):
        try:
            hw.check_freq(spec.high_freq)
            if spec.name.endswith("dvfs"):
                hw.check_freq(spec.low_freq_ghz)
            if spec.name.endswith("throttle"):
                hw.check_duty(spec.low_duty)
        except ValueError as exc:
            raise ConfigError(f"policy {spec.name}: {exc}") from None
    if power.mode == "table":
        reachable: set = set()
        for spec in (policy, baseline):
            if spec.high_freq == TURBO:
                reachable |= set(hw.turbo_table_ghz.values())
            else:
                reachable.add(spec.high_freq)
            if spec.name.endswith("dvfs"):
                reachable.add(spec.low_freq_ghz)
        missing = sorted(f for f in reachable if f not in power.table)
        if missing:
            raise ConfigError("power_table lacks frequencies: "
                              + ", ".join(str(float(f)) for f in missing))
    workload = run.get("workload")
    return RunConfig(
        workload=Path(workload) if workload else None,
        policy=policy,
        baseline=baseline,
        hw=hw,
        power=power,
        load_mode=run.get("load_mode", "time"),
        threshold_us=run.get("threshold_us", frac(500)),
    )

