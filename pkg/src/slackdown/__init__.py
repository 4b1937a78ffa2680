"""Trace-driven simulation of fine-grain power management in MPI slack."""

from .engine import SimulationError, simulate
from .hw import TURBO, HwConfig, HwModel
from .metrics import PowerModel, compare, energy, quadrant_analysis
from .oracle import replay_oracle
from .policy import POLICY_NAMES, PolicySpec
from .result import Segment, SimResult
from .trace import (Phase, Workload, gen_balanced, gen_unbalanced, load_workload,
                    save_workload, validate)

__all__ = [
    "TURBO", "HwConfig", "HwModel", "POLICY_NAMES", "Phase", "PolicySpec", "PowerModel",
    "Segment", "SimResult", "SimulationError", "Workload", "compare", "energy",
    "gen_balanced", "gen_unbalanced", "load_workload", "quadrant_analysis", "replay_oracle",
    "save_workload", "simulate", "validate",
]
