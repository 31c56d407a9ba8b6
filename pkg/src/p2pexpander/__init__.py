"""Churn-resilient expander overlay simulation under Byzantine nodes."""
from .adversary import Adversary, AdversaryConfig, budget_fn
from .churn import ChurnConfig, ConfigError, Schedule, alive_set, build_schedule
from .construct import ConstructParams, accept_policy, join, phase_boundary
from .engine import ProtocolParams, RunConfig, RunResult, Simulation, run, sweep
from .entry import EntryManager
from .metrics import (
    PhaseReport,
    conductance_estimate,
    conductance_exact,
    core_extract,
    endpoint_uniformity,
    honest_component_fraction,
)
from .overlay import InvariantViolation, LinkOutcome, Overlay, OverlaySnapshot
from .walk import TokenPool, WalkParams

__all__ = [
    "Adversary", "AdversaryConfig", "budget_fn",
    "ChurnConfig", "ConfigError", "Schedule", "alive_set", "build_schedule",
    "ConstructParams", "accept_policy", "join", "phase_boundary",
    "ProtocolParams", "RunConfig", "RunResult", "Simulation", "run", "sweep",
    "EntryManager",
    "PhaseReport", "conductance_estimate", "conductance_exact", "core_extract",
    "endpoint_uniformity", "honest_component_fraction",
    "InvariantViolation", "LinkOutcome", "Overlay", "OverlaySnapshot",
    "TokenPool", "WalkParams",
]
