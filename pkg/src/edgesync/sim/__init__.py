"""Discrete-event edge/cloud simulation: policies, kernel and metrics."""

from .kernel import CostModel, CycleRecord, NetworkModel, SimulationResult, run_simulation
from .metrics import MetricsReport, metrics_report
from .policies import POLICY_NAMES, PolicyConfig, make_policy

__all__ = [
    "CostModel", "CycleRecord", "NetworkModel", "SimulationResult", "run_simulation",
    "MetricsReport", "metrics_report", "POLICY_NAMES", "PolicyConfig", "make_policy",
]
