"""Discrete-event simulator for a metadata cluster."""

from .engine import CausalityError, EventKind, EventQueue, SimEvent
from .experiment import ExperimentWarmup, InvariantViolation, Simulation, build_requests, run_experiment
from .server import ServerModel
from .workload import generate_workload, peak_rate, rate_at

__all__ = [
    "CausalityError", "EventKind", "EventQueue", "SimEvent", "ExperimentWarmup",
    "InvariantViolation", "Simulation", "build_requests", "run_experiment", "ServerModel",
    "generate_workload", "peak_rate", "rate_at",
]
