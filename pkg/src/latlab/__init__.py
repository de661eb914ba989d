"""Discrete-event simulation of cluster scheduler launch latency."""

from .bench import (
    ExperimentPlan,
    UtilizationReport,
    analytic_oracle,
    emit_report,
    run_experiment,
    run_trial,
)
from .engine import Engine, Event, EventKind, SplitMix64, Trace, audit_trace, new_engine
from .model import (
    ClusterSpec,
    ConfigError,
    JobArray,
    LatencyProfile,
    ParameterSet,
    SimulationAbort,
    StageLatency,
    Task,
    TaskState,
    TrialFailed,
    TrialResult,
    derive_parameter_set,
    benchmark_parameter_sets,
    utilization,
    validate_workload,
)
from .multilevel import BundlePlan, bundle, multilevel_run, plan_bundles
from .policies import PRESETS, PolicyConfig, get_preset, make_scheduler, simulate

__version__ = "0.1.0"

__all__ = [
    "BundlePlan", "ClusterSpec", "ConfigError", "Engine", "Event", "EventKind",
    "ExperimentPlan", "JobArray", "LatencyProfile", "PRESETS", "ParameterSet", "PolicyConfig",
    "SimulationAbort", "SplitMix64", "StageLatency", "Task", "TaskState", "Trace",
    "TrialFailed", "TrialResult", "UtilizationReport", "analytic_oracle", "audit_trace",
    "bundle", "derive_parameter_set", "emit_report", "get_preset", "make_scheduler",
    "multilevel_run", "new_engine", "benchmark_parameter_sets", "plan_bundles", "run_experiment",
    "run_trial", "simulate", "utilization", "validate_workload",
]
