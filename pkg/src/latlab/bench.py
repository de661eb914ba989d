"""Experiment harness: trials, plans, aggregation, analytic cross-check, reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

from .engine import Trace, derive_seed
from .model import (
    STAGES,
    ClusterSpec,
    ConfigError,
    JobArray,
    LatencyProfile,
    ParameterSet,
    SimulationAbort,
    StageLatency,
    TrialFailed,
    TrialResult,
    fmt_seconds,
    benchmark_parameter_sets,
    to_us,
    utilization,
)
from .multilevel import bundle, resolve_bundle_factor
from .policies import PRESETS, PolicyConfig, SimulationOutcome, get_preset, simulate

MODES = ("direct", "multilevel")
PUBLISHED_POLICIES = ("slurm-like", "gridengine-like", "mesos-like")
SLOTS_PER_NODE = 32

CSV_HEADER = [
    "policy", "mode", "param_set", "t_sec", "n", "P", "N", "trial", "seed", "T_job_sec",
    "T_total_sec", "U", "launches", "stage_submission_sec", "stage_queue_sec",
    "stage_ident_sec", "stage_select_sec", "stage_alloc_sec", "stage_dispatch_sec",
    "stage_term_sec",
]

CALIBRATION_NOTE = ("Preset latencies are calibrated to the qualitative shape of the published "
                    "utilization curves, not measured; the published point values are not "
                    "recoverable and are not reproduced.")


def resolve_policy(policy: Union[str, PolicyConfig]) -> PolicyConfig:
    return get_preset(policy) if isinstance(policy, str) else policy


@dataclass
class TrialRun:
    """Everything one trial produced, for audits beyond the headline result."""

    result: TrialResult
    outcome: SimulationOutcome
    arrays: list[JobArray]
    cluster: ClusterSpec
    trace: Optional[Trace]


def trial_workload(params: ParameterSet, mode: str, bundle_factor=None, eps=0) -> list[JobArray]:
    """One array of N sleep tasks of t, or its bundled form."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    job = JobArray("job", params.total_tasks, params.task_time_us)
    if mode == "multilevel":
        job = bundle(job, resolve_bundle_factor(bundle_factor, params), eps)
    return [job]


def execute_trial(policy, params: ParameterSet, mode: str = "direct", seed: int = 0, *,
                  bundle_factor=None, eps=0, record: bool = False,
                  failures=None, slots_per_node: int = SLOTS_PER_NODE,
                  arrays: Optional[Sequence[JobArray]] = None) -> TrialRun:
    config = resolve_policy(policy)
    cluster = ClusterSpec.for_processors(params.processors, slots_per_node)
    if arrays is None:
        arrays = trial_workload(params, mode, bundle_factor, eps)
    arrays = list(arrays)
    outcome, trace, _ = simulate(config, cluster, arrays, seed=seed, record=record,
                                 failures=failures)
    if outcome.failed_tasks:
        shown = ", ".join(f"{a}[{i}]" for a, i in outcome.failed_tasks[:5])
        raise TrialFailed(f"{len(outcome.failed_tasks)} task(s) exhausted their restarts: {shown}")
    if outcome.unfinished_tasks:
        raise TrialFailed(f"{outcome.unfinished_tasks} task(s) never completed")
    expected_payload = sum(a.total_payload_us for a in arrays)
    if outcome.payload_done_us != expected_payload:
        raise SimulationAbort(f"payload work {outcome.payload_done_us}us != "
                              f"submitted {expected_payload}us")
    u = utilization(params.job_time_us, outcome.t_total_us)
    result = TrialResult(
        policy=config.label,
        mode=mode,
        params=params,
        seed=seed,
        t_total_us=outcome.t_total_us,
        utilization=u,
        launches=outcome.launches,
        stage_totals_us=dict(outcome.stage_totals_us),
        tasks_completed=outcome.payload_done_count,
        tasks_restarted=outcome.restarts,
        payload_us=outcome.payload_done_us,
    )
    return TrialRun(result, outcome, arrays, cluster, trace)


def run_trial(policy, params: ParameterSet, mode: str = "direct", seed: int = 0,
              **kwargs) -> TrialResult:
    """Submit the workload at time 0, run to idle, measure T_total and U."""
    return execute_trial(policy, params, mode, seed, **kwargs).result


# --------------------------------------------------------------------------
# Analytic oracle
# --------------------------------------------------------------------------


def analytic_oracle(processors: int, launches: int, duration_us: int, overhead_us: int) -> int:
    """Makespan of L identical launches on P slots through one serial dispatcher.

    Built slot by slot without an event queue: each launch goes to the slot
    that frees first; it starts when both that slot and the dispatcher are
    free, holds the dispatcher for ``overhead_us`` and the slot for
    ``overhead_us + duration_us``.  Valid for zero cycle period and zero
    latency in every other stage.
    """
    if processors < 1 or launches < 0 or duration_us <= 0 or overhead_us < 0:
        raise ValueError("oracle needs P >= 1, L >= 0, d > 0, o >= 0")
    slot_free = [0] * processors
    dispatcher = 0
    for _ in range(launches):
        j = min(range(processors), key=slot_free.__getitem__)
        start = max(slot_free[j], dispatcher)
        dispatcher = start + overhead_us
        slot_free[j] = start + overhead_us + duration_us
    return max(slot_free) if launches else 0


def oracle_policy(overhead_us: int) -> PolicyConfig:
    """The simulator configuration inside the oracle's domain."""
    return PolicyConfig(family="monolithic-batch", name="oracle",
                        latency=LatencyProfile(job_dispatch=StageLatency(overhead_us, 0)),
                        dispatch_concurrency=1)


# --------------------------------------------------------------------------
# Plans and reports
# --------------------------------------------------------------------------


@dataclass
class ExperimentPlan:
    parameter_sets: list[ParameterSet] = field(default_factory=benchmark_parameter_sets)
    policies: list[PolicyConfig] = field(default_factory=lambda: list(PRESETS.values()))
    modes: tuple[str, ...] = MODES
    trials: int = 3
    base_seed: int = 2016
    scale: Fraction = Fraction(1)
    bundle_factor: Union[int, str] = "n"
    eps_us: int = 0
    slots_per_node: int = SLOTS_PER_NODE

    def __post_init__(self):
        self.scale = Fraction(self.scale)
        self.modes = tuple(self.modes)
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}; expected one of {', '.join(MODES)}")
        if self.eps_us < 0:
            raise ConfigError("intra_bundle_overhead must be >= 0")
        if self.slots_per_node < 1:
            raise ConfigError("slots_per_node must be >= 1")
        self.policies = [resolve_policy(p) for p in self.policies]
        names = [p.label for p in self.policies]
        if len(set(names)) != len(names):
            raise ConfigError(f"policy names must be unique, got {names}")
        for ps in self.scaled_sets():
            resolve_bundle_factor(self.bundle_factor, ps)

    def scaled_sets(self) -> list[ParameterSet]:
        return [ps.scaled(self.scale).with_trials(self.trials) for ps in self.parameter_sets]

    def cells(self):
        """(policy index, policy, set index, set, mode) in report order."""
        sets = self.scaled_sets()
        for pi, pol in enumerate(self.policies):
            for mode in self.modes:
                for si, ps in enumerate(sets):
                    yield pi, pol, si, ps, mode

    def trial_seed(self, policy_index: int, set_index: int, mode: str, trial: int) -> int:
        return derive_seed(self.base_seed, policy_index, set_index, MODES.index(mode), trial)

    @property
    def simulation_count(self) -> int:
        return len(self.policies) * len(self.modes) * len(self.parameter_sets) * self.trials


@dataclass
class CellResult:
    policy: str
    mode: str
    params: ParameterSet
    trials: list[TrialResult] = field(default_factory=list)
    error: Optional[str] = None
    aborted: bool = False
    note: str = ""

    @property
    def failed(self) -> bool:
        return self.error is not None

    def _us(self) -> list[float]:
        return [t.utilization for t in self.trials]

    @property
    def mean_u(self) -> float:
        return math.fsum(self._us()) / len(self.trials)

    @property
    def min_u(self) -> float:
        return min(self._us())

    @property
    def max_u(self) -> float:
        return max(self._us())

    @property
    def mean_t_total_sec(self) -> float:
        return math.fsum(t.t_total_us for t in self.trials) / len(self.trials) / 1e6


@dataclass
class UtilizationReport:
    cells: list[CellResult] = field(default_factory=list)

    @property
    def failed_cells(self) -> list[CellResult]:
        return [c for c in self.cells if c.failed]

    @property
    def aborted(self) -> bool:
        return any(c.aborted for c in self.cells)

    def cell(self, policy: str, mode: str, param_set: str) -> CellResult:
        for c in self.cells:
            if c.policy == policy and c.mode == mode and c.params.name == param_set:
                return c
        raise KeyError((policy, mode, param_set))


def has_published_counterpart(policy: str, mode: str, params: ParameterSet) -> bool:
    if params.processors != 1408:
        return False
    if policy in PUBLISHED_POLICIES:
        return True
    return policy == "yarn-like" and mode == "direct" and params.task_time_us != 1_000_000


def _trial_job(args) -> tuple[str, object]:
    (pol, ps, mode, seed, bundle_factor, eps_us, per_node, trace_path) = args
    try:
        run = execute_trial(pol, ps, mode, seed, bundle_factor=bundle_factor,
                            eps=Fraction(eps_us, 10**6), record=trace_path is not None,
                            slots_per_node=per_node)
    except SimulationAbort as exc:
        return "abort", str(exc)
    except TrialFailed as exc:
        return "failed", str(exc)
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            run.trace.dump(fh)
    return "ok", run.result


def run_experiment(plan: ExperimentPlan, jobs: int = 1,
                   trace_dir: Optional[Union[str, Path]] = None) -> UtilizationReport:
    """Run every (policy, mode, set) cell ``plan.trials`` times and aggregate."""
    tasks = []
    cells = []
    for pi, pol, si, ps, mode in plan.cells():
        cell = CellResult(pol.label, mode, ps)
        if not has_published_counterpart(pol.label, mode, ps):
            cell.note = "no paper counterpart"
        cells.append(cell)
        for k in range(plan.trials):
            trace_path = None
            if trace_dir is not None:
                trace_path = str(Path(trace_dir) /
                                 f"{pol.label}_{mode}_set{ps.name or si + 1}_trial{k}.tsv")
            tasks.append((len(cells) - 1, (pol, ps, mode, plan.trial_seed(pi, si, mode, k),
                                           plan.bundle_factor, plan.eps_us,
                                           plan.slots_per_node, trace_path)))
    if trace_dir is not None:
        os.makedirs(trace_dir, exist_ok=True)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_trial_job, [t for _, t in tasks]))
    else:
        outcomes = [_trial_job(t) for _, t in tasks]
    for (ci, _), (status, value) in zip(tasks, outcomes):
        cell = cells[ci]
        if status == "ok":
            cell.trials.append(value)
        elif cell.error is None:
            cell.error = value
            cell.aborted = status == "abort"
    return UtilizationReport(cells)


# --------------------------------------------------------------------------
# Emission
# --------------------------------------------------------------------------


def _fmt_u(u: float) -> str:
    return f"{u:.10f}"


def _fmt_mean_sec(values_us: Sequence[float]) -> str:
    return f"{math.fsum(values_us) / len(values_us) / 1e6:.6f}"


def _trial_row(cell: CellResult, k: int, t: TrialResult) -> list[str]:
    ps = cell.params
    st = t.stage_totals_us
    return [cell.policy, cell.mode, ps.name, fmt_seconds(ps.task_time_us),
            str(ps.tasks_per_processor), str(ps.processors), str(ps.total_tasks), str(k),
            str(t.seed), fmt_seconds(ps.job_time_us), fmt_seconds(t.t_total_us),
            _fmt_u(t.utilization), str(t.launches)] + [fmt_seconds(st[s]) for s in STAGES]


def _aggregate_rows(cell: CellResult) -> list[list[str]]:
    ps = cell.params
    head = [cell.policy, cell.mode, ps.name, fmt_seconds(ps.task_time_us),
            str(ps.tasks_per_processor), str(ps.processors), str(ps.total_tasks)]
    rows = []
    trials = cell.trials
    for stat in ("mean", "min", "max"):
        if stat == "mean":
            t_tot = _fmt_mean_sec([t.t_total_us for t in trials])
            u = cell.mean_u
            mean_launches = math.fsum(t.launches for t in trials) / len(trials)
            launches = f"{mean_launches:.6f}".rstrip("0").rstrip(".")
            stages = [_fmt_mean_sec([t.stage_totals_us[s] for t in trials]) for s in STAGES]
        else:
            pick = min if stat == "min" else max
            t_tot = fmt_seconds(pick(t.t_total_us for t in trials))
            u = pick(t.utilization for t in trials)
            launches = str(pick(t.launches for t in trials))
            stages = [fmt_seconds(pick(t.stage_totals_us[s] for t in trials)) for s in STAGES]
        rows.append(head + [stat, "", fmt_seconds(ps.job_time_us), t_tot, _fmt_u(u), launches]
                    + stages)
    return rows


def report_rows(report: UtilizationReport) -> list[list[str]]:
    rows = []
    for cell in report.cells:
        for k, t in enumerate(cell.trials):
            rows.append(_trial_row(cell, k, t))
        if cell.trials and not cell.failed:
            rows.extend(_aggregate_rows(cell))
    return rows


def report_csv(report: UtilizationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(report_rows(report))
    return buf.getvalue()


def report_dict(report: UtilizationReport) -> dict:
    cells = []
    for c in report.cells:
        entry = {
            "policy": c.policy,
            "mode": c.mode,
            "param_set": c.params.name,
            "t_sec": fmt_seconds(c.params.task_time_us),
            "n": c.params.tasks_per_processor,
            "P": c.params.processors,
            "N": c.params.total_tasks,
            "status": "failed" if c.failed else "ok",
            "note": c.note,
            "trials": [
                {"trial": k, "seed": t.seed, "T_total_sec": fmt_seconds(t.t_total_us),
                 "U": t.utilization, "launches": t.launches,
                 "tasks_completed": t.tasks_completed, "tasks_restarted": t.tasks_restarted,
                 "stage_sec": {s: fmt_seconds(v) for s, v in t.stage_totals_us.items()}}
                for k, t in enumerate(c.trials)
            ],
        }
        if c.failed:
            entry["error"] = c.error
        elif c.trials:
            entry.update(mean_U=c.mean_u, min_U=c.min_u, max_U=c.max_u,
                         mean_T_total_sec=c.mean_t_total_sec)
        cells.append(entry)
    return {"calibration": CALIBRATION_NOTE, "columns": CSV_HEADER, "cells": cells}


def emit_report(report: UtilizationReport, path: Union[str, Path], fmt: str = "csv") -> Path:
    """Write the report as ``csv`` or ``json``; returns the path written."""
    path = Path(path)
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "json":
        text = json.dumps(report_dict(report), indent=2) + "\n"
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc
    return path


def parse_scale(value) -> Fraction:
    try:
        f = Fraction(str(value))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"scale must be a positive rational, got {value!r}") from None
    if f <= 0:
        raise ConfigError(f"scale must be a positive rational, got {value!r}")
    return f


def eps_to_us(value) -> int:
    return to_us(value, name="intra_bundle_overhead")
