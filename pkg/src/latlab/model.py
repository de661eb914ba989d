"""Domain types and benchmark arithmetic.

All simulated time is integral virtual microseconds.  Public constructors
that take seconds convert exactly (via :class:`fractions.Fraction`) and
reject values that are not a whole number of microseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

US_PER_SEC = 1_000_000


class ConfigError(ValueError):
    """Invalid user-supplied configuration or workload."""


class SimulationAbort(RuntimeError):
    """An accounting invariant broke during a trial (a simulator or policy bug)."""

    def __init__(self, message: str):
        super().__init__(message)
        self.context: list[str] = []

    def add_context(self, line: str) -> None:
        self.context.append(line)

    def __str__(self) -> str:
        base = super().__str__()
        if not self.context:
            return base
        return base + "\n" + "\n".join(self.context)


class TrialFailed(RuntimeError):
    """A trial could not finish its work, e.g. a task ran out of restarts."""


def to_us(seconds, *, name: str = "value") -> int:
    """Convert seconds (int, float, str, Fraction) to integral microseconds."""
    if isinstance(seconds, bool):
        raise ConfigError(f"{name} must be a number, got {seconds!r}")
    if isinstance(seconds, float) and not math.isfinite(seconds):
        raise ConfigError(f"{name} must be finite, got {seconds!r}")
    try:
        frac = Fraction(str(seconds)) if isinstance(seconds, float) else Fraction(seconds)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a number, got {seconds!r}") from exc
    us = frac * US_PER_SEC
    if us.denominator != 1:
        raise ConfigError(f"{name}={seconds} is not a whole number of microseconds")
    return int(us)


def to_sec(us: int) -> float:
    return us / US_PER_SEC


def fmt_seconds(us: int) -> str:
    """Exact decimal rendering of a microsecond count in seconds ('1', '0.015')."""
    whole, frac = divmod(abs(int(us)), US_PER_SEC)
    sign = "-" if us < 0 else ""
    if frac == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac:06d}".rstrip("0")


# --------------------------------------------------------------------------
# Parameter sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParameterSet:
    """One column of the benchmark plan: P slots, each doing n tasks of t."""

    processors: int
    job_time_us: int
    task_time_us: int
    tasks_per_processor: int
    total_tasks: int
    trials: int = 3
    name: str = ""

    def __post_init__(self):
        for label in ("processors", "tasks_per_processor", "total_tasks", "trials"):
            if getattr(self, label) < 1:
                raise ConfigError(f"{label} must be >= 1, got {getattr(self, label)}")
        if self.task_time_us <= 0:
            raise ConfigError("task time must be > 0")
        if self.tasks_per_processor * self.task_time_us != self.job_time_us:
            raise ConfigError("n * t must equal T_job")
        if self.processors * self.tasks_per_processor != self.total_tasks:
            raise ConfigError("N must equal P * n")

    @property
    def task_time_sec(self) -> float:
        return to_sec(self.task_time_us)

    @property
    def job_time_sec(self) -> float:
        return to_sec(self.job_time_us)

    @property
    def total_processor_time_us(self) -> int:
        return self.total_tasks * self.task_time_us

    @property
    def total_processor_time_sec(self) -> float:
        return to_sec(self.total_processor_time_us)

    def scaled(self, factor) -> "ParameterSet":
        """Rescale P by a positive rational factor (floored); N follows as P*n."""
        factor = Fraction(str(factor)) if isinstance(factor, float) else Fraction(factor)
        if factor <= 0:
            raise ConfigError(f"scale factor must be positive, got {factor}")
        procs = math.floor(self.processors * factor)
        if procs < 1:
            raise ConfigError(f"scale factor {factor} leaves fewer than one processor")
        return ParameterSet(
            processors=procs,
            job_time_us=self.job_time_us,
            task_time_us=self.task_time_us,
            tasks_per_processor=self.tasks_per_processor,
            total_tasks=procs * self.tasks_per_processor,
            trials=self.trials,
            name=self.name,
        )

    def with_trials(self, trials: int) -> "ParameterSet":
        return ParameterSet(self.processors, self.job_time_us, self.task_time_us,
                            self.tasks_per_processor, self.total_tasks, trials, self.name)


def derive_parameter_set(processors: int, job_time, task_time, trials: int = 3,
                         name: str = "") -> ParameterSet:
    """Build a ParameterSet from P, T_job and t (seconds), deriving n and N.

    >>> derive_parameter_set(1408, 240, 60).total_tasks
    5632
    """
    if isinstance(processors, bool) or not isinstance(processors, int) or processors < 1:
        raise ConfigError(f"processors must be a positive integer, got {processors!r}")
    if isinstance(trials, bool) or not isinstance(trials, int) or trials < 1:
        raise ConfigError(f"trials must be a positive integer, got {trials!r}")
    job_us = to_us(job_time, name="job time")
    task_us = to_us(task_time, name="task time")
    if task_us <= 0:
        raise ConfigError(f"task time must be > 0, got {task_time}")
    if job_us <= 0:
        raise ConfigError(f"job time must be > 0, got {job_time}")
    n, rem = divmod(job_us, task_us)
    if rem:
        raise ConfigError(
            f"job time {fmt_seconds(job_us)} s is not divisible by task time "
            f"{fmt_seconds(task_us)} s")
    return ParameterSet(processors, job_us, task_us, n, processors * n, trials, name)


BENCH_PROCESSORS = 1408
BENCH_JOB_TIME_SEC = 240
BENCH_TASK_TIMES_SEC = (1, 5, 30, 60)


def benchmark_parameter_sets(trials: int = 3) -> list[ParameterSet]:
    return [derive_parameter_set(BENCH_PROCESSORS, BENCH_JOB_TIME_SEC, t, trials, name=str(i))
            for i, t in enumerate(BENCH_TASK_TIMES_SEC, start=1)]


def utilization(job_time_us: int, total_time_us: int) -> float:
    """U = T_job / T_total.

    A makespan shorter than the zero-overhead bound means time was lost in
    the accounting, so it raises instead of clamping.
    """
    if job_time_us <= 0:
        raise ConfigError(f"T_job must be > 0, got {job_time_us}")
    if total_time_us < job_time_us:
        raise SimulationAbort(
            f"T_total={total_time_us}us is below the zero-overhead bound T_job={job_time_us}us")
    return job_time_us / total_time_us


# --------------------------------------------------------------------------
# Latency profile
# --------------------------------------------------------------------------


class Stage(IntEnum):
    SUBMISSION = 0
    QUEUE_MANAGEMENT = 1
    RESOURCE_IDENTIFICATION = 2
    RESOURCE_SELECTION = 3
    RESOURCE_ALLOCATION = 4
    JOB_DISPATCH = 5
    JOB_TERMINATION = 6

    @property
    def label(self) -> str:
        return self.name.lower()


STAGES: tuple[str, ...] = tuple(s.label for s in Stage)


@dataclass(frozen=True)
class StageLatency:
    """Uniform draw on [base - jitter, base + jitter], clamped at zero."""

    base_us: int = 0
    jitter_us: int = 0

    def __post_init__(self):
        if self.base_us < 0 or self.jitter_us < 0:
            raise ConfigError("stage latency base and jitter must be >= 0")
        if self.jitter_us > self.base_us:
            raise ConfigError(
                f"jitter {self.jitter_us}us exceeds base {self.base_us}us")

    @classmethod
    def of(cls, base_sec=0, jitter_sec=0) -> "StageLatency":
        return cls(to_us(base_sec, name="latency base"), to_us(jitter_sec, name="latency jitter"))


@dataclass(frozen=True)
class LatencyProfile:
    submission: StageLatency = StageLatency()
    queue_management: StageLatency = StageLatency()
    resource_identification: StageLatency = StageLatency()
    resource_selection: StageLatency = StageLatency()
    resource_allocation: StageLatency = StageLatency()
    job_dispatch: StageLatency = StageLatency()
    job_termination: StageLatency = StageLatency()

    @classmethod
    def zero(cls) -> "LatencyProfile":
        return cls()

    def stage(self, stage: Stage) -> StageLatency:
        return getattr(self, stage.label)

    def is_zero(self) -> bool:
        return all(self.stage(s).base_us == 0 and self.stage(s).jitter_us == 0 for s in Stage)

    def to_dict(self) -> dict:
        return {s.label: {"base": fmt_seconds(self.stage(s).base_us),
                          "jitter": fmt_seconds(self.stage(s).jitter_us)} for s in Stage}

    @classmethod
    def from_dict(cls, data: Mapping) -> "LatencyProfile":
        if not isinstance(data, Mapping):
            raise ConfigError("latency must be a mapping of stage -> {base, jitter}")
        unknown = set(data) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown latency stage(s): {', '.join(sorted(unknown))}")
        stages = {}
        for name, spec in data.items():
            if isinstance(spec, Mapping):
                extra = set(spec) - {"base", "jitter"}
                if extra:
                    raise ConfigError(f"latency.{name}: unknown key(s) {sorted(extra)}")
                stages[name] = StageLatency.of(spec.get("base", 0), spec.get("jitter", 0))
            else:
                stages[name] = StageLatency.of(spec, 0)
        return cls(**stages)


# --------------------------------------------------------------------------
# Workload
# --------------------------------------------------------------------------


class TaskState(IntEnum):
    PENDING_SUBMISSION = 0
    QUEUED = 1
    DISPATCHING = 2
    RUNNING = 3
    TERMINATING = 4
    DONE = 5
    FAILED = 6

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")


LEGAL_TRANSITIONS = frozenset({
    (TaskState.PENDING_SUBMISSION, TaskState.QUEUED),
    (TaskState.QUEUED, TaskState.DISPATCHING),
    (TaskState.DISPATCHING, TaskState.RUNNING),
    (TaskState.RUNNING, TaskState.TERMINATING),
    (TaskState.TERMINATING, TaskState.DONE),
    (TaskState.RUNNING, TaskState.FAILED),
    (TaskState.FAILED, TaskState.QUEUED),
})

# Slots are reserved at assignment and released once termination has elapsed.
SLOT_HOLDING_STATES = frozenset({TaskState.DISPATCHING, TaskState.RUNNING, TaskState.TERMINATING})

DEFAULT_MEMORY_PER_SLOT = 2048


@dataclass(frozen=True)
class JobArray:
    """One submission that expands into ``task_count`` tasks.

    ``durations`` overrides ``task_duration_us`` per task (used by bundled
    arrays whose last bundle is partial).  ``payload_us`` / ``payload_counts``
    record how much source work each task carries; a plain array carries its
    own duration as one unit of work per task.
    """

    id: str
    task_count: int
    task_duration_us: int
    slots_per_task: int = 1
    depends_on: tuple[str, ...] = ()
    max_restarts: int = 0
    submit_time_us: int = 0
    resources_per_slot: Mapping[str, int] = field(
        default_factory=lambda: {"memory": DEFAULT_MEMORY_PER_SLOT})
    durations: Optional[tuple[int, ...]] = None
    payload_us: Optional[tuple[int, ...]] = None
    payload_counts: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.task_count < 1:
            raise ConfigError(f"array {self.id}: task_count must be >= 1")
        if self.task_duration_us <= 0:
            raise ConfigError(f"array {self.id}: task duration must be > 0")
        if self.slots_per_task < 1:
            raise ConfigError(f"array {self.id}: slots_per_task must be >= 1")
        if self.max_restarts < 0:
            raise ConfigError(f"array {self.id}: max_restarts must be >= 0")
        if self.submit_time_us < 0:
            raise ConfigError(f"array {self.id}: submit time must be >= 0")
        object.__setattr__(self, "depends_on", tuple(self.depends_on))
        for name in ("durations", "payload_us", "payload_counts"):
            seq = getattr(self, name)
            if seq is not None:
                if len(seq) != self.task_count:
                    raise ConfigError(f"array {self.id}: {name} length != task_count")
                object.__setattr__(self, name, tuple(seq))
        if self.durations is not None and min(self.durations) <= 0:
            raise ConfigError(f"array {self.id}: task durations must be > 0")

    def duration_of(self, index: int) -> int:
        return self.task_duration_us if self.durations is None else self.durations[index]

    def payload_of(self, index: int) -> int:
        return self.duration_of(index) if self.payload_us is None else self.payload_us[index]

    def payload_count_of(self, index: int) -> int:
        return 1 if self.payload_counts is None else self.payload_counts[index]

    @property
    def total_payload_us(self) -> int:
        if self.payload_us is not None:
            return sum(self.payload_us)
        if self.durations is not None:
            return sum(self.durations)
        return self.task_count * self.task_duration_us

    @property
    def total_payload_count(self) -> int:
        return self.task_count if self.payload_counts is None else sum(self.payload_counts)


@dataclass
class Task:
    """Snapshot of one task of a running simulation."""

    array_id: str
    index: int
    duration_us: int
    state: TaskState = TaskState.PENDING_SUBMISSION
    slots: tuple[int, ...] = ()
    restart_count: int = 0


@dataclass(frozen=True)
class ClusterSpec:
    node_count: int
    slots_per_node: int
    dynamic_resources: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.node_count < 1 or self.slots_per_node < 1:
            raise ConfigError("cluster needs at least one node and one slot per node")
        if not self.dynamic_resources:
            object.__setattr__(self, "dynamic_resources",
                               {"memory": self.slots_per_node * DEFAULT_MEMORY_PER_SLOT})
        for name, cap in self.dynamic_resources.items():
            if cap < 0:
                raise ConfigError(f"resource {name} capacity must be >= 0")

    @property
    def total_slots(self) -> int:
        return self.node_count * self.slots_per_node

    def node_of(self, slot: int) -> int:
        return slot // self.slots_per_node

    @classmethod
    def for_processors(cls, processors: int, slots_per_node: int = 32) -> "ClusterSpec":
        """Lay P slots out on nodes of at most ``slots_per_node`` (44 x 32 at full benchmark scale)."""
        if processors < 1:
            raise ConfigError("processors must be >= 1")
        per_node = min(slots_per_node, processors)
        while processors % per_node:
            per_node -= 1
        return cls(processors // per_node, per_node)


class Diagnostic(NamedTuple):
    array_id: str
    problem: str

    def __str__(self) -> str:
        return f"{self.array_id}: {self.problem}"


def node_fit(arr: JobArray, cluster: ClusterSpec) -> int:
    """How many slots of one ``arr`` task a single empty node can host."""
    fit = cluster.slots_per_node
    for res, amount in arr.resources_per_slot.items():
        cap = cluster.dynamic_resources.get(res)
        if cap is not None and amount > 0:
            fit = min(fit, cap // amount)
    return fit


def validate_workload(arrays: Sequence[JobArray], cluster: ClusterSpec) -> list[Diagnostic]:
    """Return every problem found; an empty list means the workload is runnable."""
    diags: list[Diagnostic] = []
    by_id: dict[str, JobArray] = {}
    for arr in arrays:
        if arr.id in by_id:
            diags.append(Diagnostic(arr.id, "duplicate array id"))
        by_id[arr.id] = arr
    for arr in arrays:
        if arr.slots_per_task > cluster.total_slots:
            diags.append(Diagnostic(
                arr.id, f"needs {arr.slots_per_task} slots per task but the cluster has "
                        f"{cluster.total_slots}"))
        for res, amount in arr.resources_per_slot.items():
            cap = cluster.dynamic_resources.get(res)
            if cap is None:
                diags.append(Diagnostic(arr.id, f"requests unknown resource {res!r}"))
            elif amount < 0 or amount > cap:
                diags.append(Diagnostic(
                    arr.id, f"requests {amount} {res} per slot; node capacity is {cap}"))
        per_node = node_fit(arr, cluster)
        if (arr.slots_per_task <= cluster.total_slots
                and per_node * cluster.node_count < arr.slots_per_task):
            diags.append(Diagnostic(
                arr.id, f"a {arr.slots_per_task}-slot task cannot be placed: its resource "
                        f"requests allow only {per_node} slot(s) per node"))
        for dep in arr.depends_on:
            if dep not in by_id:
                diags.append(Diagnostic(arr.id, f"depends on unknown array {dep!r}"))
    diags.extend(_cycle_diagnostics(by_id))
    return diags


def _cycle_diagnostics(by_id: Mapping[str, JobArray]) -> Iterable[Diagnostic]:
    white, grey, black = 0, 1, 2
    color = dict.fromkeys(by_id, white)
    found = []

    def visit(start: str) -> None:
        stack = [(start, iter(by_id[start].depends_on))]
        path = [start]
        color[start] = grey
        while stack:
            node, deps = stack[-1]
            for dep in deps:
                if dep not in by_id:
                    continue
                if color[dep] == grey:
                    cycle = path[path.index(dep):] + [dep]
                    found.append(Diagnostic(dep, "dependency cycle: " + " -> ".join(cycle)))
                elif color[dep] == white:
                    color[dep] = grey
                    stack.append((dep, iter(by_id[dep].depends_on)))
                    path.append(dep)
                    break
            else:
                color[node] = black
                stack.pop()
                path.pop()

    for aid in by_id:
        if color[aid] == white:
            visit(aid)
    return found


# --------------------------------------------------------------------------
# Results
# --------------------------------------------------------------------------


@dataclass
class TrialResult:
    policy: str
    mode: str
    params: ParameterSet
    seed: int
    t_total_us: int
    utilization: float
    launches: int
    stage_totals_us: dict[str, int]
    tasks_completed: int
    tasks_restarted: int
    payload_us: int = 0

    @property
    def t_total_sec(self) -> float:
        return to_sec(self.t_total_us)
