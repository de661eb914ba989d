"""Scheduler family models on top of the event engine.

Every family shares one pipeline:

    submit --(submission + queue mgmt)--> queued
    queued --(cadence event; ident + select + alloc)--> dispatching
    dispatching --(job dispatch, at most ``dispatch_concurrency`` in flight)--> running
    running --(task duration)--> terminating --(job termination)--> done, slots freed

and differs only in *when* placement may happen:

* monolithic-batch: one global queue, a scheduling cycle at most every
  ``cycle_period``; optional EASY backfill behind a blocked gang job.
* two-level-offer: the resource manager offers up to ``offer_batch`` free
  slots every ``offer_interval``; the built-in framework accepts FIFO.
* heartbeat-mapreduce: a node's slots can only be filled on that node's
  heartbeat, and the container grant costs one more heartbeat round trip.

Idle cadence events are elided: a cycle/offer/heartbeat is only posted when
there is queued eligible work and a free slot, at the next instant the
periodic schedule would have produced one.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Optional, Sequence

from .engine import NONE, Engine, Event, EventKind, Trace
from .model import (
    ClusterSpec,
    ConfigError,
    JobArray,
    LatencyProfile,
    SimulationAbort,
    Stage,
    StageLatency,
    Task,
    TaskState,
    fmt_seconds,
    node_fit,
    to_us,
    validate_workload,
)

MONOLITHIC = "monolithic-batch"
TWO_LEVEL = "two-level-offer"
HEARTBEAT = "heartbeat-mapreduce"
FAMILIES = (MONOLITHIC, TWO_LEVEL, HEARTBEAT)


@dataclass(frozen=True)
class PolicyConfig:
    """Tuning knobs for one scheduler model.  ``None`` counts mean unlimited."""

    family: str
    latency: LatencyProfile = field(default_factory=LatencyProfile)
    cycle_period_us: int = 0
    max_dispatch_per_cycle: Optional[int] = None
    backfill_enabled: bool = False
    offer_interval_us: int = 0
    offer_batch: Optional[int] = None
    heartbeat_interval_us: int = 0
    dispatch_concurrency: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(
                f"unknown policy family {self.family!r}; expected one of {', '.join(FAMILIES)}")
        for label in ("cycle_period_us", "offer_interval_us", "heartbeat_interval_us"):
            if getattr(self, label) < 0:
                raise ConfigError(f"{label} must be >= 0")
        for label in ("max_dispatch_per_cycle", "offer_batch", "dispatch_concurrency"):
            v = getattr(self, label)
            if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 1):
                raise ConfigError(f"{label} must be a count >= 1 or unlimited, got {v!r}")
        if not isinstance(self.latency, LatencyProfile):
            raise ConfigError("latency must be a LatencyProfile")

    @property
    def label(self) -> str:
        return self.name or self.family

    def to_dict(self) -> dict:
        def count(v):
            return "unlimited" if v is None else v

        return {
            "name": self.name,
            "family": self.family,
            "latency": self.latency.to_dict(),
            "cycle_period": fmt_seconds(self.cycle_period_us),
            "max_dispatch_per_cycle": count(self.max_dispatch_per_cycle),
            "backfill_enabled": self.backfill_enabled,
            "offer_interval": fmt_seconds(self.offer_interval_us),
            "offer_batch": count(self.offer_batch),
            "heartbeat_interval": fmt_seconds(self.heartbeat_interval_us),
            "dispatch_concurrency": count(self.dispatch_concurrency),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PolicyConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("policy block must be a mapping")
        known = {"name", "family", "latency", "cycle_period", "max_dispatch_per_cycle",
                 "backfill_enabled", "offer_interval", "offer_batch", "heartbeat_interval",
                 "dispatch_concurrency", "preset"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"policy: unknown key(s) {', '.join(sorted(unknown))}")
        base = {}
        if "preset" in data:
            base = get_preset(data["preset"]).to_dict()
        merged = {**base, **{k: v for k, v in data.items() if k != "preset"}}
        if "family" not in merged:
            raise ConfigError("policy: missing key 'family'")

        def count(key):
            v = merged.get(key, "unlimited")
            if v is None or v == "unlimited":
                return None
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"policy.{key} must be an integer or 'unlimited', got {v!r}")
            return v

        backfill = merged.get("backfill_enabled", False)
        if not isinstance(backfill, bool):
            raise ConfigError("policy.backfill_enabled must be true or false")
        return cls(
            family=merged["family"],
            latency=LatencyProfile.from_dict(merged.get("latency", {})),
            cycle_period_us=to_us(merged.get("cycle_period", 0), name="policy.cycle_period"),
            max_dispatch_per_cycle=count("max_dispatch_per_cycle"),
            backfill_enabled=backfill,
            offer_interval_us=to_us(merged.get("offer_interval", 0), name="policy.offer_interval"),
            offer_batch=count("offer_batch"),
            heartbeat_interval_us=to_us(merged.get("heartbeat_interval", 0),
                                        name="policy.heartbeat_interval"),
            dispatch_concurrency=count("dispatch_concurrency"),
            name=str(merged.get("name", "")),
        )

    def zeroed(self) -> "PolicyConfig":
        """Same family with every overhead removed (the zero-overhead bound)."""
        return replace(self, latency=LatencyProfile.zero(), cycle_period_us=0,
                       offer_interval_us=0, heartbeat_interval_us=0,
                       dispatch_concurrency=None, max_dispatch_per_cycle=None)


def _lat(base_ms: float, jitter_ms: float) -> StageLatency:
    return StageLatency(round(base_ms * 1000), round(jitter_ms * 1000))


# Calibrated, not measured: chosen to reproduce the qualitative shape of the
# published utilization curves.  No per-stage latencies were ever reported.
PRESETS: dict[str, PolicyConfig] = {
    "slurm-like": PolicyConfig(
        name="slurm-like",
        family=MONOLITHIC,
        latency=LatencyProfile(
            submission=_lat(200, 50),
            queue_management=_lat(10, 5),
            resource_identification=_lat(2, 1),
            resource_selection=_lat(1, 0.5),
            resource_allocation=_lat(2, 1),
            job_dispatch=_lat(15, 5),
            job_termination=_lat(5, 2),
        ),
        cycle_period_us=100_000,
        backfill_enabled=True,
        dispatch_concurrency=16,
    ),
    "gridengine-like": PolicyConfig(
        name="gridengine-like",
        family=MONOLITHIC,
        latency=LatencyProfile(
            submission=_lat(250, 50),
            queue_management=_lat(15, 5),
            resource_identification=_lat(3, 1),
            resource_selection=_lat(2, 1),
            resource_allocation=_lat(3, 1),
            job_dispatch=_lat(25, 8),
            job_termination=_lat(8, 3),
        ),
        cycle_period_us=100_000,
        dispatch_concurrency=16,
    ),
    "mesos-like": PolicyConfig(
        name="mesos-like",
        family=TWO_LEVEL,
        latency=LatencyProfile(
            submission=_lat(150, 50),
            queue_management=_lat(10, 5),
            resource_identification=_lat(2, 1),
            resource_selection=_lat(3, 1),
            resource_allocation=_lat(2, 1),
            job_dispatch=_lat(20, 6),
            job_termination=_lat(6, 2),
        ),
        offer_interval_us=100_000,
        offer_batch=256,
        dispatch_concurrency=16,
    ),
    "yarn-like": PolicyConfig(
        name="yarn-like",
        family=HEARTBEAT,
        latency=LatencyProfile(
            submission=_lat(500, 100),
            queue_management=_lat(20, 5),
            resource_identification=_lat(3, 1),
            resource_selection=_lat(2, 1),
            resource_allocation=_lat(5, 2),
            job_dispatch=_lat(40, 10),
            job_termination=_lat(10, 3),
        ),
        heartbeat_interval_us=1_000_000,
        dispatch_concurrency=16,
    ),
}


def get_preset(name: str) -> PolicyConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown policy preset {name!r}; expected one of {', '.join(PRESETS)}") from None


# --------------------------------------------------------------------------
# Runtime state
# --------------------------------------------------------------------------


class _ArrayRun:
    """Mutable per-array bookkeeping for one simulation."""

    __slots__ = ("spec", "code", "states", "restarts", "remaining", "queued", "enqueued",
                 "eligible", "deps_left", "dependents", "durations", "duration", "slots",
                 "requests", "assigned")

    def __init__(self, spec: JobArray, code: int, res_index: Mapping[str, int]):
        self.spec = spec
        self.code = code
        self.states = bytearray(spec.task_count)
        self.restarts: dict[int, int] = {}
        self.remaining = spec.task_count
        self.queued = 0
        self.enqueued = False
        self.eligible = False
        self.deps_left = set(spec.depends_on)
        self.dependents: list[_ArrayRun] = []
        self.durations = spec.durations
        self.duration = spec.task_duration_us
        self.slots = spec.slots_per_task
        self.requests = tuple((res_index[r], amt) for r, amt in spec.resources_per_slot.items()
                              if amt > 0)
        self.assigned: dict[int, tuple[int, ...]] = {}

    def duration_of(self, idx: int) -> int:
        return self.duration if self.durations is None else self.durations[idx]

    def __repr__(self) -> str:
        return f"<array {self.spec.id}>"


class Assignment(NamedTuple):
    array: _ArrayRun
    index: int
    slots: tuple[int, ...]
    ready_us: int

    @property
    def array_id(self) -> str:
        return self.array.spec.id


@dataclass
class SimulationOutcome:
    t_total_us: int
    first_submit_us: int
    last_done_us: int
    launches: int
    stage_totals_us: dict[str, int]
    tasks_done: int
    payload_done_us: int
    payload_done_count: int
    restarts: int
    failed_tasks: list[tuple[str, int]]
    unfinished_tasks: int

    @property
    def succeeded(self) -> bool:
        return not self.failed_tasks and self.unfinished_tasks == 0


_QUEUED = int(TaskState.QUEUED)
_DISPATCHING = int(TaskState.DISPATCHING)
_RUNNING = int(TaskState.RUNNING)
_TERMINATING = int(TaskState.TERMINATING)
_DONE = int(TaskState.DONE)
_FAILED = int(TaskState.FAILED)
_PENDING = int(TaskState.PENDING_SUBMISSION)

_K_SUBMIT = int(EventKind.SUBMIT)
_K_ENQUEUE = int(EventKind.ENQUEUE)
_K_DISPATCH = int(EventKind.DISPATCH_COMPLETE)
_K_TASK = int(EventKind.TASK_COMPLETE)
_K_TERM = int(EventKind.TERMINATION_COMPLETE)
_K_FAIL = int(EventKind.FAILURE_INJECTED)


class ClusterScheduler:
    """Common machinery; subclasses supply the placement cadence."""

    family = ""
    cadence_kind = EventKind.SCHEDULING_CYCLE

    def __init__(self, config: PolicyConfig, cluster: ClusterSpec, engine: Engine,
                 failures: Optional[Mapping[tuple[str, int], int]] = None):
        if config.family != self.family:
            raise ConfigError(f"{type(self).__name__} cannot run a {config.family} config")
        self.config = config
        self.cluster = cluster
        self.engine = engine
        self.rng = engine.rng
        self._trace: Optional[Trace] = engine.trace
        lat = config.latency
        self._lat = [(lat.stage(s).base_us, lat.stage(s).jitter_us) for s in Stage]
        self._stage_totals = [0] * len(Stage)

        self._n_nodes = cluster.node_count
        self._per_node = cluster.slots_per_node
        self._total_slots = cluster.total_slots
        per = cluster.slots_per_node
        self._free_by_node = [list(range((j + 1) * per - 1, j * per - 1, -1))
                              for j in range(cluster.node_count)]
        self._free_total = cluster.total_slots
        self._node_ptr = 0
        self._res_names = list(cluster.dynamic_resources)
        self._res_index = {r: i for i, r in enumerate(self._res_names)}
        self._res_free = [[cluster.dynamic_resources[r]] * cluster.node_count
                          for r in self._res_names]
        self._owner: list = [None] * cluster.total_slots
        self._track_release = False
        self._release_est = [0] * cluster.total_slots

        self._arrays: dict[str, _ArrayRun] = {}
        self._queue: list[list] = []
        self._queued_eligible = 0
        self._waiting: deque = deque()
        self._in_flight = 0
        self._concurrency = config.dispatch_concurrency

        self._failures = dict(failures or {})
        self._launches = 0
        self._tasks_done = 0
        self._payload_us = 0
        self._payload_n = 0
        self._restarted = 0
        self._failed: list[tuple[str, int]] = []
        self._first_submit: Optional[int] = None
        self._last_done = 0

    # -- setup ------------------------------------------------------------

    def submit(self, arrays: Sequence[JobArray]) -> None:
        """Register arrays and post their submit events."""
        diags = validate_workload(list(self._arrays_specs()) + list(arrays), self.cluster)
        if diags:
            raise ConfigError("invalid workload: " + "; ".join(map(str, diags)))
        for spec in arrays:
            self._check_placeable(spec)
            code = self._trace.array_code(spec.id) if self._trace is not None else len(self._arrays)
            ar = _ArrayRun(spec, code, self._res_index)
            self._arrays[spec.id] = ar
        for ar in self._arrays.values():
            ar.dependents = []
        for ar in self._arrays.values():
            for dep in ar.spec.depends_on:
                self._arrays[dep].dependents.append(ar)
        for spec in arrays:
            t = spec.submit_time_us
            if self._first_submit is None or t < self._first_submit:
                self._first_submit = t
            self.engine.schedule(t, _K_SUBMIT, self._arrays[spec.id])

    def _arrays_specs(self):
        return (ar.spec for ar in self._arrays.values())

    def _check_placeable(self, spec: JobArray) -> None:
        pass

    def handlers(self) -> dict:
        return {
            EventKind.SUBMIT: self._on_submit_event,
            EventKind.ENQUEUE: self._on_enqueue,
            self.cadence_kind: self._on_cadence,
            EventKind.DISPATCH_COMPLETE: self._on_dispatch_complete,
            EventKind.TASK_COMPLETE: self._on_task_complete_event,
            EventKind.FAILURE_INJECTED: self._on_failure,
            EventKind.TERMINATION_COMPLETE: self._on_termination,
        }

    def run(self) -> SimulationOutcome:
        self.engine.run_until_idle(self.handlers())
        return self.outcome()

    # -- latency draws ----------------------------------------------------

    def _draw(self, stage: int) -> int:
        base, half = self._lat[stage]
        v = base if half == 0 else self.rng.jitter(base, half)
        self._stage_totals[stage] += v
        return v

    def _charge(self, now: int, kind: int, stage: int) -> int:
        v = self._draw(stage)
        if self._trace is not None:
            self._trace.record(now, kind, NONE, NONE, NONE, NONE, stage, v)
        return v

    # -- submission -------------------------------------------------------

    def on_submit(self, ar: _ArrayRun, now: int) -> int:
        """Charge submission + queue management; tasks become queued after it."""
        lat = (self._charge(now, _K_SUBMIT, Stage.SUBMISSION)
               + self._charge(now, _K_SUBMIT, Stage.QUEUE_MANAGEMENT))
        self.engine.schedule(now + lat, _K_ENQUEUE, ar)
        return now + lat

    def _on_submit_event(self, ev: Event) -> None:
        self.on_submit(ev.payload, ev.time)

    def _on_enqueue(self, ev: Event) -> None:
        ar: _ArrayRun = ev.payload
        now = ev.time
        n = ar.spec.task_count
        ar.states[:] = bytes([_QUEUED]) * n
        if self._trace is not None:
            self._trace.record_transitions(now, _K_ENQUEUE, ar.code, range(n), _PENDING, _QUEUED)
        ar.enqueued = True
        ar.queued += n
        self._queue.append([ar, 0, n])
        if not ar.deps_left:
            self._make_eligible(ar, now)

    def _make_eligible(self, ar: _ArrayRun, now: int) -> None:
        ar.eligible = True
        self._queued_eligible += ar.queued
        self._wake(now)

    # -- cadence ----------------------------------------------------------

    def _wake(self, now: int, node: Optional[int] = None) -> None:
        raise NotImplementedError

    def _on_cadence(self, ev: Event) -> None:
        raise NotImplementedError

    def _has_work(self) -> bool:
        return self._queued_eligible > 0 and self._free_total > 0

    def scheduling_cycle(self, now: int, *, node: Optional[int] = None,
                         budget: Optional[int] = None, limit: Optional[int] = None,
                         backfill: bool = False, extra_delay: int = 0) -> list[Assignment]:
        """One placement pass.  Charges ident+select+alloc only if there is work."""
        if not self._has_work() or (node is not None and not self._free_by_node[node]):
            return []
        kind = int(self.cadence_kind)
        lat = (self._charge(now, kind, Stage.RESOURCE_IDENTIFICATION)
               + self._charge(now, kind, Stage.RESOURCE_SELECTION)
               + self._charge(now, kind, Stage.RESOURCE_ALLOCATION))
        self._cycle_latency = lat
        return self._select(now, now + lat + extra_delay, limit, budget, node, backfill)

    # -- placement --------------------------------------------------------

    def _take_slots(self, k: int, requests, node: Optional[int]) -> Optional[tuple[int, ...]]:
        """Remove k free slots from the pool, all or nothing."""
        if self._free_total < k:
            return None
        free_by_node = self._free_by_node
        res_free = self._res_free
        n_nodes = self._n_nodes
        if node is not None:
            order = (node,)
        else:
            ptr = self._node_ptr
            order = range(ptr, ptr + n_nodes)
        taken: list[int] = []
        for jj in order:
            j = jj % n_nodes
            fl = free_by_node[j]
            while fl and len(taken) < k:
                ok = True
                for r, amt in requests:
                    if res_free[r][j] < amt:
                        ok = False
                        break
                if not ok:
                    break
                for r, amt in requests:
                    res_free[r][j] -= amt
                taken.append(fl.pop())
            if len(taken) == k:
                if node is None:
                    self._node_ptr = j
                self._free_total -= k
                return tuple(taken)
        # roll back a partial gang placement
        for s in reversed(taken):
            j = s // self._per_node
            free_by_node[j].append(s)
            for r, amt in requests:
                res_free[r][j] += amt
        return None

    def _release_slots(self, ar: _ArrayRun, idx: int) -> tuple[int, ...]:
        slots = ar.assigned.pop(idx)
        owner = self._owner
        per = self._per_node
        for s in slots:
            j = s // per
            owner[s] = None
            self._free_by_node[j].append(s)
            for r, amt in ar.requests:
                self._res_free[r][j] += amt
        self._free_total += len(slots)
        return slots

    def _reserve(self, ar: _ArrayRun, idx: int, slots: tuple[int, ...], now: int,
                 ready: int) -> Assignment:
        owner = self._owner
        key = (ar, idx)
        for s in slots:
            if owner[s] is not None:
                raise SimulationAbort(f"slot {s} assigned to {ar.spec.id}[{idx}] while held by "
                                      f"{owner[s][0].spec.id}[{owner[s][1]}]")
            owner[s] = key
        if ar.requests:
            for j in {s // self._per_node for s in slots}:
                for r, _amt in ar.requests:
                    if self._res_free[r][j] < 0:
                        raise SimulationAbort(f"node {j} {self._res_names[r]} oversubscribed")
        if self._track_release:
            est = (ready + self._lat[Stage.JOB_DISPATCH][0] + ar.duration_of(idx)
                   + self._lat[Stage.JOB_TERMINATION][0])
            for s in slots:
                self._release_est[s] = est
        ar.assigned[idx] = slots
        ar.states[idx] = _DISPATCHING
        ar.queued -= 1
        tr = self._trace
        if tr is not None:
            tr.record(now, int(self.cadence_kind), ar.code, idx, _QUEUED, _DISPATCHING)
            tr.slot_log.extend(slots)
        return Assignment(ar, idx, slots, ready)

    def _shadow(self, need_slots: int) -> tuple[float, int]:
        """Projected earliest start of a job needing ``need_slots`` and the spare slots then."""
        free = self._free_total
        missing = max(1, need_slots - free)
        owner = self._owner
        est = self._release_est
        busy = [est[s] for s in range(self._total_slots) if owner[s] is not None]
        if missing > len(busy):
            return math.inf, 0
        shadow = heapq.nsmallest(missing, busy)[-1]
        spare = free + sum(1 for t in busy if t <= shadow) - need_slots
        return shadow, spare

    def _select(self, now: int, ready: int, limit: Optional[int], budget: Optional[int],
                node: Optional[int], backfill: bool) -> list[Assignment]:
        out: list[Assignment] = []
        used = 0
        shadow = None
        spare = 0
        head_need = 0
        disp_base = self._lat[Stage.JOB_DISPATCH][0]
        term_base = self._lat[Stage.JOB_TERMINATION][0]
        stop = False
        for blk in self._queue:
            ar, idx, end = blk
            if idx >= end or not ar.eligible:
                continue
            k = ar.slots
            reqs = ar.requests
            while idx < end:
                if ((limit is not None and len(out) >= limit) or self._free_total == 0
                        or (budget is not None and used >= budget)):
                    stop = True
                    break
                est_end = 0
                if shadow is not None:
                    est_end = ready + disp_base + ar.duration_of(idx) + term_base
                    if est_end > shadow and k > spare:
                        break
                slots = None
                if budget is None or used + k <= budget:
                    slots = self._take_slots(k, reqs, node)
                if slots is None:
                    if shadow is None and backfill and node is None and budget is None:
                        head_need = k
                        shadow, spare = self._shadow(k)
                        break
                    if shadow is None:
                        stop = True
                    break
                if shadow is not None and est_end > shadow:
                    spare -= k
                out.append(self._reserve(ar, idx, slots, now, ready))
                used += k
                idx += 1
            blk[1] = idx
            if stop:
                break
        if out:
            self._queued_eligible -= len(out)
            self._queue = [b for b in self._queue if b[1] < b[2]]
        if shadow is not None and out:
            after, _ = self._shadow(head_need)
            if after > shadow:
                raise SimulationAbort(
                    f"backfill delayed the head job's projected start from {shadow} to {after}")
        return out

    # -- dispatch ---------------------------------------------------------

    def dispatch(self, a: Assignment, now: int) -> None:
        """Hand an assignment to the dispatch pipeline."""
        if self._concurrency is None or self._in_flight < self._concurrency:
            self._start_dispatch(a.ready_us if a.ready_us > now else now, a.array, a.index)
        else:
            self._waiting.append((a.ready_us, a.array, a.index))

    def _start_dispatch(self, start: int, ar: _ArrayRun, idx: int) -> None:
        base, half = self._lat[5]
        d = base if half == 0 else self.rng.jitter(base, half)
        self._stage_totals[5] += d
        self._in_flight += 1
        self._launches += 1
        self.engine.schedule(start + d, _K_DISPATCH, (ar, idx, d))

    def _on_dispatch_complete(self, ev: Event) -> None:
        ar, idx, d = ev.payload
        now = ev.time
        self._in_flight -= 1
        ar.states[idx] = _RUNNING
        if self._trace is not None:
            self._trace.record(now, _K_DISPATCH, ar.code, idx, _DISPATCHING, _RUNNING,
                               5, d)
        dur = ar.duration if ar.durations is None else ar.durations[idx]
        kind = _K_TASK
        if self._failures:
            key = (ar.spec.id, idx)
            left = self._failures.get(key, 0)
            if left > 0:
                self._failures[key] = left - 1
                kind = _K_FAIL
        self.engine.schedule(now + dur, kind, (ar, idx))
        if self._track_release:
            est = now + dur + self._lat[6][0]
            for s in ar.assigned[idx]:
                self._release_est[s] = est
        if self._waiting:
            ready, ar2, idx2 = self._waiting.popleft()
            self._start_dispatch(ready if ready > now else now, ar2, idx2)

    # -- completion -------------------------------------------------------

    def on_task_complete(self, ar: _ArrayRun, idx: int, now: int, failed: bool = False) -> int:
        """Charge termination; slots are released when it elapses.  Returns that time."""
        base, half = self._lat[6]
        term = base if half == 0 else self.rng.jitter(base, half)
        self._stage_totals[6] += term
        if not failed:
            ar.states[idx] = _TERMINATING
            if self._trace is not None:
                self._trace.record(now, _K_TASK, ar.code, idx, _RUNNING, _TERMINATING)
        elif self._trace is not None:
            self._trace.record(now, _K_FAIL, ar.code, idx, NONE, NONE)
        self.engine.schedule(now + term, _K_TERM, (ar, idx, term, failed))
        return now + term

    def _on_task_complete_event(self, ev: Event) -> None:
        ar, idx = ev.payload
        self.on_task_complete(ar, idx, ev.time)

    def _on_failure(self, ev: Event) -> None:
        ar, idx = ev.payload
        self.on_task_complete(ar, idx, ev.time, failed=True)

    def _on_termination(self, ev: Event) -> None:
        ar, idx, term, failed = ev.payload
        now = ev.time
        slots = self._release_slots(ar, idx)
        tr = self._trace
        if not failed:
            ar.states[idx] = _DONE
            if tr is not None:
                tr.record(now, _K_TERM, ar.code, idx, _TERMINATING, _DONE, 6, term)
            self._tasks_done += 1
            spec = ar.spec
            if spec.payload_us is None:
                self._payload_us += ar.duration if ar.durations is None else ar.durations[idx]
                self._payload_n += 1
            else:
                self._payload_us += spec.payload_us[idx]
                self._payload_n += spec.payload_counts[idx]
            self._last_done = now
            ar.remaining -= 1
            if ar.remaining == 0:
                self._array_finished(ar, now)
        else:
            ar.states[idx] = _FAILED
            if tr is not None:
                tr.record(now, _K_TERM, ar.code, idx, _RUNNING, _FAILED, 6, term)
            r = ar.restarts.get(idx, 0)
            if r < ar.spec.max_restarts:
                ar.restarts[idx] = r + 1
                self._restarted += 1
                ar.states[idx] = _QUEUED
                if tr is not None:
                    tr.record(now, _K_TERM, ar.code, idx, _FAILED, _QUEUED)
                ar.queued += 1
                self._queue.append([ar, idx, idx + 1])
                if ar.eligible:
                    self._queued_eligible += 1
            else:
                self._failed.append((ar.spec.id, idx))
        if self._queued_eligible:
            self._wake(now, slots[0] // self._per_node)

    def _array_finished(self, ar: _ArrayRun, now: int) -> None:
        for dep in ar.dependents:
            dep.deps_left.discard(ar.spec.id)
            if not dep.deps_left and dep.enqueued and not dep.eligible:
                self._make_eligible(dep, now)

    # -- introspection ----------------------------------------------------

    def task(self, array_id: str, index: int) -> Task:
        ar = self._arrays[array_id]
        return Task(array_id, index, ar.duration_of(index), TaskState(ar.states[index]),
                    ar.assigned.get(index, ()), ar.restarts.get(index, 0))

    @property
    def free_slots(self) -> int:
        return self._free_total

    @property
    def in_flight(self) -> int:
        return self._in_flight

    def outcome(self) -> SimulationOutcome:
        first = self._first_submit or 0
        unfinished = sum(ar.remaining for ar in self._arrays.values()) - len(self._failed)
        return SimulationOutcome(
            t_total_us=self._last_done - first,
            first_submit_us=first,
            last_done_us=self._last_done,
            launches=self._launches,
            stage_totals_us={s.label: self._stage_totals[s] for s in Stage},
            tasks_done=self._tasks_done,
            payload_done_us=self._payload_us,
            payload_done_count=self._payload_n,
            restarts=self._restarted,
            failed_tasks=list(self._failed),
            unfinished_tasks=unfinished,
        )


class MonolithicBatch(ClusterScheduler):
    """Single global FIFO queue served by periodic scheduling cycles."""

    family = MONOLITHIC
    cadence_kind = EventKind.SCHEDULING_CYCLE

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._period = self.config.cycle_period_us
        self._pending = False
        self._last_cycle = None
        self._busy_until = 0
        self._track_release = self.config.backfill_enabled

    def _wake(self, now: int, node: Optional[int] = None) -> None:
        if self._pending or not self._has_work():
            return
        t = now
        if self._last_cycle is not None:
            t = max(t, self._last_cycle + self._period)
        t = max(t, self._busy_until)
        self._pending = True
        self.engine.schedule(t, int(self.cadence_kind))

    def _on_cadence(self, ev: Event) -> None:
        now = ev.time
        self._pending = False
        self._last_cycle = now
        out = self.scheduling_cycle(now, limit=self.config.max_dispatch_per_cycle,
                                    backfill=self.config.backfill_enabled)
        if out:
            self._busy_until = now + self._cycle_latency
        for a in out:
            self.dispatch(a, now)
        if out:
            self._wake(now)


class TwoLevelOffer(MonolithicBatch):
    """Offer rounds of at most ``offer_batch`` slots; the framework takes them FIFO."""

    family = TWO_LEVEL
    cadence_kind = EventKind.OFFER_ROUND

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._period = self.config.offer_interval_us
        self._track_release = False

    def _on_cadence(self, ev: Event) -> None:
        now = ev.time
        self._pending = False
        self._last_cycle = now
        out = self.scheduling_cycle(now, budget=self.config.offer_batch)
        if out:
            self._busy_until = now + self._cycle_latency
        for a in out:
            self.dispatch(a, now)
        if out:
            self._wake(now)


class HeartbeatMapReduce(ClusterScheduler):
    """Placement only on a node's heartbeat; grants wait one more round trip."""

    family = HEARTBEAT
    cadence_kind = EventKind.HEARTBEAT

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        n = self._n_nodes
        self._interval = self.config.heartbeat_interval_us
        self._phase = [(j * self._interval) // n for j in range(n)]
        self._armed = [False] * n
        self._last_hb = [-1] * n

    def _check_placeable(self, spec: JobArray) -> None:
        fit = node_fit(spec, self.cluster)
        if spec.slots_per_task > fit:
            raise ConfigError(
                f"array {spec.id}: {spec.slots_per_task} slots per task cannot fit on one node "
                f"(room for {fit}) under heartbeat placement")

    def next_heartbeat(self, node: int, now: int) -> int:
        """First heartbeat of ``node`` at or after ``now`` not already handled."""
        interval = self._interval
        if interval == 0:
            return now
        ph = self._phase[node]
        t = ph if now <= ph else ph + -(-(now - ph) // interval) * interval
        if t <= self._last_hb[node]:
            t = self._last_hb[node] + interval
        return t

    def _wake(self, now: int, node: Optional[int] = None) -> None:
        if not self._queued_eligible:
            return
        nodes = range(self._n_nodes) if node is None else (node,)
        armed = self._armed
        for j in nodes:
            if not armed[j] and self._free_by_node[j]:
                armed[j] = True
                self.engine.schedule(self.next_heartbeat(j, now), int(EventKind.HEARTBEAT), j)

    def _on_cadence(self, ev: Event) -> None:
        j = ev.payload
        now = ev.time
        self._armed[j] = False
        self._last_hb[j] = now
        out = self.scheduling_cycle(now, node=j, extra_delay=self._interval)
        for a in out:
            self.dispatch(a, now)


_FAMILY_CLASSES = {
    MONOLITHIC: MonolithicBatch,
    TWO_LEVEL: TwoLevelOffer,
    HEARTBEAT: HeartbeatMapReduce,
}


def make_scheduler(config: PolicyConfig, cluster: ClusterSpec, engine: Engine,
                   failures: Optional[Mapping[tuple[str, int], int]] = None) -> ClusterScheduler:
    return _FAMILY_CLASSES[config.family](config, cluster, engine, failures)


def simulate(config: PolicyConfig, cluster: ClusterSpec, arrays: Sequence[JobArray],
             seed: int = 0, record: bool = True,
             failures: Optional[Mapping[tuple[str, int], int]] = None
             ) -> tuple[SimulationOutcome, Optional[Trace], ClusterScheduler]:
    """Run one workload to idle; returns the outcome, the trace and the scheduler."""
    engine = Engine(seed, record=record)
    sched = make_scheduler(config, cluster, engine, failures)
    sched.submit(arrays)
    outcome = sched.run()
    return outcome, engine.trace, sched
