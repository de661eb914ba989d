"""Deterministic discrete-event core: virtual clock, event queue, RNG, trace."""

from __future__ import annotations

import heapq
import io
from array import array
from enum import IntEnum
from typing import Callable, Iterator, Mapping, NamedTuple, Optional, Sequence, TextIO

from .model import (
    LEGAL_TRANSITIONS,
    SLOT_HOLDING_STATES,
    ClusterSpec,
    JobArray,
    SimulationAbort,
    Stage,
    TaskState,
)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer (Stafford variant 13)."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """SplitMix64 (Steele, Lea, Flood 2014).

    state += 0x9E3779B97F4A7C15; output = mix64(state).  Pure integer
    arithmetic, so the stream is identical on every platform.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform_int(self, lo: int, hi: int) -> int:
        """Integer on [lo, hi] by multiply-shift (bias < 2**-40 for our spans)."""
        return lo + ((self.next_u64() * (hi - lo + 1)) >> 64)

    def jitter(self, base: int, half_width: int) -> int:
        """A draw on [base - half_width, base + half_width], clamped at 0.

        Zero-width stages consume no randomness.
        """
        if half_width == 0:
            return base
        v = base - half_width + ((self.next_u64() * (2 * half_width + 1)) >> 64)
        return v if v > 0 else 0


def derive_seed(base: int, *coords: int) -> int:
    """Fold integer coordinates into a 64-bit seed; same inputs, same seed."""
    h = mix64((base & MASK64) ^ 0x6A09E667F3BCC909)
    for c in coords:
        h = mix64((h + GOLDEN_GAMMA * (c + 1)) & MASK64)
    return h


class EventKind(IntEnum):
    SUBMIT = 0
    ENQUEUE = 1
    SCHEDULING_CYCLE = 2
    OFFER_ROUND = 3
    HEARTBEAT = 4
    DISPATCH_COMPLETE = 5
    TASK_COMPLETE = 6
    TERMINATION_COMPLETE = 7
    FAILURE_INJECTED = 8

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")


class Event(NamedTuple):
    time: int
    seq: int
    kind: int
    payload: object = None


class TraceEntry(NamedTuple):
    time: int
    kind: EventKind
    array_id: Optional[str]
    task_index: int
    state_before: Optional[TaskState]
    state_after: Optional[TaskState]
    stage: Optional[Stage]
    latency_us: int


NONE = -1


class Trace:
    """Columnar trace; one row per task transition or latency charge.

    Rows with ``task_index == -1`` are scheduler-level latency charges.
    ``slot_log`` holds the slot ids of each queued->dispatching transition,
    in trace order, ``slots_per_task`` ids per placement.
    """

    TSV_HEADER = "time_us\tkind\tarray_id\ttask_index\tstate_before\tstate_after\tstage\tlatency_us"

    def __init__(self):
        self.time = array("q")
        self.kind = array("b")
        self.array = array("l")
        self.task = array("l")
        self.before = array("b")
        self.after = array("b")
        self.stage = array("b")
        self.latency = array("q")
        self.array_ids: list[str] = []
        self.slot_log = array("l")
        self._codes: dict[str, int] = {}

    def array_code(self, array_id: str) -> int:
        code = self._codes.get(array_id)
        if code is None:
            code = self._codes[array_id] = len(self.array_ids)
            self.array_ids.append(array_id)
        return code

    def record(self, time: int, kind: int, array_code: int, index: int,
               before: int, after: int, stage: int = NONE, latency: int = 0) -> None:
        self.time.append(time)
        self.kind.append(kind)
        self.array.append(array_code)
        self.task.append(index)
        self.before.append(before)
        self.after.append(after)
        self.stage.append(stage)
        self.latency.append(latency)

    def record_transitions(self, time: int, kind: int, array_code: int,
                           indices: range, before: int, after: int) -> None:
        """Bulk form of :meth:`record` for a block of same-state transitions."""
        k = len(indices)
        self.time.extend(array("q", [time]) * k)
        self.kind.extend(array("b", [kind]) * k)
        self.array.extend(array("l", [array_code]) * k)
        self.task.extend(array("l", indices))
        self.before.extend(array("b", [before]) * k)
        self.after.extend(array("b", [after]) * k)
        self.stage.extend(array("b", [NONE]) * k)
        self.latency.extend(array("q", [0]) * k)

    def __len__(self) -> int:
        return len(self.time)

    def __getitem__(self, i: int) -> TraceEntry:
        code = self.array[i]
        b, a, s = self.before[i], self.after[i], self.stage[i]
        return TraceEntry(
            self.time[i], EventKind(self.kind[i]),
            self.array_ids[code] if code >= 0 else None,
            self.task[i],
            TaskState(b) if b >= 0 else None,
            TaskState(a) if a >= 0 else None,
            Stage(s) if s >= 0 else None,
            self.latency[i],
        )

    def __iter__(self) -> Iterator[TraceEntry]:
        for i in range(len(self)):
            yield self[i]

    def rows(self) -> Iterator[tuple]:
        """Raw integer rows, cheaper than :meth:`__iter__` for audits."""
        return zip(self.time, self.kind, self.array, self.task,
                   self.before, self.after, self.stage, self.latency)

    def dump(self, out: TextIO, header: bool = True) -> None:
        """Write the tab-separated trace, one line per entry."""
        kinds = [k.label for k in EventKind]
        states = [s.label for s in TaskState]
        stages = [s.label for s in Stage]
        ids = self.array_ids
        if header:
            out.write(self.TSV_HEADER + "\n")
        for t, k, a, i, b, af, s, lat in self.rows():
            out.write(f"{t}\t{kinds[k]}\t{ids[a] if a >= 0 else '-'}\t{i}\t"
                      f"{states[b] if b >= 0 else '-'}\t{states[af] if af >= 0 else '-'}\t"
                      f"{stages[s] if s >= 0 else '-'}\t{lat}\n")

    def dumps(self) -> str:
        buf = io.StringIO()
        self.dump(buf)
        return buf.getvalue()

    def tail(self, count: int = 10) -> list[TraceEntry]:
        return [self[i] for i in range(max(0, len(self) - count), len(self))]

    def fingerprint(self) -> tuple:
        return tuple(bytes(col) for col in (self.time, self.kind, self.array, self.task,
                                            self.before, self.after, self.stage,
                                            self.latency, self.slot_log))


Handler = Callable[[Event], None]


class Engine:
    """Single-threaded event loop over integral virtual time.

    Events run in (time, seq) order.  Posting at the current instant is
    allowed and runs after everything already queued for that instant.
    """

    def __init__(self, seed: int = 0, record: bool = True):
        self.seed = seed
        self.rng = SplitMix64(seed)
        self.now = 0
        self.trace: Optional[Trace] = Trace() if record else None
        self.events_executed = 0
        self._queue: list[Event] = []
        self._seq = 0

    def __len__(self) -> int:
        return len(self._queue)

    def post(self, event: Event) -> Event:
        """Queue a pre-built event; its seq is replaced by the engine's counter."""
        return self.schedule(event.time, event.kind, event.payload)

    def schedule(self, time: int, kind: int, payload=None) -> Event:
        if time < self.now:
            raise SimulationAbort(
                f"event {EventKind(kind).label} posted at {time}us, before the clock ({self.now}us)")
        ev = Event(time, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def run_until_idle(self, handlers: Mapping[int, Handler]) -> Optional[Trace]:
        table: list[Optional[Handler]] = [None] * len(EventKind)
        for kind, fn in handlers.items():
            table[kind] = fn
        queue = self._queue
        pop = heapq.heappop
        executed = 0
        ev = None
        try:
            while queue:
                ev = pop(queue)
                self.now = ev.time
                fn = table[ev.kind]
                if fn is None:
                    raise SimulationAbort(f"no handler for event kind {EventKind(ev.kind).label}")
                fn(ev)
                executed += 1
        except SimulationAbort as exc:
            if ev is not None:
                exc.add_context(f"while handling {EventKind(ev.kind).label} at {ev.time}us "
                                f"(seq {ev.seq}, payload {ev.payload!r})")
            if self.trace is not None:
                for entry in self.trace.tail():
                    exc.add_context(f"  trace: {tuple(entry)}")
            raise
        finally:
            self.events_executed += executed
        return self.trace


def new_engine(seed: int, record: bool = True) -> Engine:
    return Engine(seed, record=record)


# --------------------------------------------------------------------------
# Replay audit
# --------------------------------------------------------------------------


class AuditReport(NamedTuple):
    illegal_transitions: int
    oversubscriptions: int
    non_monotone_times: int
    payload_done_us: int
    payload_done_count: int
    tasks_done: int
    restarts: int
    examples: list[str]

    @property
    def clean(self) -> bool:
        return not (self.illegal_transitions or self.oversubscriptions or self.non_monotone_times)


def audit_trace(trace: Trace, arrays: Sequence[JobArray], cluster: ClusterSpec,
                limit: int = 20) -> AuditReport:
    """Replay a trace against the task state machine and the slot map.

    Independent of the policy code: it rebuilds task states, per-slot
    ownership and per-node resource use purely from trace rows.
    """
    specs = {a.id: a for a in arrays}
    code_spec = [specs.get(aid) for aid in trace.array_ids]
    legal = {(int(b), int(a)) for b, a in LEGAL_TRANSITIONS}
    holding = {int(s) for s in SLOT_HOLDING_STATES}
    pending = int(TaskState.PENDING_SUBMISSION)
    queued, dispatching = int(TaskState.QUEUED), int(TaskState.DISPATCHING)
    done, failed = int(TaskState.DONE), int(TaskState.FAILED)

    state: dict[tuple[int, int], int] = {}
    restarts: dict[tuple[int, int], int] = {}
    owner = [None] * cluster.total_slots
    held: dict[tuple[int, int], tuple[int, ...]] = {}
    res_names = list(cluster.dynamic_resources)
    res_cap = [cluster.dynamic_resources[r] for r in res_names]
    node_use = [[0] * cluster.node_count for _ in res_names]
    per_node = cluster.slots_per_node

    examples: list[str] = []
    illegal = over = non_mono = 0

    def note(msg: str) -> None:
        if len(examples) < limit:
            examples.append(msg)
    last_t = None
    cursor = 0
    slot_log = trace.slot_log
    payload_us = payload_n = tasks_done = n_restarts = 0

    for t, _kind, acode, idx, before, after, _stage, _lat in trace.rows():
        if last_t is not None and t < last_t:
            non_mono += 1
        last_t = t
        if idx < 0 or before < 0:
            continue
        key = (acode, idx)
        cur = state.get(key, pending)
        spec = code_spec[acode]
        if cur != before or (before, after) not in legal:
            illegal += 1
            note(f"t={t} {trace.array_ids[acode]}[{idx}] recorded "
                 f"{TaskState(before).label}->{TaskState(after).label} "
                 f"while {TaskState(cur).label}")
        if before == failed and after == queued:
            r = restarts.get(key, 0)
            if spec is None or r >= spec.max_restarts:
                illegal += 1
                note(f"t={t} {trace.array_ids[acode]}[{idx}] restarted beyond max_restarts")
            restarts[key] = r + 1
            n_restarts += 1
        state[key] = after

        if before == queued and after == dispatching:
            k = spec.slots_per_task if spec is not None else 1
            slots = tuple(slot_log[cursor:cursor + k])
            cursor += k
            for s in slots:
                if owner[s] is not None:
                    over += 1
                    note(f"t={t} slot {s} given to {trace.array_ids[acode]}[{idx}] "
                         f"while held by {owner[s]}")
                owner[s] = key
                if spec is not None:
                    for r_i, name in enumerate(res_names):
                        node_use[r_i][s // per_node] += spec.resources_per_slot.get(name, 0)
                        if node_use[r_i][s // per_node] > res_cap[r_i]:
                            over += 1
                            note(f"t={t} node {s // per_node} {name} over capacity")
            held[key] = slots
        elif before in holding and after not in holding:
            for s in held.pop(key, ()):
                owner[s] = None
                if spec is not None:
                    for r_i, name in enumerate(res_names):
                        node_use[r_i][s // per_node] -= spec.resources_per_slot.get(name, 0)
        if after == done and spec is not None:
            tasks_done += 1
            payload_us += spec.payload_of(idx)
            payload_n += spec.payload_count_of(idx)

    return AuditReport(illegal, over, non_mono, payload_us, payload_n, tasks_done, n_restarts,
                       examples)
