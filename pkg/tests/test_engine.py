import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latlab.engine import (
    Engine,
    EventKind,
    SplitMix64,
    Trace,
    audit_trace,
    derive_seed,
    mix64,
)
from latlab.model import ClusterSpec, JobArray, SimulationAbort, TaskState


class TestSplitMix64:
    def test_reference_vector(self):
        # Published first outputs of SplitMix64 seeded with 0 and 1234567.
        assert SplitMix64(0).next_u64() == 0xE220A8397B1DCDAF
        rng = SplitMix64(1234567)
        assert [rng.next_u64() for _ in range(3)] == [
            6457827717110365317, 3203168211198807973, 9817491932198370423]

    def test_same_seed_same_stream(self):
        a, b = SplitMix64(42), SplitMix64(42)
        assert [a.next_u64() for _ in range(100)] == [b.next_u64() for _ in range(100)]

    def test_neighbouring_seeds_diverge(self):
        a, b = SplitMix64(42), SplitMix64(43)
        assert any(a.next_u64() != b.next_u64() for _ in range(1000))

    @given(seed=st.integers(0, 2**64 - 1), base=st.integers(0, 10**7), frac=st.floats(0, 1))
    def test_jitter_within_bounds(self, seed, base, frac):
        half = int(base * frac)
        v = SplitMix64(seed).jitter(base, half)
        assert max(0, base - half) <= v <= base + half

    def test_zero_jitter_consumes_nothing(self):
        rng = SplitMix64(5)
        assert rng.jitter(100, 0) == 100
        assert rng.next_u64() == SplitMix64(5).next_u64()

    def test_derive_seed_sensitive_to_every_coordinate(self):
        seeds = {derive_seed(2016, p, s, m, k)
                 for p in range(4) for s in range(4) for m in range(2) for k in range(3)}
        assert len(seeds) == 96
        assert derive_seed(7, 1) == derive_seed(7, 1)

    def test_mix64_is_64_bit(self):
        assert 0 <= mix64(2**64 - 1) < 2**64


def _collect(engine: Engine, events):
    seen = []
    for t, name in events:
        engine.schedule(t, EventKind.SUBMIT, name)
    engine.run_until_idle({EventKind.SUBMIT: lambda ev: seen.append((engine.now, ev.payload))})
    return seen


class TestEngine:
    def test_time_then_insertion_order(self):
        assert _collect(Engine(), [(5, "A"), (3, "B"), (5, "C")]) == [(3, "B"), (5, "A"), (5, "C")]

    def test_empty_queue_returns_at_zero(self):
        e = Engine()
        trace = e.run_until_idle({})
        assert e.now == 0 and len(trace) == 0

    def test_past_event_aborts(self):
        e = Engine()

        def handler(ev):
            e.schedule(ev.time - 1, EventKind.SUBMIT, "late")

        e.schedule(10, EventKind.SUBMIT, "first")
        with pytest.raises(SimulationAbort, match="before the clock"):
            e.run_until_idle({EventKind.SUBMIT: handler})

    def test_same_instant_follow_up_runs_after_peers(self):
        e = Engine()
        order = []

        def handler(ev):
            order.append(ev.payload)
            if ev.payload == "A":
                e.schedule(e.now, EventKind.SUBMIT, "A2")

        for name in "AB":
            e.schedule(1, EventKind.SUBMIT, name)
        e.run_until_idle({EventKind.SUBMIT: handler})
        assert order == ["A", "B", "A2"]

    def test_missing_handler_aborts_with_context(self):
        e = Engine()
        e.schedule(3, EventKind.HEARTBEAT, None)
        with pytest.raises(SimulationAbort) as info:
            e.run_until_idle({})
        assert "heartbeat" in str(info.value)

    @settings(max_examples=50)
    @given(st.lists(st.integers(0, 50), max_size=40))
    def test_clock_never_decreases(self, times):
        e = Engine()
        seen = _collect(e, [(t, i) for i, t in enumerate(times)])
        clock = [t for t, _ in seen]
        assert clock == sorted(clock)
        # Ties are broken by posting order.
        assert seen == sorted(seen, key=lambda x: (x[0], x[1]))


class TestTrace:
    def test_dump_format(self):
        tr = Trace()
        code = tr.array_code("set1")
        tr.record(0, EventKind.ENQUEUE, code, 0, TaskState.PENDING_SUBMISSION, TaskState.QUEUED)
        tr.record(5, EventKind.SCHEDULING_CYCLE, -1, -1, -1, -1, stage=2, latency=7)
        buf = io.StringIO()
        tr.dump(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].split("\t") == ["time_us", "kind", "array_id", "task_index",
                                        "state_before", "state_after", "stage", "latency_us"]
        assert lines[1].split("\t")[:6] == ["0", "enqueue", "set1", "0",
                                            "pending-submission", "queued"]
        assert all(len(line.split("\t")) == 8 for line in lines)
        assert tr.dumps() == buf.getvalue()


class TestAudit:
    cluster = ClusterSpec(1, 1)
    arrays = [JobArray("a", 2, 10)]

    def _trace(self, steps):
        tr = Trace()
        code = tr.array_code("a")
        S = TaskState
        for t, idx, before, after in steps:
            tr.record(t, EventKind.TASK_COMPLETE, code, idx, S[before], S[after])
            if (before, after) == ("QUEUED", "DISPATCHING"):
                tr.slot_log.append(0)
        return tr

    def test_flags_illegal_transition(self):
        tr = self._trace([(0, 0, "PENDING_SUBMISSION", "RUNNING")])
        rep = audit_trace(tr, self.arrays, self.cluster)
        assert rep.illegal_transitions == 1 and not rep.clean

    def test_flags_double_booked_slot(self):
        steps = [(0, i, "PENDING_SUBMISSION", "QUEUED") for i in range(2)]
        steps += [(1, i, "QUEUED", "DISPATCHING") for i in range(2)]
        rep = audit_trace(self._trace(steps), self.arrays, self.cluster)
        assert rep.oversubscriptions >= 1

    def test_clean_lifecycle(self):
        chain = ["PENDING_SUBMISSION", "QUEUED", "DISPATCHING", "RUNNING", "TERMINATING", "DONE"]
        steps = []
        for i in range(2):
            steps += [(10 * i + k, i, a, b) for k, (a, b) in enumerate(zip(chain, chain[1:]))]
        rep = audit_trace(self._trace(steps), self.arrays, self.cluster)
        assert rep.clean and rep.tasks_done == 2 and rep.payload_done_us == 20
