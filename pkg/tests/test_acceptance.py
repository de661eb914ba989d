"""Acceptance suite: every criterion at full benchmark scale.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdict lines as
they happen; a summary of all verdicts is also printed at the end of any
pytest session that collected this module.  Expect several minutes.
"""

import random
import time
from dataclasses import dataclass

import pytest

from latlab.bench import (
    PUBLISHED_POLICIES,
    CellResult,
    ExperimentPlan,
    UtilizationReport,
    analytic_oracle,
    execute_trial,
    oracle_policy,
    has_published_counterpart,
    report_csv,
    run_experiment,
)
from latlab.cli import main
from latlab.engine import audit_trace
from latlab.model import ClusterSpec, JobArray, LatencyProfile, derive_parameter_set
from latlab.policies import FAMILIES, PolicyConfig, simulate

pytestmark = pytest.mark.slow

VERDICTS: dict[int, str] = {}

TITLES = {
    1: "parameter-set arithmetic",
    2: "zero-overhead bound",
    3: "oracle equivalence",
    4: "utilization vs task time shape",
    5: "multilevel utilization",
    6: "multilevel dominance",
    7: "determinism",
    8: "state-machine and capacity audit",
}


class verdict:
    """Context manager recording PASS/FAIL for one criterion."""

    def __init__(self, number: int):
        self.number = number
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        took = time.perf_counter() - self.start
        detail = "; ".join(self.details)
        if exc is not None:
            first = str(exc).strip().splitlines()
            detail = (detail + "; " if detail else "") + (first[0] if first else exc_type.__name__)
        line = f"criterion {self.number} {status}: {TITLES[self.number]} ({took:.1f} s) {detail}"
        VERDICTS[self.number] = line.rstrip()
        print("\n" + VERDICTS[self.number])
        return False


# --------------------------------------------------------------------------
# Shared runs
# --------------------------------------------------------------------------

AUDITS: list[tuple[str, object, int, int]] = []
"""(label, AuditReport, expected payload us, expected payload count) per recorded trial."""


def audit_run(label, run):
    expected_us = sum(a.total_payload_us for a in run.arrays)
    expected_n = sum(a.total_payload_count for a in run.arrays)
    AUDITS.append((label, audit_trace(run.trace, run.arrays, run.cluster), expected_us,
                   expected_n))


@dataclass
class Timed:
    report: UtilizationReport
    seconds: float


@pytest.fixture(scope="session")
def default_plan():
    return ExperimentPlan()


@pytest.fixture(scope="session")
def full_run(default_plan):
    t0 = time.perf_counter()
    rep = run_experiment(default_plan)
    return Timed(rep, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def recorded_run(default_plan):
    """Every trial of the default plan again, traced and audited one at a time."""
    cells = []
    set1_times = []
    for pi, pol, si, ps, mode in default_plan.cells():
        cell = CellResult(pol.label, mode, ps)
        if not has_published_counterpart(pol.label, mode, ps):
            cell.note = "no paper counterpart"
        for k in range(default_plan.trials):
            seed = default_plan.trial_seed(pi, si, mode, k)
            t0 = time.perf_counter()
            run = execute_trial(pol, ps, mode, seed, bundle_factor=default_plan.bundle_factor,
                                record=True)
            if ps.name == "1" and mode == "direct":
                set1_times.append(time.perf_counter() - t0)
            audit_run(f"{pol.label}/{mode}/set{ps.name}/trial{k}", run)
            cell.trials.append(run.result)
            del run
        cells.append(cell)
    return UtilizationReport(cells), set1_times


# --------------------------------------------------------------------------
# Criteria
# --------------------------------------------------------------------------


def test_criterion_1_parameter_sets(capsys):
    with verdict(1) as v:
        t0 = time.perf_counter()
        code = main(["plan"])
        took = time.perf_counter() - t0
        out = capsys.readouterr().out
        rows = {line.split("  ")[0]: line.split() for line in out.splitlines()}
        assert code == 0
        assert rows["Processors P"][-4:] == ["1408"] * 4
        assert rows["Job time per processor T_job"][-8:] == ["240", "secs"] * 4
        assert rows["Task time t"][-8:] == ["1", "sec", "5", "secs", "30", "secs", "60", "secs"]
        assert rows["Tasks per processor n"][-4:] == ["240", "48", "8", "4"]
        assert rows["Total tasks N"][-4:] == ["337920", "67584", "11264", "5632"]
        assert out.count("337920 secs") == 4
        for t, n, N in [(1, 240, 337920), (5, 48, 67584), (30, 8, 11264), (60, 4, 5632)]:
            ps = derive_parameter_set(1408, 240, t)
            assert (ps.tasks_per_processor, ps.total_tasks) == (n, N)
            assert ps.total_processor_time_us == 337920 * 10**6
        assert took < 1.0, f"plan took {took:.2f} s"
        v.note(f"(t, n, N) exact for all four sets, plan printed in {took * 1000:.0f} ms")


def zero_config(family):
    return PolicyConfig(family=family, latency=LatencyProfile.zero(), name=f"zero-{family}")


def test_criterion_2_zero_overhead(default_plan):
    with verdict(2) as v:
        t0 = time.perf_counter()
        totals = {}
        for family in FAMILIES:
            for ps in default_plan.scaled_sets():
                r = execute_trial(zero_config(family), ps, "direct", seed=1).result
                assert r.t_total_us == ps.job_time_us, (family, ps.name, r.t_total_us)
                assert r.utilization == 1.0
                totals[(family, ps.name)] = r.t_total_us
        took = time.perf_counter() - t0
        assert took < 30, f"took {took:.1f} s"
        v.note(f"{len(totals)} runs, T_total = n*t and U = 1.0 exactly, {took:.1f} s simulated")
        # traced re-runs for the audit; identical seeds, so identical trials
        for family in FAMILIES:
            for ps in default_plan.scaled_sets():
                run = execute_trial(zero_config(family), ps, "direct", seed=1, record=True)
                assert run.result.t_total_us == totals[(family, ps.name)]
                audit_run(f"zero/{family}/set{ps.name}", run)


def test_criterion_3_oracle_equivalence():
    with verdict(3) as v:
        rng = random.Random(2016)
        t0 = time.perf_counter()
        checked = 0
        for _ in range(64):
            P, L = rng.randint(1, 16), rng.randint(1, 64)
            d = rng.randint(1, 30 * 10**6)
            o = rng.choice([0, rng.randint(1, 10**6), rng.randint(1, 5 * 10**6)])
            arrays = [JobArray("job", L, d)]
            cluster = ClusterSpec.for_processors(P)
            out, trace, _ = simulate(oracle_policy(o), cluster, arrays, seed=rng.getrandbits(32))
            assert out.t_total_us == analytic_oracle(P, L, d, o), (P, L, d, o)
            AUDITS.append((f"oracle/P{P}/L{L}", audit_trace(trace, arrays, cluster), L * d, L))
            checked += 1
        took = time.perf_counter() - t0
        assert took < 10, f"took {took:.1f} s"
        v.note(f"{checked} random configs match exactly")


def test_criterion_4_task_time_shape(full_run, recorded_run):
    with verdict(4) as v:
        rep = full_run.report
        assert not rep.failed_cells
        policies = [c.policy for c in rep.cells if c.mode == "direct" and c.params.name == "1"]
        curves = {p: [rep.cell(p, "direct", s).mean_u for s in "1234"] for p in policies}
        for p, us in curves.items():
            assert all(a < b for a, b in zip(us, us[1:])), f"{p} not increasing: {us}"
            assert us[3] >= 0.9, f"{p} at t=60 s: {us[3]:.4f}"
        for i in (0, 1):
            yarn = curves["yarn-like"][i]
            others = {p: us[i] for p, us in curves.items() if p != "yarn-like"}
            assert all(yarn < u for u in others.values()), (i, yarn, others)
        _, set1_times = recorded_run
        assert full_run.seconds <= 300, f"full plan took {full_run.seconds:.0f} s"
        assert max(set1_times) <= 60, f"slowest Set 1 trial {max(set1_times):.1f} s"
        v.note("direct U by t: " + ", ".join(
            f"{p} " + "/".join(f"{u:.3f}" for u in us) for p, us in curves.items()))
        v.note(f"full plan {full_run.seconds:.0f} s, slowest traced Set 1 trial "
               f"{max(set1_times):.1f} s")


def test_criterion_5_multilevel_utilization(full_run):
    with verdict(5) as v:
        rep = full_run.report
        lows = {}
        for p in PUBLISHED_POLICIES:
            for s in "1234":
                cell = rep.cell(p, "multilevel", s)
                assert cell.mean_u >= 0.88, f"{p} set {s}: {cell.mean_u:.4f}"
            lows[p] = min(rep.cell(p, "multilevel", s).mean_u for s in "1234")
        v.note("lowest multilevel mean U: " + ", ".join(f"{p} {u:.4f}" for p, u in lows.items()))


def test_criterion_6_multilevel_dominance(full_run):
    with verdict(6) as v:
        rep = full_run.report
        pairs = 0
        for c in rep.cells:
            if c.mode != "direct":
                continue
            m = rep.cell(c.policy, "multilevel", c.params.name)
            assert m.mean_u >= c.mean_u, (c.policy, c.params.name, m.mean_u, c.mean_u)
            for d_trial, m_trial in zip(c.trials, m.trials):
                assert m_trial.utilization >= d_trial.utilization
                assert d_trial.launches == c.params.total_tasks
                assert m_trial.launches == c.params.processors
            pairs += 1
        v.note(f"{pairs} cells, U_multilevel >= U_direct per trial, launches N -> P exactly")


def test_criterion_7_determinism(default_plan, full_run, recorded_run):
    with verdict(7) as v:
        first = report_csv(full_run.report).encode()
        second = report_csv(run_experiment(default_plan)).encode()
        assert first == second, "two runs of the default plan differ"
        traced = report_csv(recorded_run[0]).encode()
        assert traced == first, "tracing changed the outcome"
        v.note(f"{len(first)} byte CSV identical across two runs and the traced run")


def test_criterion_8_audit(recorded_run):
    # Criteria 2 and 3 add their traced runs to AUDITS; pytest runs them first.
    with verdict(8) as v:
        assert AUDITS
        bad = []
        for label, rep, want_us, want_n in AUDITS:
            if not rep.clean:
                bad.append(f"{label}: {rep.examples[:2]}")
            if rep.payload_done_us != want_us or rep.payload_done_count != want_n:
                bad.append(f"{label}: payload {rep.payload_done_us} us/{rep.payload_done_count} "
                           f"!= {want_us} us/{want_n}")
        assert not bad, bad[:5]
        groups = {label.split("/")[0] for label, *_ in AUDITS}
        assert {"zero", "oracle"} <= groups, f"missing traces from criteria 2/3: {groups}"
        v.note(f"{len(AUDITS)} traces replayed: zero illegal transitions, zero "
               f"oversubscription, payload = N*t in every trial")
