import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from latlab.bench import execute_trial, run_trial
from latlab.model import ConfigError, JobArray, derive_parameter_set
from latlab.multilevel import bundle, multilevel_run, plan_bundles, resolve_bundle_factor
from latlab.policies import FAMILIES, PolicyConfig, get_preset

from .conftest import SEC, mono


def test_parameter_set_1_bundles_to_one_launch_per_processor():
    src = JobArray("job", 337920, SEC)
    out = bundle(src, 240)
    assert out.task_count == 1408
    assert out.task_duration_us == 240 * SEC and out.durations is None
    assert out.total_payload_us == 337920 * SEC
    assert out.total_payload_count == 337920


def test_b1_is_identity():
    src = JobArray("job", 17, 3 * SEC)
    assert bundle(src, 1, eps=5) is src


def test_partial_final_bundle():
    plan = plan_bundles(JobArray("a", 5, 10 * SEC), 2)
    assert plan.bundle_sizes == (2, 2, 1)
    assert plan.bundled_durations == (20 * SEC, 20 * SEC, 10 * SEC)
    assert sum(plan.payload_us) == 50 * SEC


def test_eps_is_paid_between_payloads():
    out = bundle(JobArray("a", 5, 10 * SEC), 2, eps="0.5")
    assert out.durations == (20_500_000, 20_500_000, 10 * SEC)
    assert out.payload_us == (20 * SEC, 20 * SEC, 10 * SEC)


@given(N=st.integers(1, 3000), b=st.integers(1, 400), t=st.integers(1, 10**6),
       eps=st.integers(0, 1000))
def test_payload_conservation(N, b, t, eps):
    plan = plan_bundles(JobArray("a", N, t), b, eps)
    assert plan.bundled_task_count == math.ceil(N / b)
    assert sum(plan.payload_us) == N * t
    assert sum(plan.bundle_sizes) == N
    assert plan.bundled_task_count * b * t >= N * t


@pytest.mark.parametrize("bad", [0, -1, 1.5, "x"])
def test_rejects_bad_factor(bad):
    with pytest.raises(ConfigError):
        plan_bundles(JobArray("a", 3, SEC), bad)


def test_rejects_gang_arrays():
    with pytest.raises(ConfigError, match="gang"):
        bundle(JobArray("g", 4, SEC, slots_per_task=2), 2)


def test_resolve_factor():
    ps = derive_parameter_set(1408, 240, 5)
    assert resolve_bundle_factor("n", ps) == resolve_bundle_factor(None, ps) == 48
    assert resolve_bundle_factor("12", ps) == 12
    with pytest.raises(ConfigError):
        resolve_bundle_factor("half", ps)


def test_hand_trace_multilevel(hand_trace_config):
    ps = derive_parameter_set(1, 20, 10, 1)
    direct = run_trial(hand_trace_config, ps, "direct")
    multi = multilevel_run(hand_trace_config, ps, b=2)
    assert direct.t_total_us == 22 * SEC
    assert multi.t_total_us == 21 * SEC and multi.launches == 1
    assert multi.utilization == pytest.approx(20 / 21)
    assert multi.utilization > direct.utilization


def test_eps_counts_as_overhead():
    ps = derive_parameter_set(2, 20, 5, 1)
    r = multilevel_run(mono(), ps, b=4, eps=1)
    # 4 payloads of 5 s plus 3 switches of 1 s, against T_job = 20 s
    assert r.t_total_us == 23 * SEC
    assert r.utilization == pytest.approx(20 / 23)
    assert r.payload_us == 2 * 20 * SEC


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("b", [1, 3, 12])
def test_zero_latency_gives_full_utilization(family, b):
    ps = derive_parameter_set(6, 12, 1, 1)
    assert multilevel_run(PolicyConfig(family=family), ps, b=b).utilization == 1.0


def test_uneven_bundles_run_to_completion():
    ps = derive_parameter_set(4, 10, 1, 1)
    run = execute_trial(get_preset("mesos-like"), ps, "multilevel", seed=5, bundle_factor=3,
                        record=True)
    assert run.result.launches == math.ceil(40 / 3)
    assert run.outcome.payload_done_us == 40 * SEC
    assert run.result.tasks_completed == 40


def test_launch_counts():
    ps = derive_parameter_set(64, 240, 5, 1)
    pol = get_preset("slurm-like")
    assert run_trial(pol, ps, "direct", 1).launches == ps.total_tasks
    assert multilevel_run(pol, ps, seed=1).launches == 64
    assert multilevel_run(pol, ps, b=24, seed=1).launches == 128
