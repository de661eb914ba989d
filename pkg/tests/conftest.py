import pytest

from latlab.model import LatencyProfile, StageLatency
from latlab.policies import MONOLITHIC, PolicyConfig

SEC = 1_000_000


def lat(**stages_sec) -> LatencyProfile:
    """LatencyProfile from stage=base or stage=(base, jitter) in seconds."""
    kw = {}
    for name, v in stages_sec.items():
        base, jitter = v if isinstance(v, tuple) else (v, 0)
        kw[name] = StageLatency.of(base, jitter)
    return LatencyProfile(**kw)


def mono(**kw) -> PolicyConfig:
    kw.setdefault("family", MONOLITHIC)
    return PolicyConfig(**kw)


@pytest.fixture
def hand_trace_config():
    """One slot, 1 s serialized dispatch, everything else free."""
    return mono(latency=lat(job_dispatch=1), dispatch_concurrency=1)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.VERDICTS):
        terminalreporter.write_line(mod.VERDICTS[k])
