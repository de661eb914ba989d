"""Task bundling: run many short tasks through one launch per bundle."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

from .model import ConfigError, JobArray, ParameterSet, TrialResult, to_us


@dataclass(frozen=True)
class BundlePlan:
    source_array_id: str
    bundle_factor: int
    bundled_task_count: int
    intra_bundle_overhead_us: int
    bundle_sizes: tuple[int, ...]
    payload_us: tuple[int, ...]

    @property
    def bundled_durations(self) -> tuple[int, ...]:
        eps = self.intra_bundle_overhead_us
        return tuple(p + (k - 1) * eps for p, k in zip(self.payload_us, self.bundle_sizes))


def plan_bundles(array: JobArray, b: int, eps_us: int = 0) -> BundlePlan:
    """Static even bundling: bundle i takes source tasks [i*b, min((i+1)*b, N))."""
    if isinstance(b, bool) or not isinstance(b, int) or b < 1:
        raise ConfigError(f"bundle factor must be an integer >= 1, got {b!r}")
    if eps_us < 0:
        raise ConfigError("intra-bundle overhead must be >= 0")
    if array.slots_per_task != 1:
        raise ConfigError(
            f"array {array.id}: cannot bundle a gang job ({array.slots_per_task} slots per task); "
            "bundling applies to pleasantly parallel arrays only")
    n = array.task_count
    sizes, payload = [], []
    for start in range(0, n, b):
        stop = min(start + b, n)
        sizes.append(stop - start)
        if array.durations is None:
            payload.append((stop - start) * array.task_duration_us)
        else:
            payload.append(sum(array.durations[start:stop]))
    return BundlePlan(array.id, b, len(sizes), eps_us, tuple(sizes), tuple(payload))


def bundle(array: JobArray, b: int, eps: Union[int, float, str] = 0) -> JobArray:
    """Rewrite an N-task array into ceil(N/b) bundled tasks.

    ``eps`` (seconds) is paid between consecutive payloads inside a bundle.
    ``b == 1`` returns the input unchanged.
    """
    eps_us = to_us(eps, name="intra-bundle overhead")
    plan = plan_bundles(array, b, eps_us)
    if b == 1:
        return array
    durations = plan.bundled_durations
    uniform = len(set(durations)) == 1
    return replace(
        array,
        task_count=plan.bundled_task_count,
        task_duration_us=durations[0],
        durations=None if uniform else durations,
        payload_us=plan.payload_us,
        payload_counts=plan.bundle_sizes,
    )


def resolve_bundle_factor(value: Union[int, str, None], params: ParameterSet) -> int:
    """'n' (or None) means one bundle per processor."""
    if value is None or value == "n":
        return params.tasks_per_processor
    if isinstance(value, str):
        try:
            value = int(value)
        except ValueError:
            raise ConfigError(f"bundle factor must be an integer or 'n', got {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"bundle factor must be an integer >= 1 or 'n', got {value!r}")
    return value


def multilevel_run(policy, params: ParameterSet, b: Optional[Union[int, str]] = None,
                   eps=0, seed: int = 0, **kwargs) -> TrialResult:
    """Run the bundled form of the parameter set's workload through ``policy``."""
    from .bench import run_trial

    return run_trial(policy, params, "multilevel", seed, bundle_factor=b, eps=eps, **kwargs)
