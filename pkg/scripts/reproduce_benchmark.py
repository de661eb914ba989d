"""Run the full default plan and print utilization tables per mode.

    python scripts/reproduce_benchmark.py [--output DIR] [--jobs N] [--scale 1/22]

Writes report.csv and report.json to DIR (default: results/).
"""

import argparse
import time
from pathlib import Path

from latlab.bench import ExperimentPlan, emit_report, parse_scale, run_experiment


def table(report, mode):
    sets = [c.params for c in report.cells if c.mode == mode]
    ts = []
    for ps in sets:
        if ps.task_time_sec not in ts:
            ts.append(ps.task_time_sec)
    policies = list(dict.fromkeys(c.policy for c in report.cells if c.mode == mode))
    lines = [f"{mode} launches, mean U over trials",
             "policy".ljust(16) + "".join(f"t={t:g}s".rjust(10) for t in ts)]
    for p in policies:
        cells = [c for c in report.cells if c.policy == p and c.mode == mode]
        vals = ["FAILED" if c.failed else f"{c.mean_u:.4f}" for c in cells]
        lines.append(p.ljust(16) + "".join(v.rjust(10) for v in vals))
    return "\n".join(lines)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--output", default="results")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--scale", default="1")
    args = ap.parse_args()

    plan = ExperimentPlan(scale=parse_scale(args.scale))
    t0 = time.perf_counter()
    report = run_experiment(plan, jobs=args.jobs)
    elapsed = time.perf_counter() - t0
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report, out / "report.csv")
    emit_report(report, out / "report.json", "json")
    for mode in plan.modes:
        print(table(report, mode), end="\n\n")
    print(f"{plan.simulation_count} simulations in {elapsed:.0f} s; reports in {out}/")


if __name__ == "__main__":
    main()
