"""Check how the direct-launch utilization curve holds up as the cluster shrinks.

For each scale factor, prints mean U per preset at every task time and
whether U still rises strictly with t and the heartbeat preset stays lowest
at the two shortest task times.

    python scripts/scale_shape.py 1/88 1/44 1/22
"""

import sys

from latlab.bench import ExperimentPlan, parse_scale, run_experiment


def check(scale):
    plan = ExperimentPlan(scale=scale, modes=["direct"], trials=3)
    rep = run_experiment(plan)
    names = [ps.name for ps in plan.scaled_sets()]
    curves = {c.policy: [] for c in rep.cells}
    for c in rep.cells:
        curves[c.policy].append(c.mean_u)
    rising = all(all(a < b for a, b in zip(u, u[1:])) for u in curves.values())
    yarn_lowest = all(curves["yarn-like"][i] < min(u[i] for p, u in curves.items()
                                                   if p != "yarn-like") for i in (0, 1))
    print(f"scale {scale} (P={plan.scaled_sets()[0].processors}), sets {','.join(names)}")
    for p, u in curves.items():
        print(f"  {p:16s} " + "  ".join(f"{x:.4f}" for x in u))
    print(f"  rising in t: {rising}   heartbeat lowest at short t: {yarn_lowest}")
    return rising and yarn_lowest


def main(argv):
    scales = [parse_scale(a) for a in argv] or [parse_scale("1/22")]
    ok = [check(s) for s in scales]
    sys.exit(0 if all(ok) else 1)


if __name__ == "__main__":
    main(sys.argv[1:])
