"""Command-line entry point: ``latlab plan | run | policies``.

Exit codes: 0 success, 2 configuration error, 3 some cells failed,
4 the engine aborted on an accounting invariant.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .bench import (
    MODES,
    ExperimentPlan,
    emit_report,
    eps_to_us,
    parse_scale,
    run_experiment,
)
from .model import ConfigError, ParameterSet, derive_parameter_set, fmt_seconds
from .policies import PRESETS, PolicyConfig, get_preset

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_ABORT = 0, 2, 3, 4

_TOP_KEYS = {"seed", "trials", "scale", "modes", "bundle_factor", "intra_bundle_overhead",
             "slots_per_node", "parameter_sets", "policies", "output", "trace", "jobs"}


@dataclass
class RunConfig:
    plan: ExperimentPlan = field(default_factory=ExperimentPlan)
    output: str = "results"
    trace: bool = False
    jobs: int = 1

    def to_dict(self) -> dict:
        p = self.plan
        policies = []
        for pol in p.policies:
            if PRESETS.get(pol.name) == pol:
                policies.append(pol.name)
            else:
                policies.append(pol.to_dict())
        return {
            "seed": p.base_seed,
            "trials": p.trials,
            "scale": str(p.scale),
            "modes": list(p.modes),
            "bundle_factor": p.bundle_factor,
            "intra_bundle_overhead": fmt_seconds(p.eps_us),
            "slots_per_node": p.slots_per_node,
            "parameter_sets": [
                {"name": ps.name, "processors": ps.processors,
                 "job_time": fmt_seconds(ps.job_time_us), "task_time": fmt_seconds(ps.task_time_us)}
                for ps in p.parameter_sets
            ],
            "policies": policies,
            "output": self.output,
            "trace": self.trace,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a mapping")
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"config: unknown key(s) {', '.join(sorted(unknown))}")
        defaults = load_default_dict()
        merged = {**defaults, **data}
        sets = []
        raw_sets = merged["parameter_sets"]
        if not isinstance(raw_sets, list):
            raise ConfigError("config.parameter_sets must be a list")
        trials = _int(merged, "trials", minimum=1)
        for i, entry in enumerate(raw_sets, start=1):
            if not isinstance(entry, dict):
                raise ConfigError(f"config.parameter_sets[{i}] must be a mapping")
            for key in ("processors", "job_time", "task_time"):
                if key not in entry:
                    raise ConfigError(f"config.parameter_sets[{i}]: missing key '{key}'")
            try:
                sets.append(derive_parameter_set(entry["processors"], _num(entry["job_time"]),
                                                 _num(entry["task_time"]), trials,
                                                 name=str(entry.get("name", i))))
            except ConfigError as exc:
                raise ConfigError(f"config.parameter_sets[{i}]: {exc}") from None
        raw_pols = merged["policies"]
        if not isinstance(raw_pols, list):
            raise ConfigError("config.policies must be a list")
        policies = []
        for i, entry in enumerate(raw_pols, start=1):
            try:
                policies.append(get_preset(entry) if isinstance(entry, str)
                                else PolicyConfig.from_dict(entry))
            except ConfigError as exc:
                raise ConfigError(f"config.policies[{i}]: {exc}") from None
        modes = merged["modes"]
        if isinstance(modes, str):
            modes = [m.strip() for m in modes.split(",")]
        try:
            eps = eps_to_us(_num(merged["intra_bundle_overhead"]))
        except ConfigError as exc:
            raise ConfigError(f"config.intra_bundle_overhead: {exc}") from None
        plan = ExperimentPlan(
            parameter_sets=sets,
            policies=policies,
            modes=tuple(modes),
            trials=trials,
            base_seed=_int(merged, "seed"),
            scale=parse_scale(merged["scale"]),
            bundle_factor=_bundle(merged["bundle_factor"]),
            eps_us=eps,
            slots_per_node=_int(merged, "slots_per_node", minimum=1),
        )
        trace = merged["trace"]
        if not isinstance(trace, bool):
            raise ConfigError("config.trace must be true or false")
        return cls(plan=plan, output=str(merged["output"]), trace=trace,
                   jobs=_int(merged, "jobs", minimum=1))

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: not valid YAML ({exc})") from None
        return cls.from_dict(data)


def _num(v):
    if isinstance(v, str):
        return v.strip()
    return v


def _int(data: dict, key: str, minimum: Optional[int] = None) -> int:
    v = data[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"config.{key} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"config.{key} must be >= {minimum}, got {v}")
    return v


def _bundle(v):
    if v == "n":
        return "n"
    if isinstance(v, str) and v.isdigit():
        v = int(v)
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"config.bundle_factor must be an integer >= 1 or 'n', got {v!r}")
    return v


def load_default_dict() -> dict:
    text = resources.files("latlab").joinpath("default_config.yaml").read_text()
    return yaml.safe_load(text)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    return RunConfig.loads(text)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    plan = cfg.plan
    d = dict(
        parameter_sets=list(plan.parameter_sets), policies=list(plan.policies),
        modes=plan.modes, trials=plan.trials, base_seed=plan.base_seed, scale=plan.scale,
        bundle_factor=plan.bundle_factor, eps_us=plan.eps_us,
        slots_per_node=plan.slots_per_node,
    )
    if getattr(args, "policy", None):
        custom = {pol.label: pol for pol in plan.policies}
        d["policies"] = [custom[n] if n in custom else get_preset(n)
                         for n in _split(args.policy)]
    if getattr(args, "mode", None):
        d["modes"] = tuple(_split(args.mode))
    if getattr(args, "sets", None) and args.sets != "all":
        wanted = _split(args.sets)
        by_name = {ps.name: ps for ps in d["parameter_sets"]}
        missing = [w for w in wanted if w not in by_name]
        if missing:
            raise ConfigError(f"--sets: unknown parameter set(s) {', '.join(missing)}; "
                              f"known: {', '.join(by_name)}")
        d["parameter_sets"] = [by_name[w] for w in wanted]
    if getattr(args, "trials", None) is not None:
        d["trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        d["base_seed"] = args.seed
    elif os.environ.get("LATLAB_SEED"):
        try:
            d["base_seed"] = int(os.environ["LATLAB_SEED"])
        except ValueError:
            raise ConfigError(f"LATLAB_SEED must be an integer, got "
                              f"{os.environ['LATLAB_SEED']!r}") from None
    if getattr(args, "scale", None) is not None:
        d["scale"] = parse_scale(args.scale)
    if getattr(args, "bundle_factor", None) is not None:
        d["bundle_factor"] = _bundle(args.bundle_factor)
    if getattr(args, "eps", None) is not None:
        d["eps_us"] = eps_to_us(args.eps)
    d["parameter_sets"] = [ps.with_trials(d["trials"]) for ps in d["parameter_sets"]]
    out = RunConfig(plan=ExperimentPlan(**d), output=cfg.output, trace=cfg.trace, jobs=cfg.jobs)
    if getattr(args, "output", None):
        out.output = args.output
    if getattr(args, "trace", False):
        out.trace = True
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out.jobs = args.jobs
    return out


def format_plan(sets: Sequence[ParameterSet], policies: Sequence[PolicyConfig],
                modes: Sequence[str]) -> str:
    """The parameter-set table in the published layout."""
    cols = [f"Parameter Set {ps.name}" for ps in sets]

    def plural(us: int) -> str:
        s = fmt_seconds(us)
        return f"{s} sec" if s == "1" else f"{s} secs"

    rows = [
        ("Processors P", [str(ps.processors) for ps in sets]),
        ("Job time per processor T_job", [plural(ps.job_time_us) for ps in sets]),
        ("Task time t", [plural(ps.task_time_us) for ps in sets]),
        ("Tasks per processor n", [str(ps.tasks_per_processor) for ps in sets]),
        ("Total tasks N", [str(ps.total_tasks) for ps in sets]),
        ("Total processor time", [f"{fmt_seconds(ps.total_processor_time_us)} secs "
                                  f"({ps.total_processor_time_us / 3.6e9:.2f} hours)"
                                  for ps in sets]),
        ("Number of trials", [""] * len(sets)),
    ]
    for mode in modes:
        for pol in policies:
            label = pol.label if mode == "direct" else f"{mode} {pol.label}"
            rows.append((f"  {label}", [str(ps.trials) for ps in sets]))
    width = max(len(r[0]) for r in rows + [("Configuration", [])])
    colw = [max(len(c), *(len(r[1][i]) for r in rows)) for i, c in enumerate(cols)]
    lines = ["  ".join(["Configuration".ljust(width)] + [c.ljust(w) for c, w in zip(cols, colw)])]
    for label, vals in rows:
        lines.append("  ".join([label.ljust(width)] + [v.ljust(w) for v, w in zip(vals, colw)]))
    return "\n".join(line.rstrip() for line in lines)


def cmd_plan(cfg: RunConfig) -> int:
    plan = cfg.plan
    print(format_plan(plan.scaled_sets(), plan.policies, plan.modes))
    return EXIT_OK


def format_summary(report) -> str:
    sets = []
    for c in report.cells:
        if c.params.name not in sets:
            sets.append(c.params.name)
    rows = {}
    for c in report.cells:
        key = (c.policy, c.mode)
        if c.failed:
            val = "FAILED"
        elif not c.trials:
            val = "-"
        else:
            val = f"{c.mean_u:.4f}" + ("*" if c.note else "")
        rows.setdefault(key, {})[c.params.name] = val
    header = ["policy", "mode"] + [f"U(set {s})" for s in sets]
    body = [[p, m] + [vals.get(s, "") for s in sets] for (p, m), vals in rows.items()]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in body]
    if any(c.note for c in report.cells):
        lines.append("* no paper counterpart")
    return "\n".join(line.rstrip() for line in lines)


def cmd_run(cfg: RunConfig) -> int:
    out = Path(cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"--output: cannot create {out}: {exc.strerror}") from None
    trace_dir = out / "traces" if cfg.trace else None
    report = run_experiment(cfg.plan, jobs=cfg.jobs, trace_dir=trace_dir)
    emit_report(report, out / "report.csv", "csv")
    emit_report(report, out / "report.json", "json")
    print(format_summary(report))
    for c in report.failed_cells:
        print(f"cell {c.policy}/{c.mode}/set {c.params.name} failed: {c.error}", file=sys.stderr)
    if report.aborted:
        return EXIT_ABORT
    if report.failed_cells:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_policies(cfg: RunConfig) -> int:
    for pol in cfg.plan.policies:
        print(yaml.safe_dump([pol.to_dict()], sort_keys=False), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run config (default: shipped plan)")
    common.add_argument("--policy", metavar="LIST",
                        help=f"comma-separated presets: {', '.join(PRESETS)}")
    common.add_argument("--mode", metavar="LIST", help=f"comma-separated: {', '.join(MODES)}")
    common.add_argument("--sets", "--set", dest="sets", metavar="LIST|all",
                        help="parameter set names, e.g. 1,4")
    common.add_argument("--trials", type=int, metavar="N")
    common.add_argument("--seed", type=int, metavar="N", help="base seed (fallback: $LATLAB_SEED)")
    common.add_argument("--scale", metavar="RATIONAL", help="scale P, e.g. 1/22")
    common.add_argument("--bundle-factor", metavar="N|n")
    common.add_argument("--eps", metavar="SECONDS", help="intra-bundle overhead")
    common.add_argument("--output", metavar="DIR")
    common.add_argument("--trace", action="store_true", help="dump per-trial TSV traces")
    common.add_argument("--jobs", type=int, metavar="N", help="trials run in parallel")

    parser = argparse.ArgumentParser(prog="latlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", parents=[common], help="print the parameter-set table")
    sub.add_parser("run", parents=[common], help="run the experiment and write reports")
    sub.add_parser("policies", parents=[common], help="show policy presets and their knobs")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        if args.command == "plan":
            return cmd_plan(cfg)
        if args.command == "policies":
            return cmd_policies(cfg)
        return cmd_run(cfg)
    except ConfigError as exc:
        print(f"latlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
