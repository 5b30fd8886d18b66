"""``mixalloc`` command line.

Exit codes: 0 success, 2 bad input, 3 calibration failure, 4 degenerate
profile, 5 infeasible allocation, 1 solver failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .allocator import (
    AllocationProblem,
    AppDemand,
    dump_solution,
    grid_oracle,
    solution_to_dict,
    solve,
)
from .errors import (
    CalibrationError,
    ConvergenceError,
    DegenerateProfileError,
    FeasibilityError,
    LookupTableError,
    MixallocError,
    ValidationError,
)
from .family import build_family, family_to_csv
from .lut import DEFAULT_Z, build_lut, dump_lut
from .profiles import build_accuracy_profile, build_latency_profile, dump_profile, load_profile
from .simulator import (
    baseline_compare,
    load_scenario,
    report_to_dict,
    robustness_sweep,
    run_scenario,
    sweep_to_csv,
    trace_to_csv,
)
from .synth import synthesize_workload
from .workload import dump_app_spec, load_app_spec

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2
EXIT_CALIBRATION = 3
EXIT_DEGENERATE = 4
EXIT_INFEASIBLE = 5


class _Run:
    """Collects every output of a command, then writes them all at once."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.inputs: list[str] = []
        self.outputs: list[tuple[Path, str]] = []
        self.params: dict = {}

    def out_path(self, explicit: str | None, default: str) -> Path:
        path = Path(explicit or default)
        if not path.is_absolute():
            path = Path(self.args.out_dir) / path
        return path

    def add(self, path: Path, text: str) -> None:
        self.outputs.append((path, text))

    def say(self, line: str) -> None:
        if not self.args.quiet:
            print(line)

    def commit(self) -> None:
        manifest = {
            "command": self.command,
            "inputs": self.inputs,
            "outputs": [str(p) for p, _ in self.outputs],
            "seed": self.args.seed,
            "parameters": self.params,
        }
        files = self.outputs + [
            (Path(self.args.out_dir) / f"{self.command}.manifest.json", json.dumps(manifest, indent=2) + "\n")
        ]
        for path, text in files:
            _atomic_write(path, text)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _app_name(latency_path: str) -> str:
    stem = Path(latency_path).name
    for suffix in (".json", "_latency", ".latency"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    return stem


def _demands(run: _Run, args) -> list[AppDemand]:
    lams = args.lam or []
    mus = args.mu_mib or []
    if len(lams) not in (0, len(args.app)) or len(mus) not in (0, len(args.app)):
        raise ValidationError("--lambda and --mu-mib need one value per --app (or none)")
    apps = []
    for i, (lat_path, acc_path) in enumerate(args.app):
        run.inputs += [lat_path, acc_path]
        apps.append(AppDemand(
            _app_name(lat_path),
            load_profile(acc_path),
            load_profile(lat_path),
            lam=lams[i] if lams else 1.0,
            mu_mib=mus[i] if mus else 0.0,
        ))
    return apps


# -- commands ------------------------------------------------------------------

def cmd_generate(args) -> int:
    run = _Run(args, "generate")
    lat = acc = None
    if args.calibrate:
        run.inputs += list(args.calibrate)
        lat, acc = (load_profile(p) for p in args.calibrate)
    app = synthesize_workload(args.layers, args.seed, lat, acc, name=args.name)
    out = run.out_path(args.output, f"{app.name}.app.json")
    run.params = {"layers": args.layers, "name": app.name}
    run.add(out, dump_app_spec(app))
    run.commit()
    run.say(f"wrote {out}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    run = _Run(args, "pipeline")
    run.inputs.append(args.spec)
    app = load_app_spec(args.spec)
    family = build_family(app)
    lat, retained = build_latency_profile(family)
    acc = build_accuracy_profile(retained)
    lut = build_lut(retained, args.lut_entries, app.name)
    run.params = {"lut_entries": args.lut_entries}
    run.add(run.out_path(None, f"{app.name}.family.csv"), family_to_csv(family))
    run.add(run.out_path(None, f"{app.name}_latency.json"), dump_profile(lat))
    run.add(run.out_path(None, f"{app.name}_accuracy.json"), dump_profile(acc))
    run.add(run.out_path(None, f"{app.name}.lut.json"), dump_lut(lut))
    run.commit()
    run.say(f"{app.name}: {len(family)} models, {len(retained)} retained, {len(lut)} table entries")
    run.say(f"latency  c3..c0 = {lat.c3:.6g} {lat.c2:.6g} {lat.c1:.6g} {lat.c0:.6g} "
            f"on [{lat.domain_min_mib:.3f}, {lat.domain_max_mib:.3f}] MiB")
    run.say(f"accuracy c3..c0 = {acc.c3:.6g} {acc.c2:.6g} {acc.c1:.6g} {acc.c0:.6g}")
    return EXIT_OK


def cmd_allocate(args) -> int:
    run = _Run(args, "allocate")
    problem = AllocationProblem(_demands(run, args), args.deadline_ms, args.epsilon_ms, args.memory_mib)
    sol = solve(problem)
    doc = solution_to_dict(sol)
    run.params = {"deadline_ms": args.deadline_ms, "epsilon_ms": args.epsilon_ms,
                  "memory_mib": args.memory_mib, "oracle_step": args.oracle_step}
    for name, m, a, l in zip(sol.names, sol.grants, sol.predicted_accuracy_pct, sol.predicted_latency_ms):
        run.say(f"{name}: grant={m:.3f} MiB accuracy={a:.4f}% latency={l:.3f} ms")
    run.say(f"total_accuracy={sol.total_accuracy:.6f} slack={sol.latency_slack_ms:.6f} ms")
    if args.oracle_step:
        oracle = grid_oracle(problem, args.oracle_step)
        gap = oracle.total_accuracy - sol.total_accuracy
        doc["oracle"] = {"step_mib": args.oracle_step, "total_accuracy": oracle.total_accuracy,
                         "grants": dict(zip(oracle.names, oracle.grants)), "gap": gap}
        run.say(f"oracle_total={oracle.total_accuracy:.6f} gap={gap:.6f}")
    run.add(run.out_path(args.output, "solution.json"), json.dumps(doc, indent=2) + "\n")
    run.commit()
    return EXIT_OK


def cmd_simulate(args) -> int:
    run = _Run(args, "simulate")
    run.inputs.append(args.scenario)
    report = run_scenario(load_scenario(args.scenario))
    run.add(run.out_path(args.output, "report.json"), json.dumps(report_to_dict(report), indent=2) + "\n")
    run.add(run.out_path(args.trace, "trace.csv"), trace_to_csv(report))
    run.commit()
    margin = report.min_memory_margin_mib
    print(f"misses={report.deadline_miss_count} min_margin={margin:.3f} frames={len(report.frames)}")
    return EXIT_OK


def _range(spec) -> list[float]:
    start, stop, count = spec
    if int(count) < 1:
        raise ValidationError("range count must be >= 1")
    return [float(v) for v in np.linspace(start, stop, int(count))]


def cmd_sweep(args) -> int:
    run = _Run(args, "sweep")
    apps = _demands(run, args)
    d_range, m_range = _range(args.deadline_range), _range(args.memory_range)
    result = robustness_sweep(apps, d_range, m_range, args.threshold_pct, args.epsilon_ms, args.oracle_step)
    run.params = {"deadline_range": args.deadline_range, "memory_range": args.memory_range,
                  "threshold_pct": args.threshold_pct, "epsilon_ms": args.epsilon_ms,
                  "oracle_step": args.oracle_step}
    run.add(run.out_path(args.output, "sweep.csv"), sweep_to_csv(result))
    run.commit()
    valid = sum(c.status.value == "valid" for c in result.cells)
    run.say(f"cells={len(result.cells)} valid={valid}")
    return EXIT_OK


def cmd_compare_baseline(args) -> int:
    run = _Run(args, "compare-baseline")
    run.inputs.append(args.spec)
    app = load_app_spec(args.spec)
    report = baseline_compare(app, args.full_fp_load_ms, args.full_fp_memory_mib)
    lines = ["fp_layer_count,int_fraction,wcet_ms,peak_memory_mib,dominates"]
    lines += [f"{r.fp_layer_count},{r.int_fraction:.6f},{r.wcet_ms:.6f},{r.peak_memory_mib:.6f},{int(r.dominates)}"
              for r in report.rows]
    run.params = {"full_fp_load_ms": args.full_fp_load_ms, "full_fp_memory_mib": args.full_fp_memory_mib}
    run.add(run.out_path(args.output, f"{app.name}.baseline.csv"), "\n".join(lines) + "\n")
    run.commit()
    run.say(f"baseline latency={report.baseline_latency_ms:.3f} ms memory={report.baseline_memory_mib:.3f} MiB")
    run.say(f"dominating={report.dominating_fraction:.3f}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _global_flags(parser, suppress: bool) -> None:
    # subcommands repeat the flags with suppressed defaults so either position works
    def d(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    parser.add_argument("--out-dir", default=d("."), help="directory for outputs (default .)")
    parser.add_argument("--quiet", action="store_true", default=d(False), help="suppress progress output")


def _app_flags(p) -> None:
    p.add_argument("--app", nargs=2, action="append", required=True, metavar=("LATENCY_JSON", "ACCURACY_JSON"),
                   help="profile pair for one app (repeat per app)")
    p.add_argument("--lambda", dest="lam", type=float, action="append", help="accuracy weight per app")
    p.add_argument("--mu-mib", type=float, action="append", help="memory held by other apps, per app")
    p.add_argument("--epsilon-ms", type=float, default=15.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixalloc", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthesize an app spec")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--calibrate", nargs=2, metavar=("LATENCY_JSON", "ACCURACY_JSON"))
    p.add_argument("--name")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pipeline", parents=[common], help="family, profiles and lookup table for an app")
    p.add_argument("spec")
    p.add_argument("--lut-entries", type=int, default=DEFAULT_Z)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("allocate", parents=[common], help="solve the memory split")
    _app_flags(p)
    p.add_argument("--deadline-ms", type=float, required=True)
    p.add_argument("--memory-mib", type=float, required=True)
    p.add_argument("--oracle-step", type=float)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("simulate", parents=[common], help="replay a scenario")
    p.add_argument("scenario")
    p.add_argument("-o", "--output")
    p.add_argument("--trace")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="validity over a deadline x memory grid")
    _app_flags(p)
    p.add_argument("--deadline-range", nargs=3, type=float, required=True, metavar=("START", "STOP", "COUNT"))
    p.add_argument("--memory-range", nargs=3, type=float, required=True, metavar=("START", "STOP", "COUNT"))
    p.add_argument("--threshold-pct", type=float, default=3.0)
    p.add_argument("--oracle-step", type=float)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare-baseline", parents=[common], help="family vs loading the whole FP32 model")
    p.add_argument("spec")
    p.add_argument("--full-fp-load-ms", type=float, required=True)
    p.add_argument("--full-fp-memory-mib", type=float)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_compare_baseline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except FeasibilityError as exc:
        print(f"infeasible: {exc.verdict.value}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except DegenerateProfileError as exc:
        print(f"degenerate profile: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ValidationError, LookupTableError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MixallocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
