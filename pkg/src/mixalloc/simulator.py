"""Frame-level simulation of concurrent apps sharing one processor.

Every frame the runtime checks whether anything changed since the last one.
If so (Case1) it pays a fixed allocation cost, re-solves the memory split and
looks up a configuration per app; otherwise (Case2) it reuses the cached
configurations. Apps then run back to back in shortest-job-first order,
each one loading its FP layers, executing, and dropping back to its base
model.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .allocator import (
    AllocationProblem,
    AppDemand,
    Verdict,
    check_feasibility,
    grid_oracle,
    solve,
)
from .errors import (
    ConvergenceError,
    FeasibilityError,
    LookupTableError,
    ParseError,
    ValidationError,
)
from .family import BitConfig, CompressedModel, evaluate_config, exec_ms, reconfig_ms
from .lut import DEFAULT_Z, LookupTable, build_lut, query_lut
from .profiles import ProfiledApp, profile_app
from .workload import AppSpec, PrecisionLevel, app_spec_from_dict, load_app_spec


def sjf_order(estimates: Sequence[tuple[str, float]]) -> list[str]:
    """Names by ascending estimated latency, ties broken by name."""
    if not estimates:
        raise ValidationError("sjf_order needs at least one app")
    return [name for name, _ in sorted(estimates, key=lambda e: (e[1], e[0]))]


# -- scenario ----------------------------------------------------------------

class EventKind(enum.Enum):
    APP_START = "app_start"
    APP_STOP = "app_stop"
    DEADLINE_CHANGE = "deadline_change"
    MEMORY_CHANGE = "memory_change"


@dataclass(frozen=True)
class ScenarioEvent:
    at_ms: float
    kind: EventKind
    arg: object  # app name, or the new deadline (ms) / capacity (MiB)


@dataclass
class SimApp:
    """An app ready for the online stage: profiles and lookup table built."""

    spec: AppSpec
    profiled: ProfiledApp
    lut: LookupTable
    lam: float = 1.0

    @property
    def name(self) -> str:
        return self.spec.name


def prepare_app(spec: AppSpec, lam: float = 1.0, z: int = DEFAULT_Z) -> SimApp:
    pa = profile_app(spec)
    return SimApp(spec, pa, build_lut(pa.retained_models, z, spec.name), lam)


@dataclass
class Scenario:
    apps: list[SimApp]
    initial_deadline_ms: float
    memory_capacity_mib: float
    epsilon_ms: float
    frame_period_ms: float
    events: list[ScenarioEvent]
    duration_ms: float
    seed: int = 0
    exec_jitter_pct: float = 0.0  # exec time drawn from [1 - j, 1] x cost model

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: e.at_ms)
        self.validate()

    def validate(self) -> None:
        names = [a.name for a in self.apps]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate app names in scenario: {names}")
        if not self.frame_period_ms > 0 or not self.duration_ms > 0:
            raise ValidationError("frame_period_ms and duration_ms must be > 0")
        if not self.memory_capacity_mib > 0:
            raise ValidationError("memory_capacity_mib must be > 0")
        if not 0 <= self.exec_jitter_pct < 100:
            raise ValidationError("exec_jitter_pct must be in [0, 100)")
        deadlines = [self.initial_deadline_ms]
        for ev in self.events:
            if ev.at_ms < 0:
                raise ValidationError(f"event at {ev.at_ms} ms: time must be >= 0")
            if ev.kind in (EventKind.APP_START, EventKind.APP_STOP) and ev.arg not in names:
                raise ValidationError(f"event refers to unregistered app {ev.arg!r}")
            if ev.kind is EventKind.DEADLINE_CHANGE:
                deadlines.append(float(ev.arg))
            if ev.kind is EventKind.MEMORY_CHANGE and not float(ev.arg) > 0:
                raise ValidationError("memory capacity must be > 0")
        for d in deadlines:
            if not self.epsilon_ms < d <= self.frame_period_ms:
                raise ValidationError(
                    f"deadline {d} ms must lie in (epsilon, frame period] = ({self.epsilon_ms}, {self.frame_period_ms}]"
                )

    @property
    def frame_count(self) -> int:
        return math.ceil(self.duration_ms / self.frame_period_ms - 1e-9)


# -- traces ------------------------------------------------------------------

class CaseKind(enum.Enum):
    CASE1 = "case1"  # reallocation
    CASE2 = "case2"  # cached configuration


@dataclass(frozen=True)
class AppRun:
    name: str
    config: BitConfig
    reconfig_ms: float
    exec_ms: float
    restore_ms: float
    start_ms: float
    finish_ms: float
    grant_mib: float | None
    peak_memory_mib: float
    accuracy_pct: float


@dataclass
class FrameTrace:
    frame_index: int
    at_ms: float
    case_kind: CaseKind
    allocation_ms: float
    per_app: list[AppRun]
    end_to_end_ms: float
    deadline_ms: float
    met_deadline: bool
    total_accuracy: float
    peak_memory_mib: float
    memory_capacity_mib: float
    valid: bool = True
    verdict: str | None = None
    allocator_invoked: bool = False
    resident_after_mib: dict = field(default_factory=dict)
    solver_wall_ms: float = field(default=0.0, compare=False)  # informational, never charged

    @property
    def memory_margin_mib(self) -> float:
        return self.memory_capacity_mib - self.peak_memory_mib


@dataclass
class SimReport:
    frames: list[FrameTrace]
    allocator_calls: int

    @property
    def deadline_miss_count(self) -> int:
        return sum(not f.met_deadline for f in self.frames)

    @property
    def min_memory_margin_mib(self) -> float:
        margins = [f.memory_margin_mib for f in self.frames if f.per_app]
        return min(margins) if margins else math.inf

    @property
    def accuracy_series(self) -> dict[str, list[tuple[int, float]]]:
        out: dict[str, list[tuple[int, float]]] = {}
        for f in self.frames:
            for r in f.per_app:
                out.setdefault(r.name, []).append((f.frame_index, r.accuracy_pct))
        return out

    def case1_frames(self) -> list[FrameTrace]:
        return [f for f in self.frames if f.case_kind is CaseKind.CASE1]


# -- the loop ----------------------------------------------------------------

def _allocate(active: list[SimApp], deadline, epsilon, capacity, cached):
    """Fresh grants and configs for ``active``; falls back to ``cached`` on failure."""
    base = {a.name: a.spec.base_memory_mib for a in active}
    total_base = sum(base.values())
    demands = [
        AppDemand.from_profiled(a.profiled, lam=a.lam, mu_mib=total_base - base[a.name])
        for a in active
    ]
    problem = AllocationProblem(demands, deadline, epsilon, capacity)
    verdict = check_feasibility(problem)
    failure = None if verdict is Verdict.FEASIBLE else verdict.value
    grants = {}
    if failure is None:
        try:
            sol = solve(problem)
        except ConvergenceError as exc:
            sol = exc.best
            if sol is None:
                failure = "no_convergence"
        if sol is not None:
            grants = dict(zip(sol.names, sol.grants))
    configs = {}
    for a in active:
        if a.name in grants:
            try:
                configs[a.name] = (query_lut(a.lut, grants[a.name]).config, grants[a.name])
                continue
            except LookupTableError:
                failure = failure or "lut_miss"
        prev = cached.get(a.name)
        if prev is None:  # nothing to keep: run the resident base model
            prev = (BitConfig.uniform(a.spec.layer_count, PrecisionLevel.INT8), None)
        configs[a.name] = prev
    return configs, failure


_VERDICTS = {v.value for v in Verdict if v is not Verdict.FEASIBLE}


def run_scenario(scenario: Scenario) -> SimReport:
    """Replay ``scenario`` frame by frame.

    Raises :class:`FeasibilityError` when the first allocation is already
    infeasible; later failures keep the previous configurations and mark
    the frame invalid.
    """
    apps = {a.name: a for a in scenario.apps}
    rng = np.random.default_rng(scenario.seed)
    jitter = scenario.exec_jitter_pct / 100.0
    active: list[str] = []
    deadline = scenario.initial_deadline_ms
    capacity = scenario.memory_capacity_mib
    cached: dict[str, tuple[BitConfig, float | None]] = {}
    cached_failure = None
    pending = list(scenario.events)
    frames = []
    calls = 0
    resident = {n: a.spec.base_memory_mib for n, a in apps.items()}

    for k in range(scenario.frame_count):
        now = k * scenario.frame_period_ms
        changed = k == 0
        while pending and pending[0].at_ms <= now:
            ev = pending.pop(0)
            changed = True
            if ev.kind is EventKind.APP_START and ev.arg not in active:
                active.append(ev.arg)
            elif ev.kind is EventKind.APP_STOP and ev.arg in active:
                active.remove(ev.arg)
                cached.pop(ev.arg, None)
            elif ev.kind is EventKind.DEADLINE_CHANGE:
                deadline = float(ev.arg)
            elif ev.kind is EventKind.MEMORY_CHANGE:
                capacity = float(ev.arg)
        running = [apps[n] for n in sorted(active)]

        wall = 0.0
        if changed:
            case, alloc_ms = CaseKind.CASE1, scenario.epsilon_ms
            if running:
                calls += 1
                t0 = time.perf_counter()
                cached, cached_failure = _allocate(running, deadline, scenario.epsilon_ms, capacity, cached)
                wall = (time.perf_counter() - t0) * 1e3
                if calls == 1 and cached_failure in _VERDICTS:
                    raise FeasibilityError(Verdict(cached_failure),
                                           f"scenario start is infeasible: {cached_failure}")
            else:
                cached, cached_failure = {}, None
        else:
            case, alloc_ms = CaseKind.CASE2, 0.0

        models = {a.name: evaluate_config(a.spec, cached[a.name][0]) for a in running}
        order = sjf_order([(n, m.wcet_ms) for n, m in models.items()]) if running else []
        clock = alloc_ms
        runs = []
        for n in order:
            a, m = apps[n], models[n]
            cfg, grant = cached[n]
            r = reconfig_ms(a.spec, cfg)
            e = exec_ms(a.spec, cfg)
            if jitter:
                e *= 1.0 - jitter * float(rng.random())
            resident[n] = m.peak_memory_mib
            runs.append(AppRun(n, cfg, r, e, a.spec.restore_ms, clock, clock + r + e + a.spec.restore_ms,
                               grant, m.peak_memory_mib, m.accuracy_pct))
            clock += r + e + a.spec.restore_ms
            resident[n] = a.spec.base_memory_mib  # FP layers dropped after the run

        base_total = sum(a.spec.base_memory_mib for a in running)
        peak = max((m.peak_memory_mib + base_total - apps[n].spec.base_memory_mib for n, m in models.items()),
                   default=0.0)
        frames.append(FrameTrace(
            frame_index=k,
            at_ms=now,
            case_kind=case,
            allocation_ms=alloc_ms,
            per_app=runs,
            end_to_end_ms=clock,
            deadline_ms=deadline,
            met_deadline=clock <= deadline,
            total_accuracy=sum(apps[r.name].lam * r.accuracy_pct for r in runs),
            peak_memory_mib=peak,
            memory_capacity_mib=capacity,
            valid=cached_failure is None,
            verdict=cached_failure,
            allocator_invoked=changed and bool(running),
            resident_after_mib={n: resident[n] for n in sorted(active)},
            solver_wall_ms=wall,
        ))
    return SimReport(frames, calls)


# -- baseline ----------------------------------------------------------------

@dataclass(frozen=True)
class BaselineRow:
    fp_layer_count: int
    int_fraction: float
    wcet_ms: float
    peak_memory_mib: float
    dominates: bool


@dataclass(frozen=True)
class BaselineReport:
    app_name: str
    baseline_latency_ms: float
    baseline_memory_mib: float
    rows: list[BaselineRow]

    @property
    def dominating_fraction(self) -> float:
        return sum(r.dominates for r in self.rows) / len(self.rows)


def baseline_compare(app: AppSpec, full_fp_load_ms: float, full_fp_memory_mib: float | None = None,
                     family: Sequence[CompressedModel] | None = None) -> BaselineReport:
    """Each family member against loading the whole FP32 model up front.

    The baseline costs ``full_fp_load_ms`` plus all-FP execution and occupies
    ``full_fp_memory_mib`` (default: the all-FP member's peak). A member
    dominates when it is strictly better on both latency and memory.
    """
    from .family import build_family

    family = list(family) if family is not None else build_family(app)
    all_fp = BitConfig.uniform(app.layer_count, PrecisionLevel.FP32)
    base_lat = full_fp_load_ms + exec_ms(app, all_fp)
    base_mem = evaluate_config(app, all_fp).peak_memory_mib if full_fp_memory_mib is None else full_fp_memory_mib
    rows = [
        BaselineRow(m.fp_layer_count, m.int_fraction, m.wcet_ms, m.peak_memory_mib,
                    m.wcet_ms < base_lat and m.peak_memory_mib < base_mem)
        for m in family
    ]
    return BaselineReport(app.name, base_lat, base_mem, rows)


# -- robustness sweep --------------------------------------------------------

class CellStatus(enum.Enum):
    VALID = "valid"
    DEADLINE_INFEASIBLE = "deadline_infeasible"
    MEMORY_INFEASIBLE = "memory_infeasible"
    ACCURACY_DROP = "accuracy_drop"


@dataclass(frozen=True)
class SweepCell:
    deadline_ms: float
    memory_mib: float
    status: CellStatus
    total_accuracy: float | None


@dataclass(frozen=True)
class SweepResult:
    cells: list[SweepCell]
    threshold_pct: float
    reference_accuracy: float

    def cell(self, deadline_ms: float, memory_mib: float) -> SweepCell:
        for c in self.cells:
            if c.deadline_ms == deadline_ms and c.memory_mib == memory_mib:
                return c
        raise KeyError((deadline_ms, memory_mib))


def robustness_sweep(apps: Sequence[AppDemand], d_range: Sequence[float], m_range: Sequence[float],
                     accuracy_drop_threshold_pct: float = 3.0, epsilon_ms: float = 15.0,
                     oracle_step_mib: float | None = None) -> SweepResult:
    """Status of every (deadline, capacity) pair.

    A solvable cell is still invalid when its total accuracy is more than
    ``accuracy_drop_threshold_pct`` percent below the total with every app at
    its upper bound. With ``oracle_step_mib`` the grid oracle replaces SQP.
    """
    if not d_range or not m_range:
        raise ValidationError("deadline and memory ranges must be non-empty")
    apps = list(apps)
    reference = sum(a.lam * a.accuracy_profile.raw(a.upper_mib) for a in apps)
    floor = reference * (1.0 - accuracy_drop_threshold_pct / 100.0)
    cells = []
    for d in d_range:
        for m in m_range:
            if not d > epsilon_ms:  # nothing left after the allocation cost
                cells.append(SweepCell(float(d), float(m), CellStatus.DEADLINE_INFEASIBLE, None))
                continue
            if not m > 0:
                cells.append(SweepCell(float(d), float(m), CellStatus.MEMORY_INFEASIBLE, None))
                continue
            problem = AllocationProblem(apps, float(d), epsilon_ms, float(m))
            verdict = check_feasibility(problem)
            if verdict is not Verdict.FEASIBLE:
                cells.append(SweepCell(float(d), float(m), CellStatus(verdict.value), None))
                continue
            try:
                sol = grid_oracle(problem, oracle_step_mib) if oracle_step_mib else solve(problem)
            except FeasibilityError as exc:
                cells.append(SweepCell(float(d), float(m), CellStatus(exc.verdict.value), None))
                continue
            except ConvergenceError as exc:
                if exc.best is None:
                    raise
                sol = exc.best
            status = CellStatus.VALID if sol.total_accuracy >= floor else CellStatus.ACCURACY_DROP
            cells.append(SweepCell(float(d), float(m), status, sol.total_accuracy))
    return SweepResult(cells, accuracy_drop_threshold_pct, reference)


def sweep_to_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    buf.write(f"# threshold_pct={result.threshold_pct:g}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["deadline_ms", "memory_mib", "status", "total_accuracy"])
    for c in result.cells:
        acc = "" if c.total_accuracy is None else f"{c.total_accuracy:.6f}"
        w.writerow([f"{c.deadline_ms:g}", f"{c.memory_mib:g}", c.status.value, acc])
    return buf.getvalue()


# -- documents ---------------------------------------------------------------

_SCENARIO_KEYS = {"apps", "initial_deadline_ms", "memory_capacity_mib", "epsilon_ms",
                  "frame_period_ms", "duration_ms", "events", "seed", "exec_jitter_pct", "lut_entries"}


def scenario_from_dict(doc: dict, base_dir=None) -> Scenario:
    """Build a scenario; each app is ``{"spec": <path or inline spec>, "lambda": w}``."""
    import os

    if not isinstance(doc, dict):
        raise ParseError("scenario: expected a JSON object")
    unknown = set(doc) - _SCENARIO_KEYS
    if unknown:
        raise ParseError("scenario: unknown field", field=sorted(unknown)[0])
    try:
        z = int(doc.get("lut_entries", DEFAULT_Z))
        apps = []
        for entry in doc["apps"]:
            spec = entry["spec"]
            if isinstance(spec, str):
                path = spec if base_dir is None or os.path.isabs(spec) else os.path.join(base_dir, spec)
                spec = load_app_spec(path)
            else:
                spec = app_spec_from_dict(spec)
            apps.append(prepare_app(spec, float(entry.get("lambda", 1.0)), z))
        events = []
        for e in doc.get("events", []):
            kind = EventKind(e["kind"])
            arg = str(e["arg"]) if kind in (EventKind.APP_START, EventKind.APP_STOP) else float(e["arg"])
            events.append(ScenarioEvent(float(e["at_ms"]), kind, arg))
        return Scenario(
            apps=apps,
            initial_deadline_ms=float(doc["initial_deadline_ms"]),
            memory_capacity_mib=float(doc["memory_capacity_mib"]),
            epsilon_ms=float(doc["epsilon_ms"]),
            frame_period_ms=float(doc["frame_period_ms"]),
            events=events,
            duration_ms=float(doc["duration_ms"]),
            seed=int(doc.get("seed", 0)),
            exec_jitter_pct=float(doc.get("exec_jitter_pct", 0.0)),
        )
    except KeyError as exc:
        raise ParseError("scenario: missing field", field=exc.args[0]) from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ParseError(f"scenario: {exc}") from None


def load_scenario(path) -> Scenario:
    import os

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"scenario: {exc.msg}", line=exc.lineno) from None
    return scenario_from_dict(doc, os.path.dirname(os.path.abspath(path)))


def report_to_dict(report: SimReport) -> dict:
    return {
        "deadline_miss_count": report.deadline_miss_count,
        "min_memory_margin_mib": report.min_memory_margin_mib if report.frames else None,
        "allocator_calls": report.allocator_calls,
        "accuracy_series": {n: [[i, a] for i, a in s] for n, s in report.accuracy_series.items()},
        "frames": [
            {
                "frame_index": f.frame_index,
                "at_ms": f.at_ms,
                "case": f.case_kind.value,
                "allocation_ms": f.allocation_ms,
                "end_to_end_ms": f.end_to_end_ms,
                "deadline_ms": f.deadline_ms,
                "met_deadline": f.met_deadline,
                "total_accuracy": f.total_accuracy,
                "peak_memory_mib": f.peak_memory_mib,
                "memory_capacity_mib": f.memory_capacity_mib,
                "valid": f.valid,
                "verdict": f.verdict,
                "per_app": [
                    {
                        "name": r.name,
                        "config": str(r.config),
                        "grant_mib": r.grant_mib,
                        "reconfig_ms": r.reconfig_ms,
                        "exec_ms": r.exec_ms,
                        "restore_ms": r.restore_ms,
                        "start_ms": r.start_ms,
                        "finish_ms": r.finish_ms,
                        "peak_memory_mib": r.peak_memory_mib,
                        "accuracy_pct": r.accuracy_pct,
                    }
                    for r in f.per_app
                ],
            }
            for f in report.frames
        ],
    }


def trace_to_csv(report: SimReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "case", "deadline_ms", "end_to_end_ms", "met", "total_accuracy", "peak_memory_mib"])
    for f in report.frames:
        w.writerow([f.frame_index, f.case_kind.value, f"{f.deadline_ms:g}", f"{f.end_to_end_ms:.6f}",
                    int(f.met_deadline), f"{f.total_accuracy:.6f}", f"{f.peak_memory_mib:.6f}"])
    return buf.getvalue()
