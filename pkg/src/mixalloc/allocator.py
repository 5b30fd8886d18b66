"""Memory/deadline resource allocation across concurrent apps.

Maximize the weighted sum of per-app accuracy profiles subject to

* the summed latency profiles fitting in ``deadline - epsilon``,
* each app's grant fitting in ``capacity - mu_i`` (memory held by the other
  apps' base models),
* each grant lying in ``[lower_i, upper_i]``.

:func:`solve` runs SQP from several starts; :func:`grid_oracle` is an
exhaustive search used to check it.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import CapacityError, ConvergenceError, FeasibilityError, ParseError, ValidationError
from .profiles import CubicProfile, ProfiledApp, _critical_points, profile_from_dict, profile_to_dict
from .qp import active_set_qp

KKT_TOL = 1e-6
MAX_ITER = 200
MAX_CORNER_DIM = 6
GRID_LIMIT = 10**8
BOUND_TOL = 1e-9


class Verdict(enum.Enum):
    FEASIBLE = "feasible"
    DEADLINE_INFEASIBLE = "deadline_infeasible"
    MEMORY_INFEASIBLE = "memory_infeasible"


@dataclass
class AppDemand:
    name: str
    accuracy_profile: CubicProfile
    latency_profile: CubicProfile
    lam: float = 1.0
    mu_mib: float = 0.0
    lower_mib: float | None = None
    upper_mib: float | None = None

    def __post_init__(self):
        if self.lower_mib is None:
            self.lower_mib = max(self.latency_profile.domain_min_mib, self.accuracy_profile.domain_min_mib)
        if self.upper_mib is None:
            self.upper_mib = min(self.latency_profile.domain_max_mib, self.accuracy_profile.domain_max_mib)

    @classmethod
    def from_profiled(cls, pa: ProfiledApp, lam: float = 1.0, mu_mib: float | None = None) -> "AppDemand":
        return cls(pa.name, pa.accuracy_profile, pa.latency_profile, lam,
                   pa.mu_mib if mu_mib is None else mu_mib)


@dataclass
class AllocationProblem:
    apps: list[AppDemand]
    deadline_ms: float
    epsilon_ms: float
    memory_capacity_mib: float

    def __post_init__(self):
        self.apps = list(self.apps)
        self.validate()

    def validate(self) -> None:
        if not self.apps:
            raise ValidationError("allocation problem needs at least one app")
        if not self.deadline_ms > self.epsilon_ms >= 0:
            raise ValidationError(f"need deadline_ms > epsilon_ms >= 0 (got {self.deadline_ms}, {self.epsilon_ms})")
        if not self.memory_capacity_mib > 0:
            raise ValidationError("memory_capacity_mib must be > 0")
        for a in self.apps:
            if a.lower_mib > a.upper_mib:
                raise ValidationError(f"{a.name}: lower_mib {a.lower_mib} > upper_mib {a.upper_mib}")
            for p in (a.accuracy_profile, a.latency_profile):
                if not (p.contains(a.lower_mib) and p.contains(a.upper_mib)):
                    raise ValidationError(
                        f"{a.name}: bounds [{a.lower_mib}, {a.upper_mib}] leave the {p.kind.value} profile domain"
                    )

    @property
    def budget_ms(self) -> float:
        return self.deadline_ms - self.epsilon_ms

    def caps(self) -> np.ndarray:
        return np.array([min(a.upper_mib, self.memory_capacity_mib - a.mu_mib) for a in self.apps])

    def lowers(self) -> np.ndarray:
        return np.array([a.lower_mib for a in self.apps])

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.apps]


@dataclass
class AllocationSolution:
    grants: list[float]
    predicted_latency_ms: list[float]
    predicted_accuracy_pct: list[float]
    total_accuracy: float
    latency_slack_ms: float
    kkt_residual: float | None
    names: list[str] = field(default_factory=list)
    method: str = "sqp"
    iterations: int = 0
    starts: int = 0

    def grant(self, name: str) -> float:
        return self.grants[self.names.index(name)]


def check_feasibility(problem: AllocationProblem) -> Verdict:
    lo, cap = problem.lowers(), problem.caps()
    if np.any(lo > cap):
        return Verdict.MEMORY_INFEASIBLE
    min_lat = sum(a.latency_profile.interval_min(l, c) for a, l, c in zip(problem.apps, lo, cap))
    if min_lat > problem.budget_ms:
        return Verdict.DEADLINE_INFEASIBLE
    return Verdict.FEASIBLE


def total_accuracy(solution: AllocationSolution, problem: AllocationProblem) -> float:
    return float(sum(a.lam * a.accuracy_profile(m) for a, m in zip(problem.apps, solution.grants)))


def _make_solution(problem, grants, method, kkt=None, iterations=0, starts=0) -> AllocationSolution:
    lat = [float(a.latency_profile.raw(m)) for a, m in zip(problem.apps, grants)]
    acc = [float(a.accuracy_profile.raw(m)) for a, m in zip(problem.apps, grants)]
    return AllocationSolution(
        grants=[float(m) for m in grants],
        predicted_latency_ms=lat,
        predicted_accuracy_pct=acc,
        total_accuracy=float(sum(a.lam * v for a, v in zip(problem.apps, acc))),
        latency_slack_ms=float(problem.budget_ms - sum(lat)),
        kkt_residual=kkt,
        names=problem.names,
        method=method,
        iterations=iterations,
        starts=starts,
    )


def constraint_violations(problem: AllocationProblem, solution: AllocationSolution, tol: float = 1e-6) -> list[str]:
    """Re-evaluate every constraint from the profiles; empty list means feasible."""
    out = []
    lat = sum(a.latency_profile.raw(m) for a, m in zip(problem.apps, solution.grants))
    if lat > problem.budget_ms + tol:
        out.append(f"latency {lat:.9g} ms exceeds D - eps = {problem.budget_ms:.9g} ms")
    for a, m in zip(problem.apps, solution.grants):
        if m > problem.memory_capacity_mib - a.mu_mib + tol:
            out.append(f"{a.name}: grant {m} MiB exceeds M_max - mu = {problem.memory_capacity_mib - a.mu_mib}")
        if m < a.lower_mib - tol or m > a.upper_mib + tol:
            out.append(f"{a.name}: grant {m} MiB outside [{a.lower_mib}, {a.upper_mib}]")
    return out


# -- SQP -----------------------------------------------------------------------

class _Scaled:
    """Problem in unit-box coordinates ``m = lo + t * width``, objective minimized."""

    def __init__(self, problem: AllocationProblem):
        self.p = problem
        self.lo = problem.lowers()
        self.width = problem.caps() - self.lo
        self.free = self.width > 0
        self.lam = np.array([a.lam for a in problem.apps])
        self.fscale = max(float(np.sum(np.abs(self.lam))), 1e-12)
        self.C = problem.budget_ms

    def m(self, t):
        return self.lo + t * self.width

    def f(self, t):
        m = self.m(t)
        return -sum(l * a.accuracy_profile.raw(x) for l, a, x in zip(self.lam, self.p.apps, m)) / self.fscale

    def grad_f(self, t):
        m = self.m(t)
        return -np.array([l * a.accuracy_profile.derivative(x) for l, a, x in zip(self.lam, self.p.apps, m)]) * self.width / self.fscale

    def hess_f(self, t):
        m = self.m(t)
        return -np.array([l * a.accuracy_profile.second_derivative(x) for l, a, x in zip(self.lam, self.p.apps, m)]) * self.width**2 / self.fscale

    def g(self, t):
        m = self.m(t)
        return 1.0 - sum(a.latency_profile.raw(x) for a, x in zip(self.p.apps, m)) / self.C

    def grad_g(self, t):
        m = self.m(t)
        return -np.array([a.latency_profile.derivative(x) for a, x in zip(self.p.apps, m)]) * self.width / self.C

    def hess_g(self, t):
        m = self.m(t)
        return -np.array([a.latency_profile.second_derivative(x) for a, x in zip(self.p.apps, m)]) * self.width**2 / self.C

    def residual(self, t, nu):
        """Scaled KKT residual: projected stationarity, complementarity, feasibility."""
        G = self.grad_f(t) - nu * self.grad_g(t)
        r = np.abs(G)
        at_lo = t <= BOUND_TOL
        at_hi = t >= 1.0 - BOUND_TOL
        r[at_lo] = np.maximum(0.0, -G[at_lo])
        r[at_hi] = np.maximum(0.0, G[at_hi])
        both = at_lo & at_hi  # fixed variable
        r[both] = 0.0
        g = self.g(t)
        return max(float(r.max(initial=0.0)), abs(nu * g), max(0.0, -g), max(0.0, -nu))

    def best_multiplier(self, t, hint=0.0):
        """Multiplier of the latency row minimizing the KKT residual."""
        gg, gf = self.grad_g(t), self.grad_f(t)
        cands = {0.0, max(hint, 0.0)}
        inner = (t > BOUND_TOL) & (t < 1.0 - BOUND_TOL) & (np.abs(gg) > 0)
        if inner.any():
            cands.add(max(float(gf[inner] @ gg[inner] / (gg[inner] @ gg[inner])), 0.0))
        for i in np.flatnonzero(np.abs(gg) > 0):
            cands.add(max(float(gf[i] / gg[i]), 0.0))
        return min(cands, key=lambda nu: self.residual(t, nu))


def _qp_step(sp: _Scaled, t, B):
    n = t.size
    gf, gg, g = sp.grad_f(t), sp.grad_g(t), sp.g(t)
    free = sp.free
    # rows: latency linearization, lower bounds, upper bounds
    A = np.vstack([gg[None, :], np.eye(n), -np.eye(n)])
    lo_d = np.where(free, -t, 0.0)
    hi_d = np.where(free, 1.0 - t, 0.0)
    rhs_lin = -g
    best_lin = np.where(gg > 0, hi_d, lo_d)
    reach = float(gg @ best_lin)
    if g >= 0:
        d0 = np.zeros(n)
    else:
        d0 = best_lin
        if reach < rhs_lin:
            rhs_lin = reach  # linearization unreachable: move as far toward feasibility as possible
    b = np.concatenate([[rhs_lin], lo_d, -hi_d])
    res = active_set_qp(B, gf, A, b, d0)
    return res.x, float(res.multipliers[0]), res.converged


def _restore_feasibility(sp: _Scaled, t, t_safe):
    """Push a nearly feasible point back inside the latency constraint."""
    for _ in range(20):
        g = sp.g(t)
        if g >= 0:
            return t
        # move interior coordinates only, so active bounds stay active
        inner = sp.free & (t > BOUND_TOL) & (t < 1.0 - BOUND_TOL)
        gg = sp.grad_g(t) * (inner if np.any(sp.grad_g(t)[inner]) else sp.free)
        nrm = gg @ gg
        if nrm == 0:
            break
        t = np.clip(t - g * gg / nrm * (1 + 1e-9), 0.0, 1.0)
    if sp.g(t) >= 0:
        return t
    lo_a, hi_a = 0.0, 1.0  # bisection toward a known feasible point
    for _ in range(80):
        mid = 0.5 * (lo_a + hi_a)
        if sp.g(t + mid * (t_safe - t)) >= 0:
            hi_a = mid
        else:
            lo_a = mid
    return t + hi_a * (t_safe - t)


def _lagrangian_hessian(sp: _Scaled, t, nu):
    """Diagonal Hessian of the Lagrangian, mirrored to be positive definite."""
    h = np.abs(sp.hess_f(t) - nu * sp.hess_g(t))
    floor = 1e-6 * max(1.0, float(h.max(initial=0.0)))
    return np.diag(np.maximum(h, floor))


def _sqp_from(sp: _Scaled, t0, tol, max_iter):
    t = np.clip(np.where(sp.free, t0, 0.0), 0.0, 1.0)
    nu = 0.0
    nu_est = 0.0
    rho = 1.0
    for it in range(1, max_iter + 1):
        # curvature uses the least-squares multiplier: the QP multiplier
        # blows up when the linearized deadline is barely reachable
        B = _lagrangian_hessian(sp, t, nu_est)
        d, nu_qp, _ = _qp_step(sp, t, B)
        nu = max(nu_qp, 0.0)
        if not np.all(np.isfinite(d)):
            break
        if np.max(np.abs(d)) <= 1e-14:
            nu = sp.best_multiplier(t, nu)
            return t, nu, it, sp.residual(t, nu)
        rho = max(rho, 2.0 * nu + 1e-3)

        def merit(x):
            return sp.f(x) + rho * max(0.0, -sp.g(x))

        phi0 = merit(t)
        slope = float(sp.grad_f(t) @ d) - rho * max(0.0, -sp.g(t))
        alpha = 1.0
        while alpha > 1e-10:
            trial = np.clip(t + alpha * d, 0.0, 1.0)
            if merit(trial) <= phi0 + 1e-4 * alpha * min(slope, 0.0):
                break
            alpha *= 0.5
        t = np.clip(t + alpha * d, 0.0, 1.0)
        nu_est = sp.best_multiplier(t, nu)
        if sp.residual(t, nu_est) <= tol:
            return t, nu_est, it, sp.residual(t, nu_est)
    nu = sp.best_multiplier(t, nu)
    return t, nu, max_iter, sp.residual(t, nu)


def _min_latency_point(problem: AllocationProblem) -> np.ndarray:
    out = []
    for a, l, c in zip(problem.apps, problem.lowers(), problem.caps()):
        pts = _critical_points(a.latency_profile, l, c)
        out.append(min(pts, key=lambda x: a.latency_profile.raw(x)))
    return np.array(out)


def _starts(problem: AllocationProblem, sp: _Scaled, seed: int = 0):
    n = len(problem.apps)
    yield np.full(n, 0.5)
    if n <= MAX_CORNER_DIM:
        for corner in itertools.product((0.0, 1.0), repeat=n):
            yield np.array(corner)
    else:
        rng = np.random.default_rng(seed)
        for _ in range(2**MAX_CORNER_DIM):
            yield rng.integers(0, 2, size=n).astype(float)
    width = np.where(sp.free, sp.width, 1.0)
    yield np.clip((_min_latency_point(problem) - sp.lo) / width, 0.0, 1.0)
    if n <= 4:
        steps = [max(w / 20.0, 1e-9) for w in sp.width]
        try:
            coarse = _grid_search(problem, steps)
        except (FeasibilityError, CapacityError):
            coarse = None
        if coarse is not None:
            yield np.clip((np.array(coarse.grants) - sp.lo) / width, 0.0, 1.0)


def solve(problem: AllocationProblem, tol: float = KKT_TOL, max_iter: int = MAX_ITER) -> AllocationSolution:
    verdict = check_feasibility(problem)
    if verdict is not Verdict.FEASIBLE:
        raise FeasibilityError(verdict)
    sp = _Scaled(problem)
    width = np.where(sp.free, sp.width, 1.0)
    t_safe = np.clip((_min_latency_point(problem) - sp.lo) / width, 0.0, 1.0)
    best = None
    fallback = None
    total_iter = 0
    starts = 0
    for t0 in _starts(problem, sp):
        starts += 1
        t, nu, iters, res = _sqp_from(sp, t0, tol, max_iter)
        total_iter += iters
        if sp.g(t) < 0 and sp.g(t) > -1e-6:
            t = _restore_feasibility(sp, t, t_safe)
            nu = sp.best_multiplier(t, nu)
            res = sp.residual(t, nu)
        obj = -sp.f(t)
        if res <= tol and sp.g(t) >= 0:
            if best is None or obj > best[0] + 1e-12:
                best = (obj, t, res)
        elif sp.g(t) >= 0 and (fallback is None or obj > fallback[0]):
            fallback = (obj, t, res)
    if best is None:
        partial = None
        if fallback is not None:
            partial = _make_solution(problem, sp.m(fallback[1]), "sqp", fallback[2], total_iter, starts)
        raise ConvergenceError(f"no start reached KKT residual <= {tol}", best=partial)
    _, t, res = best
    grants = np.clip(sp.m(t), problem.lowers(), problem.caps())
    return _make_solution(problem, grants, "sqp", float(res), total_iter, starts)


# -- exhaustive oracle ---------------------------------------------------------

def _grid_search(problem: AllocationProblem, steps: Sequence[float]) -> AllocationSolution:
    lo, cap = problem.lowers(), problem.caps()
    if np.any(lo > cap):
        raise FeasibilityError(Verdict.MEMORY_INFEASIBLE)
    sizes = [int(math.floor((c - l) / s + 1e-9)) + 1 for l, c, s in zip(lo, cap, steps)]
    if math.prod(sizes) > GRID_LIMIT:
        raise CapacityError(f"grid has {math.prod(sizes):.3g} points (limit {GRID_LIMIT:.0e})")
    width = max(sizes)
    acc = np.full((len(sizes), width), -np.inf)
    lat = np.full((len(sizes), width), np.inf)
    grids = []
    for i, (a, l, s, k) in enumerate(zip(problem.apps, lo, steps, sizes)):
        x = l + s * np.arange(k)
        grids.append(x)
        acc[i, :k] = a.lam * a.accuracy_profile.raw(x)
        lat[i, :k] = a.latency_profile.raw(x)
    idx, _, _ = kernels.grid_best(acc, lat, np.asarray(sizes, dtype=np.int_), float(problem.budget_ms))
    if idx is None:
        raise FeasibilityError(Verdict.DEADLINE_INFEASIBLE, "no grid point meets the latency budget")
    return _make_solution(problem, [g[j] for g, j in zip(grids, idx)], "grid")


def grid_size(problem: AllocationProblem, step_mib: float) -> int:
    lo, cap = problem.lowers(), problem.caps()
    return math.prod(max(int(math.floor((c - l) / step_mib + 1e-9)) + 1, 0) for l, c in zip(lo, cap))


def grid_oracle(problem: AllocationProblem, step_mib: float) -> AllocationSolution:
    """Best grid point ``lower_i + k * step`` (ties: more slack, then smaller grants)."""
    if not step_mib > 0:
        raise ValidationError("step_mib must be > 0")
    verdict = check_feasibility(problem)
    if verdict is not Verdict.FEASIBLE:
        raise FeasibilityError(verdict)
    return _grid_search(problem, [step_mib] * len(problem.apps))


# -- documents -----------------------------------------------------------------

def problem_to_dict(problem: AllocationProblem) -> dict:
    return {
        "deadline_ms": problem.deadline_ms,
        "epsilon_ms": problem.epsilon_ms,
        "memory_capacity_mib": problem.memory_capacity_mib,
        "apps": [
            {
                "name": a.name,
                "lambda": a.lam,
                "mu_mib": a.mu_mib,
                "lower_mib": a.lower_mib,
                "upper_mib": a.upper_mib,
                "accuracy_profile": profile_to_dict(a.accuracy_profile),
                "latency_profile": profile_to_dict(a.latency_profile),
            }
            for a in problem.apps
        ],
    }


def problem_from_dict(doc: dict) -> AllocationProblem:
    try:
        apps = [
            AppDemand(
                name=str(a["name"]),
                accuracy_profile=profile_from_dict(a["accuracy_profile"]),
                latency_profile=profile_from_dict(a["latency_profile"]),
                lam=float(a.get("lambda", 1.0)),
                mu_mib=float(a.get("mu_mib", 0.0)),
                lower_mib=a.get("lower_mib"),
                upper_mib=a.get("upper_mib"),
            )
            for a in doc["apps"]
        ]
        return AllocationProblem(apps, float(doc["deadline_ms"]), float(doc["epsilon_ms"]),
                                 float(doc["memory_capacity_mib"]))
    except KeyError as exc:
        raise ParseError("allocation problem: missing field", field=exc.args[0]) from None


def solution_to_dict(solution: AllocationSolution) -> dict:
    return {
        "method": solution.method,
        "grants": dict(zip(solution.names, solution.grants)),
        "predicted_latency_ms": dict(zip(solution.names, solution.predicted_latency_ms)),
        "predicted_accuracy_pct": dict(zip(solution.names, solution.predicted_accuracy_pct)),
        "total_accuracy": solution.total_accuracy,
        "latency_slack_ms": solution.latency_slack_ms,
        "kkt_residual": solution.kkt_residual,
    }


def solution_from_dict(doc: dict) -> AllocationSolution:
    names = list(doc["grants"])
    return AllocationSolution(
        grants=[float(doc["grants"][n]) for n in names],
        predicted_latency_ms=[float(doc["predicted_latency_ms"][n]) for n in names],
        predicted_accuracy_pct=[float(doc["predicted_accuracy_pct"][n]) for n in names],
        total_accuracy=float(doc["total_accuracy"]),
        latency_slack_ms=float(doc["latency_slack_ms"]),
        kkt_residual=doc.get("kkt_residual"),
        names=names,
        method=doc.get("method", "sqp"),
    )


def dump_solution(solution: AllocationSolution) -> str:
    return json.dumps(solution_to_dict(solution), indent=2) + "\n"
