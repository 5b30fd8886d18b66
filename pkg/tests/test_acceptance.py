"""Acceptance gate: the ten end-to-end criteria, one PASS/FAIL line each."""

import contextlib
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from mixalloc import fixtures
from mixalloc.allocator import (
    AllocationProblem,
    AppDemand,
    Verdict,
    check_feasibility,
    constraint_violations,
    grid_oracle,
    solve,
)
from mixalloc.errors import DegenerateProfileError, FeasibilityError
from mixalloc.family import BitConfig, build_family, exec_ms
from mixalloc.lut import build_lut, query_lut, query_section
from mixalloc.profiles import build_latency_profile, fit_cubic, profile_app
from mixalloc.simulator import CaseKind, CellStatus, baseline_compare, robustness_sweep
from mixalloc.synth import synthesize_workload
from mixalloc.workload import PrecisionLevel, kl_divergence

from conftest import random_problem


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def run(number, title):
        detail = {}
        try:
            yield detail
        except BaseException:
            with capsys.disabled():
                print(f"\n[acceptance] criterion {number:>2} FAIL  {title}")
            raise
        extra = " ".join(f"{k}={v}" for k, v in detail.items())
        with capsys.disabled():
            print(f"\n[acceptance] criterion {number:>2} PASS  {title}  {extra}".rstrip())

    return run


def test_c01_yolo_allocation(criterion):
    with criterion(1, "YOLO grant 1026 +/- 10 MiB, oracle within 1 MiB") as d:
        dom = (600.0, 1250.0)
        app = AppDemand("yolov3", fixtures.accuracy_profile("yolov3", dom),
                        fixtures.latency_profile("yolov3", dom), mu_mib=0.0)
        problem = AllocationProblem([app], 700.0, 15.0, 1600.0)
        sol = solve(problem)
        oracle = grid_oracle(problem, 1.0)
        d["grant"] = f"{sol.grants[0]:.2f}"
        d["oracle"] = f"{oracle.grants[0]:.0f}"
        assert abs(sol.grants[0] - fixtures.YOLO_GRANT_MIB) <= 10
        assert abs(oracle.grants[0] - sol.grants[0]) <= 1
        assert sol.predicted_latency_ms[0] == pytest.approx(685.0, abs=1e-6)  # latency row active


def test_c02_table_round_trip(criterion):
    with criterion(2, "six reference cubics recovered from 50 samples at 1e-6") as d:
        worst = 0.0
        for table in (fixtures.LATENCY_COEFFS, fixtures.ACCURACY_COEFFS):
            for app, coeffs in table.items():
                xs = np.linspace(*fixtures.DOMAINS_MIB[app], 50)
                got = fit_cubic(list(zip(xs, np.polyval(coeffs, xs))))
                worst = max(worst, max(abs(g - c) / abs(c) for g, c in zip(got, coeffs)))
        d["worst_rel"] = f"{worst:.2e}"
        assert worst <= 1e-6


def test_c03_coverage(criterion):
    with criterion(3, "latency profile covers every retained model (200 families)") as d:
        rng = np.random.default_rng(3)
        checked = skipped = 0
        for _ in range(200):
            fam = build_family(synthesize_workload(int(rng.integers(10, 61)), int(rng.integers(1 << 31))))
            try:
                prof, kept = build_latency_profile(fam)
            except DegenerateProfileError:
                skipped += 1
                continue
            assert all(prof(m.peak_memory_mib) >= m.wcet_ms for m in kept)
            checked += len(kept)
        d["models"] = checked
        d["degenerate_families"] = skipped  # too few models under the fit; no profile is produced
        assert skipped <= 4


def test_c04_family_optimality(criterion):
    with criterion(4, "each family member minimizes sensitivity sum at its size (50 apps)") as d:
        rng = np.random.default_rng(4)
        for _ in range(50):
            L = int(rng.integers(1, 13))
            app = synthesize_workload(L, int(rng.integers(1 << 31)))
            s = app.sensitivities
            best = [math.inf] * (L + 1)
            for mask in itertools.product((0, 1), repeat=L):
                k = sum(mask)  # FP layers
                best[k] = min(best[k], float(sum(si for si, fp in zip(s, mask) if not fp)))
            for m in build_family(app):
                assert m.sensitivity_sum == pytest.approx(best[m.fp_layer_count], rel=1e-12, abs=1e-15)
        d["apps"] = 50


def test_c05_lut_safety(criterion):
    with criterion(5, "LUT queries fit the grant and match a per-section scan (100 families)") as d:
        rng = np.random.default_rng(5)
        queries = 0
        for _ in range(100):
            fam = build_family(synthesize_workload(int(rng.integers(2, 200)), int(rng.integers(1 << 31))))
            t = build_lut(fam, z=50)
            assert len(t) <= 50
            lo, hi = t.min_mib, t.max_mib
            for grant in np.concatenate([[lo, hi], rng.uniform(lo, hi * 1.1, 40)]):
                got = query_lut(t, float(grant))
                assert got.peak_memory_mib <= grant
                key = Fraction(lo) + query_section(t, grant) * (Fraction(hi) - Fraction(lo)) / 49
                assert got.accuracy_pct == max(m.accuracy_pct for m in fam if Fraction(m.peak_memory_mib) <= key)
                queries += 1
        d["queries"] = queries


def test_c06_optimizer_vs_oracle(criterion):
    with criterion(6, "solve >= grid oracle - 0.1 on 100 random 1-3 app problems") as d:
        rng = np.random.default_rng(6)
        done = worst = 0
        worst = -math.inf
        while done < 100:
            p = random_problem(rng)
            if check_feasibility(p) is not Verdict.FEASIBLE:
                continue
            try:
                oracle = grid_oracle(p, 1.0)
            except FeasibilityError:
                continue  # feasible only between grid points
            sol = solve(p)
            assert constraint_violations(p, sol, tol=1e-6) == []
            worst = max(worst, oracle.total_accuracy - sol.total_accuracy)
            done += 1
        d["worst_gap"] = f"{worst:.4f}"
        assert worst <= 0.1


def test_c07_scenario_chain(criterion, chain_report):
    with criterion(7, "scenario chain: no Case1 misses, drop <= 3.2, one Case1 per event batch") as d:
        scenario, report = chain_report
        case1 = report.case1_frames()
        assert all(f.met_deadline for f in case1)
        fp_acc = {a.name: a.spec.fp_accuracy_pct for a in scenario.apps}
        drop = max(fp_acc[r.name] - r.accuracy_pct for f in report.frames for r in f.per_app)
        batches = sorted({e.at_ms for e in scenario.events})
        assert [f.at_ms for f in case1] == batches
        d["misses"] = report.deadline_miss_count
        d["worst_drop"] = f"{drop:.2f}"
        d["case1"] = len(case1)
        assert drop <= 3.2
        assert case1[0].case_kind is CaseKind.CASE1


def test_c08_baseline(criterion, calibrated):
    with criterion(8, "73.7% +/- 10 of the family dominates the full-load baseline") as d:
        fractions = []
        for seed in range(5):
            spec = calibrated["yolov3"] if seed == 0 else fixtures.calibrated_app("yolov3", seed)
            fam = build_family(spec)
            n = spec.layer_count
            mem_tie = fam[round((1 - fixtures.BASELINE_MEMORY_TIE_INT_FRACTION) * n)]
            lat_tie = fam[round((1 - fixtures.BASELINE_LATENCY_TIE_INT_FRACTION) * n)]
            load = lat_tie.wcet_ms - exec_ms(spec, BitConfig.uniform(n, PrecisionLevel.FP32))
            rep = baseline_compare(spec, load, mem_tie.peak_memory_mib, fam)
            assert [r for r in rep.rows if r.fp_layer_count == 0][0].dominates
            fractions.append(rep.dominating_fraction)
        d["fractions"] = ",".join(f"{f:.3f}" for f in fractions)
        assert all(abs(f - fixtures.BASELINE_DOMINATING_FRACTION) <= 0.10 for f in fractions)


def test_c09_sweep_monotone(criterion, calibrated):
    with criterion(9, "10x10 oracle sweep is monotone with labeled invalid cells") as d:
        names = fixtures.APP_NAMES
        total_base = sum(calibrated[n].base_memory_mib for n in names)
        apps = [AppDemand.from_profiled(profile_app(calibrated[n]),
                                        mu_mib=total_base - calibrated[n].base_memory_mib) for n in names]
        ds = [float(v) for v in np.linspace(150, 1000, 10)]
        ms = [float(v) for v in np.linspace(1100, 1500, 10)]
        # 3% is the reference threshold; 1% also exercises accuracy-drop cells
        for threshold in (3.0, 1.0):
            res = robustness_sweep(apps, ds, ms, threshold, 15.0, oracle_step_mib=2.0)
            valid = {(c.deadline_ms, c.memory_mib) for c in res.cells if c.status is CellStatus.VALID}
            for dv, mv in valid:
                assert all((d2, m2) in valid for d2 in ds for m2 in ms if d2 >= dv and m2 >= mv)
            for c in res.cells:
                assert isinstance(c.status, CellStatus)
                assert (c.total_accuracy is None) == (c.status in (CellStatus.DEADLINE_INFEASIBLE,
                                                                    CellStatus.MEMORY_INFEASIBLE))
            counts = {s.value: sum(c.status is s for c in res.cells) for s in CellStatus}
            d.update({f"{k}@{threshold:g}": v for k, v in counts.items()})
            assert 0 < len(valid) < 100


def test_c10_kl_properties(criterion):
    with criterion(10, "KL non-negative on 10^4 pairs, zero on self, hand values at 1e-6") as d:
        rng = np.random.default_rng(10)
        worst = math.inf
        for _ in range(10_000):
            k = int(rng.integers(2, 11))
            p = rng.dirichlet(np.ones(k))
            q = rng.dirichlet(np.ones(k))
            p, q = np.maximum(p, 1e-12), np.maximum(q, 1e-12)
            p, q = p / p.sum(), q / q.sum()
            worst = min(worst, kl_divergence(p, q))
            assert kl_divergence(p, p) == 0.0
        d["min_kl"] = f"{worst:.3e}"
        assert worst >= 0.0
        assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.143841, abs=1e-6)
        assert kl_divergence([0.25, 0.75], [0.5, 0.5]) == pytest.approx(0.130812, abs=1e-6)
