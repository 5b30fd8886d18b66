import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mixalloc import fixtures
from mixalloc.profiles import CubicProfile, ProfileKind
from mixalloc.workload import AppSpec, LayerSpec

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_app(sens, *, kappa=0.5, fp_acc=90.0, base=100.0, restore=1.0, name="toy", extra_mib=1.0):
    """Small app with one MiB of extra FP memory per layer unless told otherwise."""
    layers = []
    for i, s in enumerate(sens):
        int_bytes = 1 << 20
        layers.append(LayerSpec(
            index=i, op_kind="conv", param_count=int_bytes,
            fp_bytes=int_bytes + int(extra_mib * (1 << 20)), int_bytes=int_bytes,
            fp_latency_ms=3.0, int_latency_ms=1.0, load_fp_ms=0.5, sensitivity=float(s),
        ))
    return AppSpec(name, tuple(layers), base, fp_acc, kappa, restore)


def cubic(c, lo, hi, kind=ProfileKind.ACCURACY):
    return CubicProfile(*c, lo, hi, kind)


@pytest.fixture(scope="session")
def calibrated():
    return {name: fixtures.calibrated_app(name) for name in fixtures.APP_NAMES}


@pytest.fixture(scope="session")
def chain_report():
    from mixalloc.simulator import run_scenario

    scenario = fixtures.scenario_chain()
    return scenario, run_scenario(scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_problem(rng, n=None, eps=15.0):
    """Random 1-3 app problem with cubic profiles through four random points.

    The grid at 1 MiB stays under 10^6 points. About 30% of latency curves
    are non-monotone and the budget ranges from tight to slack.
    """
    from mixalloc.allocator import AllocationProblem, AppDemand

    n = n or int(rng.integers(1, 4))
    wmax = {1: 1000, 2: 999, 3: 99}.get(n, 400)
    apps = []
    for i in range(n):
        lo = float(rng.integers(50, 800))
        w = float(rng.integers(20, wmax + 1))
        xs = np.linspace(lo, lo + w, 4)
        acc = np.polyfit(xs, rng.uniform(40, 95, 4), 3)
        lat_y = np.sort(rng.uniform(10, 300, 4)) if rng.random() < 0.7 else rng.uniform(10, 300, 4)
        lat = np.polyfit(xs, lat_y, 3)
        A = CubicProfile(*acc, lo, lo + w, ProfileKind.ACCURACY)
        L = CubicProfile(*lat, lo, lo + w, ProfileKind.LATENCY)
        lam = float(rng.choice([1.0, 1.0, 2.0, 0.5]))
        apps.append(AppDemand(f"a{i}", A, L, lam=lam, mu_mib=float(rng.uniform(0, 300))))
    lo_sum = sum(a.latency_profile.interval_min(a.lower_mib, a.upper_mib) for a in apps)
    hi_sum = sum(a.latency_profile.interval_max(a.lower_mib, a.upper_mib) for a in apps)
    budget = float(rng.uniform(lo_sum, hi_sum + 0.2 * (hi_sum - lo_sum)))
    cap = float(max(a.upper_mib + a.mu_mib for a in apps) - rng.uniform(0, 50))
    return AllocationProblem(apps, budget + eps, eps, cap)
