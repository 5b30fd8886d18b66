import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixalloc import fixtures
from mixalloc.errors import DegenerateProfileError, DomainError, ParseError
from mixalloc.family import CompressedModel, build_family
from mixalloc.profiles import (
    CubicProfile,
    ProfileKind,
    build_accuracy_profile,
    build_latency_profile,
    dump_profile,
    envelope_filter,
    eval_profile,
    fit_cubic,
    load_profile,
    profile_app,
    profile_from_dict,
    sse,
)
from mixalloc.synth import synthesize_workload

from conftest import make_app


def _model(peak, wcet, acc=50.0):
    from mixalloc.family import BitConfig

    return CompressedModel(BitConfig.parse("I"), float(peak), float(wcet), float(acc), 0.0, 0)


def test_fit_exact_cubic():
    pts = [(x, x**3) for x in (1, 2, 3, 4, 5)]
    assert np.allclose(fit_cubic(pts), (1, 0, 0, 0), rtol=1e-9, atol=1e-9)


def test_fit_constant():
    assert np.allclose(fit_cubic([(x, 2.0) for x in (1, 2, 3, 4)]), (0, 0, 0, 2), atol=1e-9)


@pytest.mark.parametrize("app", fixtures.APP_NAMES)
@pytest.mark.parametrize("table", [fixtures.LATENCY_COEFFS, fixtures.ACCURACY_COEFFS])
def test_fit_recovers_reference_cubics(app, table):
    coeffs = table[app]
    lo, hi = fixtures.DOMAINS_MIB[app]
    xs = np.linspace(lo, hi, 50)
    got = fit_cubic(list(zip(xs, np.polyval(coeffs, xs))))
    assert np.allclose(got, coeffs, rtol=1e-6, atol=0)


def test_fit_needs_four_distinct_x():
    with pytest.raises(DegenerateProfileError):
        fit_cubic([(1, 1), (1, 2), (2, 3), (3, 4)])


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(-50, 50)), min_size=6, max_size=30,
                unique_by=lambda p: round(p[0], 3)))
def test_fit_is_least_squares(points):
    xs = [p[0] for p in points]
    if max(xs) - min(xs) < 1.0:
        return
    c = np.array(fit_cubic(points))
    base = sse(c, points)
    for i in range(4):
        for sign in (1, -1):
            d = c.copy()
            d[i] += sign * 1e-3 * max(abs(c[i]), 1e-12)
            assert sse(d, points) >= base * (1 - 1e-9) - 1e-12


def test_envelope_examples():
    ms = [_model(i, w) for i, w in enumerate([10, 8, 12, 11, 15])]
    assert [m.peak_memory_mib for m in envelope_filter(ms)] == [0, 2, 4]
    assert len(envelope_filter([_model(i, i + 1) for i in range(5)])) == 5
    assert len(envelope_filter([_model(i, 7) for i in range(5)])) == 1
    assert envelope_filter([]) == []


@given(st.lists(st.tuples(st.floats(0, 1e3), st.floats(0, 1e3)), max_size=40))
def test_envelope_strictly_increasing(pairs):
    kept = envelope_filter([_model(p, w) for p, w in pairs])
    w = [m.wcet_ms for m in kept]
    assert all(a < b for a, b in zip(w, w[1:]))


def test_exact_cubic_envelope_keeps_everything():
    ms = [_model(x, 0.001 * x**3 + 2) for x in range(1, 12)]
    prof, kept = build_latency_profile(ms)
    assert kept == ms


def test_degenerate_family():
    with pytest.raises(DegenerateProfileError):
        build_latency_profile(build_family(make_app([3.0, 1.0])))  # 3 models


def test_calibrated_yolo_profile(calibrated):
    fam = build_family(calibrated["yolov3"])
    prof, kept = build_latency_profile(fam)
    assert len(kept) >= 0.6 * len(fam)
    assert all(prof(m.peak_memory_mib) >= m.wcet_ms for m in kept)


def test_constant_accuracy_profile():
    ms = [_model(x, x, 92.5) for x in range(10, 20)]
    p = build_accuracy_profile(ms)
    assert np.allclose(p.coefficients, (0, 0, 0, 92.5), atol=1e-9)


def test_hand_evaluations():
    assert fixtures.latency_profile("yolov3")(1026) == pytest.approx(685.51, abs=0.01)
    assert fixtures.accuracy_profile("yolov3")(1026) == pytest.approx(54.77, abs=0.01)
    vgg = fixtures.accuracy_profile("vgg16", domain=(200.0, 300.0))
    assert vgg(200) == pytest.approx(92.78, abs=0.01)


def test_no_extrapolation():
    p = fixtures.latency_profile("yolov3")
    with pytest.raises(DomainError):
        eval_profile(p, p.domain_max_mib + 1)


def test_profile_invariants():
    with pytest.raises(Exception):
        CubicProfile(0, 0, 0, 1, 5.0, 5.0, ProfileKind.LATENCY)
    with pytest.raises(Exception):
        CubicProfile(0, 0, 0, -1, 0.0, 5.0, ProfileKind.LATENCY)  # negative latency


def test_document_round_trip(tmp_path):
    p = fixtures.latency_profile("resnet50")
    path = tmp_path / "p.json"
    path.write_text(dump_profile(p))
    assert load_profile(path) == p
    doc = json.loads(dump_profile(p))
    doc["extra"] = 1
    with pytest.raises(ParseError):
        profile_from_dict(doc)


@pytest.mark.parametrize("name", fixtures.APP_NAMES)
def test_packaged_profiles_match_fixtures(name):
    assert fixtures.packaged_profile(f"{name}_latency.json") == fixtures.latency_profile(name)
    assert fixtures.packaged_profile(f"{name}_accuracy.json") == fixtures.accuracy_profile(name)


@given(st.integers(3, 40), st.integers(0, 100_000))
def test_coverage_and_refit(layers, seed):
    fam = build_family(synthesize_workload(layers, seed))
    try:
        prof, kept = build_latency_profile(fam)
    except DegenerateProfileError:
        return
    for m in kept:
        assert prof(m.peak_memory_mib) >= m.wcet_ms
    assert prof.domain_min_mib == min(m.peak_memory_mib for m in kept)
    assert prof.domain_max_mib == max(m.peak_memory_mib for m in kept)
    # a refit of the retained set only ever prunes further, and still covers
    try:
        again, kept2 = build_latency_profile(kept)
    except DegenerateProfileError:
        return
    assert set(map(id, kept2)) <= set(map(id, kept))
    assert all(again(m.peak_memory_mib) >= m.wcet_ms for m in kept2)


def test_single_pass_keeps_noisy_families():
    # iterating fit and prune would shrink a noisy family to four models
    fam = build_family(synthesize_workload(40, 11))
    _, kept = build_latency_profile(fam)
    assert len(kept) >= 10


def test_idempotent_on_exact_cubic(calibrated):
    fam = build_family(calibrated["yolov3"])
    _, kept = build_latency_profile(fam)
    _, kept2 = build_latency_profile(kept)
    assert kept2 == kept


def test_profile_app_bounds(calibrated):
    pa = profile_app(calibrated["vgg16"])
    assert pa.lower_mib == pytest.approx(230.0)
    assert pa.upper_mib == pytest.approx(300.0)
