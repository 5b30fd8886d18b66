from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixalloc.errors import LookupTableError, NoFittingModelError
from mixalloc.family import BitConfig, CompressedModel, build_family
from mixalloc.lut import (
    build_lut,
    dump_lut,
    lut_from_dict,
    lut_to_dict,
    query_lut,
    query_section,
    section_of,
)
from mixalloc.profiles import build_latency_profile
from mixalloc.synth import synthesize_workload


def _m(peak, acc, tag="I"):
    return CompressedModel(BitConfig.parse(tag), float(peak), 1.0, float(acc), 0.0, tag.count("F"))


def test_ceiling_key_example():
    assert section_of(100, 500, 5, 230) == 2  # ceil(1.3)
    t = build_lut([_m(100, 10), _m(230, 20), _m(500, 30)], z=5)
    assert t.keys_mib() == [100.0, 300.0, 500.0]


def test_min_model_maps_to_min_key():
    t = build_lut([_m(100, 10), _m(500, 30)], z=5)
    assert t.key_mib(min(t.entries)) == 100.0


def test_best_accuracy_per_section():
    t = build_lut([_m(100, 1), _m(210, 80, "F"), _m(250, 85, "FF"), _m(500, 90)], z=5)
    assert t.entries[2].accuracy_pct == 85


def test_floor_query_example():
    t = build_lut([_m(100, 10), _m(150, 15), _m(200, 20), _m(500, 30)], z=5)
    assert query_section(t, 280) == 1
    assert query_lut(t, 280).peak_memory_mib == 200


def test_query_at_max():
    t = build_lut([_m(100, 10), _m(500, 30)], z=5)
    assert query_section(t, 500) == 4
    assert query_lut(t, 500).peak_memory_mib == 500
    assert query_section(t, 10_000) == 4


def test_unpopulated_key_falls_back():
    t = build_lut([_m(100, 10), _m(120, 12), _m(500, 30)], z=5)
    # key 300 (n=2) is empty; grant 350 floors to it and must use key 200 (n=1)
    assert 2 not in t.entries
    assert query_lut(t, 350).peak_memory_mib == 120


def test_query_below_min():
    t = build_lut([_m(100, 10), _m(500, 30)], z=5)
    with pytest.raises(NoFittingModelError):
        query_lut(t, 99.9)


def test_build_errors():
    with pytest.raises(LookupTableError):
        build_lut([_m(100, 1), _m(200, 2)], z=1)
    with pytest.raises(LookupTableError):
        build_lut([_m(100, 1), _m(100, 2)], z=5)
    with pytest.raises(LookupTableError):
        build_lut([], z=5)


def test_last_pair_is_flushed_and_no_sentinel():
    models = [_m(100 + 10 * i, i) for i in range(41)]
    t = build_lut(models, z=50)
    assert max(t.entries) == 49
    assert t.entries[49].peak_memory_mib == 500
    assert all(e.config is not None for e in t.entries.values())


def test_document_round_trip():
    fam = build_family(synthesize_workload(20, 4))
    t = build_lut(fam, z=50, app_name="x")
    doc = lut_to_dict(t)
    assert [e["key_mib"] for e in doc["entries"]] == sorted(
        (e["key_mib"] for e in doc["entries"]), key=float
    )
    assert lut_from_dict(doc) == t
    assert dump_lut(lut_from_dict(doc)) == dump_lut(t)


families = st.tuples(st.integers(2, 60), st.integers(0, 100_000), st.integers(2, 60))


@given(families, st.floats(0, 1))
def test_safety_and_oracle(params, frac):
    layers, seed, z = params
    fam = build_family(synthesize_workload(layers, seed))
    t = build_lut(fam, z=z)
    assert len(t) <= z
    lo, hi = t.min_mib, t.max_mib
    grant = lo + frac * (hi - lo) * 1.2
    got = query_lut(t, grant)
    assert got.peak_memory_mib <= grant
    key = Fraction(lo) + query_section(t, grant) * (Fraction(hi) - Fraction(lo)) / (z - 1)
    best = max(m.accuracy_pct for m in fam if Fraction(m.peak_memory_mib) <= key)
    assert got.accuracy_pct == best


@given(families)
def test_stored_entries_fit_their_keys(params):
    layers, seed, z = params
    t = build_lut(build_family(synthesize_workload(layers, seed)), z=z)
    for n, e in t.entries.items():
        key = Fraction(t.min_mib) + n * (Fraction(t.max_mib) - Fraction(t.min_mib)) / (z - 1)
        assert Fraction(e.peak_memory_mib) <= key


def test_deterministic():
    fam = build_family(synthesize_workload(25, 9))
    assert dump_lut(build_lut(fam)) == dump_lut(build_lut(list(reversed(fam))))
