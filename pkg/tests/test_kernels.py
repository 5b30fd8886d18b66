import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixalloc import _kernels_py as fallback
from mixalloc import kernels

needs_ext = pytest.mark.skipif(kernels.compiled is None, reason="compiled extension unavailable")


def _case(rng, sizes, integer):
    w = max(sizes)
    acc = np.full((len(sizes), w), -np.inf)
    lat = np.full((len(sizes), w), np.inf)
    for i, k in enumerate(sizes):
        if integer:  # small integer values force many exact ties
            acc[i, :k] = rng.integers(0, 4, k)
            lat[i, :k] = rng.integers(0, 6, k)
        else:
            acc[i, :k] = rng.uniform(0, 100, k)
            lat[i, :k] = rng.uniform(0, 50, k)
    hi = float(sum(lat[i, :k].max() for i, k in enumerate(sizes)))
    return acc, lat, np.asarray(sizes, dtype=np.int_), float(rng.uniform(-1, hi + 1))


def _brute(acc, lat, sizes, budget):
    import itertools

    best = None
    for idx in itertools.product(*(range(s) for s in sizes)):
        a = sum(acc[i, j] for i, j in enumerate(idx))
        l = sum(lat[i, j] for i, j in enumerate(idx))
        if l <= budget and (best is None or a > best[1] or (a == best[1] and l < best[2])):
            best = (idx, a, l)
    return best or (None, 0.0, 0.0)


@given(st.integers(0, 2**32 - 1), st.lists(st.integers(1, 7), min_size=1, max_size=4), st.booleans())
def test_fallback_matches_brute_force(seed, sizes, integer):
    case = _case(np.random.default_rng(seed), sizes, integer)
    got, want = fallback.grid_best(*case), _brute(*case)
    assert got[0] == want[0]
    if got[0] is not None:
        assert got[1] == pytest.approx(want[1]) and got[2] == pytest.approx(want[2])


@needs_ext
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(1, 30), min_size=1, max_size=4), st.booleans())
def test_compiled_matches_fallback(seed, sizes, integer):
    case = _case(np.random.default_rng(seed), sizes, integer)
    assert kernels.compiled.grid_best(*case) == fallback.grid_best(*case)


@pytest.mark.parametrize("impl", [fallback] + ([kernels.compiled] if kernels.compiled else []))
def test_empty_and_infeasible(impl):
    acc = np.zeros((2, 3))
    lat = np.ones((2, 3))
    assert impl.grid_best(acc, lat, np.array([3, 0], dtype=np.int_), 10.0)[0] is None
    assert impl.grid_best(acc, lat, np.array([3, 3], dtype=np.int_), 1.0)[0] is None
    assert impl.grid_best(acc, lat, np.array([3, 3], dtype=np.int_), 2.0)[0] == (0, 0)


def test_selection():
    assert kernels.IMPLEMENTATION in ("cython", "numpy")
    assert kernels.mean_kl is fallback.mean_kl
    P = np.array([[0.5, 0.5]])
    assert kernels.mean_kl(P, P) == 0.0
