"""Pure numpy versions of the compiled kernels (same results, slower grid search)."""

import itertools

import numpy as np

IMPLEMENTATION = "numpy"

_BLOCK = 4_000_000


def mean_kl(P, Q):
    rows = np.sum(P * np.log(P / Q), axis=1)
    return float(np.sum(np.maximum(rows, 0.0)) / P.shape[0])


def _block_best(acc, lat, budget):
    feasible = lat <= budget
    if not feasible.any():
        return None
    best_acc = acc[feasible].max()
    cand = feasible & (acc == best_acc)
    best_lat = lat[cand].min()
    flat = int(np.flatnonzero((cand & (lat == best_lat)).ravel())[0])
    return np.unravel_index(flat, acc.shape), float(best_acc), float(best_lat)


def grid_best(acc, lat, sizes, budget):
    n = len(sizes)
    if any(s <= 0 for s in sizes):
        return None, 0.0, 0.0
    a = [np.asarray(acc[i, : sizes[i]]) for i in range(n)]
    t = [np.asarray(lat[i, : sizes[i]]) for i in range(n)]
    # vectorize the trailing dimensions, loop over the leading ones
    tail = 1
    split = n
    while split > 0 and tail * sizes[split - 1] <= _BLOCK:
        split -= 1
        tail *= sizes[split]
    split = min(split, n - 1)

    best = None
    for head in itertools.product(*(range(s) for s in sizes[:split])):
        pa = 0.0
        pl = 0.0
        for i, j in enumerate(head):
            pa = pa + a[i][j]
            pl = pl + t[i][j]
        ba = np.float64(pa)
        bl = np.float64(pl)
        for i in range(split, n):
            ba = np.add.outer(ba, a[i])
            bl = np.add.outer(bl, t[i])
        hit = _block_best(ba, bl, budget)
        if hit is None:
            continue
        pos, ha, hl = hit
        if best is None or ha > best[1] or (ha == best[1] and hl < best[2]):
            best = (tuple(head) + tuple(int(p) for p in pos), ha, hl)
    if best is None:
        return None, 0.0, 0.0
    return best
