"""Primal active-set solver for small strictly convex QPs.

    minimize    0.5 x'Bx + c'x
    subject to  A x >= b

A feasible starting point must be supplied. Steps are taken in the null
space of the working rows, so dependent rows (a bound and the coupling row
both active at a vertex) cost nothing, and a degenerate vertex is checked
for optimality against all of its active rows at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls


@dataclass
class QPResult:
    x: np.ndarray
    multipliers: np.ndarray  # one per row of A, zero for inactive rows
    iterations: int
    converged: bool


def _kkt_step(B, g, Aw):
    """Null-space step: exact p = 0 when the working rows span the space."""
    n = B.shape[0]
    k = Aw.shape[0]
    if k == 0:
        Z = np.eye(n)
    else:
        _, sv, vt = np.linalg.svd(Aw)
        rank = int(np.sum(sv > 1e-12 * max(sv[0], 1.0)))
        Z = vt[rank:].T
    if Z.shape[1] == 0:
        p = np.zeros(n)
    else:
        H = Z.T @ B @ Z
        p = Z @ np.linalg.lstsq(H, -(Z.T @ g), rcond=None)[0]
    lam = np.linalg.lstsq(Aw.T, B @ p + g, rcond=None)[0] if k else np.zeros(0)
    return p, lam


def active_set_qp(B, c, A, b, x0, working=None, tol=1e-12, max_iter=None) -> QPResult:
    B = np.asarray(B, dtype=float)
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.array(x0, dtype=float)
    m, n = A.shape
    max_iter = max_iter or 20 * (n + m) + 20
    scale = 1.0 + np.abs(b)
    if working is None:
        working = []
        for i in np.flatnonzero(np.abs(A @ x - b) <= 1e-12 * scale):
            # keep the working set linearly independent
            trial = A[working + [int(i)]]
            if np.linalg.matrix_rank(trial) == len(working) + 1:
                working.append(int(i))
    W = list(working)

    lam_full = np.zeros(m)
    for it in range(1, max_iter + 1):
        g = B @ x + c
        Aw = A[W] if W else np.zeros((0, n))
        p, lam = _kkt_step(B, g, Aw)
        if np.max(np.abs(p), initial=0.0) <= tol * (1.0 + np.max(np.abs(x), initial=0.0)):
            lam_full = np.zeros(m)
            lam_full[W] = lam
            if not W or lam.min() >= -1e-12:
                return QPResult(x, lam_full, it, True)
            # degenerate vertex: W's multipliers are not unique, so test
            # optimality against every active row before dropping one
            active = np.flatnonzero(np.abs(A @ x - b) <= 1e-10 * scale)
            mu, rnorm = nnls(A[active].T, g)
            if rnorm <= 1e-10 * (1.0 + np.linalg.norm(g)):
                lam_full = np.zeros(m)
                lam_full[active] = mu
                return QPResult(x, lam_full, it, True)
            W.pop(int(np.argmin(lam)))
            continue
        alpha = 1.0
        blocking = None
        Ap = A @ p
        slack = A @ x - b
        for i in range(m):
            if i in W or Ap[i] >= -1e-12 * np.linalg.norm(A[i]) * np.linalg.norm(p):
                continue
            step = max(slack[i], 0.0) / -Ap[i]
            if step < alpha:
                alpha, blocking = step, i
        x = x + alpha * p
        if blocking is not None:
            W.append(blocking)
    return QPResult(x, lam_full, max_iter, False)
