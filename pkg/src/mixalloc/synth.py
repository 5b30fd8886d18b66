"""Seeded synthetic workloads.

Without targets the generator draws a plausible random network. With target
profiles it builds a network whose family lands on the requested cubics: the
family memory span is the target's domain, per-step latency increments are
the target's increments, and sensitivities are chosen so the linear accuracy
map follows the target as closely as a concave, non-decreasing sequence can.
"""

from __future__ import annotations

import numpy as np

from .errors import CalibrationError, ValidationError
from .family import build_family, sensitivity_order
from .profiles import CubicProfile
from .workload import MIB, AppSpec, LayerSpec

CALIBRATION_RTOL = 0.05
OP_KINDS = ("conv", "conv", "conv", "dwconv", "fc")


def _pav(y: np.ndarray, increasing: bool = True) -> np.ndarray:
    """Pool-adjacent-violators isotonic regression (unit weights)."""
    vals = list(y if increasing else -y)
    blocks: list[list[float]] = []  # [mean, count]
    for v in vals:
        blocks.append([v, 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, n2 = blocks.pop()
            m1, n1 = blocks.pop()
            blocks.append([(m1 * n1 + m2 * n2) / (n1 + n2), n1 + n2])
    out = np.concatenate([np.full(n, m) for m, n in blocks])
    return out if increasing else -out


def _random_layers(rng, L):
    params = np.exp(rng.uniform(np.log(2e4), np.log(4e6), size=L)).astype(np.int64)
    int_lat = params / 1e5 * rng.uniform(0.5, 2.0, size=L) + rng.uniform(0.05, 0.5, size=L)
    fp_lat = int_lat * rng.uniform(1.5, 4.0, size=L)
    load = 4.0 * params / 1e6 * rng.uniform(0.5, 1.5, size=L)  # ~1 GB/s
    sens = rng.exponential(0.05, size=L)
    return params, int_lat, fp_lat, load, sens


def synthesize_workload(
    layer_count: int,
    seed: int,
    target_latency_profile: CubicProfile | None = None,
    target_accuracy_profile: CubicProfile | None = None,
    name: str | None = None,
) -> AppSpec:
    if layer_count < 1:
        raise ValidationError(f"layer_count must be >= 1 (got {layer_count})")
    rng = np.random.default_rng(seed)
    L = layer_count
    name = name or f"synthetic-{seed}"
    if target_latency_profile is None and target_accuracy_profile is None:
        return _random_app(rng, L, name)
    return _calibrated_app(rng, L, name, target_latency_profile, target_accuracy_profile)


def _random_app(rng, L, name):
    params, int_lat, fp_lat, load, sens = _random_layers(rng, L)
    layers = []
    int_total = 0
    for i in range(L):
        p = int(params[i])
        int_bytes = p + 8 * int(np.ceil(np.sqrt(p)))
        int_total += int_bytes
        layers.append(LayerSpec(
            index=i,
            op_kind=OP_KINDS[int(rng.integers(len(OP_KINDS)))],
            param_count=p,
            fp_bytes=4 * p if 4 * p >= int_bytes else int_bytes,
            int_bytes=int_bytes,
            fp_latency_ms=float(fp_lat[i]),
            int_latency_ms=float(int_lat[i]),
            load_fp_ms=float(load[i]),
            sensitivity=float(sens[i]),
        ))
    drop = rng.uniform(0.5, 8.0)
    return AppSpec(
        name=name,
        layers=tuple(layers),
        base_memory_mib=float(int_total / MIB + rng.uniform(20.0, 200.0)),
        fp_accuracy_pct=float(rng.uniform(60.0, 95.0)),
        accuracy_decay_per_nat=float(drop / max(sens.sum(), 1e-9)),
        restore_ms=float(rng.uniform(0.5, 5.0)),
    )


def _calibrated_app(rng, L, name, lat_target, acc_target):
    ref = lat_target if lat_target is not None else acc_target
    lo, hi = ref.domain_min_mib, ref.domain_max_mib

    # memory: per-step extra bytes, layer j of the sensitivity order adds step j
    extra = np.maximum(np.round(rng.dirichlet(np.full(L, 2.0)) * (hi - lo) * MIB), 3).astype(np.int64)
    x = lo + np.concatenate([[0], np.cumsum(extra)]) / MIB

    # latency
    if lat_target is not None:
        T = np.asarray(lat_target.raw(x), dtype=float)
        if np.any(T <= 0):
            raise CalibrationError(
                f"target latency is non-positive over [{lo}, {hi}] MiB (min {T.min():.3f} ms)"
            )
        if np.any(np.diff(T) < 0):
            T = _pav(T, increasing=True)
        d = np.diff(T)
        w0 = T[0]
        restore = w0 * rng.uniform(0.02, 0.06)
        int_lat = (w0 - restore) * rng.dirichlet(np.full(L, 2.0))
        alpha = rng.uniform(0.3, 0.6, size=L)
        fp_lat = int_lat + alpha * d
        load = (1.0 - alpha) * d
    else:
        params, int_lat, fp_lat, load, _ = _random_layers(rng, L)
        restore = rng.uniform(0.5, 5.0)

    # accuracy: increments must be non-negative and non-increasing along the order
    kappa = float(rng.uniform(0.5, 2.0))
    if acc_target is not None:
        A = np.asarray(acc_target.raw(x), dtype=float)
        g = np.maximum(_pav(np.diff(A), increasing=False), 0.0)
        fp_acc = float(A[-1])
        if not 0 < fp_acc <= 100:
            raise CalibrationError(f"target full-precision accuracy {fp_acc:.3f} is outside (0, 100]")
        sens_sorted = g / kappa
    else:
        sens_sorted = np.sort(rng.exponential(0.05, size=L))[::-1]
        fp_acc = float(rng.uniform(60.0, 95.0))
        kappa = float(rng.uniform(0.5, 8.0) / max(sens_sorted.sum(), 1e-9))

    # layer j of the order gets index perm[j]; equal sensitivities keep index order
    perm = rng.permutation(L)
    j = 0
    while j < L:
        k = j
        while k + 1 < L and sens_sorted[k + 1] == sens_sorted[j]:
            k += 1
        perm[j:k + 1] = np.sort(perm[j:k + 1])
        j = k + 1

    layers = [None] * L
    for j in range(L):
        e = int(extra[j])
        p = e // 3
        layers[perm[j]] = LayerSpec(
            index=int(perm[j]),
            op_kind=OP_KINDS[int(rng.integers(len(OP_KINDS)))],
            param_count=p,
            fp_bytes=p + e,
            int_bytes=p,
            fp_latency_ms=float(fp_lat[j]),
            int_latency_ms=float(int_lat[j]),
            load_fp_ms=float(load[j]),
            sensitivity=float(sens_sorted[j]),
        )
    app = AppSpec(
        name=name,
        layers=tuple(layers),
        base_memory_mib=float(lo),
        fp_accuracy_pct=fp_acc,
        accuracy_decay_per_nat=kappa,
        restore_ms=float(restore),
    )
    assert sensitivity_order(app) == [int(i) for i in perm]
    check_calibration(app, lat_target, acc_target)
    return app


def calibration_error(app: AppSpec, lat_target=None, acc_target=None) -> float:
    """Largest relative deviation of the family from the target cubics."""
    worst = 0.0
    for m in build_family(app):
        for target, got in ((lat_target, m.wcet_ms), (acc_target, m.accuracy_pct)):
            if target is None:
                continue
            want = float(target.raw(m.peak_memory_mib))
            worst = max(worst, abs(got - want) / max(abs(want), 1e-12))
    return worst


def check_calibration(app, lat_target=None, acc_target=None, rtol=CALIBRATION_RTOL):
    err = calibration_error(app, lat_target, acc_target)
    if err > rtol:
        raise CalibrationError(f"family deviates {err:.2%} from the target profiles (limit {rtol:.0%})")
    return err
