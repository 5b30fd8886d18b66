"""Cubic latency/accuracy profiles over peak memory.

The latency profile must upper-bound the worst-case latency of every model it
is used for, so it is fitted to the running-maximum envelope of the family
and models left above the curve are dropped. The accuracy profile is a plain
least-squares trend through whatever survives.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateProfileError, DomainError, ParseError, ValidationError
from .family import CompressedModel, build_family
from .workload import AppSpec

COVER_TOL_MS = 1e-9
DOMAIN_SLACK = 1e-9


class ProfileKind(enum.Enum):
    LATENCY = "latency_ms"
    ACCURACY = "accuracy_pct"


@dataclass(frozen=True)
class CubicProfile:
    c3: float
    c2: float
    c1: float
    c0: float
    domain_min_mib: float
    domain_max_mib: float
    kind: ProfileKind

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        if not self.domain_min_mib < self.domain_max_mib:
            raise ValidationError(
                f"profile domain must satisfy min < max (got {self.domain_min_mib}, {self.domain_max_mib})"
            )
        if self.kind is ProfileKind.LATENCY:
            for x in (self.domain_min_mib, self.domain_max_mib):
                if self.raw(x) < -COVER_TOL_MS:
                    raise ValidationError(f"latency profile is negative at domain endpoint {x}")

    @property
    def coefficients(self) -> tuple[float, float, float, float]:
        return (self.c3, self.c2, self.c1, self.c0)

    def raw(self, x):
        """Polynomial value without the domain check; accepts arrays."""
        return ((self.c3 * x + self.c2) * x + self.c1) * x + self.c0

    def derivative(self, x):
        return (3.0 * self.c3 * x + 2.0 * self.c2) * x + self.c1

    def second_derivative(self, x):
        return 6.0 * self.c3 * x + 2.0 * self.c2

    def __call__(self, x: float) -> float:
        return eval_profile(self, x)

    def contains(self, x: float) -> bool:
        return self.domain_min_mib - DOMAIN_SLACK <= x <= self.domain_max_mib + DOMAIN_SLACK

    def interval_min(self, lo: float, hi: float) -> float:
        """Minimum over [lo, hi] from endpoints and real stationary points."""
        return min(self.raw(x) for x in _critical_points(self, lo, hi))

    def interval_max(self, lo: float, hi: float) -> float:
        return max(self.raw(x) for x in _critical_points(self, lo, hi))

    def with_domain(self, lo: float, hi: float) -> "CubicProfile":
        return CubicProfile(self.c3, self.c2, self.c1, self.c0, lo, hi, self.kind)


def _critical_points(p: CubicProfile, lo: float, hi: float) -> list[float]:
    pts = [lo, hi]
    a, b, c = 3.0 * p.c3, 2.0 * p.c2, p.c1
    if a == 0.0:
        if b != 0.0:
            pts.append(-c / b)
    else:
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            s = math.sqrt(disc)
            # numerically stable quadratic roots
            q = -0.5 * (b + math.copysign(s, b))
            if q != 0.0:
                pts.extend([q / a, c / q])
            else:
                pts.append(0.0)
    return [x for x in pts if lo <= x <= hi]


def eval_profile(profile: CubicProfile, x: float) -> float:
    if not profile.contains(x):
        raise DomainError(
            f"x={x} outside profile domain [{profile.domain_min_mib}, {profile.domain_max_mib}]"
        )
    return float(profile.raw(x))


def fit_cubic(points: Sequence[tuple[float, float]]) -> tuple[float, float, float, float]:
    """Least-squares cubic ``(c3, c2, c1, c0)`` through ``points``.

    The design matrix is built on x mapped to [-1, 1] and solved by
    Householder QR; coefficients are mapped back to the original units.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    if np.unique(x).size < 4:
        raise DegenerateProfileError(f"cubic fit needs >= 4 distinct x values (got {np.unique(x).size})")
    center = 0.5 * (x.max() + x.min())
    half = 0.5 * (x.max() - x.min())
    t = (x - center) / half
    V = np.vander(t, 4, increasing=True)
    Q, R = np.linalg.qr(V)
    b = np.linalg.solve(R, Q.T @ y)
    # p(x) = sum_k b_k ((x - center) / half)^k, expanded in powers of x
    a = np.zeros(4)
    for k in range(4):
        scale = b[k] / half**k
        for j in range(k + 1):
            a[j] += scale * math.comb(k, j) * (-center) ** (k - j)
    return (float(a[3]), float(a[2]), float(a[1]), float(a[0]))


def sse(coeffs, points) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return float(np.sum((pts[:, 1] - np.polyval(coeffs, pts[:, 0])) ** 2))


def envelope_filter(models: Sequence[CompressedModel]) -> list[CompressedModel]:
    """Models whose latency exceeds that of every cheaper kept model."""
    kept: list[CompressedModel] = []
    for m in sorted(models, key=lambda m: (m.peak_memory_mib, m.wcet_ms)):
        if not kept or m.wcet_ms > kept[-1].wcet_ms:
            kept.append(m)
    return kept


def _distinct_peaks(models) -> int:
    return len({m.peak_memory_mib for m in models})


def build_latency_profile(models: Sequence[CompressedModel]) -> tuple[CubicProfile, list[CompressedModel]]:
    """Fit the worst-case latency cubic and drop models above it.

    One fit over the envelope, one pruning pass. Repeating the pair is not
    a fix for idempotence: least-squares residuals sum to zero, so the only
    fixed point is a set lying exactly on a cubic and noisy families shrink
    to a handful of models.
    """
    if _distinct_peaks(models) < 4:
        raise DegenerateProfileError(f"latency profile needs >= 4 distinct peak-memory values (got {_distinct_peaks(models)})")
    env = envelope_filter(models)
    if len(env) < 4:
        raise DegenerateProfileError(f"latency envelope has only {len(env)} models; a cubic needs 4")
    coeffs = fit_cubic([(m.peak_memory_mib, m.wcet_ms) for m in env])
    x = np.array([m.peak_memory_mib for m in models])
    w = np.array([m.wcet_ms for m in models])
    keep = w <= np.polyval(coeffs, x) + COVER_TOL_MS
    retained = [m for m, k in zip(models, keep) if k]
    if _distinct_peaks(retained) < 4:
        raise DegenerateProfileError(
            f"only {len(retained)} models ({_distinct_peaks(retained)} distinct peaks) left under the latency profile"
        )
    coeffs = _lift_to_cover(coeffs, retained)
    lo = min(m.peak_memory_mib for m in retained)
    hi = max(m.peak_memory_mib for m in retained)
    return CubicProfile(*coeffs, lo, hi, ProfileKind.LATENCY), retained


def _lift_to_cover(coeffs, models):
    """Raise c0 just enough that the cubic covers every model exactly.

    Pruning tolerates ``COVER_TOL_MS`` of rounding, so the lift is at most
    that much.
    """
    c3, c2, c1, c0 = coeffs
    x = np.array([m.peak_memory_mib for m in models])
    w = np.array([m.wcet_ms for m in models])

    def deficit(c0):
        return float(np.max(w - (((c3 * x + c2) * x + c1) * x + c0)))

    d = deficit(c0)
    if d > 0:
        c0 += d
        while deficit(c0) > 0:
            c0 = np.nextafter(c0, np.inf) + max(abs(c0) * 1e-16, 1e-300)
    return (c3, c2, c1, float(c0))


def build_accuracy_profile(retained: Sequence[CompressedModel]) -> CubicProfile:
    if _distinct_peaks(retained) < 4:
        raise DegenerateProfileError(f"accuracy profile needs >= 4 distinct peak-memory values (got {_distinct_peaks(retained)})")
    coeffs = fit_cubic([(m.peak_memory_mib, m.accuracy_pct) for m in retained])
    lo = min(m.peak_memory_mib for m in retained)
    hi = max(m.peak_memory_mib for m in retained)
    return CubicProfile(*coeffs, lo, hi, ProfileKind.ACCURACY)


@dataclass
class ProfiledApp:
    app: AppSpec
    latency_profile: CubicProfile
    accuracy_profile: CubicProfile
    retained_models: list[CompressedModel]
    family: list[CompressedModel] = field(default_factory=list)
    mu_mib: float = 0.0

    @property
    def name(self) -> str:
        return self.app.name

    @property
    def lower_mib(self) -> float:
        return min(m.peak_memory_mib for m in self.retained_models)

    @property
    def upper_mib(self) -> float:
        return max(m.peak_memory_mib for m in self.retained_models)


def profile_app(app: AppSpec) -> ProfiledApp:
    family = build_family(app)
    lat, retained = build_latency_profile(family)
    acc = build_accuracy_profile(retained)
    return ProfiledApp(app, lat, acc, retained, family)


# -- profile documents -------------------------------------------------------

_PROFILE_KEYS = ("kind", "c3", "c2", "c1", "c0", "domain_min_mib", "domain_max_mib")


def profile_to_dict(p: CubicProfile) -> dict:
    return {
        "kind": p.kind.value,
        "c3": p.c3,
        "c2": p.c2,
        "c1": p.c1,
        "c0": p.c0,
        "domain_min_mib": p.domain_min_mib,
        "domain_max_mib": p.domain_max_mib,
    }


def profile_from_dict(doc: dict) -> CubicProfile:
    if not isinstance(doc, dict):
        raise ParseError("profile: expected a JSON object")
    unknown = sorted(set(doc) - set(_PROFILE_KEYS))
    if unknown:
        raise ParseError("profile: unknown field", field=unknown[0])
    for k in _PROFILE_KEYS:
        if k not in doc:
            raise ParseError("profile: missing field", field=k)
    try:
        kind = ProfileKind(doc["kind"])
    except ValueError:
        raise ParseError(f"profile: bad kind {doc['kind']!r}", field="kind") from None
    nums = []
    for k in _PROFILE_KEYS[1:]:
        v = doc[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError("profile: expected a number", field=k)
        nums.append(float(v))
    return CubicProfile(*nums, kind=kind)


def dump_profile(p: CubicProfile) -> str:
    return json.dumps(profile_to_dict(p), indent=2) + "\n"


def load_profile(path) -> CubicProfile:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    return profile_from_dict(doc)
