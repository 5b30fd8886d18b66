"""Layered workload models and KL-divergence layer sensitivity.

An :class:`AppSpec` stands in for a real network: each layer carries its
FP32/INT8 byte sizes and latencies, the cost of lazily loading its FP32
weights, and a precomputed sensitivity (mean KL divergence between the
full-precision output and the output with only that layer quantized).
"""

from __future__ import annotations

import enum
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence, Union

import numpy as np

from . import kernels
from .errors import DimensionError, DomainError, EmptyInputError, ParseError, ValidationError

PROB_FLOOR = 1e-12
SUM_TOL = 1e-9
DEFAULT_SAMPLE_COUNT = 32
MIB = 1 << 20


class PrecisionLevel(enum.Enum):
    FP32 = "F"
    INT8 = "I"


@dataclass(frozen=True)
class LayerSpec:
    index: int
    op_kind: str
    param_count: int
    fp_bytes: int
    int_bytes: int
    fp_latency_ms: float
    int_latency_ms: float
    load_fp_ms: float
    sensitivity: float

    def validate(self) -> None:
        def bad(name, why):
            raise ValidationError(f"layer {self.index}: {name} {why}")

        for name in ("param_count", "fp_bytes", "int_bytes"):
            if getattr(self, name) < 0:
                bad(name, "must be >= 0")
        for name in ("fp_latency_ms", "int_latency_ms", "load_fp_ms", "sensitivity"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                bad(name, f"must be finite and >= 0 (got {v})")
        if self.int_bytes > self.fp_bytes:
            bad("int_bytes", f"{self.int_bytes} exceeds fp_bytes {self.fp_bytes}")
        if self.int_latency_ms > self.fp_latency_ms:
            bad("int_latency_ms", f"{self.int_latency_ms} exceeds fp_latency_ms {self.fp_latency_ms}")

    @property
    def extra_fp_mib(self) -> float:
        """Memory added on top of the base model when this layer runs in FP32."""
        return (self.fp_bytes - self.int_bytes) / MIB


@dataclass(frozen=True)
class AppSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    base_memory_mib: float
    fp_accuracy_pct: float
    accuracy_decay_per_nat: float
    restore_ms: float

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    def validate(self) -> None:
        if not self.name:
            raise ValidationError("app name must be non-empty")
        if not self.layers:
            raise ValidationError(f"app {self.name!r}: layers must be non-empty")
        for pos, layer in enumerate(self.layers):
            if layer.index != pos:
                raise ValidationError(
                    f"app {self.name!r}: layer {pos} has index {layer.index}; indices must be 0..L-1"
                )
            layer.validate()
        if not self.base_memory_mib > 0:
            raise ValidationError(f"app {self.name!r}: base_memory_mib must be > 0")
        if not 0 < self.fp_accuracy_pct <= 100:
            raise ValidationError(f"app {self.name!r}: fp_accuracy_pct must be in (0, 100]")
        if not (math.isfinite(self.accuracy_decay_per_nat) and self.accuracy_decay_per_nat >= 0):
            raise ValidationError(f"app {self.name!r}: accuracy_decay_per_nat must be >= 0")
        if not (math.isfinite(self.restore_ms) and self.restore_ms >= 0):
            raise ValidationError(f"app {self.name!r}: restore_ms must be >= 0")

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def sensitivities(self) -> np.ndarray:
        return np.array([layer.sensitivity for layer in self.layers])


@dataclass(frozen=True)
class OutputSample:
    """One softmax output of a model on one input."""

    probs: tuple[float, ...] = field()

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        _check_probs(arr, "probs")
        object.__setattr__(self, "probs", tuple(arr.tolist()))

    @classmethod
    def padded(cls, values: Sequence[float]) -> "OutputSample":
        """Floor zero entries at ``PROB_FLOOR`` and renormalize.

        Use this to turn a hard one-hot (or underflowed softmax) into a valid
        sample.
        """
        arr = np.maximum(np.asarray(values, dtype=float), PROB_FLOOR)
        return cls(tuple(arr / arr.sum()))

    def __len__(self):
        return len(self.probs)


def _check_probs(arr: np.ndarray, what: str) -> None:
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{what} must be a non-empty vector")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{what} entries must be finite and > 0")
    if abs(arr.sum() - 1.0) > SUM_TOL:
        raise DomainError(f"{what} must sum to 1 (sum={arr.sum():.12g})")


def _probs(x: Union[OutputSample, Sequence[float]], what: str) -> np.ndarray:
    if isinstance(x, OutputSample):
        return np.asarray(x.probs, dtype=float)
    arr = np.asarray(x, dtype=float)
    _check_probs(arr, what)
    return arr


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats.

    Entries below ``PROB_FLOOR`` are raised to it before taking logs.
    """
    p = _probs(p, "p")
    q = _probs(q, "q")
    if p.shape != q.shape:
        raise DimensionError(f"length mismatch: {p.size} vs {q.size}")
    p = np.maximum(p, PROB_FLOOR)
    q = np.maximum(q, PROB_FLOOR)
    return max(float(np.sum(p * np.log(p / q))), 0.0)


def layer_sensitivity(full_outputs: Sequence, quant_outputs: Sequence) -> float:
    """Mean KL divergence between paired full-precision and quantized outputs."""
    if len(full_outputs) == 0 or len(quant_outputs) == 0:
        raise EmptyInputError("sensitivity needs at least one sample pair")
    if len(full_outputs) != len(quant_outputs):
        raise DimensionError(
            f"sample count mismatch: {len(full_outputs)} vs {len(quant_outputs)}"
        )
    ps = [_probs(p, "full output") for p in full_outputs]
    qs = [_probs(q, "quantized output") for q in quant_outputs]
    for j, (p, q) in enumerate(zip(ps, qs)):
        if p.shape != q.shape:
            raise DimensionError(f"sample {j}: length mismatch {p.size} vs {q.size}")
    if len({p.size for p in ps}) == 1:
        P = np.maximum(np.vstack(ps), PROB_FLOOR)
        Q = np.maximum(np.vstack(qs), PROB_FLOOR)
        return kernels.mean_kl(P, Q)
    return sum(kl_divergence(p, q) for p, q in zip(ps, qs)) / len(ps)


def softmax_samples(logits) -> list[OutputSample]:
    """Row-wise softmax of a ``(samples, classes)`` logit array, floored and renormalized."""
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return [OutputSample.padded(row / row.sum()) for row in e]


def sensitivity_from_logits(full_logits, quant_logits, sample_count: int = DEFAULT_SAMPLE_COUNT) -> float:
    """Layer sensitivity over the first ``sample_count`` inputs given raw logits."""
    if sample_count < 1:
        raise ValidationError(f"sample_count must be >= 1 (got {sample_count})")
    full = softmax_samples(full_logits)[:sample_count]
    quant = softmax_samples(quant_logits)[:sample_count]
    return layer_sensitivity(full, quant)


def sensitivities_from_outputs(full_outputs, per_layer_quant_outputs: Iterable) -> list[float]:
    """Sensitivity of every layer given its quantized-model outputs.

    ``per_layer_quant_outputs[i]`` holds the outputs of the model with only
    layer ``i`` quantized, on the same inputs as ``full_outputs``.
    """
    return [layer_sensitivity(full_outputs, q) for q in per_layer_quant_outputs]


# -- app-spec documents ------------------------------------------------------

_APP_FIELDS = {
    "name": str,
    "base_memory_mib": float,
    "fp_accuracy_pct": float,
    "accuracy_decay_per_nat": float,
    "restore_ms": float,
    "layers": list,
}
_LAYER_FIELDS = {
    "index": int,
    "op_kind": str,
    "param_count": int,
    "fp_bytes": int,
    "int_bytes": int,
    "fp_latency_ms": float,
    "int_latency_ms": float,
    "load_fp_ms": float,
    "sensitivity": float,
}


def _coerce(value, kind, field_name, where):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"{where}: expected a number", field=field_name)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ParseError(f"{where}: expected an integer", field=field_name)
        return value
    if not isinstance(value, kind):
        raise ParseError(f"{where}: expected {kind.__name__}", field=field_name)
    return value


def _check_keys(obj, spec, where):
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected a JSON object")
    unknown = sorted(set(obj) - set(spec))
    if unknown:
        raise ParseError(f"{where}: unknown field", field=unknown[0])
    missing = [k for k in spec if k not in obj]
    if missing:
        raise ParseError(f"{where}: missing field", field=missing[0])


def app_spec_from_dict(doc) -> AppSpec:
    _check_keys(doc, _APP_FIELDS, "app spec")
    values = {k: _coerce(doc[k], t, k, "app spec") for k, t in _APP_FIELDS.items()}
    layers = []
    for pos, raw in enumerate(values.pop("layers")):
        where = f"layers[{pos}]"
        _check_keys(raw, _LAYER_FIELDS, where)
        layers.append(LayerSpec(**{k: _coerce(raw[k], t, k, where) for k, t in _LAYER_FIELDS.items()}))
    return AppSpec(layers=tuple(layers), **values)


def app_spec_to_dict(app: AppSpec) -> dict:
    return {
        "name": app.name,
        "base_memory_mib": app.base_memory_mib,
        "fp_accuracy_pct": app.fp_accuracy_pct,
        "accuracy_decay_per_nat": app.accuracy_decay_per_nat,
        "restore_ms": app.restore_ms,
        "layers": [{k: getattr(layer, k) for k in _LAYER_FIELDS} for layer in app.layers],
    }


def load_app_spec(source: Union[IO, bytes, str, os.PathLike]) -> AppSpec:
    """Parse and validate an app-spec JSON document.

    ``source`` may be a binary/text stream, raw bytes, or a filesystem path.
    """
    if isinstance(source, (str, os.PathLike)) and not isinstance(source, bytes):
        with open(source, "rb") as fh:
            raw = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    return app_spec_from_dict(doc)


def dump_app_spec(app: AppSpec, fh: IO[str] | None = None) -> str:
    text = json.dumps(app_spec_to_dict(app), indent=2) + "\n"
    if fh is not None:
        fh.write(text)
    return text


def roundtrip(app: AppSpec) -> AppSpec:
    return load_app_spec(io.BytesIO(dump_app_spec(app).encode()))
