"""Mixed-precision model families.

Starting from the fully-quantized base model, FP32 layers are switched in
one at a time in descending order of sensitivity. For every prefix length
``k`` this gives the configuration with the smallest summed sensitivity of
the still-quantized layers, i.e. the smallest expected output perturbation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DimensionError
from .workload import MIB, AppSpec, PrecisionLevel

FP, INT = PrecisionLevel.FP32, PrecisionLevel.INT8


@dataclass(frozen=True)
class BitConfig:
    per_layer: tuple[PrecisionLevel, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_layer", tuple(self.per_layer))

    @classmethod
    def parse(cls, text: str) -> "BitConfig":
        try:
            return cls(tuple(PrecisionLevel(c) for c in text))
        except ValueError:
            raise DimensionError(f"bad config string {text!r}; use F/I characters") from None

    @classmethod
    def uniform(cls, length: int, level: PrecisionLevel) -> "BitConfig":
        return cls((level,) * length)

    @classmethod
    def with_fp(cls, length: int, fp_layers: Iterable[int]) -> "BitConfig":
        fp = set(fp_layers)
        return cls(tuple(FP if i in fp else INT for i in range(length)))

    def __str__(self):
        return "".join(p.value for p in self.per_layer)

    def __len__(self):
        return len(self.per_layer)

    @property
    def fp_layers(self) -> tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.per_layer) if p is FP)


@dataclass(frozen=True)
class CompressedModel:
    config: BitConfig
    peak_memory_mib: float
    wcet_ms: float
    accuracy_pct: float
    sensitivity_sum: float
    fp_layer_count: int

    @property
    def int_fraction(self) -> float:
        return 1.0 - self.fp_layer_count / len(self.config)


def reconfig_ms(app: AppSpec, config: BitConfig) -> float:
    """Time to lazily load the FP32 layers of ``config`` over the base model."""
    return sum(app.layers[i].load_fp_ms for i in config.fp_layers)


def exec_ms(app: AppSpec, config: BitConfig) -> float:
    return sum(
        layer.fp_latency_ms if p is FP else layer.int_latency_ms
        for layer, p in zip(app.layers, config.per_layer)
    )


def evaluate_config(app: AppSpec, config: BitConfig) -> CompressedModel:
    if len(config) != app.layer_count:
        raise DimensionError(f"config has {len(config)} layers, app {app.name!r} has {app.layer_count}")
    extra_bytes = 0
    sens = 0.0
    for layer, p in zip(app.layers, config.per_layer):
        if p is FP:
            extra_bytes += layer.fp_bytes - layer.int_bytes
        else:
            sens += layer.sensitivity
    wcet = reconfig_ms(app, config) + exec_ms(app, config) + app.restore_ms
    acc = app.fp_accuracy_pct - app.accuracy_decay_per_nat * sens
    return CompressedModel(
        config=config,
        peak_memory_mib=app.base_memory_mib + extra_bytes / MIB,
        wcet_ms=wcet,
        accuracy_pct=min(max(acc, 0.0), 100.0),
        sensitivity_sum=sens,
        fp_layer_count=len(config.fp_layers),
    )


def sensitivity_order(app: AppSpec) -> list[int]:
    """Layer indices by descending sensitivity, lower index first on ties."""
    return sorted(range(app.layer_count), key=lambda i: (-app.layers[i].sensitivity, i))


def build_family(app: AppSpec) -> list[CompressedModel]:
    """The L+1 prefix configurations, fully-quantized first."""
    order = sensitivity_order(app)
    L = app.layer_count
    return [evaluate_config(app, BitConfig.with_fp(L, order[:k])) for k in range(L + 1)]


FAMILY_CSV_HEADER = ("fp_layer_count", "peak_memory_mib", "wcet_ms", "accuracy_pct", "sensitivity_sum", "config")


def family_to_csv(models: Sequence[CompressedModel]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FAMILY_CSV_HEADER)
    for m in models:
        w.writerow([m.fp_layer_count, repr(m.peak_memory_mib), repr(m.wcet_ms),
                    repr(m.accuracy_pct), repr(m.sensitivity_sum), str(m.config)])
    return buf.getvalue()


def family_from_csv(text: str) -> list[CompressedModel]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        CompressedModel(
            config=BitConfig.parse(r["config"]),
            peak_memory_mib=float(r["peak_memory_mib"]),
            wcet_ms=float(r["wcet_ms"]),
            accuracy_pct=float(r["accuracy_pct"]),
            sensitivity_sum=float(r["sensitivity_sum"]),
            fp_layer_count=int(r["fp_layer_count"]),
        )
        for r in rows
    ]
