"""Constant-size lookup tables from memory grant to bit configuration.

The peak-memory range is cut into ``z - 1`` equal sections. A model is filed
under the section end point at or above its peak memory (ceiling) and a
grant is looked up at the end point at or below it (floor), so whatever the
table returns always fits in the grant. Section arithmetic is done on exact
rationals; entries are keyed by the integer section number.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import LookupTableError, NoFittingModelError, ParseError
from .family import BitConfig, CompressedModel

DEFAULT_Z = 50


@dataclass(frozen=True)
class LutEntry:
    config: BitConfig
    accuracy_pct: float
    peak_memory_mib: float


@dataclass(frozen=True)
class LookupTable:
    app_name: str
    z: int
    min_mib: float
    max_mib: float
    entries: dict  # section number -> LutEntry, ascending

    def key_mib(self, n: int) -> float:
        return float(_key(self.min_mib, self.max_mib, self.z, n))

    def keys_mib(self) -> list[float]:
        return [self.key_mib(n) for n in self.entries]

    def __len__(self):
        return len(self.entries)


def _key(lo: float, hi: float, z: int, n: int) -> Fraction:
    lo_f, hi_f = Fraction(lo), Fraction(hi)
    return lo_f + n * (hi_f - lo_f) / (z - 1)


def _scaled(lo: float, hi: float, z: int, x: float) -> Fraction:
    lo_f, hi_f = Fraction(lo), Fraction(hi)
    return (z - 1) * (Fraction(x) - lo_f) / (hi_f - lo_f)


def section_of(lo: float, hi: float, z: int, peak_mib: float) -> int:
    """Section a model with this peak memory is stored under (ceiling)."""
    return math.ceil(_scaled(lo, hi, z, peak_mib))


def build_lut(models: Sequence[CompressedModel], z: int = DEFAULT_Z, app_name: str = "") -> LookupTable:
    if z < 2:
        raise LookupTableError(f"lookup table needs z >= 2 (got {z})")
    if not models:
        raise LookupTableError("lookup table needs at least one model")
    ordered = sorted(models, key=lambda m: m.peak_memory_mib)
    lo, hi = ordered[0].peak_memory_mib, ordered[-1].peak_memory_mib
    if not hi > lo:
        raise LookupTableError("all models have the same peak memory; section range is degenerate")

    entries: dict[int, LutEntry] = {}
    best: CompressedModel | None = None
    old = None
    for m in ordered:
        n = section_of(lo, hi, z, m.peak_memory_mib)
        if n == old:
            if m.accuracy_pct > best.accuracy_pct:
                best = m
        else:
            if best is not None:
                entries[old] = LutEntry(best.config, best.accuracy_pct, best.peak_memory_mib)
            best, old = m, n
    entries[old] = LutEntry(best.config, best.accuracy_pct, best.peak_memory_mib)
    return LookupTable(app_name, z, lo, hi, entries)


def query_section(table: LookupTable, grant_mib: float) -> int:
    """Section number the floor formula maps ``grant_mib`` to (before fallback)."""
    if grant_mib < table.min_mib:
        raise NoFittingModelError(
            f"{table.app_name}: grant {grant_mib} MiB is below the smallest model ({table.min_mib} MiB)"
        )
    n = math.floor(_scaled(table.min_mib, table.max_mib, table.z, grant_mib))
    return min(n, table.z - 1)


def query_lut(table: LookupTable, grant_mib: float) -> LutEntry:
    n = query_section(table, grant_mib)
    populated = [k for k in table.entries if k <= n]
    if not populated:
        raise NoFittingModelError(f"{table.app_name}: no stored model at or below {table.key_mib(n)} MiB")
    return table.entries[max(populated)]


# -- documents ---------------------------------------------------------------

def lut_to_dict(table: LookupTable) -> dict:
    return {
        "app_name": table.app_name,
        "z": table.z,
        "min_mib": table.min_mib,
        "max_mib": table.max_mib,
        "entries": [
            {
                "key_mib": f"{table.key_mib(n):.6f}",
                "config": str(e.config),
                "accuracy_pct": e.accuracy_pct,
                "peak_memory_mib": e.peak_memory_mib,
            }
            for n, e in sorted(table.entries.items())
        ],
    }


def lut_from_dict(doc: dict) -> LookupTable:
    try:
        z, lo, hi = int(doc["z"]), float(doc["min_mib"]), float(doc["max_mib"])
        entries = {}
        for e in doc["entries"]:
            key = Fraction(e["key_mib"])
            n = round((key - Fraction(lo)) * (z - 1) / (Fraction(hi) - Fraction(lo)))
            entries[n] = LutEntry(BitConfig.parse(e["config"]), float(e["accuracy_pct"]), float(e["peak_memory_mib"]))
        return LookupTable(str(doc["app_name"]), z, lo, hi, dict(sorted(entries.items())))
    except KeyError as exc:
        raise ParseError("lookup table: missing field", field=exc.args[0]) from None


def dump_lut(table: LookupTable) -> str:
    return json.dumps(lut_to_dict(table), indent=2) + "\n"


def load_lut(path) -> LookupTable:
    with open(path) as fh:
        return lut_from_dict(json.load(fh))
