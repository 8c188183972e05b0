"""Hazard bands for LPG and CO.

LPG: 0-400 ppm Normal, 401-800 Hazardous, above 800 Explosive.
CO:  0-50 ppm Normal, 51-800 Dangerous, above 800 Deadly.

Fractional values between the integer bands are resolved with
``ppm <= normal_max`` -> Normal and ``ppm > elevated_max`` -> Critical.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Mapping, Protocol

from gasnet.gas_model import GasSpecies


class HazardLevel(enum.IntEnum):
    NORMAL = 0
    ELEVATED = 1
    CRITICAL = 2

    def display_name(self, species: GasSpecies) -> str:
        return _DISPLAY_NAMES[species][self]

    @classmethod
    def from_display_name(cls, species: GasSpecies, name: str) -> HazardLevel:
        for level, label in _DISPLAY_NAMES[species].items():
            if label == name:
                return level
        raise ValueError(f"unknown {species.value} level {name!r}")


_DISPLAY_NAMES: dict[GasSpecies, dict[HazardLevel, str]] = {
    GasSpecies.LPG: {
        HazardLevel.NORMAL: "NORMAL",
        HazardLevel.ELEVATED: "HAZARDOUS",
        HazardLevel.CRITICAL: "EXPLOSIVE",
    },
    GasSpecies.CO: {
        HazardLevel.NORMAL: "NORMAL",
        HazardLevel.ELEVATED: "DANGEROUS",
        HazardLevel.CRITICAL: "DEADLY",
    },
}


@dataclass(frozen=True)
class Band:
    normal_max: float
    elevated_max: float

    def __post_init__(self) -> None:
        if not 0 < self.normal_max < self.elevated_max:
            raise ValueError(
                f"need 0 < normal_max < elevated_max, got {self.normal_max}, {self.elevated_max}"
            )


@dataclass(frozen=True)
class ThresholdTable:
    lpg: Band = Band(400.0, 800.0)
    co: Band = Band(50.0, 800.0)

    def band(self, species: GasSpecies) -> Band:
        return self.lpg if species is GasSpecies.LPG else self.co

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any] | None) -> ThresholdTable:
        """Parse ``{"LPG": [400, 800], "CO": [50, 800]}``; missing species keep defaults."""
        if not doc:
            return cls()
        default = cls()
        bands = {}
        for sp in GasSpecies:
            pair = doc.get(sp.value)
            bands[sp] = Band(float(pair[0]), float(pair[1])) if pair is not None else default.band(sp)
        return cls(lpg=bands[GasSpecies.LPG], co=bands[GasSpecies.CO])

    def to_dict(self) -> dict[str, list[float]]:
        return {
            GasSpecies.LPG.value: [self.lpg.normal_max, self.lpg.elevated_max],
            GasSpecies.CO.value: [self.co.normal_max, self.co.elevated_max],
        }


class HasConcentrations(Protocol):
    lpg_ppm: float
    co_ppm: float


def classify(table: ThresholdTable, species: GasSpecies, ppm: float) -> HazardLevel:
    band = table.band(species)
    if ppm <= band.normal_max:
        return HazardLevel.NORMAL
    if ppm <= band.elevated_max:
        return HazardLevel.ELEVATED
    return HazardLevel.CRITICAL


def classify_reading(table: ThresholdTable, reading: HasConcentrations) -> dict[GasSpecies, HazardLevel]:
    return {
        GasSpecies.LPG: classify(table, GasSpecies.LPG, reading.lpg_ppm),
        GasSpecies.CO: classify(table, GasSpecies.CO, reading.co_ppm),
    }


def above_threshold(table: ThresholdTable, reading: HasConcentrations) -> bool:
    """True when either gas is outside its Normal band."""
    return any(level > HazardLevel.NORMAL for level in classify_reading(table, reading).values())
