"""Ambient gas scenarios and the MQ-5 / MQ-9 sensor electronics.

A :class:`Scenario` is a pure function of time giving the true LPG and CO
concentration in the air around a station. A :class:`SensorCurve` models the
metal-oxide sensor as a power-law resistance read through a voltage divider
into an ADC, so the station firmware sees integer counts rather than ppm.

The sensor constants are placeholders with a datasheet-like log-log shape;
nothing here is calibrated against real hardware.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from gasnet.prng import SplitMix64, hash64

PPM_FLOOR = 0.0
PPM_CEIL = 1000.0
SECONDS_PER_DAY = 86_400


class GasSpecies(str, enum.Enum):
    LPG = "LPG"
    CO = "CO"

    @property
    def index(self) -> int:
        return 0 if self is GasSpecies.LPG else 1


class OutOfRange(ValueError):
    """A ppm value outside the sensor's measurement range."""


class EventKind(str, enum.Enum):
    LEAK = "Leak"
    WASHOUT = "Washout"


def _parse_species(value: str | None) -> GasSpecies | None:
    if value is None or value in ("Both", "both", "BOTH"):
        return None
    return GasSpecies(value.upper())


@dataclass(frozen=True)
class DiurnalPeak:
    """Gaussian bump in hour-of-day.

    ``hour`` names the clock-hour bucket ``[hour, hour+1)``; the bump is
    centred on the middle of that bucket and wraps at midnight.
    ``species=None`` applies the bump to both gases.
    """

    hour: int
    amplitude_ppm: float
    width_h: float
    species: GasSpecies | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.hour <= 23:
            raise ValueError(f"peak hour must be in 0..23, got {self.hour}")
        if self.width_h <= 0:
            raise ValueError("peak width must be positive")
        if self.amplitude_ppm < 0:
            raise ValueError("peak amplitude must be non-negative")

    def value(self, hour_of_day: float) -> float:
        d = (hour_of_day - (self.hour + 0.5)) % 24.0
        if d > 12.0:
            d -= 24.0
        return self.amplitude_ppm * math.exp(-0.5 * (d / self.width_h) ** 2)


@dataclass(frozen=True)
class ScenarioEvent:
    kind: EventKind
    start_s: float
    duration_s: float
    magnitude: float
    species: GasSpecies | None = None
    ramp_s: float = 0.0

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("event duration must be positive")
        if self.ramp_s < 0:
            raise ValueError("event ramp must be non-negative")
        if self.kind is EventKind.LEAK and self.magnitude < 0:
            raise ValueError("leak magnitude must be >= 0")
        if self.kind is EventKind.WASHOUT and not 0.0 <= self.magnitude <= 1.0:
            raise ValueError("washout factor must be in [0, 1]")

    def applies_to(self, species: GasSpecies) -> bool:
        return self.species is None or self.species is species

    def envelope(self, t_s: float) -> float:
        """Trapezoid in [0, 1]: linear ramps of ``ramp_s`` at both ends of the window."""
        end = self.start_s + self.duration_s
        if t_s < self.start_s or t_s >= end:
            return 0.0
        if self.ramp_s == 0:
            return 1.0
        return max(0.0, min(1.0, (t_s - self.start_s) / self.ramp_s, (end - t_s) / self.ramp_s))


@dataclass(frozen=True)
class Scenario:
    name: str
    base_ppm: Mapping[GasSpecies, float]
    diurnal_peaks: tuple[DiurnalPeak, ...] = ()
    events: tuple[ScenarioEvent, ...] = ()
    seed: int = 0
    noise_sd: float = 0.0
    temp_mean_c: float = 25.0
    temp_swing_c: float = 4.0

    def __post_init__(self) -> None:
        for sp in GasSpecies:
            if self.base_ppm.get(sp, 0.0) < 0:
                raise ValueError(f"base ppm for {sp.value} must be non-negative")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> Scenario:
        base = doc.get("base_ppm", {})
        peaks = tuple(
            DiurnalPeak(
                hour=int(p["hour"]),
                amplitude_ppm=float(p["amplitude_ppm"]),
                width_h=float(p["width_h"]),
                species=_parse_species(p.get("species")),
            )
            for p in doc.get("diurnal_peaks", [])
        )
        events = tuple(
            ScenarioEvent(
                kind=EventKind(e["kind"]),
                start_s=float(e["start_s"]),
                duration_s=float(e["duration_s"]),
                magnitude=float(e["magnitude"]),
                species=_parse_species(e.get("species")),
                ramp_s=float(e.get("ramp_s", 0.0)),
            )
            for e in doc.get("events", [])
        )
        return cls(
            name=str(doc.get("name", "scenario")),
            base_ppm={sp: float(base.get(sp.value, 0.0)) for sp in GasSpecies},
            diurnal_peaks=peaks,
            events=events,
            seed=int(doc.get("seed", 0)),
            noise_sd=float(doc.get("noise_sd", 0.0)),
            temp_mean_c=float(doc.get("temp_mean_c", 25.0)),
            temp_swing_c=float(doc.get("temp_swing_c", 4.0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "base_ppm": {sp.value: self.base_ppm.get(sp, 0.0) for sp in GasSpecies},
            "diurnal_peaks": [
                {
                    "hour": p.hour,
                    "amplitude_ppm": p.amplitude_ppm,
                    "width_h": p.width_h,
                    "species": p.species.value if p.species else "Both",
                }
                for p in self.diurnal_peaks
            ],
            "events": [
                {
                    "kind": e.kind.value,
                    "species": e.species.value if e.species else "Both",
                    "start_s": e.start_s,
                    "duration_s": e.duration_s,
                    "magnitude": e.magnitude,
                    "ramp_s": e.ramp_s,
                }
                for e in self.events
            ],
            "seed": self.seed,
            "noise_sd": self.noise_sd,
            "temp_mean_c": self.temp_mean_c,
            "temp_swing_c": self.temp_swing_c,
        }


def _noise(scenario: Scenario, species: GasSpecies, t_s: float) -> float:
    if scenario.noise_sd == 0:
        return 0.0
    t_ms = int(round(t_s * 1000.0))
    rng = SplitMix64(hash64(scenario.seed, species.index + 1, t_ms))
    return scenario.noise_sd * rng.normal()


def scenario_ppm(scenario: Scenario, species: GasSpecies, t_s: float) -> float:
    """True concentration of ``species`` at ``t_s`` seconds into the scenario.

    ``base + washout * (diurnal + leaks) + noise``, clamped to [0, 1000].
    Overlapping washouts multiply. Noise is keyed on (seed, species,
    millisecond of t) so the result does not depend on evaluation order.
    """
    if t_s < 0:
        raise ValueError("t_s must be >= 0")
    hour_of_day = (t_s % SECONDS_PER_DAY) / 3600.0
    excess = 0.0
    for peak in scenario.diurnal_peaks:
        if peak.species is None or peak.species is species:
            excess += peak.value(hour_of_day)
    attenuation = 1.0
    for ev in scenario.events:
        if not ev.applies_to(species):
            continue
        env = ev.envelope(t_s)
        if env == 0.0:
            continue
        if ev.kind is EventKind.LEAK:
            excess += ev.magnitude * env
        else:
            attenuation *= 1.0 - env * (1.0 - ev.magnitude)
    ppm = scenario.base_ppm.get(species, 0.0) + attenuation * excess
    ppm += _noise(scenario, species, t_s)
    return min(PPM_CEIL, max(PPM_FLOOR, ppm))


def scenario_temp_c(scenario: Scenario, t_s: float) -> float:
    """Ambient temperature: sinusoid peaking at 15:00, one decimal place."""
    hour = (t_s % SECONDS_PER_DAY) / 3600.0
    temp = scenario.temp_mean_c + scenario.temp_swing_c * math.cos(2 * math.pi * (hour - 15.0) / 24.0)
    return round(min(85.0, max(-40.0, temp)), 1)


@dataclass(frozen=True)
class SensorCurve:
    """Power-law MQ sensor behind a load resistor: ``rs = r0 * a * ppm**b``."""

    species: GasSpecies
    a_coeff: float = 1.0
    b_exp: float = -0.42
    r0_ohm: float = 10_000.0
    rl_ohm: float = 10_000.0
    vcc_v: float = 5.0
    adc_bits: int = 10
    ppm_min: float = 1.0
    ppm_max: float = 1000.0

    def __post_init__(self) -> None:
        problems = []
        if self.a_coeff <= 0:
            problems.append("a_coeff must be > 0")
        if self.b_exp >= 0:
            problems.append("b_exp must be < 0")
        if self.r0_ohm <= 0 or self.rl_ohm <= 0:
            problems.append("resistances must be > 0")
        if self.vcc_v <= 0:
            problems.append("vcc_v must be > 0")
        if not 8 <= self.adc_bits <= 16:
            problems.append("adc_bits must be in [8, 16]")
        if not 0 < self.ppm_min < self.ppm_max:
            problems.append("need 0 < ppm_min < ppm_max")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def full_scale(self) -> int:
        return (1 << self.adc_bits) - 1

    def rs_ohm(self, ppm: float) -> float:
        return self.r0_ohm * self.a_coeff * ppm**self.b_exp

    def vout(self, ppm: float) -> float:
        rs = self.rs_ohm(ppm)
        return self.vcc_v * self.rl_ohm / (rs + self.rl_ohm)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> SensorCurve:
        kwargs = dict(doc)
        kwargs["species"] = GasSpecies(str(kwargs["species"]).upper())
        return cls(**kwargs)


# MQ-5 is the LPG channel, MQ-9 the CO channel.
DEFAULT_CURVES: dict[GasSpecies, SensorCurve] = {
    GasSpecies.LPG: SensorCurve(GasSpecies.LPG, b_exp=-0.42),
    GasSpecies.CO: SensorCurve(GasSpecies.CO, b_exp=-0.48),
}


def default_curves() -> dict[GasSpecies, SensorCurve]:
    return dict(DEFAULT_CURVES)


def ppm_to_adc(curve: SensorCurve, ppm: float) -> int:
    if not curve.ppm_min <= ppm <= curve.ppm_max:
        raise OutOfRange(f"{ppm} ppm outside [{curve.ppm_min}, {curve.ppm_max}]")
    ratio = curve.rl_ohm / (curve.rs_ohm(ppm) + curve.rl_ohm)
    # half-up rounding; the divider ratio is never negative
    return int(math.floor(ratio * curve.full_scale + 0.5))


def adc_to_ppm(curve: SensorCurve, counts: int) -> float:
    """Invert the divider, then the power law. Result clamped to the sensor range."""
    if not 0 <= counts <= curve.full_scale:
        raise OutOfRange(f"counts {counts} outside [0, {curve.full_scale}]")
    ratio = counts / curve.full_scale
    if ratio <= 0.0:
        return curve.ppm_min
    if ratio >= 1.0:
        return curve.ppm_max
    rs = curve.rl_ohm * (1.0 - ratio) / ratio
    ppm = (rs / (curve.r0_ohm * curve.a_coeff)) ** (1.0 / curve.b_exp)
    return min(curve.ppm_max, max(curve.ppm_min, ppm))


def sense(curve: SensorCurve, ppm: float) -> int:
    """ADC reading for an ambient concentration; the sensor saturates outside its range."""
    return ppm_to_adc(curve, min(curve.ppm_max, max(curve.ppm_min, ppm)))
