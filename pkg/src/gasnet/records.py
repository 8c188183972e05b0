"""Server-side record types and the per-species alert transition rule."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Any, Mapping

from gasnet.classification import HazardLevel
from gasnet.gas_model import GasSpecies
from gasnet.station import PAYLOAD_KEYS, TelemetryPayload


class AlertKind(str, enum.Enum):
    ONSET = "Onset"
    ONGOING = "Ongoing"
    CLEARED = "Cleared"


@dataclass(frozen=True)
class StoredReading:
    payload: TelemetryPayload
    received_at_s: float
    storage_seq: int

    @property
    def station_id(self) -> str:
        return self.payload.station_id

    @property
    def ts(self) -> int:
        return self.payload.ts

    def to_line(self) -> str:
        """Canonical payload JSON with the server fields appended, no newline."""
        wire = self.payload.to_json()
        return f'{wire[:-1]},"received_at_s":{json.dumps(float(self.received_at_s))},"storage_seq":{self.storage_seq}}}'

    def to_dict(self) -> dict[str, Any]:
        doc = self.payload.to_dict()
        doc["received_at_s"] = float(self.received_at_s)
        doc["storage_seq"] = self.storage_seq
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> StoredReading:
        payload = TelemetryPayload.from_dict({k: doc[k] for k in PAYLOAD_KEYS})
        return cls(payload, float(doc["received_at_s"]), int(doc["storage_seq"]))


@dataclass(frozen=True)
class AlertRecord:
    """A species entering, staying in, or leaving a non-Normal band.

    ``level`` is always above Normal: for Cleared it is the level being left.
    ``reading_seq`` is the storage_seq of the reading that produced the alert.
    """

    station_id: str
    t_s: int
    species: GasSpecies
    ppm: float
    level: HazardLevel
    kind: AlertKind
    reading_seq: int
    received_at_s: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "station_id": self.station_id,
            "t_s": self.t_s,
            "species": self.species.value,
            "ppm": self.ppm,
            "level": self.level.display_name(self.species),
            "kind": self.kind.value,
            "reading_seq": self.reading_seq,
            "received_at_s": float(self.received_at_s),
        }

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> AlertRecord:
        species = GasSpecies(doc["species"])
        return cls(
            station_id=doc["station_id"],
            t_s=int(doc["t_s"]),
            species=species,
            ppm=float(doc["ppm"]),
            level=HazardLevel.from_display_name(species, doc["level"]),
            kind=AlertKind(doc["kind"]),
            reading_seq=int(doc["reading_seq"]),
            received_at_s=float(doc["received_at_s"]),
        )


def transition(prev: HazardLevel, new: HazardLevel) -> AlertKind | None:
    if new > HazardLevel.NORMAL:
        return AlertKind.ONSET if prev == HazardLevel.NORMAL else AlertKind.ONGOING
    if prev > HazardLevel.NORMAL:
        return AlertKind.CLEARED
    return None


def alerts_for(
    reading: StoredReading,
    prev: Mapping[GasSpecies, HazardLevel],
    new: Mapping[GasSpecies, HazardLevel],
) -> list[AlertRecord]:
    out = []
    p = reading.payload
    for sp in GasSpecies:
        kind = transition(prev[sp], new[sp])
        if kind is None:
            continue
        out.append(
            AlertRecord(
                station_id=p.station_id,
                t_s=p.ts,
                species=sp,
                ppm=p.lpg_ppm if sp is GasSpecies.LPG else p.co_ppm,
                level=prev[sp] if kind is AlertKind.CLEARED else new[sp],
                kind=kind,
                reading_seq=reading.storage_seq,
                received_at_s=reading.received_at_s,
            )
        )
    return out
