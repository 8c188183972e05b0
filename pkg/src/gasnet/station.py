"""Station firmware as a pure state machine.

Each call to :func:`step` is one pass of the firmware loop: convert the ADC
counts to ppm, classify, drive the buzzer and display, and decide whether to
transmit. The station never performs I/O; it returns :class:`StationAction`
values for the harness to carry out.

Sampling and reporting are decoupled. The loop samples every
``sample_period_s``; a report goes out on the first sample, every
``report_period_s`` afterwards, immediately when a reading first leaves the
Normal band, and every ``alarm_report_period_s`` while it stays out.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Union

from gasnet.classification import (
    HazardLevel,
    ThresholdTable,
    classify,
    classify_reading,
)
from gasnet.gas_model import (
    PPM_CEIL,
    PPM_FLOOR,
    GasSpecies,
    SensorCurve,
    adc_to_ppm,
    default_curves,
)

DISPLAY_WIDTH = 21
DISPLAY_LINES = 4
STATION_ID_RE = re.compile(r"^[A-Za-z0-9_-][A-Za-z0-9._-]{0,63}$")
TEMP_MIN_C = -40.0
TEMP_MAX_C = 85.0

PAYLOAD_KEYS = (
    "station_id",
    "ts",
    "seq",
    "lpg_ppm",
    "co_ppm",
    "temp_c",
    "lpg_level",
    "co_level",
    "alarm",
    "fw",
)


class InvalidConfig(ValueError):
    def __init__(self, problems: list[str]) -> None:
        super().__init__("; ".join(problems))
        self.problems = problems


class NotBooted(RuntimeError):
    pass


class PayloadError(ValueError):
    """Wire record that does not match the telemetry schema."""


@dataclass(frozen=True)
class StationConfig:
    station_id: str
    sample_period_s: float = 2.0
    report_period_s: float = 600.0
    alarm_report_period_s: float = 60.0
    thresholds: ThresholdTable = field(default_factory=ThresholdTable)
    curves: Mapping[GasSpecies, SensorCurve] = field(default_factory=default_curves)
    api_credential: str = ""
    include_temperature: bool = True
    firmware_version: str = "1.0.0"

    def problems(self) -> list[str]:
        out = []
        if not self.station_id or len(self.station_id) > 64:
            out.append("station_id must be 1..64 characters")
        elif not STATION_ID_RE.match(self.station_id):
            out.append("station_id may only contain letters, digits, '.', '_' and '-'")
        for name in ("sample_period_s", "report_period_s", "alarm_report_period_s"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0")
        if not out and not (
            self.sample_period_s <= self.alarm_report_period_s <= self.report_period_s
        ):
            out.append("need sample_period_s <= alarm_report_period_s <= report_period_s")
        for sp in GasSpecies:
            curve = self.curves.get(sp)
            if curve is None:
                out.append(f"missing sensor curve for {sp.value}")
            elif curve.species is not sp:
                out.append(f"curve for {sp.value} is declared as {curve.species.value}")
        return out

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> StationConfig:
        kwargs = dict(doc)
        if "thresholds" in kwargs:
            kwargs["thresholds"] = ThresholdTable.from_dict(kwargs["thresholds"])
        if "curves" in kwargs:
            curves = default_curves()
            for key, cdoc in kwargs["curves"].items():
                sp = GasSpecies(key.upper())
                curves[sp] = SensorCurve.from_dict({"species": sp.value, **cdoc})
            kwargs["curves"] = curves
        return cls(**kwargs)


@dataclass(frozen=True)
class GasReading:
    station_id: str
    t_s: float
    lpg_ppm: float
    co_ppm: float
    temp_c: float | None = None


@dataclass(frozen=True)
class TelemetryPayload:
    station_id: str
    ts: int
    seq: int
    lpg_ppm: float
    co_ppm: float
    temp_c: float | None
    lpg_level: str
    co_level: str
    alarm: bool
    fw: str

    def to_json(self) -> str:
        """Canonical wire form: fixed key order, compact separators, one-decimal ppm."""
        temp = "null" if self.temp_c is None else _fmt1(self.temp_c)
        return (
            f'{{"station_id":{json.dumps(self.station_id)},"ts":{self.ts},"seq":{self.seq},'
            f'"lpg_ppm":{_fmt1(self.lpg_ppm)},"co_ppm":{_fmt1(self.co_ppm)},"temp_c":{temp},'
            f'"lpg_level":{json.dumps(self.lpg_level)},"co_level":{json.dumps(self.co_level)},'
            f'"alarm":{"true" if self.alarm else "false"},"fw":{json.dumps(self.fw)}}}'
        )

    def to_bytes(self) -> bytes:
        return self.to_json().encode("utf-8")

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in PAYLOAD_KEYS}

    @classmethod
    def from_dict(cls, doc: Any) -> TelemetryPayload:
        """Validate a decoded JSON object. ppm and temperature are rounded to one decimal."""
        if not isinstance(doc, dict):
            raise PayloadError("payload must be a JSON object")
        missing = [k for k in PAYLOAD_KEYS if k not in doc]
        if missing:
            raise PayloadError(f"missing keys: {', '.join(missing)}")
        extra = sorted(set(doc) - set(PAYLOAD_KEYS))
        if extra:
            raise PayloadError(f"unexpected keys: {', '.join(extra)}")

        sid = doc["station_id"]
        if not isinstance(sid, str) or not STATION_ID_RE.match(sid):
            raise PayloadError("station_id must be 1..64 chars of [A-Za-z0-9._-]")
        for key in ("ts", "seq"):
            if not _is_int(doc[key]) or doc[key] < 0:
                raise PayloadError(f"{key} must be a non-negative integer")
        ppm = {}
        for key in ("lpg_ppm", "co_ppm"):
            value = doc[key]
            if not _is_number(value) or not PPM_FLOOR <= value <= PPM_CEIL:
                raise PayloadError(f"{key} must be a number in [0, 1000]")
            ppm[key] = _round1(value)
        temp = doc["temp_c"]
        if temp is not None:
            if not _is_number(temp) or not TEMP_MIN_C <= temp <= TEMP_MAX_C:
                raise PayloadError("temp_c must be null or a number in [-40, 85]")
            temp = _round1(temp)
        for key, sp in (("lpg_level", GasSpecies.LPG), ("co_level", GasSpecies.CO)):
            try:
                HazardLevel.from_display_name(sp, doc[key])
            except (ValueError, TypeError):
                raise PayloadError(f"{key} is not a valid {sp.value} level") from None
        if not isinstance(doc["alarm"], bool):
            raise PayloadError("alarm must be a boolean")
        if not isinstance(doc["fw"], str) or len(doc["fw"]) > 32:
            raise PayloadError("fw must be a string of at most 32 chars")
        return cls(
            station_id=sid,
            ts=doc["ts"],
            seq=doc["seq"],
            lpg_ppm=ppm["lpg_ppm"],
            co_ppm=ppm["co_ppm"],
            temp_c=temp,
            lpg_level=doc["lpg_level"],
            co_level=doc["co_level"],
            alarm=doc["alarm"],
            fw=doc["fw"],
        )

    @classmethod
    def from_json(cls, data: str | bytes) -> TelemetryPayload:
        try:
            doc = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise PayloadError(f"malformed JSON: {exc}") from None
        return cls.from_dict(doc)


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v: Any) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _round1(x: float) -> float:
    return round(float(x), 1) + 0.0  # + 0.0 folds -0.0


def _fmt1(x: float) -> str:
    return f"{_round1(x):.1f}"


@dataclass(frozen=True)
class BuzzerOn:
    pass


@dataclass(frozen=True)
class BuzzerOff:
    pass


@dataclass(frozen=True)
class Display:
    lines: tuple[str, ...]


@dataclass(frozen=True)
class Send:
    payload: TelemetryPayload


StationAction = Union[BuzzerOn, BuzzerOff, Display, Send]


@dataclass(frozen=True)
class StationState:
    config: StationConfig
    last_report_s: float | None = None
    last_levels: Mapping[GasSpecies, HazardLevel] = field(
        default_factory=lambda: {sp: HazardLevel.NORMAL for sp in GasSpecies}
    )
    buzzer_on: bool = False
    display_lines: tuple[str, ...] = ()
    seq: int = 0
    booted: bool = False
    last_step_s: float | None = None


def boot(config: StationConfig) -> StationState:
    problems = config.problems()
    if problems:
        raise InvalidConfig(problems)
    banner = (f"GASNET {config.station_id}"[:DISPLAY_WIDTH], f"FW {config.firmware_version}"[:DISPLAY_WIDTH], "SENSORS WARMING", "")
    return StationState(config=config, display_lines=banner, booted=True)


def should_report(state: StationState, now_s: float, currently_above: bool) -> bool:
    if not state.booted:
        raise NotBooted("station has not been booted")
    if state.last_report_s is None:
        return True
    cfg = state.config
    elapsed = now_s - state.last_report_s
    if elapsed >= cfg.report_period_s:
        return True
    if currently_above and not state.buzzer_on:
        return True
    return currently_above and elapsed >= cfg.alarm_report_period_s


def format_payload(
    state: StationState,
    reading: GasReading,
    levels: Mapping[GasSpecies, HazardLevel],
) -> TelemetryPayload:
    return TelemetryPayload(
        station_id=reading.station_id,
        ts=int(math.floor(reading.t_s)),
        seq=state.seq,
        lpg_ppm=_round1(reading.lpg_ppm),
        co_ppm=_round1(reading.co_ppm),
        temp_c=None if reading.temp_c is None else _round1(reading.temp_c),
        lpg_level=levels[GasSpecies.LPG].display_name(GasSpecies.LPG),
        co_level=levels[GasSpecies.CO].display_name(GasSpecies.CO),
        alarm=any(level > HazardLevel.NORMAL for level in levels.values()),
        fw=state.config.firmware_version,
    )


def render_display(reading: GasReading, levels: Mapping[GasSpecies, HazardLevel]) -> list[str]:
    """Four lines for a 128 px OLED with a 6 px font (21 columns)."""
    lpg = levels[GasSpecies.LPG]
    co = levels[GasSpecies.CO]
    alarm = lpg > HazardLevel.NORMAL or co > HazardLevel.NORMAL
    temp = "TEMP --" if reading.temp_c is None else f"TEMP {_fmt1(reading.temp_c)}C"
    lines = [
        f"LPG {_fmt1(reading.lpg_ppm)} {lpg.display_name(GasSpecies.LPG)}",
        f"CO {_fmt1(reading.co_ppm)} {co.display_name(GasSpecies.CO)}",
        temp,
        "STATUS ALARM" if alarm else "STATUS OK",
    ]
    return [line[:DISPLAY_WIDTH] for line in lines]


def step(
    state: StationState,
    now_s: float,
    adc_lpg: int,
    adc_co: int,
    temp_c: float | None,
) -> tuple[StationState, list[StationAction]]:
    """One firmware loop iteration.

    ppm values are rounded to one decimal before classification so that the
    buzzer, display and transmitted payload all agree with what the service
    will recompute from the wire record.
    """
    if not state.booted:
        raise NotBooted("station has not been booted")
    if state.last_step_s is not None and now_s <= state.last_step_s:
        raise ValueError(f"clock must advance: {now_s} <= {state.last_step_s}")
    cfg = state.config
    reading = GasReading(
        station_id=cfg.station_id,
        t_s=now_s,
        lpg_ppm=_round1(adc_to_ppm(cfg.curves[GasSpecies.LPG], adc_lpg)),
        co_ppm=_round1(adc_to_ppm(cfg.curves[GasSpecies.CO], adc_co)),
        temp_c=temp_c if cfg.include_temperature else None,
    )
    levels = classify_reading(cfg.thresholds, reading)
    above = any(level > HazardLevel.NORMAL for level in levels.values())

    actions: list[StationAction] = []
    if above and not state.buzzer_on:
        actions.append(BuzzerOn())
    elif not above and state.buzzer_on:
        actions.append(BuzzerOff())
    lines = tuple(render_display(reading, levels))
    actions.append(Display(lines))

    seq = state.seq
    last_report = state.last_report_s
    if should_report(state, now_s, above):
        actions.append(Send(format_payload(state, reading, levels)))
        seq += 1
        last_report = now_s

    new_state = replace(
        state,
        last_report_s=last_report,
        last_levels=levels,
        buzzer_on=above,
        display_lines=lines,
        seq=seq,
        last_step_s=now_s,
    )
    return new_state, actions


def levels_of(payload: TelemetryPayload, table: ThresholdTable) -> dict[GasSpecies, HazardLevel]:
    """Levels recomputed from a payload's concentrations (ignores its level strings)."""
    return {
        GasSpecies.LPG: classify(table, GasSpecies.LPG, payload.lpg_ppm),
        GasSpecies.CO: classify(table, GasSpecies.CO, payload.co_ppm),
    }
