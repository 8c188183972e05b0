"""Ingest service core: authentication, validation, dedup, alerting, queries.

Transport-free; :mod:`gasnet.http_api` puts it on HTTP and the simulator can
call it directly. Errors are raised as :class:`ServiceError` carrying the
HTTP status and the ``{"error", "detail"}`` body fields.
"""

from __future__ import annotations

import enum
import hmac
import logging
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

from gasnet.classification import HazardLevel, ThresholdTable
from gasnet.gas_model import GasSpecies
from gasnet.records import AlertRecord, StoredReading, alerts_for
from gasnet.station import PayloadError, TelemetryPayload, levels_of
from gasnet.storage import IoFailure, Store

logger = logging.getLogger(__name__)

MAX_BODY_BYTES = 4096
MAX_LIMIT = 10_000
MIN_TOKEN_CHARS = 16


class ServiceError(Exception):
    def __init__(self, status: int, code: str, detail: str = "") -> None:
        super().__init__(f"{status} {code}: {detail}")
        self.status = status
        self.code = code
        self.detail = detail

    def body(self) -> dict[str, str]:
        return {"error": self.code, "detail": self.detail}


class AuthResult(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class ApiCredential:
    token: str

    def __post_init__(self) -> None:
        if not isinstance(self.token, str) or len(self.token) < MIN_TOKEN_CHARS:
            raise ValueError(f"token must be at least {MIN_TOKEN_CHARS} characters")

    def __repr__(self) -> str:
        return "ApiCredential(token=<redacted>)"


def authenticate(auth_header: str | None, credential: ApiCredential) -> AuthResult:
    if not auth_header:
        return AuthResult.REJECTED
    scheme, _, token = auth_header.partition(" ")
    if scheme.lower() != "bearer" or not token:
        return AuthResult.REJECTED
    if hmac.compare_digest(token.encode("utf-8"), credential.token.encode("utf-8")):
        return AuthResult.ACCEPTED
    return AuthResult.REJECTED


@dataclass(frozen=True)
class HourlyBucket:
    hour_start_s: int
    lpg_ppm: float
    co_ppm: float
    count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "hour_start_s": self.hour_start_s,
            "lpg_ppm": self.lpg_ppm,
            "co_ppm": self.co_ppm,
            "count": self.count,
        }


def hourly_buckets(readings: list[StoredReading]) -> list[HourlyBucket]:
    """Arithmetic mean per aligned 3600 s bucket, empty buckets omitted."""
    sums: dict[int, list[float]] = {}
    for r in readings:
        start = r.ts - r.ts % 3600
        acc = sums.setdefault(start, [0.0, 0.0, 0])
        acc[0] += r.payload.lpg_ppm
        acc[1] += r.payload.co_ppm
        acc[2] += 1
    return [
        HourlyBucket(start, lpg / n, co / n, int(n))
        for start, (lpg, co, n) in sorted(sums.items())
    ]


class IngestService:
    """System of record for telemetry.

    All writes go through one lock, which makes storage_seq assignment,
    dedup and alert transitions linearizable. Alert levels are recomputed
    from the stored concentrations; the payload's own ``alarm`` flag is only
    cross-checked (``flag_mismatches``).
    """

    def __init__(
        self,
        store: Store,
        credential: ApiCredential,
        thresholds: ThresholdTable | None = None,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.store = store
        self.credential = credential
        self.thresholds = thresholds or ThresholdTable()
        self.clock = clock
        self.flag_mismatches = 0
        self._lock = threading.Lock()
        self._dedup: dict[tuple[str, int], int] = {}
        self._last_ts: dict[str, int] = {}
        self._levels: dict[tuple[str, GasSpecies], HazardLevel] = {}
        self._recover()

    def _recover(self) -> None:
        """Rebuild dedup/ts/level state from disk and reconcile the alert log."""
        expected: list[AlertRecord] = []
        for rec in self.store.all_readings():
            self._dedup[(rec.station_id, rec.payload.seq)] = rec.storage_seq
            self._last_ts[rec.station_id] = max(self._last_ts.get(rec.station_id, rec.ts), rec.ts)
            expected.extend(self._advance_levels(rec))
        if expected != self.store.alerts():
            if not self.store.readonly:
                logger.warning(
                    "alert log out of step with readings (%d on disk, %d expected); rewriting",
                    len(self.store.alerts()),
                    len(expected),
                )
                self.store.rewrite_alerts(expected)

    def _advance_levels(self, rec: StoredReading) -> list[AlertRecord]:
        sid = rec.station_id
        prev = {sp: self._levels.get((sid, sp), HazardLevel.NORMAL) for sp in GasSpecies}
        new = levels_of(rec.payload, self.thresholds)
        for sp in GasSpecies:
            self._levels[(sid, sp)] = new[sp]
        return alerts_for(rec, prev, new)

    # -- writes ------------------------------------------------------------

    def ingest(self, body: bytes, auth: AuthResult, received_at_s: float | None = None) -> dict[str, Any]:
        if auth is not AuthResult.ACCEPTED:
            raise ServiceError(401, "unauthorized", "missing or invalid bearer token")
        if len(body) > MAX_BODY_BYTES:
            raise ServiceError(413, "payload_too_large", f"body exceeds {MAX_BODY_BYTES} bytes")
        try:
            payload = TelemetryPayload.from_json(body)
        except PayloadError as exc:
            raise ServiceError(400, "invalid_payload", str(exc)) from None

        with self._lock:
            key = (payload.station_id, payload.seq)
            existing = self._dedup.get(key)
            if existing is not None:
                return {"storage_seq": existing, "duplicate": True, "alerts": []}
            last_ts = self._last_ts.get(payload.station_id)
            if last_ts is not None and payload.ts < last_ts:
                raise ServiceError(
                    400, "non_monotone_ts", f"ts {payload.ts} precedes last ts {last_ts} for {payload.station_id}"
                )
            if last_ts is None:
                logger.info("registering station %s", payload.station_id)
            when = self.clock() if received_at_s is None else received_at_s
            try:
                rec = self.store.append_reading(payload, when)
                self._dedup[key] = rec.storage_seq
                self._last_ts[payload.station_id] = payload.ts
                new_alerts = self._advance_levels(rec)
                for alert in new_alerts:
                    self.store.append_alert(alert)
            except IoFailure as exc:
                raise ServiceError(503, "storage_unavailable", str(exc)) from None

        server_alarm = any(
            lvl > HazardLevel.NORMAL for lvl in levels_of(payload, self.thresholds).values()
        )
        if server_alarm != payload.alarm:
            self.flag_mismatches += 1
            logger.warning(
                "alarm flag mismatch from %s seq %d: station=%s server=%s",
                payload.station_id, payload.seq, payload.alarm, server_alarm,
            )
        return {
            "storage_seq": rec.storage_seq,
            "duplicate": False,
            "alerts": [a.kind.value for a in new_alerts],
        }

    # -- reads -------------------------------------------------------------

    @staticmethod
    def _check_range(from_s: float, to_s: float) -> None:
        if from_s > to_s:
            raise ServiceError(400, "invalid_range", f"from ({from_s}) is after to ({to_s})")

    def _require_station(self, station_id: str) -> None:
        if not self.store.has_station(station_id):
            raise ServiceError(404, "unknown_station", station_id)

    def query_readings(
        self, station_id: str, from_s: float, to_s: float, limit: int = MAX_LIMIT
    ) -> list[StoredReading]:
        self._check_range(from_s, to_s)
        if not 0 <= limit <= MAX_LIMIT:
            raise ServiceError(400, "invalid_limit", f"limit must be in [0, {MAX_LIMIT}]")
        self._require_station(station_id)
        out = []
        for rec in self.store.scan(station_id, from_s, to_s):
            if len(out) >= limit:
                break
            out.append(rec)
        return out

    def hourly_aggregate(self, station_id: str, from_s: float, to_s: float) -> list[HourlyBucket]:
        self._check_range(from_s, to_s)
        self._require_station(station_id)
        return hourly_buckets(list(self.store.scan(station_id, from_s, to_s)))

    def query_alerts(self, from_s: float, to_s: float) -> list[AlertRecord]:
        self._check_range(from_s, to_s)
        selected = [a for a in self.store.alerts() if from_s <= a.t_s <= to_s]
        selected.sort(key=lambda a: a.t_s)  # stable: log order within equal t_s
        return selected

    def stations(self) -> list[dict[str, Any]]:
        out = []
        for sid in self.store.stations():
            segs = self.store.segments(sid)
            out.append(
                {
                    "station_id": sid,
                    "count": self.store.count(sid),
                    "first_ts": segs[0].first_ts,
                    "last_ts": segs[-1].last_ts,
                }
            )
        return out
