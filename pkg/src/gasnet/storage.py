"""Append-only newline-delimited JSON store.

Layout under the data directory::

    <data>/<station_id>/readings-<n>.ndjson   # n = 0, 1, ...; 10 000 records each
    <data>/alerts.ndjson

Every reading line is the canonical telemetry JSON followed by
``received_at_s`` and ``storage_seq``. ``storage_seq`` is global across
stations and starts at 1. On open, a trailing line that is unterminated or
not valid JSON is treated as a torn write and cut off; damage anywhere else
raises :class:`StorageCorrupt`.
"""

from __future__ import annotations

import bisect
import json
import logging
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator

from gasnet.records import AlertRecord, StoredReading
from gasnet.station import PayloadError, TelemetryPayload

logger = logging.getLogger(__name__)

SEGMENT_RECORDS = 10_000
ALERTS_FILE = "alerts.ndjson"
_SEGMENT_RE = re.compile(r"^readings-(\d+)\.ndjson$")


class StorageError(Exception):
    pass


class IoFailure(StorageError):
    pass


class StorageCorrupt(StorageError):
    pass


class UnknownStation(KeyError):
    pass


@dataclass
class Segment:
    station_id: str
    path: Path
    first_ts: int | None = None
    last_ts: int | None = None
    count: int = 0


def _read_lines(path: Path, *, repair: bool) -> list[dict]:
    """Parse an ndjson file, dropping (and optionally truncating) one torn tail line."""
    data = path.read_bytes()
    if not data:
        return []
    lines = data.split(b"\n")
    # split leaves "" after a final newline; anything else there is unterminated
    tail = lines.pop()
    docs = []
    good_end = 0
    offset = 0
    for i, raw in enumerate(lines):
        offset += len(raw) + 1
        try:
            doc = json.loads(raw)
            if not isinstance(doc, dict):
                raise ValueError("not an object")
        except ValueError:
            if i == len(lines) - 1 and not tail:
                logger.warning("dropping torn line at end of %s", path)
                break
            raise StorageCorrupt(f"{path}: bad record on line {i + 1}") from None
        docs.append(doc)
        good_end = offset
    else:
        if tail:
            logger.warning("dropping unterminated tail of %s (%d bytes)", path, len(tail))
    if good_end != len(data) and repair:
        with path.open("r+b") as fh:
            fh.truncate(good_end)
    return docs


class Store:
    """Readings and alerts on disk, mirrored in memory for range scans.

    Appends are serialised by one lock. Scans read a length-bounded snapshot
    of the in-memory lists, so they never wait on a writer.
    """

    def __init__(
        self,
        data_dir: str | os.PathLike,
        *,
        segment_records: int = SEGMENT_RECORDS,
        fsync: bool = False,
        readonly: bool = False,
    ) -> None:
        self.data_dir = Path(data_dir)
        self.segment_records = segment_records
        self.fsync = fsync
        self.readonly = readonly
        self._lock = threading.Lock()
        self._readings: dict[str, list[StoredReading]] = {}
        self._ts_index: dict[str, list[int]] = {}
        self._segments: dict[str, list[Segment]] = {}
        self._handles: dict[str, IO[str]] = {}
        self._alerts: list[AlertRecord] = []
        self._alerts_fh: IO[str] | None = None
        self._last_seq = 0
        if not readonly:
            self.data_dir.mkdir(parents=True, exist_ok=True)
        self._load()

    # -- loading -----------------------------------------------------------

    def _load(self) -> None:
        if not self.data_dir.is_dir():
            if self.readonly:
                raise StorageError(f"no data directory at {self.data_dir}")
            return
        repair = not self.readonly
        for station_dir in sorted(p for p in self.data_dir.iterdir() if p.is_dir()):
            seg_paths = []
            for p in station_dir.iterdir():
                m = _SEGMENT_RE.match(p.name)
                if m:
                    seg_paths.append((int(m.group(1)), p))
            if not seg_paths:
                continue
            seg_paths.sort()
            sid = station_dir.name
            records: list[StoredReading] = []
            segments: list[Segment] = []
            for n, (_, path) in enumerate(seg_paths):
                is_last = n == len(seg_paths) - 1
                docs = _read_lines(path, repair=repair and is_last)
                seg = Segment(sid, path)
                for doc in docs:
                    try:
                        rec = StoredReading.from_dict(doc)
                    except (KeyError, PayloadError, TypeError, ValueError) as exc:
                        raise StorageCorrupt(f"{path}: {exc}") from None
                    if rec.station_id != sid:
                        raise StorageCorrupt(f"{path}: record for {rec.station_id}")
                    self._note(seg, rec)
                    records.append(rec)
                    self._last_seq = max(self._last_seq, rec.storage_seq)
                segments.append(seg)
            self._readings[sid] = records
            self._ts_index[sid] = [r.ts for r in records]
            self._segments[sid] = segments
        alerts_path = self.data_dir / ALERTS_FILE
        if alerts_path.exists():
            for doc in _read_lines(alerts_path, repair=repair):
                try:
                    self._alerts.append(AlertRecord.from_dict(doc))
                except (KeyError, TypeError, ValueError) as exc:
                    raise StorageCorrupt(f"{alerts_path}: {exc}") from None

    @staticmethod
    def _note(seg: Segment, rec: StoredReading) -> None:
        if seg.first_ts is None:
            seg.first_ts = rec.ts
        seg.last_ts = rec.ts
        seg.count += 1

    # -- writing -----------------------------------------------------------

    def _write(self, fh: IO[str], line: str) -> None:
        try:
            fh.write(line + "\n")
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def _segment_handle(self, station_id: str) -> tuple[Segment, IO[str]]:
        segments = self._segments.setdefault(station_id, [])
        if not segments or segments[-1].count >= self.segment_records:
            index = len(segments)
            station_dir = self.data_dir / station_id
            station_dir.mkdir(parents=True, exist_ok=True)
            segments.append(Segment(station_id, station_dir / f"readings-{index}.ndjson"))
            old = self._handles.pop(station_id, None)
            if old is not None:
                old.close()
        seg = segments[-1]
        fh = self._handles.get(station_id)
        if fh is None:
            try:
                fh = seg.path.open("a", encoding="utf-8", newline="\n")
            except OSError as exc:
                raise IoFailure(str(exc)) from exc
            self._handles[station_id] = fh
        return seg, fh

    def append_reading(self, payload: TelemetryPayload, received_at_s: float) -> StoredReading:
        """Assign the next storage_seq and persist; returns once the line is flushed."""
        if self.readonly:
            raise StorageError("store opened read-only")
        with self._lock:
            rec = StoredReading(payload, float(received_at_s), self._last_seq + 1)
            seg, fh = self._segment_handle(payload.station_id)
            self._write(fh, rec.to_line())
            self._last_seq = rec.storage_seq
            self._note(seg, rec)
            sid = rec.station_id
            if sid not in self._readings:
                # index list must exist before readers can see the station
                self._ts_index[sid] = []
                self._readings[sid] = []
            self._readings[sid].append(rec)
            self._ts_index[sid].append(rec.ts)
            return rec

    def append_alert(self, alert: AlertRecord) -> int:
        """Persist an alert; returns its 1-based position in the alert log."""
        if self.readonly:
            raise StorageError("store opened read-only")
        with self._lock:
            if self._alerts_fh is None:
                self._alerts_fh = (self.data_dir / ALERTS_FILE).open("a", encoding="utf-8", newline="\n")
            self._write(self._alerts_fh, alert.to_line())
            self._alerts.append(alert)
            return len(self._alerts)

    def append(self, record: StoredReading | AlertRecord) -> int:
        if isinstance(record, AlertRecord):
            return self.append_alert(record)
        return self.append_reading(record.payload, record.received_at_s).storage_seq

    def rewrite_alerts(self, alerts: list[AlertRecord]) -> None:
        """Atomically replace the alert log (used when recovery finds it out of step)."""
        with self._lock:
            if self._alerts_fh is not None:
                self._alerts_fh.close()
                self._alerts_fh = None
            path = self.data_dir / ALERTS_FILE
            tmp = path.with_suffix(".tmp")
            with tmp.open("w", encoding="utf-8", newline="\n") as fh:
                for a in alerts:
                    fh.write(a.to_line() + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
            self._alerts = list(alerts)

    def close(self) -> None:
        with self._lock:
            for fh in self._handles.values():
                fh.close()
            self._handles.clear()
            if self._alerts_fh is not None:
                self._alerts_fh.close()
                self._alerts_fh = None

    def __enter__(self) -> Store:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    # -- reading -----------------------------------------------------------

    @property
    def last_seq(self) -> int:
        return self._last_seq

    def stations(self) -> list[str]:
        return sorted(self._readings)

    def has_station(self, station_id: str) -> bool:
        return station_id in self._readings

    def count(self, station_id: str | None = None) -> int:
        if station_id is None:
            return sum(len(v) for v in list(self._readings.values()))
        return len(self._readings.get(station_id, ()))

    def segments(self, station_id: str) -> list[Segment]:
        if station_id not in self._segments:
            raise UnknownStation(station_id)
        return list(self._segments[station_id])

    def scan(self, station_id: str, from_s: float, to_s: float) -> Iterator[StoredReading]:
        """Readings with ``from_s <= ts <= to_s`` in ascending ts."""
        records = self._readings.get(station_id)
        if records is None:
            raise UnknownStation(station_id)
        if from_s > to_s:
            raise ValueError("from_s > to_s")
        ts = self._ts_index[station_id]
        n = len(ts)  # snapshot bound; later appends are not seen
        lo = bisect.bisect_left(ts, from_s, 0, n)
        hi = bisect.bisect_right(ts, to_s, 0, n)
        for i in range(lo, hi):
            yield records[i]

    def all_readings(self) -> list[StoredReading]:
        """Every reading in storage_seq order."""
        out = [r for recs in list(self._readings.values()) for r in recs[:]]
        out.sort(key=lambda r: r.storage_seq)
        return out

    def alerts(self) -> list[AlertRecord]:
        return self._alerts[: len(self._alerts)]
