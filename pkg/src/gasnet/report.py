"""History tables and exports, from a data directory or a running service.

Both sources return the same plain dicts (the service's JSON shapes), so the
renderers below produce identical bytes whichever one is used.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, Protocol

from gasnet.http_api import RANGE_MAX, RANGE_MIN, ServiceClient, ServiceUnreachable
from gasnet.service import MAX_LIMIT, hourly_buckets
from gasnet.storage import Store, StorageError, UnknownStation

READING_COLUMNS = ("ts", "lpg_ppm", "lpg_level", "co_ppm", "co_level", "alarm")
HOURLY_COLUMNS = ("hour_start_s", "hour", "lpg_ppm_mean", "co_ppm_mean", "count")


class SourceUnreachable(Exception):
    pass


class Source(Protocol):
    def readings(self, station_id: str, from_s: float, to_s: float, limit: int) -> list[dict[str, Any]]: ...

    def hourly(self, station_id: str, from_s: float, to_s: float) -> list[dict[str, Any]]: ...


class LocalSource:
    """Reads a data directory without modifying it (a torn tail is ignored, not cut)."""

    def __init__(self, data_dir: str) -> None:
        try:
            self.store = Store(data_dir, readonly=True)
        except StorageError as exc:
            raise SourceUnreachable(str(exc)) from exc

    def readings(self, station_id: str, from_s: float, to_s: float, limit: int) -> list[dict[str, Any]]:
        out = []
        for rec in self.store.scan(station_id, from_s, to_s):
            if len(out) >= limit:
                break
            out.append(rec.to_dict())
        return out

    def hourly(self, station_id: str, from_s: float, to_s: float) -> list[dict[str, Any]]:
        return [b.to_dict() for b in hourly_buckets(list(self.store.scan(station_id, from_s, to_s)))]


class RemoteSource:
    def __init__(self, url: str, timeout: float = 10.0) -> None:
        self.client = ServiceClient(url, timeout=timeout)

    def _get(self, path: str, key: str, **params: Any) -> list[dict[str, Any]]:
        try:
            status, doc = self.client.get(path, **params)
        except ServiceUnreachable as exc:
            raise SourceUnreachable(str(exc)) from exc
        if status == 404 and isinstance(doc, dict) and doc.get("error") == "unknown_station":
            raise UnknownStation(doc.get("detail", ""))
        if status != 200:
            raise SourceUnreachable(f"{path}: HTTP {status} {doc}")
        return doc[key]

    def readings(self, station_id: str, from_s: float, to_s: float, limit: int) -> list[dict[str, Any]]:
        return self._get(f"/v1/stations/{station_id}/readings", "readings", **{"from": from_s, "to": to_s, "limit": limit})

    def hourly(self, station_id: str, from_s: float, to_s: float) -> list[dict[str, Any]]:
        return self._get(f"/v1/stations/{station_id}/hourly", "buckets", **{"from": from_s, "to": to_s})


def open_source(spec: str) -> Source:
    if spec.startswith(("http://", "https://")):
        return RemoteSource(spec)
    return LocalSource(spec)


@dataclass
class ReportTable:
    headers: tuple[str, ...]
    rows: list[tuple[str, ...]] = field(default_factory=list)
    footer: list[str] = field(default_factory=list)
    records: list[dict[str, Any]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for row in self.rows:
            if len(row) != len(self.headers):
                raise ValueError(f"row has {len(row)} cells, expected {len(self.headers)}")

    def render_text(self) -> str:
        widths = [len(h) for h in self.headers]
        for row in self.rows:
            widths = [max(w, len(c)) for w, c in zip(widths, row)]
        numeric = [all(_looks_numeric(r[i]) for r in self.rows) and bool(self.rows) for i in range(len(widths))]

        def fmt(cells: tuple[str, ...]) -> str:
            return "  ".join(c.rjust(w) if num else c.ljust(w) for c, w, num in zip(cells, widths, numeric)).rstrip()

        lines = [fmt(self.headers), "  ".join("-" * w for w in widths)]
        lines.extend(fmt(r) for r in self.rows)
        if self.footer:
            lines.append("")
            lines.extend(self.footer)
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)  # RFC 4180: CRLF line ends, minimal quoting
        writer.writerow(self.headers)
        writer.writerows(self.rows)
        return buf.getvalue()

    def render_json(self) -> str:
        return json.dumps(self.records, indent=2) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "table":
            return self.render_text()
        if fmt == "csv":
            return self.render_csv()
        if fmt == "json":
            return self.render_json()
        raise ValueError(f"unknown format {fmt!r}")


def _looks_numeric(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def readings_table(readings: list[dict[str, Any]], *, csv_style: bool = False) -> ReportTable:
    rows = []
    records = []
    for r in readings:
        rows.append(
            (
                str(r["ts"]),
                f"{r['lpg_ppm']:.1f}",
                r["lpg_level"],
                f"{r['co_ppm']:.1f}",
                r["co_level"],
                ("true" if r["alarm"] else "false") if csv_style else ("ALARM" if r["alarm"] else "-"),
            )
        )
        records.append({k: r[k] for k in READING_COLUMNS})
    footer = []
    if readings:
        footer.append(
            f"rows: {len(readings)}  alarms: {sum(1 for r in readings if r['alarm'])}  "
            f"max lpg: {max(r['lpg_ppm'] for r in readings):.1f}  max co: {max(r['co_ppm'] for r in readings):.1f}"
        )
    else:
        footer.append("rows: 0")
    return ReportTable(READING_COLUMNS, rows, footer, records)


def hourly_table(buckets: list[dict[str, Any]]) -> ReportTable:
    rows = []
    records = []
    for b in buckets:
        hour = (b["hour_start_s"] // 3600) % 24
        rows.append((str(b["hour_start_s"]), f"{hour:02d}", f"{b['lpg_ppm']:.2f}", f"{b['co_ppm']:.2f}", str(b["count"])))
        records.append(
            {
                "hour_start_s": b["hour_start_s"],
                "hour": hour,
                "lpg_ppm_mean": b["lpg_ppm"],
                "co_ppm_mean": b["co_ppm"],
                "count": b["count"],
            }
        )
    footer = [f"buckets: {len(buckets)}  readings: {sum(b['count'] for b in buckets)}"]
    if buckets:
        peak_lpg = max(buckets, key=lambda b: b["lpg_ppm"])
        peak_co = max(buckets, key=lambda b: b["co_ppm"])
        footer.append(
            f"peak lpg hour: {(peak_lpg['hour_start_s'] // 3600) % 24:02d}  "
            f"peak co hour: {(peak_co['hour_start_s'] // 3600) % 24:02d}"
        )
    return ReportTable(HOURLY_COLUMNS, rows, footer, records)


def build_report(
    source: Source,
    station_id: str,
    *,
    from_s: float = RANGE_MIN,
    to_s: float = RANGE_MAX,
    fmt: str = "table",
    hourly: bool = False,
    limit: int = MAX_LIMIT,
) -> str:
    if from_s > to_s:
        raise ValueError("--from is after --to")
    if hourly:
        table = hourly_table(source.hourly(station_id, from_s, to_s))
    else:
        table = readings_table(source.readings(station_id, from_s, to_s, limit), csv_style=fmt == "csv")
    return table.render(fmt)
