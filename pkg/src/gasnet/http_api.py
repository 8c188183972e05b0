"""HTTP/1.1 front end for :class:`IngestService` and a small client for it.

Endpoints::

    POST /v1/telemetry                         bearer token required
    GET  /v1/stations
    GET  /v1/stations/{id}/readings?from=&to=&limit=
    GET  /v1/stations/{id}/hourly?from=&to=
    GET  /v1/alerts?from=&to=
    GET  /healthz

When the server is started with ``virtual_clock=True`` an authenticated
client may set ``X-Gasnet-Clock: <seconds>`` to stamp ``received_at_s``; the
simulator uses this so stores written over HTTP match in-process runs.
"""

from __future__ import annotations

import http.client
import json
import logging
import threading
import urllib.error
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from gasnet.service import (
    MAX_BODY_BYTES,
    MAX_LIMIT,
    AuthResult,
    IngestService,
    ServiceError,
    authenticate,
)

logger = logging.getLogger(__name__)

CLOCK_HEADER = "X-Gasnet-Clock"
RANGE_MIN = 0
RANGE_MAX = 2**63 - 1


def _json_bytes(doc: Any) -> bytes:
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def _number(params: dict[str, list[str]], name: str, default: float) -> float:
    values = params.get(name)
    if not values or values[-1] == "":
        return default
    raw = values[-1]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ServiceError(400, "invalid_parameter", f"{name}={raw!r} is not a number") from None


class _Handler(BaseHTTPRequestHandler):
    server: GasnetHTTPServer
    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args: Any) -> None:  # noqa: A002
        logger.debug("%s %s", self.address_string(), format % args)

    def _send(self, status: int, doc: Any) -> None:
        body = _json_bytes(doc)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _fail(self, err: ServiceError) -> None:
        self._send(err.status, err.body())

    def do_POST(self) -> None:  # noqa: N802
        service = self.server.service
        path = urllib.parse.urlsplit(self.path).path
        try:
            if path != "/v1/telemetry":
                raise ServiceError(404, "not_found", path)
            auth = authenticate(self.headers.get("Authorization"), service.credential)
            length = int(self.headers.get("Content-Length") or 0)
            if auth is not AuthResult.ACCEPTED:
                self.close_connection = True
                raise ServiceError(401, "unauthorized", "missing or invalid bearer token")
            if length > MAX_BODY_BYTES:
                self.close_connection = True
                raise ServiceError(413, "payload_too_large", f"body exceeds {MAX_BODY_BYTES} bytes")
            body = self.rfile.read(length)
            received_at = None
            clock = self.headers.get(CLOCK_HEADER)
            if clock is not None and self.server.virtual_clock:
                try:
                    received_at = float(clock)
                except ValueError:
                    raise ServiceError(400, "invalid_clock", clock) from None
            result = service.ingest(body, auth, received_at_s=received_at)
        except ServiceError as err:
            self._fail(err)
            return
        except ValueError:
            self.close_connection = True
            self._fail(ServiceError(400, "bad_request", "invalid Content-Length"))
            return
        self._send(200, result)

    def do_GET(self) -> None:  # noqa: N802
        service = self.server.service
        url = urllib.parse.urlsplit(self.path)
        params = urllib.parse.parse_qs(url.query)
        parts = [urllib.parse.unquote(p) for p in url.path.split("/") if p]
        try:
            if parts == ["healthz"]:
                self._send(200, {"status": "ok"})
            elif parts == ["v1", "stations"]:
                self._send(200, {"stations": service.stations()})
            elif parts == ["v1", "alerts"]:
                alerts = service.query_alerts(
                    _number(params, "from", RANGE_MIN), _number(params, "to", RANGE_MAX)
                )
                self._send(200, {"alerts": [a.to_dict() for a in alerts]})
            elif len(parts) == 4 and parts[:2] == ["v1", "stations"] and parts[3] == "readings":
                limit = _number(params, "limit", MAX_LIMIT)
                if not isinstance(limit, int):
                    raise ServiceError(400, "invalid_parameter", "limit must be an integer")
                readings = service.query_readings(
                    parts[2],
                    _number(params, "from", RANGE_MIN),
                    _number(params, "to", RANGE_MAX),
                    limit,
                )
                self._send(200, {"station_id": parts[2], "readings": [r.to_dict() for r in readings]})
            elif len(parts) == 4 and parts[:2] == ["v1", "stations"] and parts[3] == "hourly":
                buckets = service.hourly_aggregate(
                    parts[2], _number(params, "from", RANGE_MIN), _number(params, "to", RANGE_MAX)
                )
                self._send(200, {"station_id": parts[2], "buckets": [b.to_dict() for b in buckets]})
            else:
                raise ServiceError(404, "not_found", url.path)
        except ServiceError as err:
            self._fail(err)


class GasnetHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], service: IngestService, *, virtual_clock: bool = False) -> None:
        self.service = service
        self.virtual_clock = virtual_clock
        super().__init__(address, _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


def start_in_thread(server: GasnetHTTPServer) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, name="gasnet-http", daemon=True)
    thread.start()
    return thread


class ServiceUnreachable(ConnectionError):
    pass


class ServiceClient:
    """Minimal JSON client over urllib. Non-2xx responses come back as (status, body)."""

    def __init__(self, base_url: str, token: str | None = None, timeout: float = 10.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout

    def _request(self, req: urllib.request.Request) -> tuple[int, Any]:
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, json.loads(resp.read() or b"null")
        except urllib.error.HTTPError as exc:
            try:
                raw = exc.read()
            except (http.client.HTTPException, OSError) as read_exc:
                raise ServiceUnreachable(f"{self.base_url}: {read_exc}") from read_exc
            try:
                return exc.code, json.loads(raw)
            except ValueError:
                return exc.code, {"error": "http_error", "detail": raw.decode("utf-8", "replace")}
        except (urllib.error.URLError, http.client.HTTPException, OSError) as exc:
            # includes a peer dying mid-response (IncompleteRead, reset)
            raise ServiceUnreachable(f"{self.base_url}: {exc}") from exc

    def post_telemetry(self, body: bytes, *, clock_s: float | None = None) -> tuple[int, Any]:
        headers = {"Content-Type": "application/json"}
        if self.token is not None:
            headers["Authorization"] = f"Bearer {self.token}"
        if clock_s is not None:
            headers[CLOCK_HEADER] = repr(float(clock_s))
        req = urllib.request.Request(self.base_url + "/v1/telemetry", data=body, headers=headers, method="POST")
        return self._request(req)

    def get(self, path: str, **params: Any) -> tuple[int, Any]:
        query = urllib.parse.urlencode({k: v for k, v in params.items() if v is not None})
        url = self.base_url + path + (f"?{query}" if query else "")
        return self._request(urllib.request.Request(url, method="GET"))
