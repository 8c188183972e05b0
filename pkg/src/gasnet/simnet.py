"""Deterministic discrete-time runner: scenario -> sensors -> station -> link -> service.

Time is virtual. Each station samples on its own grid starting at a stagger
offset derived from its id; every Send goes through the lossy link model and
delivered payloads are handed to the real ingest path, either in-process or
over HTTP. All randomness comes from seeded SplitMix64 streams, so the same
config always yields the same report and the same store.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
import logging
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, NamedTuple, Union

from gasnet.classification import ThresholdTable
from gasnet.gas_model import GasSpecies, Scenario, scenario_ppm, scenario_temp_c, sense
from gasnet.http_api import ServiceClient, ServiceUnreachable
from gasnet.prng import SplitMix64, hash64
from gasnet.records import AlertKind, AlertRecord
from gasnet.service import ApiCredential, IngestService, ServiceError, authenticate
from gasnet.station import Send, StationAction, StationConfig, boot, step
from gasnet.storage import Store

logger = logging.getLogger(__name__)


class ContractViolation(RuntimeError):
    """The service rejected something the harness considers valid, or an invariant broke."""


class Mode(str, enum.Enum):
    IN_PROCESS = "in_process"
    OVER_HTTP = "over_http"


@dataclass(frozen=True)
class LinkModel:
    loss_prob: float = 0.0
    latency_s: float = 0.0
    max_retries: int = 3
    retry_backoff_s: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")
        if self.latency_s < 0:
            raise ValueError("latency_s must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.retry_backoff_s <= 0:
            raise ValueError("retry_backoff_s must be > 0")


class Delivered(NamedTuple):
    latency_s: float


class Lost(NamedTuple):
    pass


def attempt_delivery(link: LinkModel, attempt_index: int, rng: SplitMix64) -> Delivered | Lost:
    """One transmission attempt; consumes exactly one draw from ``rng``."""
    if not 0 <= attempt_index <= link.max_retries:
        raise ValueError(f"attempt {attempt_index} exceeds max_retries={link.max_retries}")
    if rng.uniform() < link.loss_prob:
        return Lost()
    return Delivered(link.latency_s)


class DeliveryOutcome(NamedTuple):
    attempts: int
    delivered: bool
    delay_s: float  # send -> arrival when delivered, else time spent retrying
    blocked_s: float  # how long the station loop was stalled


def deliver(link: LinkModel, rng: SplitMix64) -> DeliveryOutcome:
    """Fixed-backoff retries: attempt k happens ``k * retry_backoff_s`` after the first."""
    for k in range(link.max_retries + 1):
        result = attempt_delivery(link, k, rng)
        if isinstance(result, Delivered):
            waited = k * link.retry_backoff_s
            return DeliveryOutcome(k + 1, True, waited + result.latency_s, waited)
    waited = (link.max_retries + 1) * link.retry_backoff_s
    return DeliveryOutcome(link.max_retries + 1, False, waited, waited)


def _id_hash(station_id: str) -> int:
    return int.from_bytes(hashlib.sha256(station_id.encode("utf-8")).digest()[:8], "big")


def stagger_offset(config: StationConfig) -> int:
    """Boot time of a station: sha256(station_id) mod report_period, whole seconds."""
    return _id_hash(config.station_id) % max(1, int(config.report_period_s))


def link_rng(link: LinkModel, station_id: str) -> SplitMix64:
    return SplitMix64(hash64(link.seed, _id_hash(station_id)))


@dataclass(frozen=True)
class StationSpec:
    config: StationConfig
    scenario: Scenario


@dataclass(frozen=True)
class SimConfig:
    duration_s: float
    stations: tuple[StationSpec, ...]
    link: LinkModel = LinkModel()
    mode: Mode = Mode.IN_PROCESS
    token: str = ""
    thresholds: ThresholdTable = ThresholdTable()
    name: str = "sim"
    service_url: str | None = None

    def problems(self) -> list[str]:
        out = []
        if not self.duration_s > 0:
            out.append("duration_s must be > 0")
        ids = [s.config.station_id for s in self.stations]
        if len(set(ids)) != len(ids):
            out.append("station ids must be unique")
        if not self.stations:
            out.append("at least one station is required")
        for s in self.stations:
            out.extend(f"{s.config.station_id}: {p}" for p in s.config.problems())
        return out

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], base_dir: Path | None = None) -> SimConfig:
        token = str(doc.get("token", ""))
        thresholds = ThresholdTable.from_dict(doc.get("thresholds"))
        stations = []
        for sdoc in doc.get("stations", []):
            sdoc = dict(sdoc)
            if "scenario_file" in sdoc:
                path = Path(sdoc.pop("scenario_file"))
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                scenario = Scenario.load(path)
            else:
                scenario = Scenario.from_dict(sdoc.pop("scenario"))
            sdoc.setdefault("api_credential", token)
            sdoc.setdefault("thresholds", thresholds.to_dict())
            stations.append(StationSpec(StationConfig.from_dict(sdoc), scenario))
        return cls(
            duration_s=float(doc["duration_s"]),
            stations=tuple(stations),
            link=LinkModel(**doc.get("link", {})),
            mode=Mode(doc.get("mode", Mode.IN_PROCESS.value)),
            token=token,
            thresholds=thresholds,
            name=str(doc.get("name", "sim")),
            service_url=doc.get("service_url"),
        )

    @classmethod
    def load(cls, path_or_name: str | Path) -> SimConfig:
        """Load a sim config file, or a bundled one by name (``quiet_day``, ``leak``, ``rush_hour``)."""
        path = Path(path_or_name)
        if not path.exists() and str(path_or_name) in bundled_configs():
            with resources.files("gasnet.data").joinpath(f"{path_or_name}.json").open(encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        with path.open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)


def bundled_configs() -> list[str]:
    return sorted(
        p.name[:-5] for p in resources.files("gasnet.data").iterdir() if p.name.endswith(".json")
    )


@dataclass
class StationReport:
    station_id: str
    samples_taken: int = 0
    payloads_sent: int = 0
    attempts: int = 0
    delivered: int = 0
    lost_after_retries: int = 0
    stored: int = 0
    alerts: dict[str, int] = field(default_factory=lambda: {k.value: 0 for k in AlertKind})

    def accounting_ok(self) -> bool:
        return (
            self.delivered + self.lost_after_retries == self.payloads_sent
            and self.stored == self.delivered
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "station_id": self.station_id,
            "samples_taken": self.samples_taken,
            "payloads_sent": self.payloads_sent,
            "attempts": self.attempts,
            "delivered": self.delivered,
            "lost_after_retries": self.lost_after_retries,
            "stored": self.stored,
            "alerts": dict(self.alerts),
        }


@dataclass
class SimReport:
    name: str
    duration_s: float
    stations: list[StationReport]
    wall_time_s: float = 0.0

    def accounting_ok(self) -> bool:
        return all(s.accounting_ok() for s in self.stations)

    def totals(self) -> dict[str, int]:
        keys = ("samples_taken", "payloads_sent", "attempts", "delivered", "lost_after_retries", "stored")
        out = {k: sum(getattr(s, k) for s in self.stations) for k in keys}
        for kind in AlertKind:
            out[f"alerts_{kind.value.lower()}"] = sum(s.alerts[kind.value] for s in self.stations)
        return out

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "name": self.name,
            "duration_s": self.duration_s,
            "stations": [s.to_dict() for s in self.stations],
            "totals": self.totals(),
            "accounting_ok": self.accounting_ok(),
        }
        if include_timing:
            doc["wall_time_s"] = round(self.wall_time_s, 3)
        return doc

    def to_json(self, include_timing: bool = False) -> str:
        """Deterministic JSON; wall time is excluded unless asked for."""
        return json.dumps(self.to_dict(include_timing), indent=2)


# -- trace records (optional, for inspection) --------------------------------


class SampleEvent(NamedTuple):
    station_id: str
    t_s: float
    true_ppm: Mapping[GasSpecies, float]
    actions: tuple[StationAction, ...]


class DeliveryEvent(NamedTuple):
    station_id: str
    sent_at_s: float
    arrival_s: float | None  # None when lost after retries
    attempts: int
    body: bytes
    response: Mapping[str, Any] | None


TraceEvent = Union[SampleEvent, DeliveryEvent]


# -- sinks: where delivered payloads go --------------------------------------


class _InProcessSink:
    def __init__(self, service: IngestService) -> None:
        self.service = service

    def post(self, body: bytes, token: str, arrival_s: float) -> tuple[int, Any]:
        auth = authenticate(f"Bearer {token}", self.service.credential)
        try:
            return 200, self.service.ingest(body, auth, received_at_s=arrival_s)
        except ServiceError as err:
            return err.status, err.body()

    def station_counts(self) -> dict[str, int]:
        return {sid: self.service.store.count(sid) for sid in self.service.store.stations()}

    def alerts(self) -> list[AlertRecord]:
        return self.service.store.alerts()


class _HttpSink:
    def __init__(self, url: str, reconnect_timeout_s: float) -> None:
        self.url = url
        self.reconnect_timeout_s = reconnect_timeout_s
        self._clients: dict[str, ServiceClient] = {}

    def _client(self, token: str | None) -> ServiceClient:
        key = token or ""
        if key not in self._clients:
            self._clients[key] = ServiceClient(self.url, token)
        return self._clients[key]

    def _retrying(self, fn: Callable[[], tuple[int, Any]]) -> tuple[int, Any]:
        # transport-level reconnects (service restarts); not part of the link model
        deadline = time.monotonic() + self.reconnect_timeout_s
        delay = 0.05
        while True:
            try:
                return fn()
            except ServiceUnreachable:
                if time.monotonic() >= deadline:
                    raise
                time.sleep(delay)
                delay = min(1.0, delay * 2)

    def post(self, body: bytes, token: str, arrival_s: float) -> tuple[int, Any]:
        client = self._client(token)
        return self._retrying(lambda: client.post_telemetry(body, clock_s=arrival_s))

    def station_counts(self) -> dict[str, int]:
        status, doc = self._retrying(lambda: self._client(None).get("/v1/stations"))
        if status != 200:
            raise ContractViolation(f"GET /v1/stations -> {status}: {doc}")
        return {s["station_id"]: s["count"] for s in doc["stations"]}

    def alerts(self) -> list[AlertRecord]:
        status, doc = self._retrying(lambda: self._client(None).get("/v1/alerts"))
        if status != 200:
            raise ContractViolation(f"GET /v1/alerts -> {status}: {doc}")
        return [AlertRecord.from_dict(a) for a in doc["alerts"]]


def check_alert_pattern(alerts: list[AlertRecord]) -> list[str]:
    """Per (station, species) the kinds must follow (Onset Ongoing* Cleared)*."""
    open_: dict[tuple[str, GasSpecies], bool] = {}
    problems = []
    for a in alerts:
        key = (a.station_id, a.species)
        is_open = open_.get(key, False)
        if a.kind is AlertKind.ONSET and is_open:
            problems.append(f"{key}: Onset at {a.t_s} while already open")
        elif a.kind is not AlertKind.ONSET and not is_open:
            problems.append(f"{key}: {a.kind.value} at {a.t_s} without Onset")
        open_[key] = a.kind is not AlertKind.CLEARED
    return problems


# -- the runner --------------------------------------------------------------

_SAMPLE, _DELIVER = 0, 1


def run_simulation(
    config: SimConfig,
    *,
    service: IngestService | None = None,
    data_dir: str | Path | None = None,
    url: str | None = None,
    trace: list[TraceEvent] | None = None,
    reconnect_timeout_s: float = 30.0,
) -> SimReport:
    """Run ``config`` to completion and return totals.

    In-process mode uses ``service`` if given, else builds one over a store
    in ``data_dir`` (a temporary directory when omitted). Over-HTTP mode posts
    to ``url`` (or ``config.service_url``).
    """
    problems = config.problems()
    if problems:
        raise ValueError("; ".join(problems))
    started = time.perf_counter()
    tmp = None
    store = None
    if config.mode is Mode.OVER_HTTP:
        target = url or config.service_url
        if not target:
            raise ValueError("over_http mode needs a service url")
        sink: _InProcessSink | _HttpSink = _HttpSink(target, reconnect_timeout_s)
    else:
        if service is None:
            if data_dir is None:
                tmp = tempfile.TemporaryDirectory(prefix="gasnet-sim-")
                data_dir = tmp.name
            store = Store(data_dir)
            service = IngestService(store, ApiCredential(config.token), config.thresholds)
        sink = _InProcessSink(service)

    try:
        reports = _run_loop(config, sink, trace)
        counts = sink.station_counts()
        alerts = sink.alerts()
    finally:
        if store is not None:
            store.close()
        if tmp is not None:
            tmp.cleanup()

    pattern_problems = check_alert_pattern(alerts)
    if pattern_problems:
        raise ContractViolation("alert sequence broken: " + "; ".join(pattern_problems[:5]))
    for rep in reports:
        rep.stored = counts.get(rep.station_id, 0)
    for a in alerts:
        for rep in reports:
            if rep.station_id == a.station_id:
                rep.alerts[a.kind.value] += 1
    return SimReport(config.name, config.duration_s, reports, time.perf_counter() - started)


def _run_loop(config: SimConfig, sink: _InProcessSink | _HttpSink, trace: list[TraceEvent] | None) -> list[StationReport]:
    link = config.link
    specs = config.stations
    states = [boot(s.config) for s in specs]
    rngs = [link_rng(link, s.config.station_id) for s in specs]
    reports = [StationReport(s.config.station_id) for s in specs]
    lpg_curves = [s.config.curves[GasSpecies.LPG] for s in specs]
    co_curves = [s.config.curves[GasSpecies.CO] for s in specs]

    heap: list[tuple[float, int, int, int, Any]] = []
    order = 0
    for i, s in enumerate(specs):
        t0 = float(stagger_offset(s.config))
        if t0 < config.duration_s:
            heapq.heappush(heap, (t0, order, _SAMPLE, i, None))
            order += 1

    while heap:
        t, _, kind, i, data = heapq.heappop(heap)
        spec = specs[i]
        if kind == _DELIVER:
            body, sent_at, attempts = data
            status, resp = sink.post(body, spec.config.api_credential, t)
            if status != 200:
                raise ContractViolation(
                    f"service rejected payload from {spec.config.station_id} sent at {sent_at}: "
                    f"{status} {resp}; body={body.decode('utf-8')}"
                )
            reports[i].delivered += 1
            if trace is not None:
                trace.append(DeliveryEvent(spec.config.station_id, sent_at, t, attempts, body, resp))
            continue

        scn = spec.scenario
        lpg = scenario_ppm(scn, GasSpecies.LPG, t)
        co = scenario_ppm(scn, GasSpecies.CO, t)
        temp = scenario_temp_c(scn, t) if spec.config.include_temperature else None
        states[i], actions = step(states[i], t, sense(lpg_curves[i], lpg), sense(co_curves[i], co), temp)
        rep = reports[i]
        rep.samples_taken += 1
        blocked = 0.0
        for action in actions:
            if not isinstance(action, Send):
                continue
            rep.payloads_sent += 1
            body = action.payload.to_bytes()
            outcome = deliver(link, rngs[i])
            rep.attempts += outcome.attempts
            blocked = outcome.blocked_s
            if outcome.delivered:
                heapq.heappush(heap, (t + outcome.delay_s, order, _DELIVER, i, (body, t, outcome.attempts)))
                order += 1
            else:
                rep.lost_after_retries += 1
                if trace is not None:
                    trace.append(DeliveryEvent(spec.config.station_id, t, None, outcome.attempts, body, None))
        if trace is not None:
            trace.append(SampleEvent(spec.config.station_id, t, {GasSpecies.LPG: lpg, GasSpecies.CO: co}, tuple(actions)))
        nxt = t + spec.config.sample_period_s + blocked
        if nxt < config.duration_s:
            heapq.heappush(heap, (nxt, order, _SAMPLE, i, None))
            order += 1
    return reports
