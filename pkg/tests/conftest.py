from __future__ import annotations

import pytest

from gasnet.classification import ThresholdTable, classify
from gasnet.gas_model import GasSpecies
from gasnet.http_api import GasnetHTTPServer, start_in_thread
from gasnet.service import ApiCredential, IngestService
from gasnet.station import TelemetryPayload
from gasnet.storage import Store

TOKEN = "test-token-0123456789"


def make_payload(ts: int = 600, seq: int = 1, lpg: float = 12.3, co: float = 4.0, **kw) -> TelemetryPayload:
    table = ThresholdTable()
    lpg_level = classify(table, GasSpecies.LPG, lpg)
    co_level = classify(table, GasSpecies.CO, co)
    doc = dict(
        station_id="st-01",
        ts=ts,
        seq=seq,
        lpg_ppm=lpg,
        co_ppm=co,
        temp_c=28.5,
        lpg_level=lpg_level.display_name(GasSpecies.LPG),
        co_level=co_level.display_name(GasSpecies.CO),
        alarm=bool(lpg_level or co_level),
        fw="1.0.0",
    )
    doc.update(kw)
    return TelemetryPayload(**doc)


@pytest.fixture
def store(tmp_path):
    s = Store(tmp_path / "data")
    yield s
    s.close()


@pytest.fixture
def service(store):
    return IngestService(store, ApiCredential(TOKEN), clock=lambda: 1000.0)


@pytest.fixture
def http_service(service):
    server = GasnetHTTPServer(("127.0.0.1", 0), service, virtual_clock=True)
    start_in_thread(server)
    yield server
    server.shutdown()
    server.server_close()
