"""``gasnet`` command line: serve, simulate, report.

Exit codes:
    0  success
    1  invalid configuration
    2  bind failure (serve)
    3  contract violation during simulation
    4  unknown station (report)
    5  source or service unreachable
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
from dataclasses import dataclass, replace
from typing import Any, Sequence

from gasnet.classification import ThresholdTable
from gasnet.http_api import RANGE_MAX, RANGE_MIN, GasnetHTTPServer, ServiceUnreachable
from gasnet.report import SourceUnreachable, build_report, open_source
from gasnet.service import MAX_LIMIT, MIN_TOKEN_CHARS, ApiCredential, IngestService
from gasnet.simnet import ContractViolation, Mode, SimConfig, run_simulation
from gasnet.storage import Store, StorageError, UnknownStation

logger = logging.getLogger("gasnet")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BIND = 2
EXIT_CONTRACT = 3
EXIT_UNKNOWN_STATION = 4
EXIT_UNREACHABLE = 5

TOKEN_ENV = "GASNET_TOKEN"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServeConfig:
    host: str
    port: int
    token: str
    data_dir: str
    thresholds: ThresholdTable
    virtual_clock: bool = False
    fsync: bool = False

    @classmethod
    def from_dict(cls, doc: Any) -> ServeConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        bind = doc.get("bind", "127.0.0.1:8080")
        host, sep, port_s = str(bind).rpartition(":")
        if not sep or not port_s.isdigit() or not 0 <= int(port_s) <= 65535:
            raise ConfigError(f"bind: expected host:port, got {bind!r}")
        token = os.environ.get(TOKEN_ENV) or doc.get("token")
        if not isinstance(token, str) or len(token) < MIN_TOKEN_CHARS:
            raise ConfigError(f"token: must be a string of at least {MIN_TOKEN_CHARS} characters")
        data_dir = doc.get("data_dir")
        if not isinstance(data_dir, str) or not data_dir:
            raise ConfigError("data_dir: required")
        try:
            thresholds = ThresholdTable.from_dict(doc.get("thresholds"))
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"thresholds: {exc}") from None
        return cls(
            host=host or "127.0.0.1",
            port=int(port_s),
            token=token,
            data_dir=data_dir,
            thresholds=thresholds,
            virtual_clock=bool(doc.get("virtual_clock", False)),
            fsync=bool(doc.get("fsync", False)),
        )


def _load_json(path: str) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        cfg = ServeConfig.from_dict(_load_json(args.config))
    except ConfigError as exc:
        print(f"gasnet serve: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        store = Store(cfg.data_dir, fsync=cfg.fsync)
    except (OSError, StorageError) as exc:
        print(f"gasnet serve: cannot open data_dir: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    service = IngestService(store, ApiCredential(cfg.token), cfg.thresholds)
    try:
        server = GasnetHTTPServer((cfg.host, cfg.port), service, virtual_clock=cfg.virtual_clock)
    except OSError as exc:
        store.close()
        print(f"gasnet serve: cannot bind {cfg.host}:{cfg.port}: {exc}", file=sys.stderr)
        return EXIT_BIND

    def _stop(signum: int, frame: Any) -> None:
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, _stop)
    print(f"gasnet listening on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        store.close()
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        config = SimConfig.load(args.config)
        if args.http:
            config = replace(config, mode=Mode.OVER_HTTP, service_url=args.http)
        token = os.environ.get(TOKEN_ENV)
        if token:
            config = _with_token(config, token)
        problems = config.problems()
        if problems:
            raise ConfigError("; ".join(problems))
    except (ConfigError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"gasnet simulate: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_simulation(config, data_dir=args.data)
    except ContractViolation as exc:
        print(f"gasnet simulate: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except ServiceUnreachable as exc:
        print(f"gasnet simulate: service unreachable: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    text = report.to_json()
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(f"wall time {report.wall_time_s:.2f} s", file=sys.stderr)
    if not report.accounting_ok():
        print("gasnet simulate: accounting identities violated", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


def _with_token(config: SimConfig, token: str) -> SimConfig:
    stations = tuple(replace(s, config=replace(s.config, api_credential=token)) for s in config.stations)
    return replace(config, token=token, stations=stations)


def cmd_report(args: argparse.Namespace) -> int:
    try:
        source = open_source(args.source)
        text = build_report(
            source,
            args.station,
            from_s=args.from_s,
            to_s=args.to_s,
            fmt=args.format,
            hourly=args.hourly,
            limit=args.limit,
        )
    except UnknownStation:
        print(f"gasnet report: unknown station {args.station!r}", file=sys.stderr)
        return EXIT_UNKNOWN_STATION
    except SourceUnreachable as exc:
        print(f"gasnet report: source unreachable: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    except ValueError as exc:
        print(f"gasnet report: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(text)
    return EXIT_OK


def _number(raw: str) -> float:
    try:
        return int(raw)
    except ValueError:
        return float(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gasnet", description="LPG/CO monitoring network simulator and ingest service")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the ingest service")
    p.add_argument("-c", "--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="run a simulation and print its report")
    p.add_argument("-c", "--config", required=True, help="sim config file or bundled name")
    p.add_argument("--http", metavar="URL", help="post to a running service instead of in-process")
    p.add_argument("--data", metavar="DIR", help="data directory for the in-process service")
    p.add_argument("--out", metavar="FILE", help="also write the report here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="print stored history")
    p.add_argument("--source", required=True, help="data directory or service URL")
    p.add_argument("--station", required=True)
    p.add_argument("--from", dest="from_s", type=_number, default=RANGE_MIN)
    p.add_argument("--to", dest="to_s", type=_number, default=RANGE_MAX)
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--hourly", action="store_true", help="hourly means instead of raw readings")
    p.add_argument("--limit", type=int, default=MAX_LIMIT)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
