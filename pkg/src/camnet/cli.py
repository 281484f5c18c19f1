"""Single command-line entry point.

Machine-readable output is JSON on stdout; human diagnostics go to
stderr. Exit codes: 0 success, 1 validation/usage error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
import time
import traceback

from . import CamnetError
from .config import CliConfig, ConfigError, resolve_config
from .discovery import (
    DEFAULT_SIGNATURES,
    ScanRefused,
    SignatureError,
    load_signatures,
    scan_range,
)
from .model import canonical_json
from .registry import InvalidFilterError, InvalidRecordError, NotFoundError, RegistryStore, CameraFilter
from .resman import (
    PlanningError,
    brute_force_plan,
    load_catalog,
    load_rtt,
    load_workload,
    naive_plan,
    pack_streams,
    plan_report,
)
from .runtime import AnalysisEngine, CapacityError, JobValidationError
from .testbed import FarmError, load_farm_spec, spawn_farm

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

_VALIDATION_ERRORS = (
    ScanRefused,
    SignatureError,
    ConfigError,
    PlanningError,
    FarmError,
    JobValidationError,
    InvalidRecordError,
    InvalidFilterError,
    NotFoundError,
    CapacityError,
    ValueError,
    FileNotFoundError,
)


def _err(message: str) -> None:
    print(f"camnet: {message}", file=sys.stderr)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        _err(str(exc))
        return EXIT_USAGE
    except CamnetError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camnet", description="network camera platform")
    parser.add_argument("--config", help="path to a JSON config file", default=None)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("scan", help="probe an address range for cameras")
    p.add_argument("--range", required=True, help="CIDR to scan, e.g. 127.77.0.0/26")
    p.add_argument("--port", type=int, default=80, help="TCP port to probe (default 80)")
    p.add_argument("--signatures", help="brand signature JSON file (default: built-in set)")
    p.add_argument("--rate", type=float, default=None, help="requests per second")
    p.add_argument("--concurrency", type=int, default=None, help="max in-flight requests")
    p.add_argument("--timeout", type=float, default=None, help="per-request timeout seconds")
    p.add_argument("--liveness-delay", type=float, default=None, help="seconds between verification fetches")
    p.add_argument("--allow-public", action="store_true", help="permit scanning non-private ranges")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("serve", help="run the registry/runtime REST service")
    p.add_argument("--db", default=None, help="SQLite database path")
    p.add_argument("--listen", default=None, help="host:port to bind")
    p.add_argument("--snapshot-ttl", type=float, default=None, help="snapshot cache TTL seconds")
    p.add_argument("--ui-dir", default=None, help="directory of built web UI to serve at /ui")
    p.add_argument("--max-streams", type=int, default=None, help="max concurrent analysis streams")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("ingest", help="run a one-shot analysis job from flags")
    p.add_argument("--db", default=None, help="SQLite database path")
    p.add_argument("--camera", action="append", default=[], help="camera id (repeatable)")
    p.add_argument("--all-accepted", action="store_true", help="run over every accepted camera")
    p.add_argument("--analyzer", default="motion_features")
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--duration", type=float, default=10.0, help="seconds")
    p.add_argument("--param", action="append", default=[], help="analyzer parameter k=v (repeatable)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("plan", help="plan instance allocation for a workload")
    p.add_argument("--workload", required=True, help="stream requirements JSON file")
    p.add_argument("--catalog", required=True, help="instance catalog JSON file")
    p.add_argument("--duration", required=True, type=float, help="job duration in hours")
    p.add_argument("--rtt", default=None, help="RTT model JSON file")
    p.add_argument("--oracle", action="store_true", help="also compute the exhaustive optimum (small inputs)")
    p.add_argument("--quality-floor", type=float, default=0.9)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("testbed", help="control the emulated camera farm")
    tb = p.add_subparsers(dest="testbed_command")
    up = tb.add_parser("up", help="start a farm and block until signalled")
    up.add_argument("--spec", required=True, help="farm spec JSON file")
    up.add_argument("--state", default=None, help="state file path (for `testbed down`)")
    up.set_defaults(func=cmd_testbed_up)
    down = tb.add_parser("down", help="stop the farm started with `testbed up`")
    down.add_argument("--state", default=None, help="state file path")
    down.set_defaults(func=cmd_testbed_down)

    p = sub.add_parser("config", help="configuration helpers")
    cs = p.add_subparsers(dest="config_command")
    show = cs.add_parser("show", help="print the resolved configuration")
    show.set_defaults(func=cmd_config_show)

    return parser


def _config_from(args, **flag_map) -> CliConfig:
    flags = {k: v for k, v in flag_map.items() if v is not None}
    return resolve_config(flags, config_path=args.config)


def cmd_scan(args) -> int:
    cfg = _config_from(
        args,
        rate_limit=args.rate,
        concurrency=args.concurrency,
        request_timeout_s=args.timeout,
        liveness_delay_s=args.liveness_delay,
    )
    signatures = load_signatures(args.signatures) if args.signatures else list(DEFAULT_SIGNATURES)
    started = time.monotonic()
    candidates = scan_range(
        args.range,
        signatures,
        port=args.port,
        concurrency_limit=int(cfg.concurrency),
        rate_limit=cfg.rate_limit,
        timeout_s=cfg.request_timeout_s,
        liveness_delay_s=cfg.liveness_delay_s,
        allow_public=args.allow_public,
    )
    for cand in candidates:
        print(canonical_json(cand.to_json()))
    counts: dict[str, int] = {}
    for cand in candidates:
        counts[cand.disposition] = counts.get(cand.disposition, 0) + 1
    _err(
        f"scanned {args.range} port {args.port} in {time.monotonic() - started:.1f}s: "
        + (", ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "no candidates")
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    cfg = _config_from(
        args,
        db_path=args.db,
        listen=args.listen,
        snapshot_ttl_s=args.snapshot_ttl,
        ui_dir=args.ui_dir,
        max_streams=args.max_streams,
    )
    host, port = cfg.host_port()
    store = RegistryStore(cfg.db_path, snapshot_ttl_s=cfg.snapshot_ttl_s)
    engine = AnalysisEngine(store, max_concurrent_streams=int(cfg.max_streams))
    app = create_app(store, engine, ui_dir=cfg.ui_dir)
    _err(f"serving on http://{host}:{port} (db {cfg.db_path})")
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return EXIT_OK


def _parse_params(pairs: list[str]) -> dict:
    params = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ValueError(f"--param needs k=v, got {pair!r}")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def cmd_ingest(args) -> int:
    cfg = _config_from(args, db_path=args.db)
    store = RegistryStore(cfg.db_path, snapshot_ttl_s=cfg.snapshot_ttl_s)
    try:
        camera_ids = list(args.camera)
        if args.all_accepted:
            records, _ = store.query(CameraFilter(disposition="accepted", limit=1000))
            camera_ids.extend(r.id for r in records if r.id not in camera_ids)
        if not camera_ids:
            raise JobValidationError("no cameras selected; pass --camera or --all-accepted")
        engine = AnalysisEngine(store, max_concurrent_streams=int(cfg.max_streams))
        job_id = engine.submit(
            camera_ids=camera_ids,
            fps=args.fps,
            duration_s=args.duration,
            analyzer=args.analyzer,
            params=_parse_params(args.param),
        )
        _err(f"job {job_id} running over {len(camera_ids)} camera(s) for {args.duration}s")
        job = engine.wait(job_id, timeout_s=args.duration + 60)
        results = engine.results(job_id)
        print(json.dumps(results, sort_keys=True))
        return EXIT_OK if job["state"] != "failed" else EXIT_RUNTIME
    finally:
        store.close()


def cmd_plan(args) -> int:
    catalog = load_catalog(args.catalog)
    workload = load_workload(args.workload)
    model = load_rtt(args.rtt) if args.rtt else None
    plans = {
        "naive": naive_plan(workload, catalog, args.duration, model, quality_floor=args.quality_floor),
        "packed": pack_streams(workload, catalog, args.duration, model, quality_floor=args.quality_floor),
    }
    if args.oracle:
        plans["oracle"] = brute_force_plan(
            workload, catalog, args.duration, model, quality_floor=args.quality_floor
        )
    report = plan_report(plans, baseline="naive")
    _emit({"plans": {name: p.to_json() for name, p in plans.items()}, "report": report})
    for row in report:
        _err(
            f"{row['name']:>8}: bins={row['bins']} unassigned={row['unassigned']} "
            f"cost={row['total_cost']} savings={row['pct_savings_vs_baseline']}%"
        )
    return EXIT_OK


def cmd_testbed_up(args) -> int:
    cfg = _config_from(args, state_file=args.state)
    spec = load_farm_spec(args.spec)
    farm = spawn_farm(spec)
    state = {"pid": os.getpid(), **farm.endpoints_json()}
    with open(cfg.state_file, "w", encoding="utf-8") as fh:
        json.dump(state, fh)
    _emit(farm.endpoints_json())
    sys.stdout.flush()
    _err(f"farm up: {len(farm.endpoints)} endpoints on {farm.cidr} port {farm.port}; SIGTERM to stop")

    stop = threading.Event()

    def handle(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, handle)
    signal.signal(signal.SIGINT, handle)
    stop.wait()
    farm.stop()
    try:
        os.remove(cfg.state_file)
    except FileNotFoundError:
        pass
    _err("farm stopped")
    return EXIT_OK


def cmd_testbed_down(args) -> int:
    cfg = _config_from(args, state_file=args.state)
    try:
        with open(cfg.state_file, "r", encoding="utf-8") as fh:
            state = json.load(fh)
    except FileNotFoundError:
        _err(f"no testbed state at {cfg.state_file}; is a farm running?")
        return EXIT_USAGE
    pid = int(state["pid"])
    try:
        os.kill(pid, signal.SIGTERM)
    except ProcessLookupError:
        pass
    deadline = time.monotonic() + 5.0
    while time.monotonic() < deadline:
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            break
        time.sleep(0.05)
    try:
        os.remove(cfg.state_file)
    except FileNotFoundError:
        pass
    _emit({"stopped": True, "pid": pid})
    return EXIT_OK


def cmd_config_show(args) -> int:
    cfg = resolve_config({}, config_path=args.config)
    _emit(cfg.to_json())
    return EXIT_OK


if __name__ == "__main__":
    main()
