"""Operator command line: run scenarios, replay traces, serve records, watch.

Flags mirror VITALNET_* environment variables (flag wins, then env, then the
built-in default). ``--scenario demo`` resolves the bundled demo script.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import signal
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from vitalnet.accel import AccelNode, AccelSample
from vitalnet.mhs.auth import User, hash_password
from vitalnet.mhs.service import MhsServer, ServerConfig
from vitalnet.oximeter import OximeterNode
from vitalnet.relay import AuthError, MhsClient, TransportError
from vitalnet.run import RunConfig, demo_users, run_scenario
from vitalnet.report import export_accel_csv, export_ppg_csv, fmt, write_report
from vitalnet.scenario import ScenarioError, load_scenario
from vitalnet.synth import PpgTrace, gen_accel_trace, gen_ppg

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_USAGE = 2


def _env(name: str, default=None):
    return os.environ.get(f"VITALNET_{name}", default)


def resolve_scenario(name: str) -> Path:
    if name == "demo":
        return Path(str(resources.files("vitalnet").joinpath("data/demo.scn")))
    return Path(name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitalnet",
        description="body-sensor-network monitoring: simulate, replay, serve, watch",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario end to end and write reports")
    run_p.add_argument("--scenario", default=_env("SCENARIO", "demo"),
                       help="scenario script path, or 'demo' for the bundled one")
    run_p.add_argument("--seed", type=int, default=_env("SEED"),
                       help="override the script's seed")
    run_p.add_argument("--fs", type=float, default=_env("FS", 50.0),
                       help="accelerometer sampling rate, 10-100 Hz")
    run_p.add_argument("--slots", type=int, default=_env("SLOTS", 8),
                       help="TDMA superframe length including the beacon slot")
    run_p.add_argument("--serve", type=int, metavar="PORT",
                       default=_env("SERVE"),
                       help="bind the in-process record server to this port")
    run_p.add_argument("--report-dir", default=_env("REPORT_DIR", "report"),
                       help="directory for CSV reports and figures")
    run_p.add_argument("--exact-delta", action="store_true",
                       default=_env("EXACT_DELTA", "") not in ("", "0", "false"),
                       help="relay compares fields literally instead of thresholds")
    run_p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    run_p.add_argument("--export-traces", action="store_true",
                       help="also write the raw generator traces as CSV")
    run_p.add_argument("--inject-slot-conflict", action="store_true",
                       help="fault injection: double-book a TDMA slot to force collisions")
    run_p.add_argument("--server-url", default=None,
                       help="upload to an external record server instead")
    run_p.add_argument("--practitioner", default="dr-demo")
    run_p.add_argument("--practitioner-password", default="demo-doc-pw")
    run_p.add_argument("--patient-password", default="demo-pat-pw")

    rep_p = sub.add_parser("replay", help="run a recorded trace through a node offline")
    rep_p.add_argument("--input", required=True, help="trace CSV")
    rep_p.add_argument("--kind", choices=("accel", "oximeter"), required=True)
    rep_p.add_argument("--out", required=True, help="output CSV")

    serve_p = sub.add_parser("serve", help="run the record server standalone")
    serve_p.add_argument("--port", type=int, default=8470)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--data-dir", required=True)
    serve_p.add_argument("--config", help="server config JSON (users, risk model)")
    serve_p.add_argument("--demo-users", action="store_true",
                         help="serve with the built-in demo credentials")
    serve_p.add_argument("--demo-patient", default="p-demo")

    watch_p = sub.add_parser("watch", help="live view of one patient's vitals and alerts")
    watch_p.add_argument("--server", required=True, help="record server base URL")
    watch_p.add_argument("--patient", required=True)
    watch_p.add_argument("--principal", required=True)
    watch_p.add_argument("--password", required=True)
    watch_p.add_argument("--once", action="store_true", help="print one snapshot and exit")
    watch_p.add_argument("--interval", type=float, default=1.0)

    hash_p = sub.add_parser("hash-password", help="hash a password for a config file")
    hash_p.add_argument("password")

    return parser


# ------------------------------------------------------------------------ run


def cmd_run(args) -> int:
    path = resolve_scenario(args.scenario)
    try:
        script = load_scenario(path)
    except FileNotFoundError:
        print(f"scenario file not found: {path}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        script.seed = int(args.seed)
    config = RunConfig(
        script=script,
        fs_accel=float(args.fs),
        slots=int(args.slots),
        exact_delta=bool(args.exact_delta),
        server_url=args.server_url,
        serve_port=int(args.serve) if args.serve else 0,
        practitioner=(args.practitioner, args.practitioner_password),
        patient_password=args.patient_password,
        inject_slot_conflict=bool(args.inject_slot_conflict),
    )
    result = run_scenario(config)
    report_dir = Path(args.report_dir)
    written = write_report(result, report_dir, figures=not args.no_figures)
    if args.export_traces:
        export_accel_csv(gen_accel_trace(script, config.fs_accel), report_dir / "accel_trace.csv")
        export_ppg_csv(gen_ppg(script, fs=config.fs_ppg), report_dir / "ppg_trace.csv")
        written += [report_dir / "accel_trace.csv", report_dir / "ppg_trace.csv"]
    for path_ in written:
        print(f"wrote {path_}")
    if result.invariant_failures:
        for failure in result.invariant_failures:
            print(f"INVARIANT FAILED: {failure}", file=sys.stderr)
        return EXIT_INVARIANT
    print(
        f"ok: {len(result.composed)} packets, {result.transmissions} transmitted, "
        f"{len(result.server_alerts)} alerts, 0 collisions"
    )
    return EXIT_OK


# --------------------------------------------------------------------- replay


def _read_csv_columns(path: Path, expected: list[str]) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    rows = [r for r in rows if not r[0].lstrip().startswith("#")]
    if not rows:
        return []
    header = [c.strip() for c in rows[0]]
    if header != expected:
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        raise SystemExit(
            f"error: {path} columns {header} do not match {expected}"
            + (f"; missing {missing}" if missing else "")
            + (f"; unexpected {extra}" if extra else "")
        )
    return rows[1:]


def _ppg_meta(path: Path) -> dict:
    with open(path) as fh:
        first = fh.readline().strip().strip('"')
    meta = {"i_in1": 1.0, "i_in2": 1.0, "fs": 100.0}
    if first.startswith("#"):
        for token in first[1:].split():
            if "=" in token:
                key, _, val = token.partition("=")
                meta[key] = float(val)
    return meta


def cmd_replay(args) -> int:
    src = Path(args.input)
    out = Path(args.out)
    if args.kind == "accel":
        rows = _read_csv_columns(src, ["t", "x", "y", "z"])
        if not rows:
            with open(out, "w", newline="") as fh:
                csv.writer(fh).writerow(
                    ["t_start", "max_dev_x", "max_dev_y", "max_dev_z",
                     "dominant", "state", "mode"]
                )
            return EXIT_OK
        samples = [
            AccelSample(t=float(r[0]), x=float(r[1]), y=float(r[2]), z=float(r[3]))
            for r in rows
        ]
        fs = 50.0
        if len(samples) > 1:
            fs = round(1.0 / (samples[1].t - samples[0].t), 6)
        node = AccelNode(fs=fs)
        emissions = list(node.process(iter(samples)))
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_start", "max_dev_x", "max_dev_y", "max_dev_z",
                             "dominant", "state", "mode"])
            for e in emissions:
                writer.writerow([fmt(e.window.t_start), *map(fmt, e.window.max_abs_dev),
                                 e.window.dominant_axis, int(e.state), e.mode.value])
        if node.dropped_partial_window:
            print("warning: final partial window skipped", file=sys.stderr)
        return EXIT_OK
    # oximeter
    meta = _ppg_meta(src)
    rows = _read_csv_columns(src, ["t", "i1", "i2"])
    if not rows:
        with open(out, "w", newline="") as fh:
            csv.writer(fh).writerow(["t", "spo2", "hr", "flags"])
        return EXIT_OK
    t = np.array([float(r[0]) for r in rows])
    i1 = np.array([float(r[1]) for r in rows])
    i2 = np.array([float(r[2]) for r in rows])
    trace = PpgTrace(fs=meta["fs"], t=t, i1=i1, i2=i2,
                     i_in1=meta["i_in1"], i_in2=meta["i_in2"])
    node = OximeterNode()
    readings = list(node.process(trace))
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "spo2", "hr", "flags"])
        for r in readings:
            writer.writerow([fmt(r.t), fmt(r.spo2), fmt(r.hr), "|".join(r.flag_names())])
    leftover = len(trace) % int(round(node.window_s * trace.fs))
    if leftover:
        print("warning: final partial window skipped", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------- serve


def cmd_serve(args) -> int:
    data_dir = Path(args.data_dir)
    if args.config:
        config = ServerConfig.from_file(args.config, data_dir, args.host, args.port)
    elif args.demo_users:
        config = ServerConfig(
            data_dir=data_dir, users=demo_users(args.demo_patient),
            host=args.host, port=args.port,
        )
    else:
        print("serve needs --config or --demo-users", file=sys.stderr)
        return EXIT_USAGE
    server = MhsServer(config).start()
    print(f"serving on {server.base_url} (data in {data_dir})", flush=True)
    stop = {"flag": False}

    def handle(signum, frame):
        stop["flag"] = True

    signal.signal(signal.SIGTERM, handle)
    signal.signal(signal.SIGINT, handle)
    try:
        while not stop["flag"]:
            time.sleep(0.2)
    finally:
        server.stop()
    return EXIT_OK


# ---------------------------------------------------------------------- watch


def cmd_watch(args) -> int:
    client = MhsClient(args.server, args.principal, args.password)
    try:
        client.login()
    except (AuthError, TransportError) as exc:
        print(f"login failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    last_alert = 0
    last_t = None
    info_cursor = 0
    while True:
        try:
            if client.role == "practitioner":
                packets = client.collect_data(args.patient)["packets"]
            else:
                # patient tokens cannot call collectData; show synced info items
                packets = []
                sync = client.download_info(args.patient, after=info_cursor)
                for item in sync.get("items", []):
                    info_cursor = max(info_cursor, item["id"])
                    print(f"INFO #{item['id']} {item['kind']}: {item['text']}")
            if packets:
                latest = packets[-1]["packet"]
                if latest["t"] != last_t:
                    last_t = latest["t"]
                    risk = packets[-1]["risk"]
                    print(
                        f"t={latest['t']:>8.1f}  activity={latest['activity']}  "
                        f"spo2={latest['spo2']:5.1f}%  hr={latest['hr']:5.1f} bpm  "
                        f"risk={risk:.3f}  @({latest['lat']:.4f},{latest['lon']:.4f})"
                    )
            alerts = client.list_alerts(after=last_alert).get("alerts", [])
            for alert in alerts:
                last_alert = max(last_alert, alert["id"])
                print(
                    f"ALERT #{alert['id']} t={alert['t']:g} {alert['severity'].upper()} "
                    f"({alert['cause']}) patient={alert['patient_id']}"
                )
        except (AuthError, TransportError) as exc:
            print(f"watch error: {exc}", file=sys.stderr)
            return EXIT_INVARIANT
        if args.once:
            return EXIT_OK
        time.sleep(args.interval)


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("VITALNET_LOG", "WARNING"),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "replay":
        return cmd_replay(args)
    if args.command == "serve":
        return cmd_serve(args)
    if args.command == "watch":
        return cmd_watch(args)
    if args.command == "hash-password":
        print(hash_password(args.password))
        return EXIT_OK
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
