"""Command line entry point.

Subcommands: serve, relay, bench-throughput, bench-latency, record, replay,
metrics, fit.  Reports go to stdout as JSON; sample dumps go to CSV files.
Log verbosity comes from the HRI_BRIDGE_LOG environment variable
(debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import signal
import sys
import threading
import time

from hri_bridge import bench, codec, metrics, regression, store
from hri_bridge.avatar import AvatarState
from hri_bridge.broker import BrokerConfig, start_broker
from hri_bridge.client import BridgeClient
from hri_bridge.codec import BINARY, JSON
from hri_bridge.relay import RelayClient, RelayServer
from hri_bridge.store import (
    CUSTOM,
    EVENT_KINDS,
    POSE,
    SceneEvent,
    SessionHeader,
    SessionReader,
    open_session,
)

log = logging.getLogger("hri_bridge.cli")


def _configure_logging() -> None:
    level_name = os.environ.get("HRI_BRIDGE_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _parse_bind(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"bind address {text!r} is not HOST:PORT")
    return host, int(port)


def _emit(obj) -> None:
    print(json.dumps(obj), flush=True)


def _wait_for_interrupt() -> None:
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *a: stop.set())
    try:
        while not stop.is_set():
            time.sleep(0.2)
    except KeyboardInterrupt:
        pass


# ---------------------------------------------------------------------------
# servers
# ---------------------------------------------------------------------------

def cmd_serve(args) -> int:
    host, port = _parse_bind(args.bind)
    config = BrokerConfig(
        host=host,
        port=port,
        codec_id=args.codec,
        max_frame_bytes=args.max_frame,
        per_topic_workers=not args.no_topic_workers,
    )
    broker = start_broker(config)
    _emit({"event": "listening", "role": "broker", "host": broker.host, "port": broker.port, "codec": args.codec})
    try:
        _wait_for_interrupt()
    finally:
        broker.close()
    return 0


def cmd_relay(args) -> int:
    host, port = _parse_bind(args.bind)
    server = RelayServer(host=host, port=port)
    _emit({"event": "listening", "role": "relay", "host": server.host, "port": server.port})
    try:
        _wait_for_interrupt()
    finally:
        server.close()
    return 0


# ---------------------------------------------------------------------------
# benchmarks
# ---------------------------------------------------------------------------

def cmd_bench_throughput(args) -> int:
    report = bench.bench_throughput(
        codec_id=args.codec,
        width=args.width,
        height=args.height,
        duration_s=args.seconds,
        warmup_s=args.warmup,
        processes=args.processes,
    )
    _emit(
        {
            "codec": report.codec_id,
            "frame_bytes": report.frame_bytes,
            "duration_s": report.duration_s,
            "frames_delivered": report.frames_delivered,
            "fps": report.fps,
            "MB_per_s": report.mb_per_s,
        }
    )
    return 0


def cmd_bench_latency(args) -> int:
    counts = [int(c) for c in args.clients.split(",") if c]
    runs = bench.bench_latency(counts, rate_hz=args.rate, duration_s=args.seconds, warmup_s=args.warmup)
    out = []
    for run in runs:
        entry = {
            "client_count": run.client_count,
            "converged": run.converged,
            "samples": run.report.sample_count,
            "pooled_median_us": run.report.pooled_median_us,
            "pooled_p95_us": run.report.pooled_p95_us,
            "pooled_max_us": run.report.pooled_max_us,
            "clients": [
                {
                    "client_id": c.client_id,
                    "samples": len(c.samples),
                    "median_us": c.median_us,
                    "p95_us": c.p95_us,
                    "max_us": c.max_us,
                }
                for c in run.report.clients
            ],
        }
        if args.csv_dir:
            os.makedirs(args.csv_dir, exist_ok=True)
            path = os.path.join(args.csv_dir, f"latency_{run.client_count}clients.csv")
            with open(path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["client_count", "client_id", "sequence", "latency_us"])
                writer.writerows(run.csv_rows)
            entry["csv"] = path
        out.append(entry)
    _emit({"runs": out})
    return 0


# ---------------------------------------------------------------------------
# record / replay
# ---------------------------------------------------------------------------

def _as_scene_event(t_rel: int, topic: str, msg) -> SceneEvent:
    if isinstance(msg, dict) and msg.get("kind") in EVENT_KINDS and "payload" in msg:
        try:
            return SceneEvent(
                t=t_rel,
                entity_id=str(msg.get("entity_id", topic)),
                kind=msg["kind"],
                payload=msg["payload"],
            ).validate()
        except ValueError:
            pass
    return SceneEvent(t=t_rel, entity_id=topic, kind=CUSTOM, payload=msg)


def cmd_record(args) -> int:
    header = SessionHeader(
        session_id=args.session_id,
        created_at=store.utc_now_us(),
        entities=[],
        annotations={"source": args.relay or args.broker or ""},
    )
    writer = open_session(args.out, header)
    count = 0
    lock = threading.Lock()
    start_us = time.monotonic_ns() // 1000

    def append(build) -> None:
        # relative time is taken inside the lock so appends from the
        # snapshot and from the reader thread stay monotone
        nonlocal count
        with lock:
            t_rel = max(0, time.monotonic_ns() // 1000 - start_us)
            writer.append(build(t_rel))
            count += 1

    if args.relay:
        host, port = _parse_bind(args.relay)

        def on_state(state: AvatarState, recv_us: int) -> None:
            append(lambda t: SceneEvent(t=t, entity_id=state.entity_id, kind=POSE, payload=state.to_document()))

        client = RelayClient(host, port, args.client, on_state=on_state)
        snapshot = client.join_room(args.room)
        for state in snapshot:
            append(lambda t, s=state: SceneEvent(t=t, entity_id=s.entity_id, kind=POSE, payload=s.to_document()))
        time.sleep(args.seconds)
        client.close()
    else:
        host, port = _parse_bind(args.broker)

        def on_msg(msg) -> None:
            append(lambda t: _as_scene_event(t, args.topic, msg))

        client = BridgeClient(host, port, codec_id=args.codec)
        client.subscribe(args.topic, on_msg, queue_length=args.queue_length)
        time.sleep(args.seconds)
        client.close()

    writer.close()
    _emit({"event": "recorded", "out": args.out, "events": count})
    return 0


def cmd_replay(args) -> int:
    speed = math.inf if args.speed in ("inf", "max") else float(args.speed)
    publisher = None
    if args.to:
        host, port = _parse_bind(args.to)
        publisher = BridgeClient(host, port, codec_id=args.codec)
        publisher.advertise(args.topic, "scene_event")

    def sink(event: SceneEvent) -> None:
        if publisher is not None:
            publisher.publish(args.topic, event.to_document())

    with SessionReader(args.inp) as reader:
        summary = store.replay(reader, speed, sink)
    if publisher is not None:
        time.sleep(0.2)
        publisher.close()
    _emit(
        {
            "event": "replayed",
            "in": args.inp,
            "events_emitted": summary.events_emitted,
            "wall_duration_s": summary.wall_duration_s,
            "speed": "inf" if math.isinf(speed) else speed,
        }
    )
    return 0


# ---------------------------------------------------------------------------
# metrics / fit
# ---------------------------------------------------------------------------

def cmd_metrics(args) -> int:
    feature_names = [f for f in args.features.split(",") if f]
    config = metrics.FeatureConfig(
        robot_entity=args.robot,
        avatar_entity=args.avatar,
        robot_speaker=args.speaker,
        timeout_s=args.timeout_s,
        head_joint_id=args.head_joint,
    )
    rows = []
    for path in args.inp:
        with SessionReader(path) as reader:
            fv = metrics.extract_features(reader, feature_names, config)
        rows.append((fv.session_id or os.path.basename(path), fv))
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["session_id", *feature_names])
        for session_id, fv in rows:
            writer.writerow([session_id, *(repr(fv.values[name]) for name in feature_names)])
    _emit({"event": "metrics", "out": args.out, "sessions": len(rows), "features": feature_names})
    return 0


def cmd_fit(args) -> int:
    with open(args.features, newline="") as f:
        feature_rows = list(csv.DictReader(f))
    with open(args.scores, newline="") as f:
        score_rows = list(csv.DictReader(f))
    if not feature_rows:
        raise ValueError("features CSV is empty")
    feature_names = [c for c in feature_rows[0].keys() if c != "session_id"]
    scores = {row["session_id"]: float(row["score"]) for row in score_rows}
    X, y = [], []
    for row in feature_rows:
        sid = row["session_id"]
        if sid not in scores:
            raise ValueError(f"no score for session {sid!r}")
        X.append([float(row[name]) for name in feature_names])
        y.append(scores[sid])
    model = regression.ols_fit(X, y, feature_names=feature_names)
    doc = regression.model_to_document(model)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(codec.encode_json(doc))
    _emit(
        {
            "event": "fit",
            "out": args.out,
            "n_samples": model.n_samples,
            "r_squared": model.r_squared,
            "residual_std": model.residual_std,
        }
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hri-bridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the pub/sub broker")
    p.add_argument("--bind", default="127.0.0.1:0")
    p.add_argument("--codec", choices=[BINARY, JSON], default=BINARY)
    p.add_argument("--max-frame", type=int, default=64 * 1024 * 1024)
    p.add_argument("--no-topic-workers", action="store_true", help="route inline instead of per-topic workers")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("relay", help="run the room state relay")
    p.add_argument("--bind", default="127.0.0.1:0")
    p.set_defaults(fn=cmd_relay)

    p = sub.add_parser("bench-throughput", help="RGB-D frame throughput through a fresh broker")
    p.add_argument("--codec", choices=[BINARY, JSON], default=BINARY)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--warmup", type=float, default=1.0)
    p.add_argument("--processes", action="store_true", help="run publisher/subscriber as separate processes")
    p.set_defaults(fn=cmd_bench_throughput)

    p = sub.add_parser("bench-latency", help="avatar sync latency at several room sizes")
    p.add_argument("--clients", default="2,4,8", help="comma-separated client counts")
    p.add_argument("--rate", type=float, default=60.0)
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--warmup", type=float, default=1.0)
    p.add_argument("--csv-dir", default=None, help="write per-sample CSV files here")
    p.set_defaults(fn=cmd_bench_latency)

    p = sub.add_parser("record", help="record a live relay room or broker topic to a session file")
    p.add_argument("--out", required=True)
    p.add_argument("--seconds", type=float, default=5.0)
    p.add_argument("--session-id", default="session")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--relay", help="relay HOST:PORT")
    src.add_argument("--broker", help="broker HOST:PORT")
    p.add_argument("--room", default="default", help="relay room to join")
    p.add_argument("--client", default="recorder", help="relay client id")
    p.add_argument("--topic", default="/events", help="broker topic to subscribe")
    p.add_argument("--codec", choices=[BINARY, JSON], default=BINARY)
    p.add_argument("--queue-length", type=int, default=10_000)
    p.set_defaults(fn=cmd_record)

    p = sub.add_parser("replay", help="replay a session file with recorded timing")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--speed", default="1.0", help="playback speed factor, or 'inf'")
    p.add_argument("--to", default=None, help="republish events to broker HOST:PORT")
    p.add_argument("--topic", default="/events")
    p.add_argument("--codec", choices=[BINARY, JSON], default=BINARY)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("metrics", help="extract features from session files into a CSV")
    p.add_argument("--in", dest="inp", nargs="+", required=True)
    p.add_argument("--features", default="required_time_s,utterance_count,gaze_angle_rad,trajectory_length_m")
    p.add_argument("--out", required=True)
    p.add_argument("--robot", default=None, help="robot entity id override")
    p.add_argument("--avatar", default=None, help="avatar entity id override")
    p.add_argument("--speaker", default=None, help="utterance speaker override")
    p.add_argument("--timeout-s", type=float, default=metrics.DEFAULT_TIMEOUT_S)
    p.add_argument("--head-joint", type=int, default=None)
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("fit", help="fit the linear scoring model from feature and score CSVs")
    p.add_argument("--features", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fit)

    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (KeyboardInterrupt, BrokenPipeError):
        return 130
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
