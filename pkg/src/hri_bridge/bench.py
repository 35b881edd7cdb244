"""Throughput and latency benchmark harnesses.

Throughput: one broker, one publisher pushing synthetic RGB-D frames
flat-out, one subscriber counting complete deliveries.  The first
``warmup_s`` of traffic is excluded (connection setup and allocator warm-up
would bias short runs) and frames are counted on the receiver side.

Latency: one relay room, one driver replaying a canned 56-joint motion at a
fixed rate, N-1 mirror clients logging (sequence, receive - send) per state.
All simulated clients share one process and one monotonic clock, so
latencies are exact differences, not estimates.
"""

from __future__ import annotations

import logging
import multiprocessing
import threading
import time
from dataclasses import dataclass

from hri_bridge.avatar import AvatarState, canned_joint_poses
from hri_bridge.broker import BrokerConfig, start_broker
from hri_bridge.client import BridgeClient
from hri_bridge.codec import BINARY, JSON, Document, Int64
from hri_bridge.relay import (
    LatencyReport,
    RelayClient,
    RelayServer,
    StateHeader,
    measure_latency,
    state_from_payload,
)

log = logging.getLogger("hri_bridge.bench")

RGBD_TOPIC = "/rgbd"
RGBD_TYPE = "rgbd_frame"
JSON_FRAME_HINTS = {"msg.rgb": "binary", "msg.depth": "binary"}


@dataclass(frozen=True)
class ThroughputReport:
    codec_id: str
    frame_bytes: int
    duration_s: float
    frames_delivered: int
    fps: float
    mb_per_s: float

    def to_document(self) -> Document:
        return {
            "codec": self.codec_id,
            "frame_bytes": Int64(self.frame_bytes),
            "duration_s": self.duration_s,
            "frames_delivered": Int64(self.frames_delivered),
            "fps": self.fps,
            "MB_per_s": self.mb_per_s,
        }


def rgbd_frame_bytes(width: int, height: int) -> int:
    return width * height * 3 + width * height * 2


def make_rgbd_frame(width: int, height: int, seq: int, stamp_us: int, rgb: bytes, depth: bytes) -> Document:
    if len(rgb) != width * height * 3 or len(depth) != width * height * 2:
        raise ValueError("buffer sizes do not match the frame dimensions")
    return {
        "header": {"seq": Int64(seq), "stamp_us": Int64(stamp_us), "frame_id": "camera"},
        "width": width,
        "height": height,
        "rgb": rgb,
        "depth": depth,
    }


def _pattern_buffers(width: int, height: int) -> tuple[bytes, bytes]:
    rgb = bytes((i * 31) & 0xFF for i in range(4096)) * (width * height * 3 // 4096 + 1)
    depth = bytes((i * 17) & 0xFF for i in range(4096)) * (width * height * 2 // 4096 + 1)
    return rgb[: width * height * 3], depth[: width * height * 2]


class _DeliveryCounter:
    def __init__(self, width: int, height: int, window: tuple[float, float]):
        self.rgb_len = width * height * 3
        self.depth_len = width * height * 2
        self.window = window
        self.count = 0
        self.malformed = 0
        self.lock = threading.Lock()

    def __call__(self, msg: Document) -> None:
        now = time.monotonic()
        rgb = msg.get("rgb")
        depth = msg.get("depth")
        if not isinstance(rgb, bytes) or len(rgb) != self.rgb_len:
            with self.lock:
                self.malformed += 1
            return
        if not isinstance(depth, bytes) or len(depth) != self.depth_len:
            with self.lock:
                self.malformed += 1
            return
        if self.window[0] <= now <= self.window[1]:
            with self.lock:
                self.count += 1


def bench_throughput(
    codec_id: str,
    width: int = 640,
    height: int = 480,
    duration_s: float = 10.0,
    warmup_s: float = 1.0,
    processes: bool = False,
) -> ThroughputReport:
    """End-to-end delivered frame rate through a fresh localhost broker.

    duration_s is the total publishing run; the counting window is
    [warmup_s, duration_s], so the reported duration is their difference.
    """
    if duration_s <= warmup_s:
        raise ValueError("duration_s must exceed warmup_s")
    if codec_id not in (BINARY, JSON):
        raise ValueError(f"unknown codec {codec_id!r}")
    if processes:
        return _bench_throughput_processes(codec_id, width, height, duration_s, warmup_s)

    broker = start_broker(BrokerConfig(codec_id=codec_id))
    try:
        start = time.monotonic()
        window = (start + warmup_s, start + duration_s)
        counter = _DeliveryCounter(width, height, window)
        hints = JSON_FRAME_HINTS if codec_id == JSON else None
        subscriber = BridgeClient(broker.host, broker.port, codec_id=codec_id, hints=hints)
        subscriber.subscribe(RGBD_TOPIC, counter, queue_length=1)
        publisher = BridgeClient(broker.host, broker.port, codec_id=codec_id)
        publisher.advertise(RGBD_TOPIC, RGBD_TYPE)

        rgb, depth = _pattern_buffers(width, height)
        seq = 0
        while time.monotonic() < window[1]:
            frame = make_rgbd_frame(width, height, seq, time.monotonic_ns() // 1000, rgb, depth)
            publisher.publish(RGBD_TOPIC, frame)
            seq += 1
        time.sleep(0.2)  # let the last in-flight frames settle outside the window
        publisher.close()
        subscriber.close()
    finally:
        broker.close()

    measured = duration_s - warmup_s
    fps = counter.count / measured
    return ThroughputReport(
        codec_id=codec_id,
        frame_bytes=rgbd_frame_bytes(width, height),
        duration_s=measured,
        frames_delivered=counter.count,
        fps=fps,
        mb_per_s=fps * rgbd_frame_bytes(width, height) / 1e6,
    )


# -- multi-process variant ---------------------------------------------------

def _publisher_proc(host: str, port: int, codec_id: str, width: int, height: int, stop_at_ns: int) -> None:
    publisher = BridgeClient(host, port, codec_id=codec_id)
    publisher.advertise(RGBD_TOPIC, RGBD_TYPE)
    rgb, depth = _pattern_buffers(width, height)
    seq = 0
    while time.monotonic_ns() < stop_at_ns:
        frame = make_rgbd_frame(width, height, seq, time.monotonic_ns() // 1000, rgb, depth)
        publisher.publish(RGBD_TOPIC, frame)
        seq += 1
    publisher.close()


def _subscriber_proc(
    host: str,
    port: int,
    codec_id: str,
    width: int,
    height: int,
    warmup_end_ns: int,
    stop_at_ns: int,
    result_queue: "multiprocessing.Queue",
) -> None:
    window = (warmup_end_ns / 1e9, stop_at_ns / 1e9)
    counter = _DeliveryCounter(width, height, window)
    hints = JSON_FRAME_HINTS if codec_id == JSON else None
    subscriber = BridgeClient(host, port, codec_id=codec_id, hints=hints)
    subscriber.subscribe(RGBD_TOPIC, counter, queue_length=1)
    while time.monotonic_ns() < stop_at_ns:
        time.sleep(0.05)
    time.sleep(0.2)
    subscriber.close()
    result_queue.put(counter.count)


def _bench_throughput_processes(
    codec_id: str, width: int, height: int, duration_s: float, warmup_s: float
) -> ThroughputReport:
    # CLOCK_MONOTONIC is shared across processes on one host, so absolute
    # deadlines synchronize the roles without extra IPC
    broker = start_broker(BrokerConfig(codec_id=codec_id))
    ctx = multiprocessing.get_context("fork")
    result_queue: multiprocessing.Queue = ctx.Queue()
    grace_ns = int(0.5e9)
    start_ns = time.monotonic_ns() + grace_ns
    warmup_end_ns = start_ns + int(warmup_s * 1e9)
    stop_at_ns = start_ns + int(duration_s * 1e9)
    try:
        sub = ctx.Process(
            target=_subscriber_proc,
            args=(broker.host, broker.port, codec_id, width, height, warmup_end_ns, stop_at_ns, result_queue),
        )
        pub = ctx.Process(
            target=_publisher_proc,
            args=(broker.host, broker.port, codec_id, width, height, stop_at_ns),
        )
        sub.start()
        pub.start()
        count = result_queue.get(timeout=duration_s + 30)
        pub.join(timeout=10)
        sub.join(timeout=10)
    finally:
        broker.close()
    measured = duration_s - warmup_s
    fps = count / measured
    return ThroughputReport(
        codec_id=codec_id,
        frame_bytes=rgbd_frame_bytes(width, height),
        duration_s=measured,
        frames_delivered=count,
        fps=fps,
        mb_per_s=fps * rgbd_frame_bytes(width, height) / 1e6,
    )


# ---------------------------------------------------------------------------
# latency benchmark
# ---------------------------------------------------------------------------

DRIVER_ENTITY = "driver_avatar"
BENCH_ROOM = "bench"


@dataclass(frozen=True)
class LatencyRun:
    client_count: int
    report: LatencyReport
    converged: bool
    csv_rows: tuple[tuple[int, str, int, int], ...]  # (count, client, sequence, latency us)


class _MirrorLog:
    """Receiver log; keeps the raw newest frame so the hot path never
    materializes the 56-joint array."""

    def __init__(self, client_id: str):
        self.client_id = client_id
        self.samples: list[tuple[int, int, int]] = []  # (sequence, latency us, recv us)
        self.last_sequence = -1
        self.last_payload: bytes | None = None
        self.lock = threading.Lock()

    def __call__(self, header: StateHeader, payload: bytes, recv_us: int) -> None:
        with self.lock:
            self.samples.append((header.sequence, recv_us - header.send_timestamp, recv_us))
            self.last_sequence = header.sequence
            self.last_payload = payload

    def last_state(self) -> AvatarState | None:
        with self.lock:
            payload = self.last_payload
        return None if payload is None else state_from_payload(payload)


def bench_latency(
    client_counts: list[int],
    rate_hz: float = 60.0,
    duration_s: float = 10.0,
    warmup_s: float = 1.0,
) -> list[LatencyRun]:
    """One relay run per client count; raises EmptyLog for mirror-less runs."""
    if not client_counts:
        raise ValueError("client_counts must be non-empty")
    if rate_hz <= 0 or duration_s <= warmup_s:
        raise ValueError("need rate_hz > 0 and duration_s > warmup_s")
    return [_latency_run(count, rate_hz, duration_s, warmup_s) for count in client_counts]


def _latency_run(count: int, rate_hz: float, duration_s: float, warmup_s: float) -> LatencyRun:
    if count < 1:
        raise ValueError("client count must be at least 1")
    server = RelayServer()
    mirrors: list[tuple[_MirrorLog, RelayClient]] = []
    driver = None
    try:
        driver = RelayClient(server.host, server.port, "driver")
        driver.create_room(BENCH_ROOM)
        driver.join_room(BENCH_ROOM)
        for i in range(count - 1):
            mlog = _MirrorLog(f"mirror{i}")
            client = RelayClient(server.host, server.port, mlog.client_id, on_state_raw=mlog)
            client.join_room(BENCH_ROOM)
            mirrors.append((mlog, client))

        period = 1.0 / rate_hz
        start = time.monotonic()
        warmup_end_us = int((start + warmup_s) * 1e6)
        deadline = start + duration_s
        seq = 0
        final_state = None
        next_send = start
        while True:
            now = time.monotonic()
            if now >= deadline:
                break
            if now < next_send:
                time.sleep(next_send - now)
            seq += 1
            final_state = AvatarState(
                entity_id=DRIVER_ENTITY,
                send_timestamp=time.monotonic_ns() // 1000,
                sequence=seq,
                joints=canned_joint_poses(seq * period),
            )
            driver.send_state(final_state)
            next_send += period

        # drain: every mirror should reach the driver's final sequence
        drain_deadline = time.monotonic() + 5.0
        while time.monotonic() < drain_deadline:
            if all(mlog.last_sequence == seq for mlog, _ in mirrors):
                break
            time.sleep(0.01)

        converged = bool(mirrors) and all(
            mlog.last_state() == final_state for mlog, _ in mirrors
        )
        logs = {}
        rows = []
        for mlog, _ in mirrors:
            with mlog.lock:
                kept = [(s, lat) for s, lat, recv in mlog.samples if recv >= warmup_end_us]
            logs[mlog.client_id] = kept
            rows.extend((count, mlog.client_id, s, lat) for s, lat in kept)
        report = measure_latency(logs, client_count=count)
        return LatencyRun(
            client_count=count, report=report, converged=converged, csv_rows=tuple(rows)
        )
    finally:
        if driver is not None:
            driver.close()
        for _, client in mirrors:
            client.close()
        server.close()
