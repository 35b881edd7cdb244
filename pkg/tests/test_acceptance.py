"""Acceptance suite: one test per release criterion, at the pinned tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion (a failed criterion fails its test).
"""

import io
import math
import random
import threading
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from hri_bridge import codec
from hri_bridge.avatar import rigid_pose_document, yaw_quat
from hri_bridge.bench import bench_latency, bench_throughput
from hri_bridge.broker import start_broker
from hri_bridge.client import BridgeClient
from hri_bridge.codec import BINARY, JSON
from hri_bridge.metrics import (
    accumulated_gaze_angle,
    count_utterances,
    required_time,
    trajectory_length,
)
from hri_bridge.regression import ols_fit
from hri_bridge.sensors import (
    GAZE_ANGLE_TO,
    RELATIVE_RANGE_BEARING,
    SensorSpec,
    reproduce_sensor_from_events,
)
from hri_bridge.store import (
    SceneEvent,
    SessionHeader,
    SessionReader,
    open_session,
    replay,
)

from conftest import ChoppyReader, random_document
from test_broker import Collector, RawSubscriber, wait_until


def announce(name):
    print(f"\nACCEPT {name}: PASS", flush=True)


# ---------------------------------------------------------------------------
# criterion 1: throughput (RGB-D frames through the broker)
# ---------------------------------------------------------------------------

def test_criterion_throughput():
    binary = bench_throughput(BINARY, width=640, height=480, duration_s=10.0, warmup_s=1.0)
    assert binary.frame_bytes == 1_536_000
    assert binary.fps >= 30.0, f"binary fps {binary.fps:.2f} below 30"

    json_baseline = bench_throughput(JSON, width=640, height=480, duration_s=10.0, warmup_s=1.0)
    assert json_baseline.frames_delivered > 0
    ratio = binary.fps / json_baseline.fps
    assert ratio >= 5.0, f"binary/json fps ratio {ratio:.2f} below 5"
    print(
        f"\n  binary {binary.fps:.1f} fps ({binary.mb_per_s:.0f} MB/s), "
        f"json {json_baseline.fps:.1f} fps, ratio {ratio:.1f}x"
    )
    announce("throughput: 1.5MB frames, binary >= 30 fps and >= 5x json baseline")


# ---------------------------------------------------------------------------
# criterion 2: latency flatness across room sizes
# ---------------------------------------------------------------------------

def test_criterion_latency_flatness():
    runs = bench_latency([2, 4, 8], rate_hz=60.0, duration_s=6.0, warmup_s=1.0)
    by_count = {run.client_count: run for run in runs}
    for count, run in by_count.items():
        assert run.converged, f"{count}-client mirrors did not converge to the final pose"
        assert run.report.sample_count > 100
    median2 = by_count[2].report.pooled_median_us
    median8 = by_count[8].report.pooled_median_us
    assert median8 <= 1.5 * median2, (
        f"pooled median at 8 clients {median8}us > 1.5 x {median2}us"
    )
    print(
        "\n  medians us: "
        + ", ".join(f"{c}-client {by_count[c].report.pooled_median_us}" for c in (2, 4, 8))
        + f"  (8/2 ratio {median8 / median2:.2f})"
    )
    announce("latency flatness: 56-joint sync at 60 Hz, median(8) <= 1.5 x median(2), exact convergence")


# ---------------------------------------------------------------------------
# criterion 3: codec correctness
# ---------------------------------------------------------------------------

def test_criterion_codec_correctness():
    # fixed byte vectors
    assert codec.encode_document({}) == bytes.fromhex("0500000000")
    assert codec.encode_document({"x": 1.0}) == bytes.fromhex("10000000017800000000000000f03f00")
    assert len(codec.encode_document({"op": "publish"})) == 21

    rng = random.Random(0xACCE97)
    for i in range(10_000):
        # sprinkle multi-megabyte binary blobs through the corpus
        doc = random_document(rng, max_blob=2 * 1024 * 1024 if i % 500 == 0 else 4096)
        assert codec.decode_document(codec.encode_document(doc)) == doc
    for _ in range(10_000):
        doc = random_document(rng, json_safe=True)
        assert codec.decode_json(codec.encode_json(doc)) == doc

    # arbitrary stream chunking never changes decoded output
    for codec_id in (BINARY, JSON):
        docs = [random_document(rng, json_safe=(codec_id == JSON)) for _ in range(200)]
        sink = io.BytesIO()
        for doc in docs:
            codec.write_frame(sink, doc, codec_id)
        data = sink.getvalue()
        for chunk in (1, 3, 17, len(data) or 1):
            src = ChoppyReader(data, chunk)
            assert [codec.read_frame(src, codec_id) for _ in docs] == docs
    announce("codec: 10k random round-trips (binary + json), fixed vectors bit-exact, chunking-proof")


# ---------------------------------------------------------------------------
# criterion 4: broker ordering, isolation, drop accounting
# ---------------------------------------------------------------------------

def _p95_latency_us(broker, topic, n=400, rate_hz=150.0):
    from hri_bridge.codec import Int64

    latencies = []
    lock = threading.Lock()

    def cb(msg):
        now = time.monotonic_ns() // 1000
        with lock:
            latencies.append(now - msg["sent_us"])

    sub = BridgeClient(broker.host, broker.port)
    sub.subscribe(topic, cb, queue_length=n + 10)
    pub = BridgeClient(broker.host, broker.port)
    pub.advertise(topic, "t")
    wait_until(lambda: any(t.name == topic and t.subscriber_count == 1 for t in broker.stats()))
    period = 1.0 / rate_hz
    for i in range(n):
        pub.publish(topic, {"seq": i, "sent_us": Int64(time.monotonic_ns() // 1000)})
        time.sleep(period)
    wait_until(lambda: len(latencies) == n, timeout=30)
    pub.close()
    sub.close()
    with lock:
        ordered = sorted(latencies)
    return ordered[min(len(ordered) - 1, math.ceil(0.95 * len(ordered)) - 1)]


def test_criterion_broker_ordering_and_isolation():
    with start_broker() as broker:
        # per-publisher FIFO over 10k sequenced messages
        got = Collector()
        sub = BridgeClient(broker.host, broker.port)
        sub.subscribe("/fifo", got, queue_length=20_000)
        pub = BridgeClient(broker.host, broker.port)
        pub.advertise("/fifo", "t")
        wait_until(lambda: any(t.name == "/fifo" and t.subscriber_count == 1 for t in broker.stats()))
        for i in range(10_000):
            pub.publish("/fifo", {"seq": i})
        assert wait_until(lambda: len(got) == 10_000, timeout=120)
        assert [m["seq"] for m in got.snapshot()] == list(range(10_000))
        pub.close()
        sub.close()

    with start_broker() as broker:
        baseline = _p95_latency_us(broker, "/healthy_baseline")
        stuck = RawSubscriber(broker.host, broker.port, "/stuck", queue_length=1)
        flood_pub = BridgeClient(broker.host, broker.port)
        flood_pub.advertise("/stuck", "t")
        wait_until(lambda: any(t.name == "/stuck" for t in broker.stats()))
        stop = threading.Event()

        def flood():
            blob = b"x" * 65536
            i = 0
            while not stop.is_set():
                flood_pub.publish("/stuck", {"seq": i, "blob": blob})
                i += 1
                time.sleep(0.002)

        flooder = threading.Thread(target=flood)
        flooder.start()
        try:
            stalled = _p95_latency_us(broker, "/healthy")
        finally:
            stop.set()
            flooder.join()
            flood_pub.close()
            stuck.close()
        assert stalled <= 2 * baseline, f"p95 {stalled}us with a stalled topic vs baseline {baseline}us"

    with start_broker() as broker:
        # drop-oldest accounting with exact conservation
        raw = RawSubscriber(broker.host, broker.port, "/drops", queue_length=1)
        pub = BridgeClient(broker.host, broker.port)
        pub.advertise("/drops", "t")
        wait_until(lambda: any(t.name == "/drops" and t.subscriber_count == 1 for t in broker.stats()))
        pub.publish("/drops", {"k": "fill", "blob": b"\x00" * (32 * 1024 * 1024)})
        assert raw.wait_readable(timeout=20)
        for i in range(3):
            pub.publish("/drops", {"seq": i})
        assert wait_until(lambda: {t.name: t for t in broker.stats()}["/drops"].dropped_count == 2, timeout=20)
        received = [raw.read_frame()["msg"], raw.read_frame()["msg"]]
        assert received[0]["k"] == "fill"
        assert received[1]["seq"] == 2
        assert wait_until(lambda: {t.name: t for t in broker.stats()}["/drops"].delivered_count == 2, timeout=10)
        stats = {t.name: t for t in broker.stats()}["/drops"]
        assert stats.delivered_count + stats.dropped_count == 4  # publishes x subscribers
        pub.close()
        raw.close()
    announce("broker: per-publisher FIFO x 10k, stalled-topic isolation p95 <= 2x, drop-oldest conservation exact")


# ---------------------------------------------------------------------------
# criterion 5: record/replay fidelity
# ---------------------------------------------------------------------------

def _header():
    return SessionHeader(session_id="accept", created_at=1_700_000_000_000_000, entities=[])


def test_criterion_record_replay_fidelity(tmp_path):
    rng = random.Random(0xACC3)
    path = tmp_path / "ten_k.session"
    events = []
    t = 0
    for i in range(10_000):
        t += rng.randint(0, 2000)
        events.append(SceneEvent(t, f"e{i % 7}", "custom", {"n": i, "blob": rng.randbytes(rng.randint(0, 48))}))
    with open_session(path, _header()) as w:
        for e in events:
            w.append(e)
    with SessionReader(path) as r:
        got = r.read_all()
    assert got == events
    for a, b in zip(got, events):
        assert codec.encode_document(a.to_document()) == codec.encode_document(b.to_document())

    # query_range against the linear-scan oracle, 1000 random ranges
    t_max = events[-1].t
    with SessionReader(path) as indexed:
        assert indexed.index
        for _ in range(1000):
            a, b = sorted((rng.randint(-100, t_max + 100), rng.randint(-100, t_max + 100)))
            oracle = [e for e in events if a <= e.t <= b]
            assert indexed.query_range(a, b) == oracle

    # replay timing: speed 1.0 gaps within +-5 ms at p95
    timed_path = tmp_path / "timed.session"
    gap_us = 10_000
    with open_session(timed_path, _header()) as w:
        for i in range(250):
            w.append(SceneEvent(i * gap_us, "e", "custom", {"n": i}))
    arrivals = []
    with SessionReader(timed_path) as r:
        summary = replay(r, 1.0, lambda e: arrivals.append(time.perf_counter()))
    assert summary.events_emitted == 250
    errors = sorted(
        abs((b - a) - gap_us / 1e6) for a, b in zip(arrivals, arrivals[1:])
    )
    p95 = errors[math.ceil(0.95 * len(errors)) - 1]
    assert p95 <= 0.005, f"replay gap error p95 {p95 * 1e3:.2f} ms"

    # total duration at speed 2.0 within 5% of half
    recorded_s = 249 * gap_us / 1e6
    with SessionReader(timed_path) as r:
        summary2 = replay(r, 2.0, lambda e: None)
    want = recorded_s / 2
    assert abs(summary2.wall_duration_s - want) <= 0.05 * want, (
        f"speed-2 duration {summary2.wall_duration_s:.3f}s vs expected {want:.3f}s"
    )
    announce("record/replay: 10k events byte-identical, gap p95 <= 5 ms, 2x duration within 5%, query oracle x1000")


# ---------------------------------------------------------------------------
# criterion 6: sensor reproduction
# ---------------------------------------------------------------------------

def test_criterion_sensor_reproduction():
    def pose_ev(t, entity, pos, rot=(1.0, 0.0, 0.0, 0.0)):
        return SceneEvent(t, entity, "pose", rigid_pose_document(pos, rot))

    # axis-aligned analytic cases, exact
    events = [pose_ev(0, "cam", (0.0, 0.0, 0.0)), pose_ev(0, "ahead", (0.0, 0.0, 5.0)), pose_ev(0, "side", (5.0, 0.0, 0.0))]
    spec = SensorSpec("rb", "cam", RELATIVE_RANGE_BEARING, ("ahead", "side"), 1000)
    readings = {r["target"]: r for r in reproduce_sensor_from_events(events, spec).samples[0][1]["readings"]}
    assert readings["ahead"]["range"] == 5.0
    assert readings["ahead"]["azimuth"] == 0.0
    assert readings["ahead"]["elevation"] == 0.0
    assert readings["side"]["range"] == 5.0
    assert abs(readings["side"]["azimuth"] - math.pi / 2) < 1e-15
    gaze = SensorSpec("g", "cam", GAZE_ANGLE_TO, ("ahead",), 1000)
    assert reproduce_sensor_from_events(events, gaze).samples[0][1]["angle"] == 0.0
    gaze_side = SensorSpec("g", "cam", GAZE_ANGLE_TO, ("side",), 1000)
    assert abs(reproduce_sensor_from_events(events, gaze_side).samples[0][1]["angle"] - math.pi / 2) < 1e-15

    # randomized static scenes against the closed-form oracle, 1e-12
    rng = random.Random(0x53A50)
    for _ in range(100):
        sensor_pos = tuple(rng.uniform(-5, 5) for _ in range(3))
        q = np.array([rng.gauss(0, 1) for _ in range(4)])
        q /= np.linalg.norm(q)
        sensor_rot = tuple(float(v) for v in q)
        target_pos = tuple(rng.uniform(-5, 5) for _ in range(3))
        events = [pose_ev(0, "cam", sensor_pos, sensor_rot), pose_ev(0, "t", target_pos)]
        spec = SensorSpec("rb", "cam", RELATIVE_RANGE_BEARING, ("t",), 500)
        reading = reproduce_sensor_from_events(events, spec).samples[0][1]["readings"][0]

        w, x, y, z = sensor_rot
        rot = Rotation.from_quat([x, y, z, w])
        rel = np.asarray(target_pos) - np.asarray(sensor_pos)
        local = rot.inv().apply(rel)
        assert abs(reading["range"] - float(np.linalg.norm(rel))) < 1e-12
        assert abs(reading["azimuth"] - float(np.arctan2(local[0], local[2]))) < 1e-12
        assert abs(reading["elevation"] - float(np.arctan2(local[1], np.hypot(local[0], local[2])))) < 1e-12

        gspec = SensorSpec("g", "cam", GAZE_ANGLE_TO, ("t",), 500)
        angle = reproduce_sensor_from_events(events, gspec).samples[0][1]["angle"]
        fwd = rot.apply([0.0, 0.0, 1.0])
        want = float(np.arccos(np.clip(np.dot(fwd, rel) / np.linalg.norm(rel), -1.0, 1.0)))
        assert abs(angle - want) < 1e-12

    # bit-identical across runs
    rng = random.Random(0xB17)
    events = []
    t = 0
    for _ in range(500):
        t += rng.randint(1, 300)
        q = np.array([rng.gauss(0, 1) for _ in range(4)])
        q /= np.linalg.norm(q)
        events.append(
            pose_ev(t, rng.choice(["cam", "a", "b"]), tuple(rng.uniform(-3, 3) for _ in range(3)), tuple(float(v) for v in q))
        )
    spec = SensorSpec("rb", "cam", RELATIVE_RANGE_BEARING, ("a", "b"), 333)

    def run_bytes():
        trace = reproduce_sensor_from_events(events, spec)
        return [(t, codec.encode_document(doc)) for t, doc in trace.samples]

    assert run_bytes() == run_bytes()
    announce("sensors: axis-aligned exact, randomized scenes within 1e-12 of oracle, bit-identical runs")


# ---------------------------------------------------------------------------
# criterion 7: metrics and regression
# ---------------------------------------------------------------------------

def test_criterion_metrics_and_regression():
    rng = random.Random(0x4E7)

    # required time: exact arithmetic oracle
    events = [
        SceneEvent(1_000_000, "task", "task_marker", {"marker": "task_start"}),
        SceneEvent(61_000_000, "task", "task_marker", {"marker": "task_complete"}),
    ]
    assert abs(required_time(events).seconds - 60.0) < 1e-9

    # utterance count vs linear filter oracle
    speakers = ["robot1", "avatar1"]
    mixed = []
    t = 0
    for i in range(2000):
        t += rng.randint(0, 50)
        mixed.append(
            SceneEvent(t, "x", "utterance", {"speaker": rng.choice(speakers), "text": "s"})
            if rng.random() < 0.7
            else SceneEvent(t, "x", "custom", {})
        )
    for speaker in speakers:
        oracle = sum(1 for e in mixed if e.kind == "utterance" and e.payload["speaker"] == speaker)
        assert count_utterances(mixed, speaker) == oracle

    # gaze angle vs independent direction-angle oracle
    quats = []
    for _ in range(400):
        q = np.array([rng.gauss(0, 1) for _ in range(4)])
        q /= np.linalg.norm(q)
        quats.append(tuple(float(v) for v in q))
    gaze_events = [
        SceneEvent(i, "a", "pose", rigid_pose_document((0.0, 0.0, 0.0), q)) for i, q in enumerate(quats)
    ]
    fwd = lambda q: Rotation.from_quat([q[1], q[2], q[3], q[0]]).apply([0.0, 0.0, 1.0])
    oracle = sum(
        float(np.arccos(np.clip(np.dot(fwd(a), fwd(b)), -1.0, 1.0))) for a, b in zip(quats, quats[1:])
    )
    assert abs(accumulated_gaze_angle(gaze_events, "a") - oracle) < 1e-9

    # trajectory length vs cumulative-sum oracle
    points = np.cumsum([[rng.uniform(-1, 1) for _ in range(3)] for _ in range(600)], axis=0)
    traj_events = [
        SceneEvent(i, "a", "pose", rigid_pose_document(tuple(map(float, p)), (1.0, 0.0, 0.0, 0.0)))
        for i, p in enumerate(points)
    ]
    oracle = float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))
    assert abs(trajectory_length(traj_events, "a") - oracle) < 1e-9

    # zero-noise OLS: exact recovery
    gen = np.random.default_rng(42)
    X = gen.normal(size=(50, 2))
    y = 1.0 + 2.0 * X[:, 0] - 3.0 * X[:, 1]
    model = ols_fit(X, y)
    assert abs(model.intercept - 1.0) < 1e-9
    assert abs(model.coefficients[0] - 2.0) < 1e-9
    assert abs(model.coefficients[1] + 3.0) < 1e-9
    assert model.r_squared == 1.0

    # seeded Monte Carlo at the scoring-study shape: n=196, p=10, sigma=0.1
    n, p, sigma, trials = 196, 10, 0.1, 40
    master = np.random.default_rng(20260810)
    beta_true = master.uniform(-2, 2, size=p)
    intercept_true = 3.0
    hits = np.zeros(p + 1, dtype=int)
    for trial in range(trials):
        tg = np.random.default_rng(1000 + trial)
        Xt = tg.normal(size=(n, p))
        yt = intercept_true + Xt @ beta_true + tg.normal(scale=sigma, size=n)
        m = ols_fit(Xt, yt)
        est = np.array([m.intercept, *m.coefficients])
        truth = np.array([intercept_true, *beta_true])
        se = np.array(m.std_errors)
        hits += (np.abs(est - truth) <= 3 * se).astype(int)
    fractions = hits / trials
    assert np.all(fractions >= 0.95), f"3-SE hit fractions {fractions}"

    # residual orthogonality within 1e-8 relative
    gen = np.random.default_rng(11)
    X = gen.normal(size=(196, 10))
    y = 2.0 + X @ gen.uniform(-1, 1, size=10) + gen.normal(scale=0.1, size=196)
    m = ols_fit(X, y)
    A = np.column_stack([np.ones(len(y)), X])
    residuals = y - A @ np.array([m.intercept, *m.coefficients])
    rel = np.abs(A.T @ residuals).max() / (
        np.linalg.norm(A, axis=0).max() * max(np.linalg.norm(residuals), 1e-30)
    )
    assert rel < 1e-8, f"residual orthogonality {rel:.2e}"
    announce("metrics/regression: oracles within 1e-9, exact zero-noise OLS, 196x10 Monte Carlo, orthogonality 1e-8")
