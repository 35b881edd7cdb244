"""TCP pub/sub broker with a dedicated worker per topic.

Sessions speak codec frames carrying bridge envelopes.  Each topic owns a
worker thread that fans published frames out to per-subscriber bounded
queues (drop-oldest), and each session owns a single writer thread that
drains its queues to the socket, so no lock is ever held across a socket
write and a stalled subscriber cannot block a topic worker or any other
session.

Protocol misuse (unknown ops, malformed envelopes, type conflicts) is
reported in-band as {"op": "status", "level": "error", ...} frames; the
connection stays open.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
from collections import deque
from dataclasses import dataclass
from typing import Iterator

from hri_bridge import codec
from hri_bridge.codec import BINARY, Document
from hri_bridge.envelope import (
    ADVERTISE,
    PUBLISH,
    SUBSCRIBE,
    UNADVERTISE,
    UNSUBSCRIBE,
    Envelope,
    EnvelopeError,
    parse_envelope,
    status_document,
)

log = logging.getLogger("hri_bridge.broker")

DEFAULT_MAX_FRAME_BYTES = 64 * 1024 * 1024


class BindFailed(OSError):
    pass


@dataclass
class BrokerConfig:
    host: str = "127.0.0.1"
    port: int = 0
    codec_id: str = BINARY
    default_queue_length: int = 1
    max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES
    per_topic_workers: bool = True

    def __post_init__(self) -> None:
        if self.default_queue_length < 1:
            raise ValueError("default_queue_length must be >= 1")


@dataclass(frozen=True)
class TopicStats:
    name: str
    type_name: str | None
    publisher_count: int
    subscriber_count: int
    delivered_count: int
    dropped_count: int


class _Subscription:
    """Bounded frame queue for one (topic, session) pair."""

    __slots__ = ("topic", "session", "bound", "queue", "lock", "delivered", "dropped")

    def __init__(self, topic: "_Topic", session: "_Session", bound: int):
        self.topic = topic
        self.session = session
        self.bound = bound
        self.queue: deque[bytes] = deque()
        self.lock = threading.Lock()
        self.delivered = 0
        self.dropped = 0

    def offer(self, payload: bytes) -> None:
        with self.lock:
            if len(self.queue) >= self.bound:
                self.queue.popleft()
                self.dropped += 1
            self.queue.append(payload)

    def try_pop(self) -> bytes | None:
        with self.lock:
            if self.queue:
                return self.queue.popleft()
            return None

    def mark_delivered(self) -> None:
        with self.lock:
            self.delivered += 1

    def counters(self) -> tuple[int, int]:
        with self.lock:
            return self.delivered, self.dropped


class _Topic:
    def __init__(self, name: str, broker: "Broker"):
        self.name = name
        self.broker = broker
        self.type_name: str | None = None
        self.lock = threading.Lock()
        self.publishers: set[int] = set()
        self.subs: dict[int, _Subscription] = {}
        # counters carried over from removed subscriptions, so topic totals
        # stay monotone while the topic lives
        self.retired_delivered = 0
        self.retired_dropped = 0
        self.inbox: queue.SimpleQueue[bytes | None] | None = None
        self.worker: threading.Thread | None = None
        if broker.config.per_topic_workers:
            self.inbox = queue.SimpleQueue()
            self.worker = threading.Thread(target=self._work, name=f"topic{name}", daemon=True)
            self.worker.start()

    def submit(self, payload: bytes) -> None:
        if self.inbox is not None:
            self.inbox.put(payload)
        else:
            self.route(payload)

    def route(self, payload: bytes) -> None:
        with self.lock:
            subs = list(self.subs.values())
        for sub in subs:
            sub.offer(payload)
            sub.session.wake()

    def _work(self) -> None:
        assert self.inbox is not None
        while True:
            payload = self.inbox.get()
            if payload is None:
                return
            self.route(payload)

    def stop_worker(self) -> None:
        if self.inbox is not None:
            self.inbox.put(None)

    def stats(self) -> TopicStats:
        with self.lock:
            delivered = self.retired_delivered
            dropped = self.retired_dropped
            for sub in self.subs.values():
                d, x = sub.counters()
                delivered += d
                dropped += x
            return TopicStats(
                name=self.name,
                type_name=self.type_name,
                publisher_count=len(self.publishers),
                subscriber_count=len(self.subs),
                delivered_count=delivered,
                dropped_count=dropped,
            )


class _Session:
    def __init__(self, broker: "Broker", conn: socket.socket, session_id: int):
        self.broker = broker
        self.id = session_id
        self.conn = conn
        self.rfile = conn.makefile("rb")
        self.wfile = conn.makefile("wb")
        self.cond = threading.Condition()
        self.control: deque[bytes] = deque()
        self.subs: list[_Subscription] = []
        self.advertised: set[str] = set()
        self.closed = False
        self._rr = 0  # round-robin cursor over subscription queues
        self.reader = threading.Thread(target=self._read_loop, name=f"session{session_id}-r", daemon=True)
        self.writer = threading.Thread(target=self._write_loop, name=f"session{session_id}-w", daemon=True)

    def start(self) -> None:
        self.reader.start()
        self.writer.start()

    def wake(self) -> None:
        with self.cond:
            self.cond.notify()

    def send_control(self, doc: Document) -> None:
        payload = codec.encode_payload(doc, self.broker.config.codec_id)
        with self.cond:
            self.control.append(payload)
            self.cond.notify()

    def add_subscription(self, sub: _Subscription) -> None:
        with self.cond:
            self.subs.append(sub)

    def remove_subscription(self, sub: _Subscription) -> None:
        with self.cond:
            if sub in self.subs:
                self.subs.remove(sub)

    # -- reader ------------------------------------------------------------

    def _read_loop(self) -> None:
        cfg = self.broker.config
        try:
            while not self.closed:
                try:
                    payload = codec.read_frame_payload(self.rfile, cfg.codec_id, cfg.max_frame_bytes)
                except codec.EndOfStream:
                    break
                except codec.FrameTooLarge as exc:
                    self.send_control(status_document("error", str(exc), "frame_too_large"))
                    continue
                except (codec.Truncated, OSError, ValueError):
                    break
                try:
                    doc = codec.decode_payload(payload, cfg.codec_id)
                    env = parse_envelope(doc)
                except codec.CodecError as exc:
                    self.send_control(status_document("error", f"undecodable frame: {exc}", "bad_frame"))
                    continue
                except EnvelopeError as exc:
                    self.send_control(status_document("error", str(exc), exc.code))
                    continue
                self.broker._dispatch(self, env, payload)
        finally:
            self.broker._drop_session(self)

    # -- writer ------------------------------------------------------------

    def _next_item(self) -> tuple[bytes, _Subscription | None] | None:
        # caller holds self.cond
        if self.control:
            return self.control.popleft(), None
        n = len(self.subs)
        for i in range(n):
            sub = self.subs[(self._rr + i) % n]
            payload = sub.try_pop()
            if payload is not None:
                self._rr = (self._rr + i + 1) % n
                return payload, sub
        return None

    def _write_loop(self) -> None:
        cfg = self.broker.config
        while True:
            with self.cond:
                item = self._next_item()
                while item is None:
                    if self.closed:
                        return
                    self.cond.wait(timeout=0.5)
                    item = self._next_item()
            payload, sub = item
            try:
                codec.write_frame_payload(self.wfile, payload, cfg.codec_id)
                self.wfile.flush()
            except (OSError, ValueError):
                # closing the socket unblocks the reader, which owns cleanup
                self.shutdown()
                return
            if sub is not None:
                sub.mark_delivered()

    def shutdown(self) -> None:
        with self.cond:
            if self.closed:
                return
            self.closed = True
            self.cond.notify_all()
        try:
            self.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.conn.close()
        except OSError:
            pass


class Broker:
    """Handle for a running broker: stats, port, shutdown."""

    def __init__(self, config: BrokerConfig):
        self.config = config
        self._lsock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._lsock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._lsock.bind((config.host, config.port))
        except OSError as exc:
            self._lsock.close()
            raise BindFailed(f"cannot bind {config.host}:{config.port}: {exc}") from exc
        self._lsock.listen(128)
        self.host, self.port = self._lsock.getsockname()[:2]
        self._registry_lock = threading.RLock()
        self._topics: dict[str, _Topic] = {}
        self._sessions: dict[int, _Session] = {}
        self._next_session_id = 1
        self._closed = False
        self._acceptor = threading.Thread(target=self._accept_loop, name="broker-accept", daemon=True)
        self._acceptor.start()
        log.info("broker listening on %s:%d (%s)", self.host, self.port, config.codec_id)

    # -- lifecycle ---------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, addr = self._lsock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._registry_lock:
                if self._closed:
                    conn.close()
                    return
                sid = self._next_session_id
                self._next_session_id += 1
                session = _Session(self, conn, sid)
                self._sessions[sid] = session
            log.debug("session %d connected from %s", sid, addr)
            session.start()

    def close(self) -> None:
        with self._registry_lock:
            if self._closed:
                return
            self._closed = True
            sessions = list(self._sessions.values())
            topics = list(self._topics.values())
        try:
            self._lsock.close()
        except OSError:
            pass
        for session in sessions:
            session.shutdown()
        for topic in topics:
            topic.stop_worker()
        for session in sessions:
            session.reader.join(timeout=5)
            session.writer.join(timeout=5)
        for topic in topics:
            if topic.worker is not None:
                topic.worker.join(timeout=5)
        self._acceptor.join(timeout=5)

    def __enter__(self) -> "Broker":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def session_count(self) -> int:
        with self._registry_lock:
            return len(self._sessions)

    def worker_count(self) -> int:
        with self._registry_lock:
            return sum(1 for t in self._topics.values() if t.worker is not None and t.worker.is_alive())

    # -- protocol ----------------------------------------------------------

    def _get_or_create_topic(self, name: str) -> _Topic:
        with self._registry_lock:
            topic = self._topics.get(name)
            if topic is None:
                topic = _Topic(name, self)
                self._topics[name] = topic
            return topic

    def _maybe_retire(self, topic: _Topic) -> None:
        with self._registry_lock:
            with topic.lock:
                if topic.publishers or topic.subs:
                    return
                if self._topics.get(topic.name) is topic:
                    del self._topics[topic.name]
            topic.stop_worker()

    def _dispatch(self, session: _Session, env: Envelope, payload: bytes) -> None:
        if env.op == PUBLISH:
            topic = self._get_or_create_topic(env.topic)
            with topic.lock:
                topic.publishers.add(session.id)
            session.advertised.add(env.topic)
            topic.submit(payload)
        elif env.op == ADVERTISE:
            topic = self._get_or_create_topic(env.topic)
            with topic.lock:
                if env.type_name is not None:
                    if topic.type_name is not None and topic.type_name != env.type_name:
                        session.send_control(
                            status_document(
                                "error",
                                f"topic {env.topic} is {topic.type_name}, not {env.type_name}",
                                "type_conflict",
                            )
                        )
                        return
                    topic.type_name = env.type_name
                topic.publishers.add(session.id)
            session.advertised.add(env.topic)
        elif env.op == SUBSCRIBE:
            topic = self._get_or_create_topic(env.topic)
            bound = env.queue_length or self.config.default_queue_length
            with topic.lock:
                sub = topic.subs.get(session.id)
                if sub is None:
                    sub = _Subscription(topic, session, bound)
                    topic.subs[session.id] = sub
                    session.add_subscription(sub)
                else:
                    sub.bound = bound
        elif env.op == UNSUBSCRIBE:
            with self._registry_lock:
                topic = self._topics.get(env.topic)
            if topic is None:
                return
            with topic.lock:
                sub = topic.subs.pop(session.id, None)
                if sub is not None:
                    d, x = sub.counters()
                    topic.retired_delivered += d
                    topic.retired_dropped += x
            if sub is not None:
                session.remove_subscription(sub)
            self._maybe_retire(topic)
        elif env.op == UNADVERTISE:
            with self._registry_lock:
                topic = self._topics.get(env.topic)
            if topic is None:
                return
            with topic.lock:
                topic.publishers.discard(session.id)
            session.advertised.discard(env.topic)
            self._maybe_retire(topic)

    def _drop_session(self, session: _Session) -> None:
        with self._registry_lock:
            present = self._sessions.pop(session.id, None) is not None
        session.shutdown()
        if not present:
            return
        log.debug("session %d disconnected", session.id)
        with self._registry_lock:
            topics = [self._topics[n] for n in session.advertised if n in self._topics]
            subscribed = {sub.topic for sub in list(session.subs)}
            topics.extend(t for t in subscribed if t not in topics)
        for topic in topics:
            with topic.lock:
                topic.publishers.discard(session.id)
                sub = topic.subs.pop(session.id, None)
                if sub is not None:
                    d, x = sub.counters()
                    topic.retired_delivered += d
                    topic.retired_dropped += x
            self._maybe_retire(topic)

    # -- observability -----------------------------------------------------

    def stats(self) -> list[TopicStats]:
        with self._registry_lock:
            topics = list(self._topics.values())
        return [t.stats() for t in topics]


def start_broker(config: BrokerConfig | None = None) -> Broker:
    """Bind, start accepting, and return the running broker handle."""
    return Broker(config or BrokerConfig())


def topic_stats(broker: Broker) -> list[TopicStats]:
    """Point-in-time snapshot of every live topic's counters."""
    return broker.stats()


def iter_topic_names(broker: Broker) -> Iterator[str]:
    return iter(sorted(t.name for t in broker.stats()))
