"""Blocking bridge client with a background reader thread.

Subscription callbacks run on the reader thread in frame-arrival order.
Broker status frames are kept in ``statuses`` (and handed to ``on_status``
when given); they never raise asynchronously.
"""

from __future__ import annotations

import socket
import threading
import time
from typing import Callable, Mapping

from hri_bridge import codec
from hri_bridge.codec import BINARY, Document
from hri_bridge.envelope import (
    ADVERTISE,
    PUBLISH,
    STATUS,
    SUBSCRIBE,
    UNADVERTISE,
    UNSUBSCRIBE,
    validate_topic,
)

MessageCallback = Callable[[Document], None]


class BridgeClient:
    def __init__(
        self,
        host: str,
        port: int,
        codec_id: str = BINARY,
        hints: Mapping[str, str] | None = None,
        on_status: Callable[[Document], None] | None = None,
        connect_timeout: float = 10.0,
    ):
        self.codec_id = codec_id
        self.hints = dict(hints) if hints else None
        self.on_status = on_status
        self.statuses: list[Document] = []
        self._callbacks: dict[str, MessageCallback] = {}
        self._lock = threading.Lock()
        self._conn = socket.create_connection((host, port), timeout=connect_timeout)
        self._conn.settimeout(None)
        self._conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = self._conn.makefile("rb")
        self._wfile = self._conn.makefile("wb")
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, name="bridge-client-r", daemon=True)
        self._reader.start()

    # -- outgoing ------------------------------------------------------------

    def _send(self, doc: Document) -> None:
        with self._lock:
            codec.write_frame(self._wfile, doc, self.codec_id)
            self._wfile.flush()

    def advertise(self, topic: str, type_name: str | None = None) -> None:
        doc: Document = {"op": ADVERTISE, "topic": validate_topic(topic)}
        if type_name is not None:
            doc["type"] = type_name
        self._send(doc)

    def unadvertise(self, topic: str) -> None:
        self._send({"op": UNADVERTISE, "topic": validate_topic(topic)})

    def publish(self, topic: str, msg: Document) -> None:
        self._send({"op": PUBLISH, "topic": validate_topic(topic), "msg": msg})

    def subscribe(self, topic: str, callback: MessageCallback, queue_length: int | None = None) -> None:
        topic = validate_topic(topic)
        self._callbacks[topic] = callback
        doc: Document = {"op": SUBSCRIBE, "topic": topic}
        if queue_length is not None:
            doc["queue_length"] = int(queue_length)
        self._send(doc)

    def unsubscribe(self, topic: str) -> None:
        topic = validate_topic(topic)
        self._callbacks.pop(topic, None)
        self._send({"op": UNSUBSCRIBE, "topic": topic})

    # -- incoming ------------------------------------------------------------

    def _read_loop(self) -> None:
        while not self._closed.is_set():
            try:
                doc = codec.read_frame(self._rfile, self.codec_id, hints=self.hints)
            except (codec.CodecError, OSError, ValueError):
                break
            op = doc.get("op")
            if op == PUBLISH:
                cb = self._callbacks.get(doc.get("topic"))
                if cb is not None:
                    cb(doc.get("msg", {}))
            elif op == STATUS:
                self.statuses.append(doc)
                if self.on_status is not None:
                    self.on_status(doc)
        self._closed.set()

    def wait_for_status(self, timeout: float = 5.0) -> Document | None:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.statuses:
                return self.statuses[-1]
            time.sleep(0.005)
        return None

    def close(self) -> None:
        self._closed.set()
        try:
            self._conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._conn.close()
        self._reader.join(timeout=5)

    def __enter__(self) -> "BridgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
