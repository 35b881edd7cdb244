"""Room-based state synchronization relay.

Clients join a room and submit avatar states for entities they own; the
relay forwards each accepted state to every other room member and keeps the
newest state per entity so late joiners can catch up.  All mutations of one
room are serialized through that room's lock (its executor), which also
covers the fan-out writes, so every member observes one total order per
room.  Different rooms share nothing.

Submitted state envelopes are forwarded verbatim (the encoded bytes are
never rebuilt), which keeps per-member forwarding cost flat as rooms grow.

Wire vocabulary (codec frames, binary): "create_room", "join_room",
"leave_room", "state", plus "snapshot", "member_joined", "member_left" and
"status" from relay to client.
"""

from __future__ import annotations

import logging
import math
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

from hri_bridge import codec
from hri_bridge.avatar import AvatarState
from hri_bridge.codec import BINARY, Document

log = logging.getLogger("hri_bridge.relay")

DEFAULT_MAX_FRAME_BYTES = 16 * 1024 * 1024

_unpack_i32 = struct.Struct("<i").unpack_from
_unpack_i64 = struct.Struct("<q").unpack_from


@dataclass(frozen=True)
class StateHeader:
    entity_id: str
    send_timestamp: int
    sequence: int


def _skip_element(data: bytes, tag: int, pos: int) -> int:
    """Byte position after one element value, or -1 for unknown tags."""
    if tag == 0x01 or tag == 0x12:
        return pos + 8
    if tag == 0x02:
        return pos + 4 + _unpack_i32(data, pos)[0]
    if tag == 0x03 or tag == 0x04:
        return pos + _unpack_i32(data, pos)[0]
    if tag == 0x05:
        return pos + 5 + _unpack_i32(data, pos)[0]
    if tag == 0x08:
        return pos + 1
    if tag == 0x10:
        return pos + 4
    return -1


def _read_int(data: bytes, tag: int, pos: int) -> int | None:
    if tag == 0x10:
        return _unpack_i32(data, pos)[0]
    if tag == 0x12:
        return _unpack_i64(data, pos)[0]
    return None


def parse_state_header(payload: bytes) -> StateHeader | None:
    """Cheap scan of a {"op": "state", "msg": {...}} frame.

    Pulls entity_id, send_timestamp and sequence out of the raw bytes
    without materializing the joints array; returns None for anything that
    is not a well-formed state envelope (callers then take the full-decode
    path).  This keeps per-receiver cost flat no matter how large poses get.
    """
    try:
        total = _unpack_i32(payload, 0)[0]
        if total != len(payload) or total < 5:
            return None
        end = total - 1
        pos = 4
        is_state = False
        msg_span: tuple[int, int] | None = None
        while pos < end:
            tag = payload[pos]
            pos += 1
            nul = payload.index(0, pos, end)
            key = payload[pos:nul]
            pos = nul + 1
            if key == b"op" and tag == 0x02:
                n = _unpack_i32(payload, pos)[0]
                if payload[pos + 4 : pos + 3 + n] != b"state":
                    return None
                is_state = True
                pos += 4 + n
            elif key == b"msg" and tag == 0x03:
                sub_total = _unpack_i32(payload, pos)[0]
                msg_span = (pos, pos + sub_total)
                pos += sub_total
            else:
                pos = _skip_element(payload, tag, pos)
                if pos < 0:
                    return None
        if not is_state or msg_span is None:
            return None

        entity_id = None
        send_timestamp = None
        sequence = None
        pos, sub_end = msg_span[0] + 4, msg_span[1] - 1
        while pos < sub_end:
            tag = payload[pos]
            pos += 1
            nul = payload.index(0, pos, sub_end)
            key = payload[pos:nul]
            pos = nul + 1
            if key == b"entity_id" and tag == 0x02:
                n = _unpack_i32(payload, pos)[0]
                entity_id = payload[pos + 4 : pos + 3 + n].decode("utf-8")
                pos += 4 + n
            elif key == b"send_timestamp":
                send_timestamp = _read_int(payload, tag, pos)
                pos = _skip_element(payload, tag, pos)
            elif key == b"sequence":
                sequence = _read_int(payload, tag, pos)
                pos = _skip_element(payload, tag, pos)
            else:
                pos = _skip_element(payload, tag, pos)
            if pos < 0:
                return None
            if entity_id is not None and send_timestamp is not None and sequence is not None:
                return StateHeader(entity_id, send_timestamp, sequence)
        return None
    except (IndexError, ValueError, struct.error, UnicodeDecodeError):
        return None


class RelayError(Exception):
    code = "error"

    def __init__(self, message: str, status: Document | None = None):
        super().__init__(message)
        self.status = status


class RoomExists(RelayError):
    code = "room_exists"


class NoSuchRoom(RelayError):
    code = "no_such_room"


class AlreadyMember(RelayError):
    code = "already_member"


class NotMember(RelayError):
    code = "not_member"


class NotOwner(RelayError):
    code = "not_owner"


class EmptyLog(RelayError):
    code = "empty_log"


class MemberPort:
    """Delivery target for one room member."""

    def send_payload(self, payload: bytes) -> None:  # pre-encoded state envelope
        raise NotImplementedError

    def send_doc(self, doc: Document) -> None:  # control notifications
        raise NotImplementedError


class Room:
    def __init__(self, room_id: str):
        self.room_id = room_id
        self.lock = threading.Lock()  # the room executor
        self.members: dict[str, MemberPort] = {}
        self.owners: dict[str, str] = {}  # entity -> owning client
        self.last_state: dict[str, tuple[AvatarState, bytes]] = {}
        self.last_seq: dict[str, int] = {}

    def member_ids(self) -> list[str]:
        with self.lock:
            return sorted(self.members)


class Relay:
    """In-process relay core; the TCP server is a thin shell around it."""

    def __init__(self):
        self._lock = threading.Lock()
        self._rooms: dict[str, Room] = {}

    def create_room(self, room_id: str) -> Room:
        with self._lock:
            if room_id in self._rooms:
                raise RoomExists(f"room {room_id!r} already exists")
            room = Room(room_id)
            self._rooms[room_id] = room
            return room

    def get_room(self, room_id: str) -> Room:
        with self._lock:
            room = self._rooms.get(room_id)
        if room is None:
            raise NoSuchRoom(f"no room {room_id!r}")
        return room

    def room_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._rooms)

    def join_room(
        self,
        room_id: str,
        client_id: str,
        port: MemberPort,
        on_snapshot: Callable[[list[tuple[AvatarState, bytes]]], None] | None = None,
    ) -> list[tuple[AvatarState, bytes]]:
        """Add a member and return the newest known state per entity.

        ``on_snapshot`` runs inside the room's serialization window, so a
        transport can emit the catch-up snapshot before any forwarded state
        can overtake it.
        """
        room = self.get_room(room_id)
        with room.lock:
            if client_id in room.members:
                raise AlreadyMember(f"{client_id!r} is already in {room_id!r}")
            snapshot = list(room.last_state.values())
            for other_id, other in room.members.items():
                other.send_doc({"op": "member_joined", "room": room_id, "client": client_id})
            room.members[client_id] = port
            if on_snapshot is not None:
                on_snapshot(snapshot)
        return snapshot

    def leave_room(self, room_id: str, client_id: str) -> None:
        room = self.get_room(room_id)
        with room.lock:
            if room.members.pop(client_id, None) is None:
                raise NotMember(f"{client_id!r} is not in {room_id!r}")
            released = [e for e, owner in room.owners.items() if owner == client_id]
            for entity in released:
                del room.owners[entity]
            for other in room.members.values():
                other.send_doc({"op": "member_left", "room": room_id, "client": client_id})

    def submit_state(
        self,
        room_id: str,
        client_id: str,
        state: AvatarState,
        wire_payload: bytes | None = None,
    ) -> bool:
        """Apply one state submission; returns False when it was stale.

        Ownership of the entity is claimed on first submission and enforced
        afterwards.  Stale submissions (sequence not above the last accepted
        one for the entity) are discarded silently.
        """
        room = self.get_room(room_id)
        if wire_payload is None:
            wire_payload = codec.encode_document({"op": "state", "msg": state.to_document()})
        with room.lock:
            if client_id not in room.members:
                raise NotMember(f"{client_id!r} is not in {room_id!r}")
            owner = room.owners.get(state.entity_id)
            if owner is None:
                room.owners[state.entity_id] = client_id
            elif owner != client_id:
                raise NotOwner(f"entity {state.entity_id!r} belongs to {owner!r}")
            if state.sequence <= room.last_seq.get(state.entity_id, -(2**63)):
                return False
            room.last_seq[state.entity_id] = state.sequence
            room.last_state[state.entity_id] = (state, wire_payload)
            for other_id, other in room.members.items():
                if other_id != client_id:
                    other.send_payload(wire_payload)
        return True


def create_room(relay: Relay, room_id: str) -> Room:
    return relay.create_room(room_id)


# ---------------------------------------------------------------------------
# latency reporting
# ---------------------------------------------------------------------------

LatencySample = tuple[int, int]  # (sequence, latency microseconds)


def lower_median(xs: Sequence[int]) -> int:
    return sorted(xs)[(len(xs) - 1) // 2]


def nearest_rank_p95(xs: Sequence[int]) -> int:
    ordered = sorted(xs)
    return ordered[max(0, math.ceil(0.95 * len(ordered)) - 1)]


@dataclass(frozen=True)
class ClientLatency:
    client_id: str
    samples: tuple[LatencySample, ...]
    median_us: int
    p95_us: int
    max_us: int


@dataclass(frozen=True)
class LatencyReport:
    client_count: int
    clients: tuple[ClientLatency, ...]
    sample_count: int
    pooled_median_us: int
    pooled_p95_us: int
    pooled_max_us: int

    def to_document(self) -> Document:
        return {
            "client_count": self.client_count,
            "sample_count": codec.Int64(self.sample_count),
            "pooled_median_us": codec.Int64(self.pooled_median_us),
            "pooled_p95_us": codec.Int64(self.pooled_p95_us),
            "pooled_max_us": codec.Int64(self.pooled_max_us),
            "clients": [
                {
                    "client_id": c.client_id,
                    "samples": codec.Int64(len(c.samples)),
                    "median_us": codec.Int64(c.median_us),
                    "p95_us": codec.Int64(c.p95_us),
                    "max_us": codec.Int64(c.max_us),
                }
                for c in self.clients
            ],
        }


def measure_latency(
    logs: Mapping[str, Sequence[LatencySample]],
    client_count: int | None = None,
) -> LatencyReport:
    """Aggregate receiver logs of (sequence, latency us) samples.

    Median is the lower median, p95 the nearest-rank percentile; both are
    exact order statistics, no interpolation.  client_count defaults to the
    number of receivers in the logs.
    """
    pooled: list[int] = []
    clients: list[ClientLatency] = []
    for client_id in sorted(logs):
        samples = tuple(logs[client_id])
        latencies = [lat for _, lat in samples]
        if any(lat < 0 for lat in latencies):
            raise ValueError(f"negative latency in log of {client_id!r}")
        pooled.extend(latencies)
        if latencies:
            clients.append(
                ClientLatency(
                    client_id=client_id,
                    samples=samples,
                    median_us=lower_median(latencies),
                    p95_us=nearest_rank_p95(latencies),
                    max_us=max(latencies),
                )
            )
    if not pooled:
        raise EmptyLog("no latency samples")
    return LatencyReport(
        client_count=client_count if client_count is not None else len(logs),
        clients=tuple(clients),
        sample_count=len(pooled),
        pooled_median_us=lower_median(pooled),
        pooled_p95_us=nearest_rank_p95(pooled),
        pooled_max_us=max(pooled),
    )


# ---------------------------------------------------------------------------
# TCP server
# ---------------------------------------------------------------------------

class _SocketPort(MemberPort):
    def __init__(self, session: "_RelaySession"):
        self.session = session

    def send_payload(self, payload: bytes) -> None:
        self.session.write_payload(payload)

    def send_doc(self, doc: Document) -> None:
        self.session.write_doc(doc)


class _RelaySession:
    def __init__(self, server: "RelayServer", conn: socket.socket, session_id: int):
        self.server = server
        self.id = session_id
        self.conn = conn
        self.rfile = conn.makefile("rb")
        self.wfile = conn.makefile("wb")
        self.client_id: str | None = None
        self.room_id: str | None = None
        self.port = _SocketPort(self)
        # fan-out arrives from other sessions' threads; frame writes must
        # never interleave on one socket
        self.write_lock = threading.Lock()
        self.thread = threading.Thread(target=self._read_loop, name=f"relay-session{session_id}", daemon=True)

    def start(self) -> None:
        self.thread.start()

    def write_payload(self, payload: bytes) -> None:
        try:
            with self.write_lock:
                codec.write_frame_payload(self.wfile, payload, BINARY)
                self.wfile.flush()
        except OSError:
            pass  # reader notices the dead socket and cleans up

    def write_doc(self, doc: Document) -> None:
        self.write_payload(codec.encode_document(doc))

    def _status(self, level: str, message: str, code: str) -> Document:
        return {"op": "status", "level": level, "msg": message, "code": code}

    def _read_loop(self) -> None:
        try:
            while True:
                try:
                    payload = codec.read_frame_payload(self.rfile, BINARY, self.server.max_frame_bytes)
                except codec.EndOfStream:
                    break
                except (codec.CodecError, OSError, ValueError):
                    break
                try:
                    doc = codec.decode_payload(payload, BINARY)
                except codec.CodecError as exc:
                    self.write_doc(self._status("error", f"undecodable frame: {exc}", "bad_frame"))
                    continue
                self._dispatch(doc, payload)
        finally:
            self._leave_current_room()
            self.server._drop_session(self)

    def _leave_current_room(self) -> None:
        if self.room_id is not None and self.client_id is not None:
            try:
                self.server.relay.leave_room(self.room_id, self.client_id)
            except RelayError:
                pass
            self.room_id = None

    def _dispatch(self, doc: Document, payload: bytes) -> None:
        op = doc.get("op")
        relay = self.server.relay
        try:
            if op == "create_room":
                relay.create_room(_require_str(doc, "room"))
                self.write_doc(self._status("ok", "room created", "room_created"))
            elif op == "join_room":
                room_id = _require_str(doc, "room")
                client_id = _require_str(doc, "client")
                if self.room_id is not None:
                    raise AlreadyMember(f"connection already joined {self.room_id!r}")

                def send_snapshot(snapshot: list[tuple[AvatarState, bytes]]) -> None:
                    self.write_doc(
                        {
                            "op": "snapshot",
                            "room": room_id,
                            "states": [state.to_document() for state, _ in snapshot],
                        }
                    )

                relay.join_room(room_id, client_id, self.port, on_snapshot=send_snapshot)
                self.client_id = client_id
                self.room_id = room_id
            elif op == "leave_room":
                if self.room_id is None or self.client_id is None:
                    raise NotMember("connection has not joined a room")
                relay.leave_room(self.room_id, self.client_id)
                self.room_id = None
                self.write_doc(self._status("ok", "left room", "room_left"))
            elif op == "state":
                if self.room_id is None or self.client_id is None:
                    raise NotMember("connection has not joined a room")
                msg = doc.get("msg")
                if not isinstance(msg, dict):
                    self.write_doc(self._status("error", "state requires a msg document", "malformed_envelope"))
                    return
                state = AvatarState.from_document(msg)
                relay.submit_state(self.room_id, self.client_id, state, wire_payload=payload)
            else:
                self.write_doc(self._status("error", f"unknown op {op!r}", "unknown_op"))
        except RelayError as exc:
            self.write_doc(self._status("error", str(exc), exc.code))
        except Exception as exc:  # malformed states and the like
            self.write_doc(self._status("error", str(exc), "bad_request"))

    def shutdown(self) -> None:
        try:
            self.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.conn.close()
        except OSError:
            pass


def _require_str(doc: Mapping[str, Any], key: str) -> str:
    value = doc.get(key)
    if not isinstance(value, str) or not value:
        raise RelayError(f"missing or invalid {key!r} field")
    return value


class RelayServer:
    def __init__(self, host: str = "127.0.0.1", port: int = 0, max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES):
        self.relay = Relay()
        self.max_frame_bytes = max_frame_bytes
        self._lsock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._lsock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._lsock.bind((host, port))
        except OSError as exc:
            self._lsock.close()
            raise
        self._lsock.listen(128)
        self.host, self.port = self._lsock.getsockname()[:2]
        self._lock = threading.Lock()
        self._sessions: dict[int, _RelaySession] = {}
        self._next_id = 1
        self._closed = False
        self._acceptor = threading.Thread(target=self._accept_loop, name="relay-accept", daemon=True)
        self._acceptor.start()
        log.info("relay listening on %s:%d", self.host, self.port)

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._lsock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                if self._closed:
                    conn.close()
                    return
                sid = self._next_id
                self._next_id += 1
                session = _RelaySession(self, conn, sid)
                self._sessions[sid] = session
            session.start()

    def _drop_session(self, session: _RelaySession) -> None:
        with self._lock:
            self._sessions.pop(session.id, None)
        session.shutdown()

    def session_count(self) -> int:
        with self._lock:
            return len(self._sessions)

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            sessions = list(self._sessions.values())
        try:
            self._lsock.close()
        except OSError:
            pass
        for session in sessions:
            session.shutdown()
        for session in sessions:
            session.thread.join(timeout=5)
        self._acceptor.join(timeout=5)

    def __enter__(self) -> "RelayServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# TCP client
# ---------------------------------------------------------------------------

StateCallback = Callable[[AvatarState, int], None]  # (state, receive time us)
RawStateCallback = Callable[[StateHeader, bytes, int], None]  # (header, frame, receive us)


class RelayClient:
    """Blocking relay client; one background reader dispatches in order.

    on_state delivers fully decoded AvatarStates.  on_state_raw delivers the
    parsed header plus the raw frame without touching the joints array; use
    it when per-state cost matters (decode later with state_from_payload).
    """

    def __init__(
        self,
        host: str,
        port: int,
        client_id: str,
        on_state: StateCallback | None = None,
        on_state_raw: RawStateCallback | None = None,
        connect_timeout: float = 10.0,
    ):
        self.client_id = client_id
        self.on_state = on_state
        self.on_state_raw = on_state_raw
        self.errors: list[Document] = []
        self._pending: "_OneShotQueue" = _OneShotQueue()
        self._lock = threading.Lock()
        self._conn = socket.create_connection((host, port), timeout=connect_timeout)
        self._conn.settimeout(None)
        self._conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = self._conn.makefile("rb")
        self._wfile = self._conn.makefile("wb")
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, name=f"relay-client-{client_id}", daemon=True)
        self._reader.start()

    def _send(self, doc: Document) -> None:
        with self._lock:
            codec.write_frame(self._wfile, doc, BINARY)
            self._wfile.flush()

    def _request(self, doc: Document) -> Document:
        self._pending.arm()
        self._send(doc)
        return self._pending.get(timeout=10.0)

    def create_room(self, room_id: str) -> None:
        self._check_ack(self._request({"op": "create_room", "room": room_id}), "room_created")

    def join_room(self, room_id: str) -> list[AvatarState]:
        doc = self._request({"op": "join_room", "room": room_id, "client": self.client_id})
        if doc.get("op") == "snapshot":
            return [AvatarState.from_document(d) for d in doc.get("states", [])]
        raise _as_error(doc)

    def leave_room(self) -> None:
        self._check_ack(self._request({"op": "leave_room"}), "room_left")

    def send_state(self, state: AvatarState) -> None:
        self._send({"op": "state", "msg": state.to_document()})

    @staticmethod
    def _check_ack(doc: Document, code: str) -> None:
        if doc.get("op") == "status" and doc.get("level") == "ok" and doc.get("code") == code:
            return
        raise _as_error(doc)

    def _read_loop(self) -> None:
        while not self._closed.is_set():
            try:
                payload = codec.read_frame_payload(self._rfile, BINARY)
            except (codec.CodecError, OSError, ValueError):
                break
            recv_us = time.monotonic_ns() // 1000
            if self.on_state_raw is not None:
                header = parse_state_header(payload)
                if header is not None:
                    self.on_state_raw(header, payload, recv_us)
                    continue
            try:
                doc = codec.decode_payload(payload, BINARY)
            except (codec.CodecError, ValueError):
                break
            op = doc.get("op")
            if op == "state":
                try:
                    state = AvatarState.from_document(doc.get("msg", {}))
                except Exception:
                    continue
                if self.on_state is not None:
                    self.on_state(state, recv_us)
                elif self.on_state_raw is not None:
                    header = StateHeader(state.entity_id, state.send_timestamp, state.sequence)
                    self.on_state_raw(header, payload, recv_us)
            elif op == "snapshot":
                self._pending.put(doc)
            elif op == "status":
                # while a request is in flight, any status is its reply;
                # otherwise error statuses are asynchronous (e.g. a rejected
                # state submission) and just recorded
                if not self._pending.offer(doc) and doc.get("level") != "ok":
                    self.errors.append(doc)
            # member_joined / member_left are informational
        self._closed.set()
        self._pending.put({"op": "status", "level": "error", "msg": "connection closed", "code": "closed"})

    def close(self) -> None:
        self._closed.set()
        try:
            self._conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._conn.close()
        self._reader.join(timeout=5)

    def __enter__(self) -> "RelayClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class _OneShotQueue:
    """Response slot for the strictly sequential request/ack protocol.

    arm() is called before the request frame is written, so the reply can
    never race past the waiter.
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._item: Document | None = None
        self._armed = False

    def arm(self) -> None:
        with self._cond:
            self._armed = True
            self._item = None

    def put(self, doc: Document) -> None:
        with self._cond:
            self._item = doc
            self._armed = False
            self._cond.notify()

    def offer(self, doc: Document) -> bool:
        with self._cond:
            if not self._armed:
                return False
            self._item = doc
            self._armed = False
            self._cond.notify()
            return True

    def get(self, timeout: float) -> Document:
        with self._cond:
            deadline = time.monotonic() + timeout
            while self._item is None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    self._armed = False
                    raise TimeoutError("no reply from relay")
                self._cond.wait(remaining)
            doc, self._item = self._item, None
            return doc


def state_from_payload(payload: bytes) -> AvatarState:
    """Full decode of a raw state frame captured via on_state_raw."""
    doc = codec.decode_payload(payload, BINARY)
    return AvatarState.from_document(doc["msg"])


def _as_error(doc: Document) -> RelayError:
    code = doc.get("code", "error")
    for cls in (RoomExists, NoSuchRoom, AlreadyMember, NotMember, NotOwner):
        if cls.code == code:
            return cls(str(doc.get("msg", code)), status=doc)
    return RelayError(str(doc.get("msg", code)), status=doc)
