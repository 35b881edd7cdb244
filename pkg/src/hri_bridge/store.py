"""Append-only session recording with timed replay.

A session file is a sequence of binary codec frames: one header document,
then one document per scene event, in non-decreasing event time.  Event
times are microseconds since session start.  A side index file (same path
plus ".idx") stores (event ordinal, byte offset) pairs for every 1000th
event as little-endian int64 pairs; it is optional and can be rebuilt from
the session file alone.

Raw sensor signals are never stored; only poses, object states, utterances
and task markers are recorded, and sensor values are recomputed on demand
(see sensors.py).
"""

from __future__ import annotations

import math
import os
import struct
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Sequence

from hri_bridge import codec
from hri_bridge.avatar import AvatarState, pose_from_payload
from hri_bridge.codec import BINARY, Document, Int64

FORMAT_VERSION = 1
INDEX_STRIDE = 1000
INDEX_SUFFIX = ".idx"

# event kinds
POSE = "pose"
OBJECT_STATE = "object_state"
UTTERANCE = "utterance"
TASK_MARKER = "task_marker"
CUSTOM = "custom"
EVENT_KINDS = frozenset({POSE, OBJECT_STATE, UTTERANCE, TASK_MARKER, CUSTOM})

# task markers
TASK_START = "task_start"
TASK_COMPLETE = "task_complete"
TASK_ABORT = "task_abort"
TASK_MARKERS = frozenset({TASK_START, TASK_COMPLETE, TASK_ABORT})

# entity roles
ROBOT = "robot"
AVATAR = "avatar"
OBJECT = "object"
ROLES = frozenset({ROBOT, AVATAR, OBJECT})


class StoreError(Exception):
    pass


class NonMonotonicTimestamp(StoreError):
    pass


class CorruptFrame(StoreError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnknownEntity(StoreError):
    pass


@dataclass(frozen=True)
class SceneEvent:
    t: int  # microseconds since session start
    entity_id: str
    kind: str
    payload: Document

    def validate(self) -> "SceneEvent":
        if self.t < 0:
            raise ValueError(f"event time {self.t} is negative")
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not isinstance(self.payload, dict):
            raise ValueError("payload must be a document")
        if self.kind == UTTERANCE:
            if "speaker" not in self.payload or "text" not in self.payload:
                raise ValueError("utterance payload needs speaker and text")
        elif self.kind == TASK_MARKER:
            if self.payload.get("marker") not in TASK_MARKERS:
                raise ValueError(f"task marker payload needs marker in {sorted(TASK_MARKERS)}")
        elif self.kind == POSE:
            pose_from_payload(self.payload)  # raises if neither avatar nor rigid pose
        return self

    def to_document(self) -> Document:
        return {
            "t": Int64(self.t),
            "entity_id": self.entity_id,
            "kind": self.kind,
            "payload": self.payload,
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "SceneEvent":
        try:
            return cls(
                t=int(doc["t"]),
                entity_id=doc["entity_id"],
                kind=doc["kind"],
                payload=doc["payload"],
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"not a scene event document: {exc}") from None


@dataclass(frozen=True)
class EntityInfo:
    entity_id: str
    role: str


@dataclass
class SessionHeader:
    session_id: str
    created_at: int  # UTC microseconds
    entities: list[EntityInfo] = field(default_factory=list)
    annotations: Document = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def validate(self) -> "SessionHeader":
        if self.format_version != FORMAT_VERSION:
            raise ValueError(f"unsupported format version {self.format_version}")
        ids = [e.entity_id for e in self.entities]
        if len(set(ids)) != len(ids):
            raise ValueError("entity ids must be unique")
        for e in self.entities:
            if e.role not in ROLES:
                raise ValueError(f"unknown role {e.role!r}")
        return self

    def entity_ids(self) -> set[str]:
        return {e.entity_id for e in self.entities}

    def of_role(self, role: str) -> list[str]:
        return [e.entity_id for e in self.entities if e.role == role]

    def to_document(self) -> Document:
        return {
            "session_id": self.session_id,
            "created_at": Int64(self.created_at),
            "format_version": self.format_version,
            "entities": [{"entity_id": e.entity_id, "role": e.role} for e in self.entities],
            "annotations": self.annotations,
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "SessionHeader":
        try:
            header = cls(
                session_id=doc["session_id"],
                created_at=int(doc["created_at"]),
                format_version=int(doc["format_version"]),
                entities=[EntityInfo(e["entity_id"], e["role"]) for e in doc.get("entities", [])],
                annotations=doc.get("annotations", {}),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"not a session header document: {exc}") from None
        return header.validate()


def utc_now_us() -> int:
    return time.time_ns() // 1000


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

class SessionWriter:
    def __init__(self, path: str | os.PathLike, header: SessionHeader):
        header.validate()
        self.path = os.fspath(path)
        self._file = open(self.path, "xb")  # refuses to clobber
        self.header = header
        self._index: list[tuple[int, int]] = []
        self._count = 0
        self._last_t: int | None = None
        codec.write_frame(self._file, header.to_document(), BINARY)

    def append(self, event: SceneEvent) -> None:
        if self._file.closed:
            raise StoreError("writer is closed")
        event.validate()
        if self._last_t is not None and event.t < self._last_t:
            raise NonMonotonicTimestamp(f"event t={event.t} after t={self._last_t}")
        if self._count % INDEX_STRIDE == 0:
            self._file.flush()
            self._index.append((self._count, self._file.tell()))
        codec.write_frame(self._file, event.to_document(), BINARY)
        self._last_t = event.t
        self._count += 1

    @property
    def event_count(self) -> int:
        return self._count

    def close(self) -> None:
        if self._file.closed:
            return
        self._file.flush()
        os.fsync(self._file.fileno())
        self._file.close()
        write_index(self.path + INDEX_SUFFIX, self._index)

    def __enter__(self) -> "SessionWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_session(path: str | os.PathLike, header: SessionHeader) -> SessionWriter:
    """Create a fresh session file; fails with FileExistsError on clobber."""
    return SessionWriter(path, header)


def append_event(writer: SessionWriter, event: SceneEvent) -> None:
    writer.append(event)


def write_index(path: str, entries: Sequence[tuple[int, int]]) -> None:
    with open(path, "wb") as f:
        for ordinal, offset in entries:
            f.write(struct.pack("<qq", ordinal, offset))


def read_index(path: str) -> list[tuple[int, int]]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) % 16 != 0:
        raise StoreError(f"index file {path} has a partial entry")
    return [struct.unpack_from("<qq", data, i) for i in range(0, len(data), 16)]


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------

class SessionReader:
    """Reader over a closed session file; safe to share the path, not the object."""

    def __init__(self, path: str | os.PathLike, use_index: bool = True):
        self.path = os.fspath(path)
        self._file = open(self.path, "rb")
        try:
            header_doc = codec.read_frame(self._file, BINARY)
            self.header = SessionHeader.from_document(header_doc)
        except (codec.CodecError, ValueError) as exc:
            self._file.close()
            raise StoreError(f"unreadable session header: {exc}") from exc
        self._events_start = self._file.tell()
        self.index: list[tuple[int, int]] = []
        if use_index:
            idx_path = self.path + INDEX_SUFFIX
            if os.path.exists(idx_path):
                self.index = read_index(idx_path)

    def rebuild_index(self) -> list[tuple[int, int]]:
        """Reconstruct the side index by scanning the session file."""
        entries = []
        self._file.seek(self._events_start)
        ordinal = 0
        while True:
            offset = self._file.tell()
            try:
                codec.read_frame_payload(self._file, BINARY)
            except codec.EndOfStream:
                break
            except codec.CodecError as exc:
                raise CorruptFrame(str(exc), offset) from exc
            if ordinal % INDEX_STRIDE == 0:
                entries.append((ordinal, offset))
            ordinal += 1
        self.index = entries
        return entries

    def events(self, from_offset: int | None = None) -> Iterator[SceneEvent]:
        """Yield events in file order; reports the offset of any bad frame."""
        self._file.seek(self._events_start if from_offset is None else from_offset)
        while True:
            offset = self._file.tell()
            try:
                doc = codec.read_frame(self._file, BINARY)
            except codec.EndOfStream:
                return
            except codec.CodecError as exc:
                raise CorruptFrame(str(exc), offset) from exc
            try:
                yield SceneEvent.from_document(doc)
            except ValueError as exc:
                raise CorruptFrame(str(exc), offset) from exc

    def read_all(self) -> list[SceneEvent]:
        return list(self.events())

    def _event_t_at(self, offset: int) -> int:
        self._file.seek(offset)
        doc = codec.read_frame(self._file, BINARY)
        return int(doc["t"])

    def query_range(self, t0: int, t1: int) -> list[SceneEvent]:
        """Events with t in [t0, t1], in order.

        Binary-searches the side index so whole 1000-event prefixes are
        skipped without decoding; identical to a linear scan filter.
        """
        if t0 > t1:
            raise ValueError(f"t0={t0} exceeds t1={t1}")
        start_offset = self._events_start
        if self.index:
            # greatest indexed event with t strictly below t0; everything
            # before it is also below t0 because times are non-decreasing
            lo, hi = 0, len(self.index) - 1
            best = None
            while lo <= hi:
                mid = (lo + hi) // 2
                if self._event_t_at(self.index[mid][1]) < t0:
                    best = self.index[mid][1]
                    lo = mid + 1
                else:
                    hi = mid - 1
            if best is not None:
                start_offset = best
        out = []
        for event in self.events(from_offset=start_offset):
            if event.t > t1:
                break
            if event.t >= t0:
                out.append(event)
        return out

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "SessionReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def query_range(reader: SessionReader, t0: int, t1: int) -> list[SceneEvent]:
    return reader.query_range(t0, t1)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplaySummary:
    events_emitted: int
    wall_duration_s: float


def replay(
    reader: SessionReader,
    speed: float,
    sink: Callable[[SceneEvent], None],
) -> ReplaySummary:
    """Deliver events to sink with recorded inter-event gaps scaled by 1/speed.

    Deadlines are absolute against one monotonic clock, so timing error does
    not accumulate.  speed=math.inf streams as fast as possible.
    """
    if not (speed > 0):
        raise ValueError("speed must be positive")
    emitted = 0
    start_wall = time.perf_counter()
    first_t: int | None = None
    for event in reader.events():
        if first_t is None:
            first_t = event.t
        if math.isfinite(speed):
            deadline = start_wall + (event.t - first_t) / speed / 1e6
            remaining = deadline - time.perf_counter()
            if remaining > 0:
                time.sleep(remaining)
        sink(event)
        emitted += 1
    return ReplaySummary(events_emitted=emitted, wall_duration_s=time.perf_counter() - start_wall)
