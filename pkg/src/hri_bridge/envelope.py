"""Bridge protocol envelopes.

Every frame on a bridge connection is a Document whose "op" field names the
operation.  Field names on the wire are fixed: "op", "topic", "type", "msg",
"queue_length".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

from hri_bridge.codec import Document

ADVERTISE = "advertise"
UNADVERTISE = "unadvertise"
PUBLISH = "publish"
SUBSCRIBE = "subscribe"
UNSUBSCRIBE = "unsubscribe"
STATUS = "status"

BRIDGE_OPS = frozenset({ADVERTISE, UNADVERTISE, PUBLISH, SUBSCRIBE, UNSUBSCRIBE})


class EnvelopeError(Exception):
    """Base class for envelope validation failures."""

    code = "error"


class MalformedEnvelope(EnvelopeError):
    code = "malformed_envelope"


class UnknownOp(EnvelopeError):
    code = "unknown_op"


@dataclass(frozen=True)
class Envelope:
    op: str
    topic: str
    type_name: str | None = None
    msg: Document | None = None
    queue_length: int | None = None

    def to_document(self) -> Document:
        doc: Document = {"op": self.op, "topic": self.topic}
        if self.type_name is not None:
            doc["type"] = self.type_name
        if self.msg is not None:
            doc["msg"] = self.msg
        if self.queue_length is not None:
            doc["queue_length"] = int(self.queue_length)
        return doc


def validate_topic(topic: Any) -> str:
    if not isinstance(topic, str) or not topic:
        raise MalformedEnvelope("topic must be a non-empty string")
    if not topic.startswith("/"):
        raise MalformedEnvelope(f"topic {topic!r} must begin with '/'")
    if any(c.isspace() for c in topic):
        raise MalformedEnvelope(f"topic {topic!r} contains whitespace")
    return topic


def parse_envelope(doc: Mapping[str, Any]) -> Envelope:
    """Validate a decoded Document as a bridge envelope."""
    op = doc.get("op")
    if not isinstance(op, str):
        raise MalformedEnvelope("missing or non-string op field")
    if op not in BRIDGE_OPS:
        raise UnknownOp(f"unknown op {op!r}")
    topic = validate_topic(doc.get("topic"))

    type_name = doc.get("type")
    if type_name is not None and not isinstance(type_name, str):
        raise MalformedEnvelope("type must be a string")

    msg = doc.get("msg")
    if op == PUBLISH:
        if not isinstance(msg, dict):
            raise MalformedEnvelope("publish requires a msg document")
    elif msg is not None:
        raise MalformedEnvelope(f"{op} must not carry a msg")

    queue_length = doc.get("queue_length")
    if queue_length is not None:
        if op != SUBSCRIBE:
            raise MalformedEnvelope("queue_length is only valid on subscribe")
        if isinstance(queue_length, bool) or not isinstance(queue_length, int) or queue_length < 1:
            raise MalformedEnvelope("queue_length must be a positive integer")
        queue_length = int(queue_length)

    return Envelope(op=op, topic=topic, type_name=type_name, msg=msg, queue_length=queue_length)


def status_document(level: str, message: str, code: str | None = None) -> Document:
    """In-band status report, the broker's only error channel."""
    doc: Document = {"op": STATUS, "level": level, "msg": message}
    if code is not None:
        doc["code"] = code
    return doc
