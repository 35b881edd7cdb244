"""Document model and wire codecs.

A Document is an ordered mapping of UTF-8 string keys to typed values.
Supported value types and their binary element tags:

    float              -> 0x01  64-bit IEEE-754 little-endian
    str                -> 0x02  int32 length-prefixed UTF-8, NUL-terminated
    dict (sub-doc)     -> 0x03
    list (array)       -> 0x04  encoded as a document keyed "0","1","2",...
    bytes (binary)     -> 0x05  int32 length, subtype byte 0x00, raw bytes
    bool               -> 0x08  one byte, 0x00/0x01
    int (32-bit range) -> 0x10  int32 little-endian
    Int64 / wide int   -> 0x12  int64 little-endian

Binary layout per document: int32 total length (including the length field
itself and the trailing NUL), the elements, one 0x00 terminator.  The binary
form is therefore self-delimiting and needs no extra framing on a stream.

The JSON codec is the text baseline: same Documents as RFC 8259 objects,
binary values as base64 strings, integers wider than the exactly
representable float64 range as decimal strings.  JSON text is not
self-delimiting, so JSON frames carry an explicit 4-byte little-endian
unsigned length prefix on the wire.
"""

from __future__ import annotations

import base64
import json
import struct
from typing import Any, BinaryIO, Iterator, Mapping

__all__ = [
    "BINARY",
    "JSON",
    "Document",
    "Int64",
    "CodecError",
    "KeyContainsNul",
    "DocumentTooLarge",
    "Truncated",
    "EndOfStream",
    "BadLength",
    "UnknownTypeTag",
    "InvalidUtf8",
    "NotAnObject",
    "ParseError",
    "FrameTooLarge",
    "encode_document",
    "decode_document",
    "encode_json",
    "decode_json",
    "write_frame",
    "read_frame",
    "write_frame_payload",
    "read_frame_payload",
    "decode_payload",
    "encode_payload",
]

# Codec identifiers, also used verbatim as CLI flag values.
BINARY = "binary"
JSON = "json"

Document = dict[str, Any]

MAX_DOCUMENT_BYTES = 2**31 - 1
_MAX_DEPTH = 512

_INT32_MIN = -(2**31)
_INT32_MAX = 2**31 - 1
_INT64_MIN = -(2**63)
_INT64_MAX = 2**63 - 1
# Integers beyond this magnitude are not exactly representable as float64.
_FLOAT_EXACT_MAX = 2**53

_TAG_FLOAT64 = 0x01
_TAG_STRING = 0x02
_TAG_DOCUMENT = 0x03
_TAG_ARRAY = 0x04
_TAG_BINARY = 0x05
_TAG_BOOL = 0x08
_TAG_INT32 = 0x10
_TAG_INT64 = 0x12

_pack_i32 = struct.Struct("<i").pack
_pack_u32 = struct.Struct("<I").pack
_pack_i64 = struct.Struct("<q").pack
_pack_f64 = struct.Struct("<d").pack
_unpack_i32 = struct.Struct("<i").unpack_from
_unpack_u32 = struct.Struct("<I").unpack_from
_unpack_i64 = struct.Struct("<q").unpack_from
_unpack_f64 = struct.Struct("<d").unpack_from


class Int64(int):
    """Integer pinned to the 64-bit wire type.

    Plain ints inside the 32-bit range encode as int32; wrap a value in
    Int64 to force the wide encoding (decoded int64 values come back as
    Int64 so re-encoding is byte-stable).
    """

    __slots__ = ()

    def __repr__(self) -> str:
        return f"Int64({int(self)})"


class CodecError(Exception):
    """Base class for encode/decode failures."""


class KeyContainsNul(CodecError):
    pass


class DocumentTooLarge(CodecError):
    pass


class Truncated(CodecError):
    """Input ended in the middle of a document or frame."""


class EndOfStream(CodecError):
    """Stream closed cleanly at a frame boundary (no partial data)."""


class BadLength(CodecError):
    """A length field or structural marker is inconsistent with the data."""


class UnknownTypeTag(CodecError):
    pass


class InvalidUtf8(CodecError):
    pass


class NotAnObject(CodecError):
    """JSON text parsed fine but the top level is not an object."""


class ParseError(CodecError):
    """JSON text is not valid JSON."""


class FrameTooLarge(CodecError):
    """Frame length exceeds the configured cap; the payload was skipped."""


# ---------------------------------------------------------------------------
# binary encoding
# ---------------------------------------------------------------------------

def encode_document(doc: Mapping[str, Any]) -> bytes:
    """Encode one Document to its self-delimiting binary form."""
    buf = bytearray()
    _encode_doc_into(buf, doc, 0)
    if len(buf) > MAX_DOCUMENT_BYTES:
        raise DocumentTooLarge(f"encoded document is {len(buf)} bytes")
    return bytes(buf)


def _encode_doc_into(buf: bytearray, doc: Mapping[str, Any], depth: int) -> None:
    if depth > _MAX_DEPTH:
        raise BadLength("document nesting exceeds maximum depth")
    start = len(buf)
    buf += b"\x00\x00\x00\x00"
    for key, value in doc.items():
        _encode_element(buf, key, value, depth)
    buf.append(0)
    total = len(buf) - start
    if total > MAX_DOCUMENT_BYTES:
        raise DocumentTooLarge(f"encoded document is {total} bytes")
    buf[start : start + 4] = _pack_i32(total)


def _encode_array_into(buf: bytearray, items: list, depth: int) -> None:
    if depth > _MAX_DEPTH:
        raise BadLength("document nesting exceeds maximum depth")
    start = len(buf)
    buf += b"\x00\x00\x00\x00"
    for i, value in enumerate(items):
        _encode_element(buf, str(i), value, depth)
    buf.append(0)
    buf[start : start + 4] = _pack_i32(len(buf) - start)


def _encode_element(buf: bytearray, key: str, value: Any, depth: int) -> None:
    if not isinstance(key, str):
        raise TypeError(f"document keys must be str, got {type(key).__name__}")
    kb = key.encode("utf-8")
    if 0 in kb:
        raise KeyContainsNul(f"key {key!r} contains a NUL byte")

    # bool first: it is an int subclass and must never hit the int branches
    if isinstance(value, bool):
        buf.append(_TAG_BOOL)
        buf += kb
        buf.append(0)
        buf.append(1 if value else 0)
    elif isinstance(value, float):
        buf.append(_TAG_FLOAT64)
        buf += kb
        buf.append(0)
        buf += _pack_f64(value)
    elif isinstance(value, str):
        buf.append(_TAG_STRING)
        buf += kb
        buf.append(0)
        sb = value.encode("utf-8")
        buf += _pack_i32(len(sb) + 1)
        buf += sb
        buf.append(0)
    elif isinstance(value, int):
        if not isinstance(value, Int64) and _INT32_MIN <= value <= _INT32_MAX:
            buf.append(_TAG_INT32)
            buf += kb
            buf.append(0)
            buf += _pack_i32(value)
        elif _INT64_MIN <= value <= _INT64_MAX:
            buf.append(_TAG_INT64)
            buf += kb
            buf.append(0)
            buf += _pack_i64(value)
        else:
            raise ValueError(f"integer {value} does not fit in 64 bits")
    elif isinstance(value, (bytes, bytearray)):
        buf.append(_TAG_BINARY)
        buf += kb
        buf.append(0)
        buf += _pack_i32(len(value))
        buf.append(0)  # generic subtype
        buf += value
    elif isinstance(value, dict):
        buf.append(_TAG_DOCUMENT)
        buf += kb
        buf.append(0)
        _encode_doc_into(buf, value, depth + 1)
    elif isinstance(value, (list, tuple)):
        buf.append(_TAG_ARRAY)
        buf += kb
        buf.append(0)
        _encode_array_into(buf, list(value), depth + 1)
    else:
        raise TypeError(f"unsupported value type {type(value).__name__} for key {key!r}")


# ---------------------------------------------------------------------------
# binary decoding
# ---------------------------------------------------------------------------

def decode_document(data: bytes) -> Document:
    """Decode exactly one binary Document; rejects trailing or missing bytes."""
    if not isinstance(data, (bytes, bytearray)):
        raise TypeError("decode_document expects bytes")
    if len(data) == 0:
        raise Truncated("empty input")
    doc, end = _decode_doc(bytes(data), 0, 0)
    if end != len(data):
        raise BadLength(f"{len(data) - end} trailing bytes after document")
    return doc


def _decode_doc(data: bytes, base: int, depth: int) -> tuple[Document, int]:
    if depth > _MAX_DEPTH:
        raise BadLength("document nesting exceeds maximum depth")
    if len(data) - base < 4:
        raise Truncated("not enough bytes for document length")
    (total,) = _unpack_i32(data, base)
    if total < 5:
        raise BadLength(f"document length {total} is below the 5-byte minimum")
    if base + total > len(data):
        raise Truncated(f"document claims {total} bytes, {len(data) - base} available")
    end = base + total - 1  # position of the terminator
    doc: Document = {}
    pos = base + 4
    while pos < end:
        tag = data[pos]
        if tag == 0:
            raise BadLength("terminator before declared document end")
        pos += 1
        key, pos = _decode_cstring(data, pos, end)
        if key in doc:
            raise BadLength(f"duplicate key {key!r}")
        value, pos = _decode_value(data, pos, end, tag, depth)
        doc[key] = value
    if pos != end:
        raise BadLength("element ran past declared document end")
    if data[end] != 0:
        raise BadLength("document terminator is not NUL")
    return doc, end + 1


def _decode_cstring(data: bytes, pos: int, limit: int) -> tuple[str, int]:
    nul = data.find(0, pos, limit)
    if nul < 0:
        raise BadLength("unterminated key")
    try:
        return data[pos:nul].decode("utf-8"), nul + 1
    except UnicodeDecodeError as exc:
        raise InvalidUtf8(str(exc)) from None


def _decode_value(data: bytes, pos: int, limit: int, tag: int, depth: int) -> tuple[Any, int]:
    if tag == _TAG_FLOAT64:
        if pos + 8 > limit:
            raise Truncated("float64 runs past document end")
        return _unpack_f64(data, pos)[0], pos + 8
    if tag == _TAG_STRING:
        if pos + 4 > limit:
            raise Truncated("string length runs past document end")
        (n,) = _unpack_i32(data, pos)
        pos += 4
        if n < 1:
            raise BadLength(f"string length {n} is below 1")
        if pos + n > limit:
            raise Truncated("string runs past document end")
        if data[pos + n - 1] != 0:
            raise BadLength("string is not NUL-terminated")
        try:
            return data[pos : pos + n - 1].decode("utf-8"), pos + n
        except UnicodeDecodeError as exc:
            raise InvalidUtf8(str(exc)) from None
    if tag == _TAG_DOCUMENT:
        sub, end = _decode_doc(data, pos, depth + 1)
        if end > limit:
            raise Truncated("sub-document runs past document end")
        return sub, end
    if tag == _TAG_ARRAY:
        sub, end = _decode_doc(data, pos, depth + 1)
        if end > limit:
            raise Truncated("array runs past document end")
        items = []
        for i, (k, v) in enumerate(sub.items()):
            if k != str(i):
                raise BadLength(f"array key {k!r} at position {i}")
            items.append(v)
        return items, end
    if tag == _TAG_BINARY:
        if pos + 5 > limit:
            raise Truncated("binary header runs past document end")
        (n,) = _unpack_i32(data, pos)
        if n < 0:
            raise BadLength(f"negative binary length {n}")
        subtype = data[pos + 4]
        if subtype != 0:
            raise UnknownTypeTag(f"unsupported binary subtype 0x{subtype:02x}")
        pos += 5
        if pos + n > limit:
            raise Truncated("binary runs past document end")
        return data[pos : pos + n], pos + n
    if tag == _TAG_BOOL:
        if pos + 1 > limit:
            raise Truncated("bool runs past document end")
        b = data[pos]
        if b not in (0, 1):
            raise BadLength(f"bool byte 0x{b:02x}")
        return b == 1, pos + 1
    if tag == _TAG_INT32:
        if pos + 4 > limit:
            raise Truncated("int32 runs past document end")
        return _unpack_i32(data, pos)[0], pos + 4
    if tag == _TAG_INT64:
        if pos + 8 > limit:
            raise Truncated("int64 runs past document end")
        return Int64(_unpack_i64(data, pos)[0]), pos + 8
    raise UnknownTypeTag(f"unknown element tag 0x{tag:02x}")


# ---------------------------------------------------------------------------
# JSON codec
# ---------------------------------------------------------------------------

def encode_json(doc: Mapping[str, Any]) -> str:
    """Encode a Document as JSON text (the baseline wire format).

    Binary values become base64 strings; integers outside the exact
    float64 range become decimal strings so no reader silently rounds
    them.  Key order is preserved.
    """
    return json.dumps(_to_jsonable(doc, 0), separators=(",", ":"), ensure_ascii=False)


def _to_jsonable(value: Any, depth: int) -> Any:
    if depth > _MAX_DEPTH:
        raise BadLength("document nesting exceeds maximum depth")
    if isinstance(value, bool):
        return value
    if isinstance(value, (float, str)):
        return value
    if isinstance(value, int):
        if not (_INT64_MIN <= value <= _INT64_MAX):
            raise ValueError(f"integer {value} does not fit in 64 bits")
        if -_FLOAT_EXACT_MAX <= value <= _FLOAT_EXACT_MAX:
            return int(value)
        return str(int(value))
    if isinstance(value, (bytes, bytearray)):
        return base64.b64encode(bytes(value)).decode("ascii")
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise TypeError(f"document keys must be str, got {type(k).__name__}")
            if "\x00" in k:
                raise KeyContainsNul(f"key {k!r} contains a NUL byte")
            out[k] = _to_jsonable(v, depth + 1)
        return out
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v, depth + 1) for v in value]
    raise TypeError(f"unsupported value type {type(value).__name__}")


def decode_json(text: str | bytes, hints: Mapping[str, str] | None = None) -> Document:
    """Decode JSON text back to a Document.

    Without hints the mapping is necessarily lossy for types JSON cannot
    express: integral numbers come back as Int64, fractional ones as
    float, and strings stay strings.  ``hints`` maps dotted key paths
    (array elements as ``*``) to one of ``binary``, ``int32``, ``int64``
    or ``float64`` to restore the original types, e.g.
    ``{"msg.rgb": "binary"}``.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidUtf8(str(exc)) from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc)) from None
    if not isinstance(obj, dict):
        raise NotAnObject(f"top-level JSON value is {type(obj).__name__}")
    return _from_jsonable(obj, "", hints or {})


def _from_jsonable(value: Any, path: str, hints: Mapping[str, str]) -> Any:
    if isinstance(value, dict):
        return {k: _from_jsonable(v, f"{path}.{k}" if path else k, hints) for k, v in value.items()}
    if isinstance(value, list):
        sub = f"{path}.*" if path else "*"
        return [_from_jsonable(v, sub, hints) for v in value]
    hint = hints.get(path)
    if hint is None:
        if isinstance(value, bool):
            return value
        if isinstance(value, int):
            return Int64(value)
        return value
    if hint == "binary":
        if not isinstance(value, str):
            raise ParseError(f"hinted binary field {path} is {type(value).__name__}")
        try:
            return base64.b64decode(value.encode("ascii"), validate=True)
        except (ValueError, UnicodeEncodeError) as exc:
            raise ParseError(f"bad base64 in {path}: {exc}") from None
    if hint in ("int32", "int64"):
        try:
            n = int(value)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"hinted integer field {path}: {exc}") from None
        return Int64(n) if hint == "int64" else n
    if hint == "float64":
        return float(value)
    raise ValueError(f"unknown hint {hint!r} for {path}")


# ---------------------------------------------------------------------------
# stream framing
# ---------------------------------------------------------------------------

def encode_payload(doc: Mapping[str, Any], codec_id: str) -> bytes:
    """Encode a Document to one frame payload (binary doc or JSON text bytes)."""
    if codec_id == BINARY:
        return encode_document(doc)
    if codec_id == JSON:
        return encode_json(doc).encode("utf-8")
    raise ValueError(f"unknown codec {codec_id!r}")


def decode_payload(payload: bytes, codec_id: str, hints: Mapping[str, str] | None = None) -> Document:
    """Decode one frame payload back to a Document."""
    if codec_id == BINARY:
        return decode_document(payload)
    if codec_id == JSON:
        return decode_json(payload, hints)
    raise ValueError(f"unknown codec {codec_id!r}")


def write_frame_payload(sink: BinaryIO, payload: bytes, codec_id: str) -> None:
    """Append one already-encoded frame payload to a stream."""
    if codec_id == BINARY:
        sink.write(payload)
    elif codec_id == JSON:
        sink.write(_pack_u32(len(payload)) + payload)
    else:
        raise ValueError(f"unknown codec {codec_id!r}")


def write_frame(sink: BinaryIO, doc: Mapping[str, Any], codec_id: str) -> None:
    """Encode a Document and append exactly one frame to a stream."""
    write_frame_payload(sink, encode_payload(doc, codec_id), codec_id)


def _read_exact(source: BinaryIO, n: int, got_any: bool) -> bytes:
    """Read exactly n bytes, tolerating short reads from the source."""
    chunk = source.read(n)
    if chunk is None:
        chunk = b""
    if len(chunk) == n:
        return chunk
    parts = [chunk]
    have = len(chunk)
    while have < n:
        more = source.read(n - have)
        if not more:
            if have == 0 and not got_any:
                raise EndOfStream("stream closed at frame boundary")
            raise Truncated(f"stream closed after {have} of {n} bytes")
        parts.append(more)
        have += len(more)
    return b"".join(parts)


def _skip_exact(source: BinaryIO, n: int) -> None:
    while n > 0:
        chunk = source.read(min(n, 1 << 20))
        if not chunk:
            raise Truncated(f"stream closed with {n} bytes left to skip")
        n -= len(chunk)


def read_frame_payload(source: BinaryIO, codec_id: str, max_size: int | None = None) -> bytes:
    """Consume exactly one frame from a stream and return its payload bytes.

    Raises EndOfStream if the stream is already closed at the frame
    boundary, Truncated if it closes mid-frame, and FrameTooLarge (after
    skipping the oversized payload, leaving the stream at the next frame
    boundary) when the declared length exceeds max_size.
    """
    head = _read_exact(source, 4, got_any=False)
    if codec_id == BINARY:
        (total,) = _unpack_i32(head, 0)
        if total < 5:
            raise BadLength(f"frame length {total} is below the 5-byte minimum")
        if max_size is not None and total > max_size:
            _skip_exact(source, total - 4)
            raise FrameTooLarge(f"frame of {total} bytes exceeds cap of {max_size}")
        return head + _read_exact(source, total - 4, got_any=True)
    if codec_id == JSON:
        (n,) = _unpack_u32(head, 0)
        if max_size is not None and n > max_size:
            _skip_exact(source, n)
            raise FrameTooLarge(f"frame of {n} bytes exceeds cap of {max_size}")
        return _read_exact(source, n, got_any=True)
    raise ValueError(f"unknown codec {codec_id!r}")


def read_frame(
    source: BinaryIO,
    codec_id: str,
    max_size: int | None = None,
    hints: Mapping[str, str] | None = None,
) -> Document:
    """Consume exactly one frame from a stream and decode it."""
    return decode_payload(read_frame_payload(source, codec_id, max_size), codec_id, hints)


def read_frames(source: BinaryIO, codec_id: str, max_size: int | None = None) -> Iterator[Document]:
    """Yield Documents until the stream closes at a frame boundary."""
    while True:
        try:
            yield read_frame(source, codec_id, max_size)
        except EndOfStream:
            return
