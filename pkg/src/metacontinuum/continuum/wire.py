"""Inter-layer frames.

Request frame::

    b"MQ" | u8 version | u64 context | u8 flags | i32 priority | u16 ttl | u8 origin | u32 len | path

Response frame::

    b"MR" | u8 version | u64 context | u8 status | u32 len | serialized record (may be empty)

``flags`` bit 0 is force_refresh.  All integers are big-endian.
"""

from __future__ import annotations

import struct

from ..core import FramingError, deserialize_record, serialize_record
from ..prefetch import Origin, PrefetchRequest
from .node import DELETED, FAILED, OK, Response

VERSION = 1
_REQ = struct.Struct(">2sBQBiHBI")
_RESP = struct.Struct(">2sBQBI")

_ORIGINS = list(Origin)
_STATUSES = [OK, DELETED, FAILED]


def encode_request(context_id: int, req: PrefetchRequest) -> bytes:
    path = str(req.path).encode("utf-8")
    return _REQ.pack(b"MQ", VERSION, context_id, 1 if req.force_refresh else 0, req.priority,
                     req.ttl, _ORIGINS.index(req.origin), len(path)) + path


def decode_request(data: bytes) -> tuple[int, PrefetchRequest]:
    if len(data) < _REQ.size:
        raise FramingError("truncated request frame")
    magic, ver, ctx, flags, prio, ttl, origin, n = _REQ.unpack_from(data)
    if magic != b"MQ" or ver != VERSION:
        raise FramingError("not a request frame")
    if origin >= len(_ORIGINS) or flags & ~1:
        raise FramingError("bad request header")
    if len(data) != _REQ.size + n:
        raise FramingError("request frame length mismatch")
    path = data[_REQ.size:].decode("utf-8")
    return ctx, PrefetchRequest(path, prio, ttl, bool(flags & 1), _ORIGINS[origin])


def encode_response(context_id: int, resp: Response) -> bytes:
    body = serialize_record(resp.record) if resp.record is not None else b""
    return _RESP.pack(b"MR", VERSION, context_id, _STATUSES.index(resp.status), len(body)) + body


def decode_response(data: bytes, path=None) -> tuple[int, Response]:
    if len(data) < _RESP.size:
        raise FramingError("truncated response frame")
    magic, ver, ctx, status, n = _RESP.unpack_from(data)
    if magic != b"MR" or ver != VERSION or status >= len(_STATUSES):
        raise FramingError("not a response frame")
    if len(data) != _RESP.size + n:
        raise FramingError("response frame length mismatch")
    record = deserialize_record(data[_RESP.size:]) if n else None
    if record is not None:
        path = record.path
    return ctx, Response(path, _STATUSES[status], record)
