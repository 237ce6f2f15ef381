"""Metadata records, binary framing, block splitting and version resolution.

Every layer of the system exchanges :class:`MetadataRecord` values.  A record is
serialized with a small length-prefixed layout::

    u32 field_count
    repeated field_count times:
        u8  tag
        u32 length
        length bytes of payload

Fields appear in a fixed order: path, kind, size, mtime, status, then one
``CHILD`` field per directory entry.  Because each child is its own field, a
truncated byte stream still decodes to a usable prefix of the listing, which is
what lets block-wise transfer hand out partial directory contents early.

Integers are big-endian.  The child payload is ``u8 kind, u64 size, u64 mtime``
followed by the UTF-8 name.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
import threading
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Optional, Sequence

DEFAULT_BLOCK_SIZE = 64 * 1024

TAG_PATH = 1
TAG_KIND = 2
TAG_SIZE = 3
TAG_MTIME = 4
TAG_STATUS = 5
TAG_CHILD = 16

_HEADER = struct.Struct(">I")
_FIELD = struct.Struct(">BI")
_U64 = struct.Struct(">Q")
_CHILD = struct.Struct(">BQQ")


class FramingError(ValueError):
    """Raised when bytes do not decode as a serialized record."""


class Kind(enum.IntEnum):
    FILE = 0
    DIRECTORY = 1


class Status(enum.IntEnum):
    LIVE = 0
    DELETED = 1


@dataclass(frozen=True, order=True)
class ResourcePath:
    """An absolute path split into segments; the root has no segments."""

    segments: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.segments, tuple):
            object.__setattr__(self, "segments", tuple(self.segments))
        for seg in self.segments:
            if not seg or "/" in seg or seg in (".", ".."):
                raise ValueError(f"invalid path segment {seg!r}")

    @classmethod
    def parse(cls, text: "str | ResourcePath") -> "ResourcePath":
        if isinstance(text, ResourcePath):
            return text
        if not text.startswith("/"):
            raise ValueError(f"path must be absolute: {text!r}")
        return cls(tuple(s for s in text.split("/") if s))

    def __str__(self) -> str:
        return "/" + "/".join(self.segments)

    @property
    def is_root(self) -> bool:
        return not self.segments

    @property
    def name(self) -> str:
        return self.segments[-1] if self.segments else ""

    @property
    def depth(self) -> int:
        return len(self.segments)

    @property
    def parent(self) -> Optional["ResourcePath"]:
        if not self.segments:
            return None
        return ResourcePath(self.segments[:-1])

    def child(self, name: str) -> "ResourcePath":
        return ResourcePath(self.segments + (name,))

    def is_ancestor_of(self, other: "ResourcePath") -> bool:
        n = len(self.segments)
        return len(other.segments) > n and other.segments[:n] == self.segments


@dataclass(frozen=True)
class ChildEntry:
    name: str
    kind: Kind
    size_bytes: int = 0
    mtime: int = 0


@dataclass(frozen=True)
class MetadataRecord:
    """Metadata for one path.  ``digest`` is derived from the serialized bytes."""

    path: ResourcePath
    kind: Kind
    size_bytes: int = 0
    mtime: int = 0
    children: tuple[ChildEntry, ...] = ()
    status: Status = Status.LIVE

    def __post_init__(self):
        if not isinstance(self.path, ResourcePath):
            object.__setattr__(self, "path", ResourcePath.parse(self.path))
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))
        if self.kind == Kind.FILE and self.children:
            raise ValueError("file records cannot have children")
        if self.mtime < 0 or self.size_bytes < 0:
            raise ValueError("mtime and size_bytes must be non-negative")

    @cached_property
    def digest(self) -> int:
        return content_digest(serialize_record(self))

    @property
    def deleted(self) -> bool:
        return self.status == Status.DELETED

    def child_paths(self) -> list[ResourcePath]:
        return [self.path.child(c.name) for c in self.children]

    def mark_deleted(self) -> "MetadataRecord":
        return MetadataRecord(
            self.path, self.kind, self.size_bytes, self.mtime, self.children, Status.DELETED
        )


def content_digest(data: bytes) -> int:
    """64-bit digest of ``data``."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


def path_key(path: "ResourcePath | str") -> int:
    return content_digest(str(path).encode("utf-8"))


def _field(tag: int, payload: bytes) -> bytes:
    return _FIELD.pack(tag, len(payload)) + payload


def serialize_record(record: MetadataRecord) -> bytes:
    parts = [
        _HEADER.pack(5 + len(record.children)),
        _field(TAG_PATH, str(record.path).encode("utf-8")),
        _field(TAG_KIND, bytes([int(record.kind)])),
        _field(TAG_SIZE, _U64.pack(record.size_bytes)),
        _field(TAG_MTIME, _U64.pack(record.mtime)),
        _field(TAG_STATUS, bytes([int(record.status)])),
    ]
    for c in record.children:
        payload = _CHILD.pack(int(c.kind), c.size_bytes, c.mtime) + c.name.encode("utf-8")
        parts.append(_field(TAG_CHILD, payload))
    return b"".join(parts)


def _iter_fields(data: bytes, offset: int) -> Iterator[tuple[int, bytes, int]]:
    n = len(data)
    while offset + _FIELD.size <= n:
        tag, length = _FIELD.unpack_from(data, offset)
        start = offset + _FIELD.size
        end = start + length
        if end > n:
            return
        yield tag, data[start:end], end
        offset = end


def decode_prefix(data: bytes) -> tuple[Optional[MetadataRecord], bool]:
    """Decode as much of a (possibly truncated) serialized record as possible.

    Returns ``(record, complete)``.  ``record`` is None until the five scalar
    fields are present; after that it carries every child whose field arrived
    in full.
    """
    if len(data) < _HEADER.size:
        return None, False
    (count,) = _HEADER.unpack_from(data, 0)
    if count < 5:
        raise FramingError(f"field count {count} too small")
    scalars: dict[int, bytes] = {}
    children: list[ChildEntry] = []
    seen = 0
    end = _HEADER.size
    for tag, payload, end in _iter_fields(data, _HEADER.size):
        seen += 1
        if seen > count:
            raise FramingError("more fields than declared")
        if tag == TAG_CHILD:
            if len(scalars) < 5:
                raise FramingError("child field before scalar fields")
            ckind, csize, cmtime = _CHILD.unpack_from(payload, 0)
            children.append(ChildEntry(payload[_CHILD.size:].decode("utf-8"), Kind(ckind), csize, cmtime))
        elif tag in (TAG_PATH, TAG_KIND, TAG_SIZE, TAG_MTIME, TAG_STATUS):
            if tag in scalars:
                raise FramingError(f"duplicate field tag {tag}")
            scalars[tag] = payload
        else:
            raise FramingError(f"unknown field tag {tag}")
    complete = seen == count
    if complete and end != len(data):
        raise FramingError("trailing bytes after record")
    if len(scalars) < 5:
        if complete:
            raise FramingError("missing scalar fields")
        return None, False
    record = MetadataRecord(
        path=ResourcePath.parse(scalars[TAG_PATH].decode("utf-8")),
        kind=Kind(scalars[TAG_KIND][0]),
        size_bytes=_U64.unpack(scalars[TAG_SIZE])[0],
        mtime=_U64.unpack(scalars[TAG_MTIME])[0],
        children=tuple(children),
        status=Status(scalars[TAG_STATUS][0]),
    )
    return record, complete


def deserialize_record(data: bytes) -> MetadataRecord:
    record, complete = decode_prefix(data)
    if not complete or record is None:
        raise FramingError("truncated record")
    return record


# -- blocks ---------------------------------------------------------------


@dataclass(frozen=True)
class MetadataBlock:
    owner_key: int
    index: int
    total: int
    payload: bytes

    @property
    def key(self) -> str:
        return block_key(self.owner_key, self.index)


@dataclass(frozen=True)
class BlockManifest:
    owner_key: int
    total: int
    block_keys: tuple[str, ...]
    serialized_len: int
    block_size: int


def block_key(owner_key: int, index: int) -> str:
    return f"{owner_key:016x}/{index}"


def split_blocks(
    record: MetadataRecord, block_size: int = DEFAULT_BLOCK_SIZE
) -> tuple[BlockManifest, list[MetadataBlock]]:
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    data = serialize_record(record)
    owner = path_key(record.path)
    total = max(1, math.ceil(len(data) / block_size))
    blocks = [
        MetadataBlock(owner, i, total, data[i * block_size:(i + 1) * block_size])
        for i in range(total)
    ]
    manifest = BlockManifest(owner, total, tuple(b.key for b in blocks), len(data), block_size)
    return manifest, blocks


def join_blocks(manifest: BlockManifest, blocks: Iterable[MetadataBlock]) -> MetadataRecord:
    ordered = sorted(blocks, key=lambda b: b.index)
    if [b.index for b in ordered] != list(range(manifest.total)):
        raise FramingError("missing or duplicate blocks")
    for b in ordered:
        if b.owner_key != manifest.owner_key:
            raise FramingError("block belongs to another record")
    data = b"".join(b.payload for b in ordered)
    if len(data) != manifest.serialized_len:
        raise FramingError("joined length does not match manifest")
    return deserialize_record(data)


def join_prefix(blocks: Sequence[MetadataBlock]) -> tuple[Optional[MetadataRecord], bool]:
    """Decode the contiguous leading run of ``blocks`` (index 0, 1, ...)."""
    data = bytearray()
    for expected, b in enumerate(sorted(blocks, key=lambda b: b.index)):
        if b.index != expected:
            break
        data += b.payload
    return decode_prefix(bytes(data))


# -- versioning -----------------------------------------------------------


class Resolution(enum.Enum):
    ACCEPT_INCOMING = "accept_incoming"
    KEEP_CACHED = "keep_cached"


def resolve_conflict(cached: Optional[MetadataRecord], incoming: MetadataRecord) -> Resolution:
    # equal mtimes keep the cached copy
    if cached is None or incoming.mtime > cached.mtime:
        return Resolution.ACCEPT_INCOMING
    return Resolution.KEEP_CACHED


class OverwriteResult(enum.Enum):
    APPLIED = "applied"
    LOST_RACE = "lost_race"


def conditional_overwrite(store, key, expected_digest: Optional[int], new_record: MetadataRecord) -> OverwriteResult:
    """Replace ``store[key]`` with ``new_record`` only if its digest is unchanged.

    ``expected_digest`` of None means "expect the key to be absent".  ``store``
    must provide ``compare_and_set(key, expected_digest, record) -> bool``.
    """
    if store.compare_and_set(key, expected_digest, new_record):
        return OverwriteResult.APPLIED
    return OverwriteResult.LOST_RACE


class MetadataStore:
    """Unbounded in-memory key/value store of records.

    Per-key updates are linearizable through lock striping; there are no
    cross-key transactions.
    """

    def __init__(self, stripes: int = 64):
        self._data: dict = {}
        self._locks = [threading.Lock() for _ in range(stripes)]

    def _lock(self, key) -> threading.Lock:
        return self._locks[hash(key) % len(self._locks)]

    def get(self, key) -> Optional[MetadataRecord]:
        return self._data.get(key)

    def __contains__(self, key) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def keys(self):
        return list(self._data)

    def put(self, key, record: MetadataRecord) -> None:
        with self._lock(key):
            self._data[key] = record

    def put_versioned(self, key, record: MetadataRecord) -> MetadataRecord:
        """Store ``record`` unless the cached copy is at least as new; return the winner."""
        with self._lock(key):
            cached = self._data.get(key)
            if resolve_conflict(cached, record) is Resolution.ACCEPT_INCOMING:
                self._data[key] = record
                return record
            return cached

    def compare_and_set(self, key, expected_digest: Optional[int], record: MetadataRecord) -> bool:
        with self._lock(key):
            current = self._data.get(key)
            current_digest = None if current is None else current.digest
            if current_digest != expected_digest:
                return False
            self._data[key] = record
            return True

    def delete(self, key) -> None:
        with self._lock(key):
            self._data.pop(key, None)


class BlockStore(MetadataStore):
    """Record store that keeps every record as a manifest plus fixed-size blocks.

    Decoded records are memoised so repeated reads do not re-join blocks.
    ``save``/``load`` persist the blocks to a single file.
    """

    def __init__(self, block_size: int = DEFAULT_BLOCK_SIZE, stripes: int = 64):
        super().__init__(stripes)
        self.block_size = block_size
        self.manifests: dict = {}
        self.blocks: dict[str, MetadataBlock] = {}

    def _write(self, key, record: MetadataRecord) -> None:
        old = self.manifests.get(key)
        if old is not None:
            for bk in old.block_keys:
                self.blocks.pop(bk, None)
        manifest, blocks = split_blocks(record, self.block_size)
        for b in blocks:
            self.blocks[b.key] = b
        self.manifests[key] = manifest
        self._data[key] = record

    def put(self, key, record):
        with self._lock(key):
            self._write(key, record)

    def put_versioned(self, key, record):
        with self._lock(key):
            cached = self._data.get(key)
            if resolve_conflict(cached, record) is Resolution.ACCEPT_INCOMING:
                self._write(key, record)
                return record
            return cached

    def compare_and_set(self, key, expected_digest, record):
        with self._lock(key):
            current = self._data.get(key)
            if (None if current is None else current.digest) != expected_digest:
                return False
            self._write(key, record)
            return True

    def delete(self, key):
        with self._lock(key):
            manifest = self.manifests.pop(key, None)
            if manifest is not None:
                for bk in manifest.block_keys:
                    self.blocks.pop(bk, None)
            self._data.pop(key, None)

    def read_blocks(self, key) -> tuple[BlockManifest, list[MetadataBlock]]:
        manifest = self.manifests[key]
        return manifest, [self.blocks[bk] for bk in manifest.block_keys]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            for key, manifest in self.manifests.items():
                key_bytes = str(key).encode("utf-8")
                fh.write(struct.pack(">IIQ", len(key_bytes), manifest.total, manifest.serialized_len))
                fh.write(key_bytes)
                for bk in manifest.block_keys:
                    payload = self.blocks[bk].payload
                    fh.write(struct.pack(">I", len(payload)))
                    fh.write(payload)

    @classmethod
    def load(cls, path, block_size: int = DEFAULT_BLOCK_SIZE) -> "BlockStore":
        store = cls(block_size)
        with open(path, "rb") as fh:
            data = fh.read()
        off = 0
        while off < len(data):
            klen, total, slen = struct.unpack_from(">IIQ", data, off)
            off += 16
            key = data[off:off + klen].decode("utf-8")
            off += klen
            payloads = []
            for _ in range(total):
                (plen,) = struct.unpack_from(">I", data, off)
                off += 4
                payloads.append(data[off:off + plen])
                off += plen
            record = deserialize_record(b"".join(payloads))
            if len(b"".join(payloads)) != slen:
                raise FramingError(f"length mismatch for {key}")
            store._write(key, record)
        return store
