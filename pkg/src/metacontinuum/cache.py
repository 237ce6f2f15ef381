"""Bounded LRU metadata cache with per-entry miss counters.

Metadata records, pattern objects and bare miss counters share a single
entry-count capacity.  Keys are canonical path strings (or pattern keys).
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Optional

from .core import MetadataRecord, Resolution, resolve_conflict


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    size: int = 0
    capacity: Optional[int] = None

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> float:
        return self.hits / self.lookups if self.lookups else 0.0

    def as_row(self) -> dict:
        return {
            "hits": self.hits,
            "misses": self.misses,
            "evictions": self.evictions,
            "size": self.size,
            "capacity": -1 if self.capacity is None else self.capacity,
            "hit_rate": round(self.hit_rate, 6),
        }


class _Entry:
    __slots__ = ("value", "miss_counter")

    def __init__(self, value=None, miss_counter=0):
        self.value = value
        self.miss_counter = miss_counter


class MetadataCache:
    """LRU cache.  ``capacity=None`` is unbounded, ``0`` caches nothing."""

    def __init__(self, capacity: Optional[int] = None):
        if capacity is not None and capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self._entries: "OrderedDict[Any, _Entry]" = OrderedDict()
        self._lock = threading.RLock()
        self.stats = CacheStats(capacity=capacity)

    def __len__(self):
        return len(self._entries)

    def __contains__(self, key):
        e = self._entries.get(key)
        return e is not None and e.value is not None

    def _evict_for_insert(self) -> Optional[Any]:
        if self.capacity is None or len(self._entries) < self.capacity:
            return None
        victim, _ = self._entries.popitem(last=False)
        self.stats.evictions += 1
        return victim

    def _insert(self, key, entry: _Entry) -> Optional[Any]:
        if self.capacity == 0:
            return None
        victim = self._evict_for_insert()
        self._entries[key] = entry
        self.stats.size = len(self._entries)
        return victim

    def get(self, key):
        """Return the cached value (promoting it) or None; counts a hit or miss."""
        with self._lock:
            e = self._entries.get(key)
            if e is None or e.value is None:
                self.stats.misses += 1
                return None
            self._entries.move_to_end(key)
            self.stats.hits += 1
            return e.value

    def peek(self, key):
        e = self._entries.get(key)
        return None if e is None else e.value

    def put(self, key, value) -> Optional[Any]:
        """Insert or update; returns the evicted key, if any.

        A record older than (or as old as) the cached record is discarded.
        """
        with self._lock:
            e = self._entries.get(key)
            if e is not None:
                cur = e.value
                if (isinstance(cur, MetadataRecord) and isinstance(value, MetadataRecord)
                        and resolve_conflict(cur, value) is Resolution.KEEP_CACHED):
                    return None
                e.value = value
                self._entries.move_to_end(key)
                return None
            return self._insert(key, _Entry(value))

    def compare_and_set(self, key, expected_digest: Optional[int], record: MetadataRecord) -> bool:
        """Replace the record only if its digest still equals ``expected_digest``."""
        with self._lock:
            e = self._entries.get(key)
            cur = None if e is None else e.value
            cur_digest = cur.digest if isinstance(cur, MetadataRecord) else None
            if cur_digest != expected_digest:
                return False
            if e is None:
                self._insert(key, _Entry(record))
            else:
                e.value = record
                self._entries.move_to_end(key)
            return True

    def note_miss(self, key) -> int:
        """Increment the miss counter for ``key`` (created at 1) and return it."""
        with self._lock:
            e = self._entries.get(key)
            if e is None:
                if self.capacity == 0:
                    return 1
                self._insert(key, _Entry(None, 1))
                return 1
            e.miss_counter += 1
            self._entries.move_to_end(key)
            return e.miss_counter

    def miss_count(self, key) -> int:
        e = self._entries.get(key)
        return 0 if e is None else e.miss_counter

    def reset_miss(self, key) -> None:
        with self._lock:
            e = self._entries.get(key)
            if e is not None:
                e.miss_counter = 0

    def remove(self, key) -> bool:
        with self._lock:
            found = self._entries.pop(key, None) is not None
            self.stats.size = len(self._entries)
            return found

    def keys(self) -> list:
        with self._lock:
            return list(self._entries)

    def records(self) -> list[tuple[Any, MetadataRecord]]:
        with self._lock:
            return [(k, e.value) for k, e in self._entries.items() if isinstance(e.value, MetadataRecord)]

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self.stats.size = 0
