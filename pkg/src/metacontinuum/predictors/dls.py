"""Directory/semantic-locality prefetching.

Recent unique paths are kept in a small window.  On a local miss the
predictor looks for the split ``A ? B`` of the missed path (one varying
segment) that most window entries share.  Each such pattern owns a miss
counter that lives in the node's cache; once the counter passes a threshold
the predictor prefetches every uncached sibling matching the pattern and
resets the counter.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

from ..core import Kind, MetadataRecord, ResourcePath
from ..prefetch import PRIORITY_PREDICTOR, PrefetchRequest
from .base import Predictor, PredictorInput


class HistoryWindow:
    """Bounded window of unique paths; re-adding a path refreshes it."""

    def __init__(self, capacity: int = 32):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = capacity
        self._paths: "OrderedDict[ResourcePath, None]" = OrderedDict()

    def add(self, path: ResourcePath) -> None:
        if path in self._paths:
            self._paths.move_to_end(path)
            return
        self._paths[path] = None
        if len(self._paths) > self.capacity:
            self._paths.popitem(last=False)

    def __iter__(self):
        return iter(self._paths)

    def __len__(self):
        return len(self._paths)

    def __contains__(self, path):
        return path in self._paths


@dataclass(frozen=True)
class PatternPath:
    prefix: tuple[str, ...]
    suffix: tuple[str, ...]
    match_count: int = 0

    @property
    def position(self) -> int:
        return len(self.prefix)

    @property
    def parent(self) -> ResourcePath:
        return ResourcePath(self.prefix)

    @property
    def key(self) -> str:
        return "pattern:" + "/" + "/".join(self.prefix + ("?",) + self.suffix)

    def matches(self, path: ResourcePath) -> bool:
        s = path.segments
        n = len(self.prefix)
        return (len(s) == n + 1 + len(self.suffix) and s[:n] == self.prefix
                and s[n + 1:] == self.suffix)

    def instantiate(self, name: str) -> ResourcePath:
        return ResourcePath(self.prefix + (name,) + self.suffix)


def detect_pattern(window, path: ResourcePath, pattern_min: int = 3) -> Optional[PatternPath]:
    """Best ``A ? B`` split of ``path`` against the window, or None.

    Entries equal to ``path`` are not counted.  Ties go to the longest prefix.
    """
    segs = path.segments
    n = len(segs)
    if n == 0:
        return None
    counts = [0] * n
    for other in window:
        o = other.segments
        if len(o) != n:
            continue
        diff = -1
        for i in range(n):
            if o[i] != segs[i]:
                if diff >= 0:
                    diff = -2
                    break
                diff = i
        if diff >= 0:
            counts[diff] += 1
    best = -1
    for i in range(n):
        if counts[i] and (best < 0 or counts[i] >= counts[best]):
            best = i
    if best < 0 or counts[best] < pattern_min:
        return None
    return PatternPath(segs[:best], segs[best + 1:], counts[best])


class DLSPredictor(Predictor):
    name = "dls"

    def __init__(self, window: int = 32, pattern_min: int = 3, threshold: int = 2,
                 prefetch_ttl: int = 0, priority: int = PRIORITY_PREDICTOR,
                 max_awaiting: int = 4096):
        self.window = HistoryWindow(window)
        self.pattern_min = pattern_min
        self.threshold = threshold
        self.prefetch_ttl = prefetch_ttl
        self.priority = priority
        self.max_awaiting = max_awaiting
        self.awaiting: "OrderedDict[str, PatternPath]" = OrderedDict()
        self.triggers = 0

    def on_request(self, inp: PredictorInput, hit: bool, cache) -> list[PrefetchRequest]:
        out = []
        if not hit:
            out = self.on_miss(inp.path, cache)
        self.window.add(inp.path)
        return out

    def on_miss(self, path: ResourcePath, cache) -> list[PrefetchRequest]:
        pattern = detect_pattern(self.window, path, self.pattern_min)
        if pattern is None:
            return []
        key = pattern.key
        count = cache.note_miss(key)
        if cache.peek(key) is None:
            cache.put(key, pattern)
        if count <= self.threshold:
            return []
        cache.reset_miss(key)
        self.triggers += 1
        return self.expand(pattern, cache)

    def expand(self, pattern: PatternPath, cache) -> list[PrefetchRequest]:
        parent = pattern.parent
        rec = cache.peek(str(parent))
        if not isinstance(rec, MetadataRecord) or rec.deleted or rec.kind != Kind.DIRECTORY:
            # listing unknown here: fetch the parent first, expand when it lands
            self.awaiting[str(parent)] = pattern
            self.awaiting.move_to_end(str(parent))
            while len(self.awaiting) > self.max_awaiting:
                self.awaiting.popitem(last=False)
            if rec is not None:
                return []
            return [PrefetchRequest(parent, self.priority, 0)]
        return self.candidates(pattern, rec, cache)

    def candidates(self, pattern: PatternPath, parent: MetadataRecord, cache) -> list[PrefetchRequest]:
        out = []
        for child in parent.children:
            if pattern.suffix and child.kind != Kind.DIRECTORY:
                continue
            p = pattern.instantiate(child.name)
            if cache.peek(str(p)) is None:
                out.append(PrefetchRequest(p, self.priority, self.prefetch_ttl))
        return out

    def on_record(self, record: MetadataRecord, cache) -> list[PrefetchRequest]:
        if not self.awaiting:
            return []
        pattern = self.awaiting.pop(str(record.path), None)
        if pattern is None or record.deleted or record.kind != Kind.DIRECTORY:
            return []
        return self.candidates(pattern, record, cache)
