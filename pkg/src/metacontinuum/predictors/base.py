from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..core import ResourcePath
from ..prefetch import PrefetchRequest

ATTRIBUTE_NAMES = ("user", "process", "host")


@dataclass(frozen=True)
class PredictorInput:
    path: ResourcePath
    attributes: Optional[dict] = field(default=None, hash=False, compare=False)
    timestamp: float = 0.0

    def __post_init__(self):
        if not isinstance(self.path, ResourcePath):
            object.__setattr__(self, "path", ResourcePath.parse(self.path))


class Predictor:
    """Base predictor: predicts nothing (the pure LRU baseline).

    ``on_request`` is called for every demand request at a node, after the
    local cache lookup.  ``on_record`` is called whenever the node stores a
    fetched record, so a predictor can react to listings arriving.
    """

    name = "none"

    def on_request(self, inp: PredictorInput, hit: bool, cache) -> list[PrefetchRequest]:
        return []

    def on_record(self, record, cache) -> list[PrefetchRequest]:
        return []


def uncached(paths, cache, priority, ttl=0) -> list[PrefetchRequest]:
    """Candidates filtered against the local cache."""
    out = []
    for p in paths:
        if cache.peek(str(p)) is None:
            out.append(PrefetchRequest(p, priority, ttl))
    return out
