"""Prefetch requests and the priorities the continuum schedules them by."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .core import ResourcePath

PRIORITY_DEMAND = 100
PRIORITY_RESYNC = 80
PRIORITY_PREDICTOR = 50


class Origin(enum.Enum):
    DEMAND = "demand"
    PREDICTOR = "predictor"
    TTL_EXPANSION = "ttl_expansion"
    DELETE_RESYNC = "delete_resync"


@dataclass(frozen=True)
class PrefetchRequest:
    path: ResourcePath
    priority: int = PRIORITY_PREDICTOR
    ttl: int = 0
    force_refresh: bool = False
    origin: Origin = Origin.PREDICTOR

    def __post_init__(self):
        if not isinstance(self.path, ResourcePath):
            object.__setattr__(self, "path", ResourcePath.parse(self.path))
        if self.ttl < 0:
            raise ValueError("prefetch ttl must be >= 0")

    @property
    def identity(self) -> tuple[str, bool]:
        return (str(self.path), self.force_refresh)

    def expand(self, child: ResourcePath) -> "PrefetchRequest":
        """Child request one layer down: ttl and priority both drop by one."""
        if self.ttl == 0:
            raise ValueError("ttl exhausted")
        return PrefetchRequest(child, self.priority - 1, self.ttl - 1, False, Origin.TTL_EXPANSION)
