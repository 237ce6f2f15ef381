from .node import DELETED, FAILED, OK, DirectBackend, LayerNode, PoolBackend, Response, deleted_marker
from .pool import Job, Service, ServicePool
from .queue import WaitNotifyQueue
from .topology import Continuum, build_continuum

__all__ = [
    "Continuum", "DELETED", "DirectBackend", "FAILED", "Job", "LayerNode", "OK", "PoolBackend",
    "Response", "Service", "ServicePool", "WaitNotifyQueue", "build_continuum", "deleted_marker",
]
