"""Wiring of edge / fog / cloud nodes for the three supported I/O paths.

``E``   edge talks to the remote endpoint directly.
``EC``  edge -> cloud -> remote.
``EFC`` edge -> fog -> cloud -> remote.

The top node reaches the remote endpoint through either a ``DirectBackend``
or a ``ServicePool`` of pipelined SMP channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..cache import MetadataCache
from ..clock import LatencyModel
from ..remote import SimEndpoint
from ..transfer import channel_open
from .node import DirectBackend, LayerNode, PoolBackend
from .pool import ServicePool

DEFAULT_RTTS = {
    "E": {"edge-remote": 32.0},
    "EC": {"edge-cloud": 10.0, "cloud-remote": 30.0},
    "EFC": {"edge-fog": 2.0, "fog-cloud": 8.0, "cloud-remote": 30.0},
}

LINKS = {
    "E": ["edge-remote"],
    "EC": ["edge-cloud", "cloud-remote"],
    "EFC": ["edge-fog", "fog-cloud", "cloud-remote"],
}


@dataclass
class Continuum:
    topology: str
    clock: object
    tree: object
    nodes: list = field(default_factory=list)
    backend: object = None
    pool: Optional[ServicePool] = None
    endpoint: Optional[SimEndpoint] = None

    @property
    def edge(self) -> LayerNode:
        return self.nodes[0]

    @property
    def top(self) -> LayerNode:
        return self.nodes[-1]

    def node(self, role: str) -> Optional[LayerNode]:
        for n in self.nodes:
            if n.role == role:
                return n
        return None


def build_continuum(tree, clock, topology: str = "EC", rtts: Optional[dict] = None,
                    capacities: Optional[dict] = None, predictors: Optional[dict] = None,
                    prefetch_ttl: Optional[dict] = None, backend: str = "direct",
                    services: int = 30, pipeline_capacity: int = 5, jitter_ms: float = 0.0,
                    seed: int = 0, stores: Optional[dict] = None) -> Continuum:
    """Build a continuum.  Unspecified cloud capacity means unbounded."""
    topology = topology.upper()
    if topology not in LINKS:
        raise ValueError(f"unknown topology {topology!r}; use E, EC or EFC")
    r = dict(DEFAULT_RTTS[topology])
    r.update(rtts or {})
    missing = [link for link in LINKS[topology] if link not in r]
    if missing:
        raise ValueError(f"topology {topology} needs RTTs for {missing}")
    capacities = capacities or {}
    predictors = predictors or {}
    prefetch_ttl = prefetch_ttl or {}
    stores = stores or {}
    roles = {"E": ["edge"], "EC": ["edge", "cloud"], "EFC": ["edge", "fog", "cloud"]}[topology]
    for role, cap in capacities.items():
        if cap is not None and cap < 0:
            raise ValueError(f"{role} capacity must be >= 0")

    remote_link = LINKS[topology][-1]
    remote_latency = LatencyModel.from_rtt(r[remote_link], jitter_ms, seed)
    cont = Continuum(topology, clock, tree)
    if backend == "direct":
        cont.backend = DirectBackend(tree, clock, remote_latency)
    elif backend == "pool":
        cont.endpoint = SimEndpoint(tree, clock, remote_latency)
        cont.pool = ServicePool(
            lambda i: channel_open(cont.endpoint, "smp", pipeline_capacity, name=f"svc-{i}"),
            services, pipeline_capacity, clock)
        cont.backend = PoolBackend(cont.pool)
    else:
        raise ValueError(f"unknown backend {backend!r}; use direct or pool")

    upstream = None
    for depth, role in reversed(list(enumerate(roles))):
        cap = capacities.get(role)
        node_kw = dict(cache=MetadataCache(cap), predictor=predictors.get(role),
                       prefetch_ttl=prefetch_ttl.get(role, 0), store=stores.get(role))
        if upstream is None:
            node = LayerNode(role, role, clock, backend=cont.backend, **node_kw)
        else:
            link = LINKS[topology][depth]
            lat = LatencyModel.from_rtt(r[link], jitter_ms, seed + depth + 1)
            node = LayerNode(role, role, clock, upstream=upstream, latency=lat, **node_kw)
        cont.nodes.insert(0, node)
        upstream = node
    return cont
