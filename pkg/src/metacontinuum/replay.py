"""Trace replay and pipeline benchmarks on the simulated clock.

Replay is open loop: each trace event fires at its own timestamp whether or
not earlier fetches finished.  Only listStatus events are fetched and
measured; write events mutate the remote tree when they fire.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Optional

from .clock import LatencyModel, SimClock
from .continuum import build_continuum
from .continuum.pool import ServicePool
from .predictors import NGramModel, make_predictor
from .remote import DirectoryTree, SimEndpoint
from .trace import LIST_OP, READ_OPS, reconstruct_tree
from .transfer import Outcome, channel_open, get_protocol


def resolve_capacity(value, list_ops: int) -> Optional[int]:
    """``"10%"`` of the trace's list operations, an entry count, or None (unbounded)."""
    if value is None:
        return None
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("", "none", "unbounded", "inf"):
            return None
        if v.endswith("%"):
            pct = float(v[:-1])
            if pct < 0:
                raise ValueError(f"negative capacity {value!r}")
            return int(round(pct / 100.0 * list_ops))
        value = int(v)
    if value < 0:
        raise ValueError(f"negative capacity {value!r}")
    return int(value)


def percentile(values, q: float) -> float:
    if not values:
        return 0.0
    s = sorted(values)
    k = max(0, min(len(s) - 1, math.ceil(q / 100.0 * len(s)) - 1))
    return s[k]


@dataclass
class LayerConfig:
    capacity: object = None
    predictor: str = "none"
    params: dict = field(default_factory=dict)
    prefetch_ttl: int = 0


@dataclass
class ReplayConfig:
    topology: str = "EC"
    rtts: dict = field(default_factory=dict)
    edge: LayerConfig = field(default_factory=LayerConfig)
    fog: LayerConfig = field(default_factory=lambda: LayerConfig(prefetch_ttl=1))
    cloud: LayerConfig = field(default_factory=LayerConfig)
    backend: str = "direct"
    services: int = 30
    pipeline_capacity: int = 5
    jitter_ms: float = 0.0
    seed: int = 0


@dataclass
class ReplayReport:
    config: ReplayConfig
    list_ops: int = 0
    write_ops: int = 0
    latencies: list = field(default_factory=list, repr=False)
    layers: dict = field(default_factory=dict)
    sim_end_ms: float = 0.0
    failures: int = 0

    @property
    def avg_latency_ms(self) -> float:
        return statistics.fmean(self.latencies) if self.latencies else 0.0

    @property
    def hit_rate(self) -> float:
        edge = self.layers.get("edge", {})
        return edge.get("hit_rate", 0.0)

    def rows(self) -> list[tuple[str, str, object]]:
        out = []
        for layer, metrics in self.layers.items():
            for k, v in metrics.items():
                out.append((layer, k, v))
        out += [
            ("client", "list_ops", self.list_ops),
            ("client", "write_ops", self.write_ops),
            ("client", "failures", self.failures),
            ("client", "avg_latency_ms", round(self.avg_latency_ms, 6)),
            ("client", "p50_latency_ms", round(percentile(self.latencies, 50), 6)),
            ("client", "p95_latency_ms", round(percentile(self.latencies, 95), 6)),
            ("client", "p99_latency_ms", round(percentile(self.latencies, 99), 6)),
        ]
        return out


def build_tree(*traces) -> DirectoryTree:
    """Initial remote namespace: every path read in any of the traces."""
    reads = (ev for events in traces for ev in events if ev.op in READ_OPS or ev.op == LIST_OP)
    tree, _ = reconstruct_tree(reads)
    return tree


def _predictor(layer: LayerConfig, amp_model, capacity):
    params = dict(layer.params)
    if layer.predictor == "amp":
        params.setdefault("model", amp_model)
    if layer.predictor in ("nexus", "farmer"):
        # the graph lives in the node's memory: bound it like the cache
        params.setdefault("max_vertices", capacity)
    return make_predictor(layer.predictor, **params)


def replay(events, config: ReplayConfig, tree: Optional[DirectoryTree] = None,
           amp_model: Optional[NGramModel] = None) -> ReplayReport:
    events = list(events)
    list_ops = sum(1 for e in events if e.op == LIST_OP)
    if tree is None:
        tree = build_tree(events)
    clock = SimClock()
    roles = {"E": ["edge"], "EC": ["edge", "cloud"], "EFC": ["edge", "fog", "cloud"]}[config.topology.upper()]
    layer_cfg = {r: getattr(config, r) for r in roles}
    caps = {r: resolve_capacity(c.capacity, list_ops) for r, c in layer_cfg.items()}
    cont = build_continuum(
        tree, clock, config.topology, rtts=config.rtts, capacities=caps,
        predictors={r: _predictor(c, amp_model, caps[r]) for r, c in layer_cfg.items()
                    if c.predictor != "none"},
        prefetch_ttl={r: c.prefetch_ttl for r, c in layer_cfg.items()},
        backend=config.backend, services=config.services,
        pipeline_capacity=config.pipeline_capacity, jitter_ms=config.jitter_ms, seed=config.seed)
    report = ReplayReport(config)
    edge = cont.edge
    it = iter(events)

    def record(start, fut):
        report.latencies.append(clock.now() - start)
        if not fut.result().ok and fut.result().status != "deleted":
            report.failures += 1

    def fire(ev):
        if ev.op == LIST_OP:
            report.list_ops += 1
            start = clock.now()
            fut = edge.fetch(ev.path, attributes=ev.attributes)
            if fut.done():
                report.latencies.append(0.0)
            else:
                fut.add_done_callback(lambda f, s=start: record(s, f))
        elif ev.op not in READ_OPS:
            report.write_ops += 1
            reconstruct_tree([ev], tree)
        schedule_next()

    def schedule_next():
        ev = next(it, None)
        if ev is not None:
            clock.call_at(ev.timestamp, fire, ev)

    schedule_next()
    clock.run()
    report.sim_end_ms = clock.now()
    for node in cont.nodes:
        row = node.cache.stats.as_row()
        row.update({
            "demand": node.stats.demand,
            "prefetch_issued": node.stats.prefetch_issued,
            "prefetch_completed": node.stats.prefetch_completed,
            "prefetch_failed": node.stats.prefetch_failed,
            "ttl_expansions": node.stats.ttl_expansions,
            "upstream_sends": node.queue.sends,
            "dedup_joins": node.queue.joins,
            "entries": len(node.cache),
        })
        report.layers[node.role] = row
    return report


# -- pipeline benchmarks ------------------------------------------------------


@dataclass
class BenchResult:
    services: int
    capacity: int
    requests: int
    rtt_ms: float
    latencies: list = field(default_factory=list, repr=False)
    total_ms: float = 0.0

    def summary(self) -> dict:
        lat = self.latencies
        within = sum(1 for x in lat if self.rtt_ms - 1e-9 <= x <= 2 * self.rtt_ms + 1e-9)
        return {
            "services": self.services,
            "capacity": self.capacity,
            "requests": self.requests,
            "rtt_ms": self.rtt_ms,
            "total_ms": round(self.total_ms, 6),
            "mean_ms": round(statistics.fmean(lat), 6) if lat else 0.0,
            "p50_ms": round(percentile(lat, 50), 6),
            "p95_ms": round(percentile(lat, 95), 6),
            "p99_ms": round(percentile(lat, 99), 6),
            "max_ms": round(max(lat), 6) if lat else 0.0,
            "within_1_2_rtt": round(within / len(lat), 6) if lat else 0.0,
        }


def bench_tree(n: int) -> DirectoryTree:
    tree = DirectoryTree()
    tree.mkdir("/bench")
    for i in range(n):
        tree.create(f"/bench/f{i}")
    return tree


def bench_pool(requests: int, services: int, capacity: int = 5, rtt_ms: float = 40.0,
               rate_per_s: Optional[float] = 2500.0, seed: int = 0,
               service_ms: float = 0.0) -> BenchResult:
    """Distinct fetches through a service pool on the simulated clock.

    Requests arrive open loop at ``rate_per_s`` (all at once if None).
    """
    clock = SimClock()
    tree = bench_tree(requests)
    ep = SimEndpoint(tree, clock, LatencyModel.from_rtt(rtt_ms), service_ms=service_ms)
    pool = ServicePool(lambda i: channel_open(ep, "smp", capacity, name=f"svc-{i}"),
                       services, capacity, clock)
    proto = get_protocol("smp")
    res = BenchResult(services, capacity, requests, rtt_ms)
    done = []

    def submit(i):
        start = clock.now()

        def on_done(job, req):
            res.latencies.append(clock.now() - start)
            done.append(req is not None and req.outcome is Outcome.SUCCESS)

        pool.submit(i, 100, lambda j: proto.build("fetch", f"/bench/f{j}"), on_done)

    gap = 0.0 if not rate_per_s else 1000.0 / rate_per_s
    for i in range(requests):
        clock.call_at(i * gap, submit, i)
    while len(done) < requests and clock.step():
        pass
    res.total_ms = clock.now()
    if not all(done):
        raise RuntimeError("benchmark requests failed")
    return res


def bench_channel(requests: int, capacity: int, rtt_ms: float = 50.0) -> BenchResult:
    """Independent single-command requests on one channel, all submitted at t=0."""
    clock = SimClock()
    tree = bench_tree(requests)
    ep = SimEndpoint(tree, clock, LatencyModel.from_rtt(rtt_ms))
    ch = channel_open(ep, "smp", capacity, idle_timeout_ms=None)
    res = BenchResult(1, capacity, requests, rtt_ms)
    futs = []
    for i in range(requests):
        req = ch.build("fetch", f"/bench/f{i}")
        f = ch.send(req)
        f.add_done_callback(lambda _f: res.latencies.append(clock.now()))
        futs.append(f)
    while not all(f.done() for f in futs) and clock.step():
        pass
    res.total_ms = clock.now()
    return res


def bench_socket(requests: int, services: int, capacity: int = 5, rtt_ms: float = 40.0,
                 tree: Optional[DirectoryTree] = None, timeout_s: float = 60.0) -> BenchResult:
    """Wall-clock variant over a real TCP SMP server with injected latency."""
    import threading
    import time

    from .remote import serve_smp

    tree = tree or bench_tree(requests)
    res = BenchResult(services, capacity, requests, rtt_ms)
    with serve_smp(tree, latency=LatencyModel.from_rtt(rtt_ms)) as server:
        host, port = server.address
        pool = ServicePool(lambda i: channel_open((host, port), "smp", capacity, name=f"svc-{i}"),
                           services, capacity)
        proto = get_protocol("smp")
        lock = threading.Lock()
        finished = threading.Event()
        t0 = time.monotonic()

        def submit(i):
            start = time.monotonic()

            def on_done(job, req):
                with lock:
                    res.latencies.append((time.monotonic() - start) * 1000.0)
                    if len(res.latencies) == requests:
                        finished.set()

            pool.submit(i, 100, lambda j: proto.build("fetch", f"/bench/f{j}"), on_done)

        for i in range(requests):
            submit(i)
        if not finished.wait(timeout_s):
            raise TimeoutError("socket benchmark did not finish")
        res.total_ms = (time.monotonic() - t0) * 1000.0
        for svc in pool.services:
            svc.channel.close()
    return res
