"""Continuum layer nodes (edge, fog, cloud) and the backends behind the cloud.

Every node answers ``serve(request, requester)`` with a future of
:class:`Response`.  A node looks in its own cache first, consults its
predictor for demand traffic, and otherwise forwards the request through its
wait-and-notify queue to the upstream node (or, for the top node, to a
backend that talks to the remote endpoint).  Prefetch results stay at the
node that asked for them; deletions and resync updates are pushed down to
subscribed nodes.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import Future
from dataclasses import dataclass
from typing import Optional

from ..cache import MetadataCache
from ..core import Kind, MetadataRecord, ResourcePath, Status
from ..prefetch import (PRIORITY_DEMAND, PRIORITY_RESYNC, Origin, PrefetchRequest)
from ..predictors import Predictor, PredictorInput
from ..transfer import Outcome, get_protocol
from .queue import WaitNotifyQueue

log = logging.getLogger(__name__)

OK = "ok"
DELETED = "deleted"
FAILED = "failed"


@dataclass(frozen=True)
class Response:
    path: ResourcePath
    status: str
    record: Optional[MetadataRecord] = None
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OK


def _done(value) -> Future:
    f: Future = Future()
    f.set_result(value)
    return f


def deleted_marker(path: ResourcePath, cached: Optional[MetadataRecord] = None) -> MetadataRecord:
    if cached is not None:
        return cached.mark_deleted()
    return MetadataRecord(path, Kind.FILE, status=Status.DELETED)


# -- backends ---------------------------------------------------------------


class DirectBackend:
    """Reads the remote tree directly after one RTT on the clock.

    Equivalent to an uncongested service pool; much cheaper to simulate.
    """

    def __init__(self, tree, clock, latency):
        self.tree = tree
        self.clock = clock
        self.latency = latency
        self.requests = 0

    def request(self, req: PrefetchRequest) -> Future:
        self.requests += 1
        fut: Future = Future()
        self.clock.call_later(self.latency.sample(), self._serve, req.path, fut)
        return fut

    def _serve(self, path, fut):
        rec = self.tree.record(path)
        resp = Response(path, OK, rec) if rec is not None else Response(path, DELETED, None, "no such path")
        self.clock.call_later(self.latency.sample(), fut.set_result, resp)


class PoolBackend:
    """Sends each request as an SMP fetch through a :class:`ServicePool`."""

    def __init__(self, pool, protocol_id: str = "smp", request_type: str = "fetch"):
        self.pool = pool
        self.protocol = get_protocol(protocol_id)
        self.request_type = request_type
        self.requests = 0

    def request(self, req: PrefetchRequest) -> Future:
        self.requests += 1
        fut: Future = Future()

        def build(pr):
            return self.protocol.build(self.request_type, pr.path)

        def on_done(job, treq):
            if treq is None:
                resp = Response(req.path, FAILED, None, "reclaimed")
            elif treq.outcome is Outcome.SUCCESS:
                resp = Response(req.path, OK, treq.result)
            elif treq.outcome is Outcome.DELETED:
                resp = Response(req.path, DELETED, None, treq.reason)
            else:
                resp = Response(req.path, FAILED, None, treq.reason)
            fut.set_result(resp)

        self.pool.submit(req, req.priority, build, on_done)
        return fut


# -- nodes ------------------------------------------------------------------


class NodeStats:
    def __init__(self):
        self.demand = 0
        self.prefetch_issued = 0
        self.prefetch_completed = 0
        self.prefetch_failed = 0
        self.ttl_expansions = 0
        self.deletions_applied = 0
        self.pushes_received = 0
        self.backtraces = 0
        self.early_stops = 0
        self.lost_races = 0


class LayerNode:
    def __init__(self, name: str, role: str, clock, cache: Optional[MetadataCache] = None,
                 predictor: Optional[Predictor] = None, upstream=None, backend=None,
                 latency=None, prefetch_ttl: int = 0, store=None):
        if (upstream is None) == (backend is None):
            raise ValueError("a node needs exactly one of upstream node or backend")
        self.name = name
        self.role = role
        self.clock = clock
        self.cache = cache if cache is not None else MetadataCache(None)
        self.predictor = predictor
        self.upstream = upstream
        self.backend = backend
        self.latency = latency
        self.prefetch_ttl = prefetch_ttl
        self.store = store
        self.queue = WaitNotifyQueue(self._send_upstream, name=f"{name}-queue")
        self.subscribers: dict[str, set] = defaultdict(set)
        self.delivery_log: list[tuple] = []
        self.stats = NodeStats()

    def __repr__(self):
        return f"<LayerNode {self.name} {self.role}>"

    # -- demand path ----------------------------------------------------------

    def fetch(self, path, force_refresh: bool = False, attributes=None) -> Future:
        """Client-facing fetch at this node."""
        req = PrefetchRequest(path, PRIORITY_DEMAND, 0, force_refresh, Origin.DEMAND)
        return self.serve(req, None, attributes)

    def serve(self, req: PrefetchRequest, requester=None, attributes=None) -> Future:
        key = str(req.path)
        if requester is not None:
            self.subscribers[key].add(requester)
        demand = req.origin is Origin.DEMAND
        if req.force_refresh:
            if demand:
                self.stats.demand += 1
            return self._forward(req)
        if demand:
            self.stats.demand += 1
            rec = self.cache.get(key)
        else:
            rec = self.cache.peek(key)
            if not isinstance(rec, MetadataRecord):
                rec = None
        hit = rec is not None
        fut = _done(Response(req.path, DELETED if rec.deleted else OK, rec)) if hit else self._forward(req)
        if demand and self.predictor is not None:
            cands = self.predictor.on_request(PredictorInput(req.path, attributes, self.clock.now()), hit, self.cache)
            self.prefetch(cands)
        return fut

    def _forward(self, req: PrefetchRequest) -> Future:
        fwd = req if req.ttl == 0 else PrefetchRequest(req.path, req.priority, 0, req.force_refresh, req.origin)
        expected = None
        if req.force_refresh and self.backend is not None:
            cached = self.cache.peek(str(req.path))
            expected = cached.digest if isinstance(cached, MetadataRecord) else None
        inner = self.queue.submit(fwd)
        out: Future = Future()
        inner.add_done_callback(lambda f: self._on_response(req, f, out, expected))
        return out

    def _send_upstream(self, req: PrefetchRequest, ctx_id: int, respond) -> None:
        if self.backend is not None:
            fut = self.backend.request(req)
            fut.add_done_callback(lambda f: respond(ctx_id, f.result()))
            return

        def arrive():
            fut = self.upstream.serve(req, self)
            fut.add_done_callback(
                lambda f: self.clock.call_later(self.latency.sample(), respond, ctx_id, f.result()))

        self.clock.call_later(self.latency.sample(), arrive)

    def _on_response(self, req: PrefetchRequest, inner: Future, out: Future, expected) -> None:
        try:
            resp: Response = inner.result()
        except Exception as exc:
            resp = Response(req.path, FAILED, None, str(exc))
        if req.origin is not Origin.DEMAND:
            if resp.ok:
                self.stats.prefetch_completed += 1
            else:
                self.stats.prefetch_failed += 1
        if resp.status == OK:
            self._store(resp.record)
            if req.ttl > 0 and resp.record.kind == Kind.DIRECTORY:
                kids = [req.expand(c) for c in resp.record.child_paths()]
                self.stats.ttl_expansions += len(kids)
                self.prefetch(kids)
        elif resp.status == DELETED:
            if req.force_refresh and self.backend is not None:
                resp = self._backtrace(req.path, expected, 1)
            elif req.force_refresh:
                self.apply_deletion(req.path)
        out.set_result(resp)

    def _store(self, record: MetadataRecord) -> None:
        key = str(record.path)
        self.cache.put(key, record)
        if self.store is not None:
            self.store.put_versioned(key, record)
        if self.predictor is not None:
            self.prefetch(self.predictor.on_record(record, self.cache))

    # -- prefetch framework ---------------------------------------------------

    def prefetch(self, requests) -> int:
        """Queue prefetches for candidates missing from the local cache."""
        n = 0
        for pr in requests:
            if self.cache.peek(str(pr.path)) is not None:
                continue
            if pr.origin is Origin.PREDICTOR and pr.ttl < self.prefetch_ttl:
                pr = PrefetchRequest(pr.path, pr.priority, self.prefetch_ttl, pr.force_refresh, pr.origin)
            self.stats.prefetch_issued += 1
            self._forward(pr)
            n += 1
        return n

    # -- invalidation ---------------------------------------------------------

    def _subtree_keys(self, mapping_keys, prefix: str):
        below = prefix.rstrip("/") + "/"
        return [k for k in mapping_keys if isinstance(k, str) and (k == prefix or k.startswith(below))]

    def apply_deletion(self, path: ResourcePath) -> int:
        """Mark ``path`` and every cached descendant deleted, then push downstream."""
        prefix = str(path)
        n = 0
        for key in self._subtree_keys(self.cache.keys(), prefix):
            cur = self.cache.peek(key)
            if isinstance(cur, MetadataRecord) and not cur.deleted:
                if self.cache.compare_and_set(key, cur.digest, cur.mark_deleted()):
                    n += 1
        self.stats.deletions_applied += n
        self._push_down("delete", path, None)
        return n

    def _push_down(self, kind: str, path: ResourcePath, record) -> None:
        targets = set()
        keys = [str(path)] if kind == "update" else self._subtree_keys(list(self.subscribers), str(path))
        for key in keys:
            targets |= self.subscribers.get(key, set())
        for node in sorted(targets, key=lambda n: n.name):
            self.delivery_log.append((self.clock.now(), self.name, node.name, kind, str(path)))
            try:
                node.receive_push(kind, path, record)
            except Exception:  # best effort
                log.exception("%s: push to %s failed", self.name, node.name)

    def receive_push(self, kind: str, path: ResourcePath, record) -> None:
        self.stats.pushes_received += 1
        if kind == "delete":
            self.apply_deletion(path)
        else:
            key = str(path)
            if self.cache.peek(key) is not None:
                self.cache.put(key, record)
            self._push_down("update", path, record)

    def _backtrace(self, path: ResourcePath, expected: Optional[int], layers: int) -> Response:
        """Runs at the top node when a forced refresh reports the path gone."""
        self.stats.backtraces += 1
        key = str(path)
        cached = self.cache.peek(key)
        cached = cached if isinstance(cached, MetadataRecord) else None
        marker = deleted_marker(path, cached)
        if not self.cache.compare_and_set(key, expected, marker):
            self.stats.lost_races += 1
            current = self.cache.peek(key)
            return Response(path, OK if current is not None and not current.deleted else DELETED, current)
        if self.store is not None:
            self.store.put(key, marker)
        self.apply_deletion(path)
        self._resync_parent(path, layers)
        return Response(path, DELETED, marker, "no such path")

    def _resync_parent(self, path: ResourcePath, layers: int) -> None:
        parent = path.parent
        if parent is None:
            return
        pkey = str(parent)
        prec = self.cache.peek(pkey)
        if not isinstance(prec, MetadataRecord):
            self.stats.early_stops += 1
            return
        expected = prec.digest
        req = PrefetchRequest(parent, PRIORITY_RESYNC, 0, True, Origin.DELETE_RESYNC)
        inner = self.queue.submit(req)
        inner.add_done_callback(lambda f: self._on_parent(parent, expected, layers, f))

    def _on_parent(self, parent: ResourcePath, expected: int, layers: int, inner: Future) -> None:
        resp: Response = inner.result()
        if resp.status == DELETED:
            self._backtrace(parent, expected, layers + 1)
            return
        if resp.status != OK:
            return
        rec = resp.record
        self.cache.put(str(parent), rec)
        if self.store is not None:
            self.store.put_versioned(str(parent), rec)
        self._push_down("update", parent, self.cache.peek(str(parent)))
        if rec.kind == Kind.DIRECTORY:
            self.prefetch(PrefetchRequest(c, PRIORITY_RESYNC - 1, layers - 1, False, Origin.DELETE_RESYNC)
                          for c in rec.child_paths())
