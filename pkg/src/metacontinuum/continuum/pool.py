"""Service pool: N services, each with one pipelined channel to the remote endpoint.

Jobs wait in a priority queue (higher priority first, then FIFO) and are
handed round-robin to services that have a free pipeline slot.  A job is
acked exactly once, when its transfer request reaches a terminal outcome.
If a service dies, its unacked jobs go back into the queue.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from ..transfer import Channel, Outcome, Request

log = logging.getLogger(__name__)


@dataclass
class Job:
    payload: Any
    priority: int
    build: Callable[[Any], Request]
    on_done: Callable[["Job", Optional[Request]], None]
    enqueued_at: float = 0.0
    seq: int = 0
    attempts: int = 0
    service: Optional[int] = None
    request: Optional[Request] = field(default=None, repr=False)


class Service:
    def __init__(self, index: int, channel: Channel, capacity: int):
        self.index = index
        self.channel = channel
        self.capacity = capacity
        self.alive = True
        self.inflight: dict[int, Job] = {}
        self.assigned = 0

    @property
    def free(self) -> int:
        return self.capacity - len(self.inflight) if self.alive else 0


class ServicePool:
    def __init__(self, make_channel: Callable[[int], Channel], services: int = 1, capacity: int = 5,
                 clock=None, age_limit_ms: Optional[float] = 60_000.0, reclaim_below: int = 100):
        if services < 1 or capacity < 1:
            raise ValueError("need at least one service with capacity >= 1")
        self.make_channel = make_channel
        self.capacity = capacity
        self.clock = clock
        self.age_limit_ms = age_limit_ms
        self.reclaim_below = reclaim_below
        self.services = [Service(i, make_channel(i), capacity) for i in range(services)]
        self._heap: list = []
        self._seq = itertools.count()
        self._rr = 0
        self._lock = threading.RLock()
        self._dispatching = False
        self._again = False
        self.acked = 0
        self.reclaimed = 0
        self.redispatched = 0
        self._last_clean = 0.0

    def _now(self) -> float:
        return self.clock.now() if self.clock is not None else 0.0

    def queued(self) -> int:
        return len(self._heap)

    def submit(self, payload, priority: int, build, on_done) -> Job:
        job = Job(payload, priority, build, on_done)
        with self._lock:
            self._enqueue(job)
        self.dispatch()
        return job

    def _enqueue(self, job: Job) -> None:
        job.seq = next(self._seq)
        if not job.enqueued_at:
            job.enqueued_at = self._now()
        heapq.heappush(self._heap, (-job.priority, job.seq, job))

    def _next_service(self) -> Optional[Service]:
        n = len(self.services)
        for off in range(n):
            svc = self.services[(self._rr + off) % n]
            if svc.free > 0:
                self._rr = (svc.index + 1) % n
                return svc
        return None

    def dispatch(self) -> None:
        with self._lock:
            if self._dispatching:
                self._again = True
                return
            self._dispatching = True
            try:
                self._again = True
                while self._again:
                    self._again = False
                    self._clean()
                    while self._heap:
                        svc = self._next_service()
                        if svc is None:
                            break
                        _, _, job = heapq.heappop(self._heap)
                        self._assign(svc, job)
            finally:
                self._dispatching = False

    def _assign(self, svc: Service, job: Job) -> None:
        req = job.build(job.payload)
        job.request = req
        job.service = svc.index
        job.attempts += 1
        svc.inflight[req.id] = job
        svc.assigned += 1
        fut = svc.channel.send(req)
        fut.add_done_callback(lambda f, s=svc, r=req: self._ack(s, r))

    def _ack(self, svc: Service, req: Request) -> None:
        with self._lock:
            job = svc.inflight.pop(req.id, None)
            if job is None:  # already re-queued after the service died
                return
            if req.outcome is Outcome.FAILED and req.reason == "connection" and self._live_elsewhere(svc):
                self.redispatched += 1
                self._enqueue(job)
                job = None
            else:
                self.acked += 1
        if job is not None:
            job.on_done(job, req)
        self.dispatch()

    def _live_elsewhere(self, svc: Service) -> bool:
        return any(s.alive and s is not svc for s in self.services)

    def _clean(self) -> None:
        if self.age_limit_ms is None or not self._heap:
            return
        now = self._now()
        if now - self._last_clean < min(1000.0, self.age_limit_ms):
            return
        self._last_clean = now
        cutoff = now - self.age_limit_ms
        if cutoff <= 0:
            return
        keep, dropped = [], []
        for item in self._heap:
            job = item[2]
            if job.enqueued_at < cutoff and job.priority < self.reclaim_below:
                dropped.append(job)
            else:
                keep.append(item)
        if dropped:
            heapq.heapify(keep)
            self._heap = keep
            self.reclaimed += len(dropped)
            for job in dropped:
                job.on_done(job, None)

    def kill(self, index: int) -> int:
        """Take a service down; its unacked jobs are queued again.  Returns how many."""
        with self._lock:
            svc = self.services[index]
            svc.alive = False
            svc.channel.abandon()
            jobs = list(svc.inflight.values())
            svc.inflight.clear()
            for job in jobs:
                self.redispatched += 1
                self._enqueue(job)
        self.dispatch()
        return len(jobs)

    def revive(self, index: int) -> None:
        with self._lock:
            svc = self.services[index]
            if not svc.alive:
                self.services[index] = Service(index, self.make_channel(index), self.capacity)
        self.dispatch()

    def add_service(self) -> int:
        with self._lock:
            idx = len(self.services)
            self.services.append(Service(idx, self.make_channel(idx), self.capacity))
        self.dispatch()
        return idx
