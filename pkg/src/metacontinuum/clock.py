"""Time sources and latency-injected links.

Everything that waits on the network is written against :class:`SimClock` or
:class:`RealClock`; both expose ``now()`` in milliseconds and
``call_later(delay_ms, fn, *args)``.  The simulated clock runs callbacks in
(time, insertion) order on the calling thread, so simulations are deterministic.
"""

from __future__ import annotations

import heapq
import itertools
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional


class SimClock:
    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._queue: list = []
        self._seq = itertools.count()
        self.events_run = 0

    def now(self) -> float:
        return self._now

    def call_later(self, delay: float, fn: Callable, *args) -> None:
        if delay < 0:
            raise ValueError("negative delay")
        heapq.heappush(self._queue, (self._now + delay, next(self._seq), fn, args))

    def call_at(self, when: float, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (max(when, self._now), next(self._seq), fn, args))

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        if not self._queue:
            return False
        when, _, fn, args = heapq.heappop(self._queue)
        self._now = when
        self.events_run += 1
        fn(*args)
        return True

    def run(self, until: Optional[float] = None) -> None:
        """Run events until the queue drains or the next event is past ``until``."""
        q = self._queue
        while q:
            if until is not None and q[0][0] > until:
                self._now = max(self._now, until)
                return
            when, _, fn, args = heapq.heappop(q)
            self._now = when
            self.events_run += 1
            fn(*args)
        if until is not None:
            self._now = max(self._now, until)


class RealClock:
    """Wall-clock scheduler backed by one timer thread."""

    def __init__(self):
        self._t0 = time.monotonic()
        self._queue: list = []
        self._seq = itertools.count()
        self._cv = threading.Condition()
        self._closed = False
        self._thread = threading.Thread(target=self._loop, name="clock", daemon=True)
        self._thread.start()

    def now(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0

    def call_later(self, delay: float, fn: Callable, *args) -> None:
        with self._cv:
            heapq.heappush(self._queue, (self.now() + max(delay, 0.0), next(self._seq), fn, args))
            self._cv.notify()

    def call_at(self, when: float, fn: Callable, *args) -> None:
        self.call_later(when - self.now(), fn, *args)

    def _loop(self) -> None:
        while True:
            with self._cv:
                while not self._closed and (not self._queue or self._queue[0][0] > self.now()):
                    timeout = None if not self._queue else (self._queue[0][0] - self.now()) / 1000.0
                    self._cv.wait(timeout)
                if self._closed:
                    return
                _, _, fn, args = heapq.heappop(self._queue)
            try:
                fn(*args)
            except Exception:  # keep the timer thread alive
                import logging

                logging.getLogger(__name__).exception("scheduled callback failed")

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify()


@dataclass
class LatencyModel:
    """One-way delay in ms: ``one_way_ms`` plus uniform jitter in ``[0, jitter_ms]``."""

    one_way_ms: float = 0.0
    jitter_ms: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.one_way_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delays must be >= 0")
        self._rng = random.Random(self.seed)

    @classmethod
    def from_rtt(cls, rtt_ms: float, jitter_ms: float = 0.0, seed=None) -> "LatencyModel":
        return cls(rtt_ms / 2.0, jitter_ms, seed)

    @property
    def rtt_ms(self) -> float:
        return 2 * self.one_way_ms

    def sample(self) -> float:
        if self.jitter_ms:
            return self.one_way_ms + self._rng.uniform(0.0, self.jitter_ms)
        return self.one_way_ms


class Pipe:
    """A FIFO one-way link: deliveries never overtake each other."""

    def __init__(self, clock, latency: LatencyModel):
        self.clock = clock
        self.latency = latency
        self._last = float("-inf")
        self._lock = threading.Lock()

    def deliver(self, fn: Callable, *args) -> None:
        with self._lock:
            when = max(self.clock.now() + self.latency.sample(), self._last)
            self._last = when
        self.clock.call_at(when, fn, *args)


class Link:
    """A bidirectional latency-injected link built from two FIFO pipes."""

    def __init__(self, clock, latency: LatencyModel):
        self.clock = clock
        self.latency = latency
        self.up = Pipe(clock, latency)
        self.down = Pipe(clock, latency)

    @property
    def rtt_ms(self) -> float:
        return self.latency.rtt_ms


_default_real_clock: Optional[RealClock] = None
_default_lock = threading.Lock()


def default_real_clock() -> RealClock:
    """Process-wide wall clock shared by socket channels."""
    global _default_real_clock
    with _default_lock:
        if _default_real_clock is None:
            _default_real_clock = RealClock()
        return _default_real_clock
