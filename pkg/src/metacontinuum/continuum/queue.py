"""Wait-and-notify queue: coalesces identical in-flight upstream requests.

The first submitter of an identity wins a single conditional insert into the
pending map and sends; later submitters of the same identity find the
existing context and simply wait on its future.  Responses are matched back
by a 64-bit context id, so they may arrive in any order.
"""

from __future__ import annotations

import itertools
import logging
import queue as _queue
import threading
from concurrent.futures import Future
from typing import Callable, Optional

log = logging.getLogger(__name__)

_CONTEXT_MASK = (1 << 64) - 1


class Context:
    __slots__ = ("id", "identity", "request", "future", "waiters", "_lock")

    def __init__(self, identity, request):
        self.id = 0
        self.identity = identity
        self.request = request
        self.future: Future = Future()
        self.waiters = 1
        self._lock = threading.Lock()

    def join(self) -> None:
        with self._lock:
            self.waiters += 1


class WaitNotifyQueue:
    """Dedup multiplexer in front of an upstream.

    ``upstream(request, context_id, respond)`` must eventually call
    ``respond(context_id, result)`` (or ``respond(context_id, exc)`` with an
    exception instance).  With ``threaded=True`` sends happen on a sender
    thread and completions on a receiver thread; otherwise both run inline.
    """

    def __init__(self, upstream: Callable, threaded: bool = False, name: str = "queue"):
        self.upstream = upstream
        self.name = name
        self._pending: dict = {}
        self._by_id: dict[int, Context] = {}
        self._ids = itertools.count(1)
        self._id_lock = threading.Lock()
        self.sends = 0
        self.joins = 0
        self.completions = 0
        self.threaded = threaded
        self._outbox: Optional[_queue.Queue] = None
        self._inbox: Optional[_queue.Queue] = None
        if threaded:
            self._outbox = _queue.Queue()
            self._inbox = _queue.Queue()
            self._threads = [
                threading.Thread(target=self._sender, name=f"{name}-sender", daemon=True),
                threading.Thread(target=self._receiver, name=f"{name}-receiver", daemon=True),
            ]
            for t in self._threads:
                t.start()

    def _next_id(self) -> int:
        with self._id_lock:
            return next(self._ids) & _CONTEXT_MASK

    def submit(self, request, wait: bool = False, timeout: Optional[float] = None):
        """Send ``request`` upstream unless an identical one is in flight.

        Returns the shared future, or its result when ``wait`` is true.
        """
        identity = request.identity
        fresh = Context(identity, request)
        ctx = self._pending.setdefault(identity, fresh)
        if ctx is fresh:
            ctx.id = self._next_id()
            self._by_id[ctx.id] = ctx
            self.sends += 1
            if self._outbox is not None:
                self._outbox.put(ctx)
            else:
                self._send(ctx)
        else:
            ctx.join()
            self.joins += 1
        if wait:
            return ctx.future.result(timeout)
        return ctx.future

    def waiter_count(self, identity) -> int:
        ctx = self._pending.get(identity)
        return 0 if ctx is None else ctx.waiters

    def in_flight(self) -> int:
        return len(self._pending)

    def _send(self, ctx: Context) -> None:
        try:
            self.upstream(ctx.request, ctx.id, self.respond)
        except Exception as exc:  # upstream refused synchronously
            self.respond(ctx.id, exc)

    def respond(self, context_id: int, result) -> None:
        if self._inbox is not None:
            self._inbox.put((context_id, result))
        else:
            self._complete(context_id, result)

    def _complete(self, context_id: int, result) -> None:
        ctx = self._by_id.pop(context_id, None)
        if ctx is None:
            log.warning("%s: response for unknown context %d dropped", self.name, context_id)
            return
        if self._pending.get(ctx.identity) is ctx:
            del self._pending[ctx.identity]
        self.completions += 1
        if isinstance(result, BaseException):
            ctx.future.set_exception(result)
        else:
            ctx.future.set_result(result)

    def _sender(self) -> None:
        while True:
            ctx = self._outbox.get()
            if ctx is None:
                return
            self._send(ctx)

    def _receiver(self) -> None:
        while True:
            item = self._inbox.get()
            if item is None:
                return
            self._complete(*item)

    def close(self) -> None:
        if self.threaded:
            self._outbox.put(None)
            self._inbox.put(None)
