"""Pipelined request channel with matrix ordering.

A :class:`Request` is a chain of ``{command, parser}`` pairs.  A
:class:`Channel` keeps up to ``capacity`` requests "in the matrix" (one column
each) and streams their commands over a single connection:

* a new request takes the left-most column and its first command is written
  immediately;
* remaining ready commands are written column by column in round-robin order;
* every reply line goes to the parser of the oldest command still awaiting a
  reply, so parse order always equals send order on one connection;
* when a parser finishes and the next pair depends on it, the next command is
  written at once and the request moves to the right-most column.

The channel itself does no I/O.  It talks to a connection object with
``send_lines(lines)`` and ``close()``, obtained from a connector
``connect(on_lines, on_close)``; see :mod:`metacontinuum.transfer.transports`.
"""

from __future__ import annotations

import enum
import itertools
import logging
import threading
from collections import deque
from concurrent.futures import Future
from dataclasses import dataclass
from typing import Any, Callable, Optional

from ..clock import SimClock

log = logging.getLogger(__name__)


class Outcome(enum.Enum):
    PENDING = "pending"
    SUCCESS = "success"
    FAILED = "failed"
    DELETED = "deleted"


class ChannelState(enum.Enum):
    LAZY = "lazy"
    CONNECTED = "connected"
    BROKEN = "broken"
    IDLE_CLOSED = "idle_closed"


class FailPolicy(enum.Enum):
    RETRANSMIT = "retransmit"
    SKIP = "skip"


CONNECTION_FAILURE = "connection"


@dataclass(frozen=True)
class Command:
    verb: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))
        if not self.verb or any(ch.isspace() for ch in self.verb):
            raise ValueError(f"bad verb {self.verb!r}")
        for a in self.args:
            if "\n" in a or "\r" in a:
                raise ValueError("command arguments cannot contain newlines")

    def wire(self) -> str:
        return " ".join((self.verb,) + self.args)


class Parser:
    """Consumes the reply lines of exactly one command.

    Subclasses implement :meth:`feed`, returning True once the reply is fully
    consumed and one of :meth:`succeed`, :meth:`fail` or :meth:`deleted` has
    been called.
    """

    def __init__(self, command: Command):
        self.command = command
        self.outcome: Outcome = Outcome.PENDING
        self.code: Optional[int] = None
        self.reason = ""

    def feed(self, line: str, request: "Request") -> bool:
        raise NotImplementedError

    def succeed(self, code: Optional[int] = None) -> bool:
        self.outcome, self.code = Outcome.SUCCESS, code
        return True

    def fail(self, code: Optional[int], reason: str = "") -> bool:
        self.outcome, self.code, self.reason = Outcome.FAILED, code, reason
        return True

    def deleted(self, reason: str = "") -> bool:
        self.outcome, self.code, self.reason = Outcome.DELETED, 550, reason
        return True


@dataclass
class Pair:
    command: Command
    parser: Parser
    dependent: bool = False


class Request:
    """An ordered chain of command/parser pairs and its outcome."""

    _ids = itertools.count(1)

    def __init__(self, dependent: bool = False, kind: str = "", payload: Any = None):
        self.id = next(self._ids)
        self.kind = kind
        self.payload = payload
        self.dependent = dependent
        self.pairs: list[Pair] = []
        self._factories: list[tuple[Callable[[], Pair]]] = []
        self.cursor = 0
        self.sent = 0
        self.shared: dict = {}
        self.outcome = Outcome.PENDING
        self.failure: Optional[tuple[Outcome, Optional[int], str]] = None
        self.code: Optional[int] = None
        self.reason = ""
        self.result: Any = None
        self.retries = 0
        self.redispatches = 0
        self.future: Future = Future()
        self.finalize: Callable[["Request"], Any] = lambda r: r.shared.get("result")

    def __repr__(self):
        return f"<Request {self.id} {self.kind} {self.outcome.value} {self.cursor}/{len(self.pairs)}>"

    def add_pair(self, command: Command, parser_factory: Callable[[Command], Parser],
                 dependent: Optional[bool] = None) -> None:
        """Append a pair.  Pairs added before sending are replayed on retransmit."""
        dep = self.dependent if dependent is None else dependent
        if self.sent == 0 and self.cursor == 0:
            self._factories.append((command, parser_factory, dep))
        self.pairs.append(Pair(command, parser_factory(command), dep))

    def save(self, key, value) -> None:
        self.shared[key] = value

    def get(self, key, default=None):
        return self.shared.get(key, default)

    @property
    def done(self) -> bool:
        return self.outcome is not Outcome.PENDING

    def reset(self) -> None:
        """Rebuild the original chain for retransmission."""
        self.pairs = [Pair(c, f(c), d) for c, f, d in self._factories]
        self.cursor = 0
        self.sent = 0
        self.shared = {}
        self.failure = None


def request_fail_policy(request: Request, outcome: Outcome, code: Optional[int],
                        retry_budget: int = 2) -> FailPolicy:
    """Decide whether a failed request is sent again or finalized."""
    if outcome is Outcome.DELETED:
        return FailPolicy.SKIP
    transient = code is None or 400 <= code < 500
    if transient and request.retries < retry_budget:
        return FailPolicy.RETRANSMIT
    return FailPolicy.SKIP


class Channel:
    """One pipelined connection serving up to ``capacity`` requests at a time."""

    _ids = itertools.count(1)

    def __init__(self, connect: Callable, capacity: int = 1, clock=None, protocol=None,
                 retry_budget: int = 2, max_redispatch: int = 5, max_connect_attempts: int = 3,
                 reconnect_delay_ms: float = 0.0, idle_timeout_ms: Optional[float] = 30_000.0,
                 record_events: bool = False, name: str = ""):
        if capacity < 1:
            raise ValueError("pipeline capacity must be >= 1")
        self.id = next(self._ids)
        self.name = name or f"channel-{self.id}"
        self._connect_fn = connect
        self.capacity = capacity
        if clock is None:
            from ..clock import default_real_clock

            clock = default_real_clock()
        self.clock = clock
        self.protocol = protocol
        self.retry_budget = retry_budget
        self.max_redispatch = max_redispatch
        self.max_connect_attempts = max_connect_attempts
        self.reconnect_delay_ms = reconnect_delay_ms
        self.idle_timeout_ms = idle_timeout_ms
        self.record_events = record_events

        self.state = ChannelState.LAZY
        self.conn = None
        self._generation = 0
        self._connect_failures = 0
        self._reconnect_pending = False
        self.columns: list[Request] = []
        self.waiting: deque[Request] = deque()
        self.inflight: deque[tuple[Request, int]] = deque()
        self._last_served: Optional[Request] = None
        self._lock = threading.RLock()
        self._completions: list[Request] = []
        self._last_activity = 0.0
        self._idle_timer_armed = False

        self.events: list[tuple[str, int, int, int]] = []
        self.max_columns_seen = 0
        self.commands_sent = 0
        self.connects = 0

    # -- public -------------------------------------------------------------

    def send(self, request: Request, wait: bool = False):
        """Queue ``request``; return its future, or block for the request if ``wait``."""
        if not request.pairs:
            raise ValueError("request has no command/parser pairs")
        with self._lock:
            self.waiting.append(request)
            self._pump()
        self._flush()
        if wait:
            return self.wait(request)
        return request.future

    def wait(self, request: Request, timeout: Optional[float] = None) -> Request:
        if isinstance(self.clock, SimClock):
            while not request.future.done():
                if not self.clock.step():
                    raise RuntimeError("simulation idle before request completed")
        return request.future.result(timeout)

    def build(self, request_type: str, *args, **kwargs) -> Request:
        if self.protocol is None:
            raise RuntimeError("channel has no protocol bound")
        return self.protocol.build(request_type, *args, **kwargs)

    @property
    def in_flight(self) -> int:
        return len(self.columns)

    def close(self) -> None:
        with self._lock:
            if self.conn is not None:
                self.conn.close()
            self.conn = None
            self._generation += 1
            self.state = ChannelState.IDLE_CLOSED
            pending = list(self.columns) + list(self.waiting)
            self.columns.clear()
            self.waiting.clear()
            self.inflight.clear()
            for req in pending:
                self._finalize(req, Outcome.FAILED, None, "channel closed")
        self._flush()

    def abandon(self) -> list[Request]:
        """Drop the connection and hand back every unfinished request untouched."""
        with self._lock:
            pending = list(self.columns) + list(self.waiting)
            if self.conn is not None:
                self.conn.close()
            self.conn = None
            self._generation += 1
            self.state = ChannelState.BROKEN
            self.columns.clear()
            self.waiting.clear()
            self.inflight.clear()
        return pending

    # -- connection -----------------------------------------------------------

    def _ensure_connected(self) -> bool:
        if self.conn is not None:
            return True
        if self._reconnect_pending:
            return False
        gen = self._generation + 1
        try:
            conn = self._connect_fn(
                lambda lines, g=gen: self._on_lines(lines, g),
                lambda reason, g=gen: self._on_close(reason, g),
            )
        except OSError as exc:
            self._connect_failures += 1
            self.state = ChannelState.BROKEN
            log.debug("%s: connect failed (%s), attempt %d", self.name, exc, self._connect_failures)
            if self._connect_failures >= self.max_connect_attempts:
                self._connect_failures = 0
                while self.waiting:
                    self._finalize(self.waiting.popleft(), Outcome.FAILED, None, CONNECTION_FAILURE)
            else:
                self._schedule_reconnect()
            return False
        self._generation = gen
        self.conn = conn
        self.connects += 1
        self._connect_failures = 0
        self.state = ChannelState.CONNECTED
        return True

    def _schedule_reconnect(self) -> None:
        if self._reconnect_pending:
            return
        self._reconnect_pending = True
        self.clock.call_later(self.reconnect_delay_ms, self._reconnect)

    def _reconnect(self) -> None:
        with self._lock:
            self._reconnect_pending = False
            self._pump()
        self._flush()

    def _on_close(self, reason: str, generation: int) -> None:
        with self._lock:
            if generation != self._generation:
                return
            self.conn = None
            self._generation += 1
            if self.columns or self.waiting:
                self._break(reason)
            else:
                self.state = ChannelState.IDLE_CLOSED
        self._flush()

    def _break(self, reason: str) -> None:
        """Connection lost: every request in the matrix goes back to the queue front."""
        log.debug("%s: connection broken (%s)", self.name, reason)
        if self.conn is not None:
            self.conn.close()
            self.conn = None
            self._generation += 1
        self.state = ChannelState.BROKEN
        for req in reversed(self.columns):
            req.redispatches += 1
            if req.redispatches > self.max_redispatch:
                self._finalize(req, Outcome.FAILED, None, CONNECTION_FAILURE)
            else:
                req.reset()
                self.waiting.appendleft(req)
        self.columns.clear()
        self.inflight.clear()
        if self.waiting:
            self._schedule_reconnect()

    # -- matrix -------------------------------------------------------------

    def _ready(self, req: Request) -> bool:
        if req.failure is not None or req.sent >= len(req.pairs):
            return False
        if req.sent == 0:
            return True
        return not req.pairs[req.sent].dependent or req.cursor >= req.sent

    def _emit(self, req: Request, out: list[str]) -> None:
        idx = req.sent
        out.append(req.pairs[idx].command.wire())
        self.inflight.append((req, idx))
        req.sent += 1
        self.commands_sent += 1
        self._last_served = req
        if self.record_events:
            self.events.append(("send", req.id, idx, self._generation))

    def _pump(self) -> None:
        if not self.waiting and not self.columns:
            return
        if not self._ensure_connected():
            return
        out: list[str] = []
        while self.waiting and len(self.columns) < self.capacity:
            req = self.waiting.popleft()
            self.columns.insert(0, req)
            self._emit(req, out)
        if len(self.columns) > self.max_columns_seen:
            self.max_columns_seen = len(self.columns)
        cols = self.columns
        n = len(cols)
        if n:
            last = self._last_served
            i = 0
            if last is not None:
                for j, r in enumerate(cols):
                    if r is last:
                        i = j + 1
                        break
            idle = 0
            while idle < n:
                req = cols[i % n]
                if self._ready(req):
                    self._emit(req, out)
                    idle = 0
                else:
                    idle += 1
                i += 1
        self._write(out)

    def _write(self, out: list[str]) -> None:
        if not out:
            return
        self._last_activity = self.clock.now()
        try:
            self.conn.send_lines(out)
        except OSError as exc:
            self._break(f"write failed: {exc}")

    def _on_lines(self, lines: list[str], generation: int) -> None:
        with self._lock:
            if generation != self._generation:
                return
            self._last_activity = self.clock.now()
            out: list[str] = []
            for line in lines:
                if not self.inflight:
                    if line.startswith("421"):
                        self.conn.close()
                        self.conn = None
                        self._generation += 1
                        self.state = ChannelState.IDLE_CLOSED
                        break
                    self._write(out)
                    out = []
                    self._break(f"protocol desync on {line!r}")
                    break
                req, idx = self.inflight[0]
                parser = req.pairs[idx].parser
                try:
                    done = parser.feed(line, req)
                except Exception as exc:  # a parser bug fails its request, not the channel
                    done = parser.fail(None, f"parser error: {exc}")
                if not done:
                    continue
                self.inflight.popleft()
                req.cursor = idx + 1
                if self.record_events:
                    self.events.append(("parse", req.id, idx, self._generation))
                if parser.outcome is not Outcome.SUCCESS and req.failure is None:
                    req.failure = (parser.outcome, parser.code, parser.reason)
                if self._ready(req):
                    # dependent next pair: send now and move to the right-most column
                    self._emit(req, out)
                    self.columns.remove(req)
                    self.columns.append(req)
                elif req.cursor == req.sent and (req.failure is not None or req.sent == len(req.pairs)):
                    self._finish(req)
            if self.conn is not None:
                self._write(out)
                self._pump()
            elif self.waiting and self.state is not ChannelState.BROKEN:
                self._pump()
            self._maybe_arm_idle()
        self._flush()

    def _finish(self, req: Request) -> None:
        self.columns.remove(req)
        if req.failure is None:
            req.result = req.finalize(req)
            self._finalize(req, Outcome.SUCCESS, None, "")
            return
        outcome, code, reason = req.failure
        if request_fail_policy(req, outcome, code, self.retry_budget) is FailPolicy.RETRANSMIT:
            req.retries += 1
            req.reset()
            self.waiting.appendleft(req)
        else:
            self._finalize(req, outcome, code, reason)

    def _finalize(self, req: Request, outcome: Outcome, code, reason: str) -> None:
        req.outcome, req.code, req.reason = outcome, code, reason
        self._completions.append(req)

    def _flush(self) -> None:
        with self._lock:
            done, self._completions = self._completions, []
        for req in done:
            if not req.future.done():
                req.future.set_result(req)

    def _maybe_arm_idle(self) -> None:
        if self.idle_timeout_ms is None or self._idle_timer_armed or self.conn is None:
            return
        if self.columns or self.waiting:
            return
        self._idle_timer_armed = True
        self.clock.call_later(self.idle_timeout_ms, self._idle_check)

    def _idle_check(self) -> None:
        with self._lock:
            self._idle_timer_armed = False
            if self.conn is None or self.columns or self.waiting:
                return
            remaining = self._last_activity + self.idle_timeout_ms - self.clock.now()
            if remaining > 0:
                self._idle_timer_armed = True
                self.clock.call_later(remaining, self._idle_check)
                return
            self.conn.close()
            self.conn = None
            self._generation += 1
            self.state = ChannelState.IDLE_CLOSED


def parse_matches_send(events: list[tuple[str, int, int, int]]) -> bool:
    """Check the ordering invariant on a recorded event log.

    Per connection generation, the (request, pair) parse sequence must be a
    prefix of the send sequence.
    """
    sends: dict[int, list] = {}
    parses: dict[int, list] = {}
    for kind, rid, idx, gen in events:
        (sends if kind == "send" else parses).setdefault(gen, []).append((rid, idx))
    for gen, plist in parses.items():
        slist = sends.get(gen, [])
        if plist != slist[: len(plist)]:
            return False
    return True
