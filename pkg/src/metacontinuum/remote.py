"""Remote I/O endpoint: a mutable directory tree served over the SMP line protocol.

SMP is a small FTP-control-channel-like protocol.  Commands are UTF-8 lines::

    AUTH <token>      -> 230 | 530
    STAT <path>       -> 213 <kind>\t<mtime>\t<size>\t<path>  | 550
    LIST <path>       -> 150, one entry line per child, 250  | 550
    MLSC <path>       -> 150, self entry (name "."), child entries, 250 | 550
    NOOP              -> 200
    QUIT              -> 221 and close

Entry lines start with a single space: `` <kind>\t<mtime>\t<size>\t<name>``
where kind is ``d`` or ``f``.  Reply classes: 1xx intermediate, 2xx success or
terminator, 4xx transient, 5xx permanent.  An idle connection is sent
``421 TIMEOUT`` and closed.

Two servers share :class:`SMPSession`: :func:`serve_smp` (real TCP sockets)
and :class:`SimEndpoint` (in-process, driven by a simulated clock).
"""

from __future__ import annotations

import itertools
import queue
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .clock import LatencyModel, Pipe
from .core import ChildEntry, Kind, MetadataRecord, ResourcePath

NO_SUCH_PATH = "550 No such file or directory"


class TreeError(ValueError):
    pass


@dataclass
class Node:
    name: str
    kind: Kind
    size_bytes: int = 0
    mtime: int = 0
    children: dict = field(default_factory=dict)

    def entry(self) -> ChildEntry:
        return ChildEntry(self.name, self.kind, self.size_bytes, self.mtime)


@dataclass(frozen=True)
class TreeEvent:
    op: str
    path: str
    target: Optional[str] = None
    mtime: int = 0


class DirectoryTree:
    """In-memory directory tree with strictly increasing mtimes.

    ``time_source`` returns milliseconds; mtimes are ``max(time_source(),
    last + 1)`` so every mutation gets a fresh version even within one
    millisecond.  Without a time source a pure logical clock is used.
    """

    def __init__(self, time_source: Optional[Callable[[], float]] = None):
        self.root = Node("", Kind.DIRECTORY)
        self._time = time_source
        self._last_mtime = 0
        self._lock = threading.RLock()
        self.events: list[TreeEvent] = []

    def _tick(self) -> int:
        now = int(self._time()) if self._time else 0
        self._last_mtime = max(now, self._last_mtime + 1)
        return self._last_mtime

    def _find(self, segments) -> Optional[Node]:
        node = self.root
        for seg in segments:
            if node.kind != Kind.DIRECTORY:
                return None
            node = node.children.get(seg)
            if node is None:
                return None
        return node

    @staticmethod
    def _segs(path) -> tuple[str, ...]:
        segs = ResourcePath.parse(path).segments
        for s in segs:
            if "\t" in s or "\n" in s:
                raise TreeError(f"unsupported character in {s!r}")
        return segs

    def exists(self, path) -> bool:
        with self._lock:
            return self._find(self._segs(path)) is not None

    def stat(self, path) -> Optional[ChildEntry]:
        with self._lock:
            node = self._find(self._segs(path))
            return None if node is None else node.entry()

    def list(self, path) -> Optional[list[ChildEntry]]:
        with self._lock:
            node = self._find(self._segs(path))
            if node is None:
                return None
            if node.kind == Kind.FILE:
                return [node.entry()]
            return [c.entry() for c in node.children.values()]

    def record(self, path) -> Optional[MetadataRecord]:
        """Snapshot of ``path`` as a metadata record (None if missing)."""
        with self._lock:
            rp = ResourcePath.parse(path)
            node = self._find(rp.segments)
            if node is None:
                return None
            children = ()
            if node.kind == Kind.DIRECTORY:
                children = tuple(c.entry() for c in node.children.values())
            return MetadataRecord(rp, node.kind, node.size_bytes, node.mtime, children)

    # -- mutations ---------------------------------------------------------

    def _parent_for_insert(self, segs, parents: bool) -> Node:
        if not segs:
            raise TreeError("cannot create the root")
        node = self.root
        for seg in segs[:-1]:
            child = node.children.get(seg)
            if child is None:
                if not parents:
                    raise TreeError(f"parent of /{'/'.join(segs)} does not exist")
                child = Node(seg, Kind.DIRECTORY, mtime=self._tick())
                node.children[seg] = child
                node.mtime = self._tick()
            elif child.kind != Kind.DIRECTORY:
                raise TreeError(f"{seg} is not a directory")
            node = child
        return node

    def mkdir(self, path, parents: bool = False) -> TreeEvent:
        return self.mutate("mkdir", path, parents=parents)

    def create(self, path, size_bytes: int = 0, parents: bool = False) -> TreeEvent:
        return self.mutate("create", path, size_bytes=size_bytes, parents=parents)

    def rename(self, src, dst) -> TreeEvent:
        return self.mutate("rename", src, target=dst)

    def delete(self, path) -> TreeEvent:
        return self.mutate("delete", path)

    def mutate(self, op: str, path, target=None, size_bytes: int = 0, parents: bool = False) -> TreeEvent:
        """Apply one structural change; invalid requests raise TreeError and change nothing."""
        with self._lock:
            segs = self._segs(path)
            if op in ("mkdir", "create"):
                parent = self._parent_for_insert(segs, parents)
                existing = parent.children.get(segs[-1])
                if existing is not None:
                    if op == "mkdir" and existing.kind == Kind.DIRECTORY and parents:
                        return TreeEvent(op, str(ResourcePath(segs)), mtime=existing.mtime)
                    raise TreeError(f"{path} already exists")
                kind = Kind.DIRECTORY if op == "mkdir" else Kind.FILE
                mtime = self._tick()
                parent.children[segs[-1]] = Node(segs[-1], kind, size_bytes if kind == Kind.FILE else 0, mtime)
                parent.mtime = self._tick()
            elif op == "delete":
                if not segs:
                    raise TreeError("cannot delete the root")
                parent = self._find(segs[:-1])
                if parent is None or segs[-1] not in parent.children:
                    raise TreeError(f"{path} does not exist")
                del parent.children[segs[-1]]
                mtime = parent.mtime = self._tick()
            elif op == "rename":
                if target is None:
                    raise TreeError("rename needs a target")
                dsegs = self._segs(target)
                if not segs or not dsegs:
                    raise TreeError("cannot rename the root")
                if dsegs[: len(segs)] == segs:
                    raise TreeError("cannot move a node inside itself")
                sparent = self._find(segs[:-1])
                if sparent is None or segs[-1] not in sparent.children:
                    raise TreeError(f"{path} does not exist")
                dparent = self._find(dsegs[:-1])
                if dparent is None or dparent.kind != Kind.DIRECTORY:
                    raise TreeError(f"parent of {target} does not exist")
                if dsegs[-1] in dparent.children:
                    raise TreeError(f"{target} already exists")
                node = sparent.children.pop(segs[-1])
                node.name = dsegs[-1]
                mtime = node.mtime = self._tick()
                dparent.children[dsegs[-1]] = node
                sparent.mtime = self._tick()
                dparent.mtime = self._tick()
            else:
                raise TreeError(f"unknown mutation {op!r}")
            event = TreeEvent(op, str(ResourcePath(segs)), None if target is None else str(ResourcePath.parse(target)), mtime)
            self.events.append(event)
            return event

    # -- persistence -------------------------------------------------------

    def walk(self) -> Iterable[tuple[str, Node]]:
        """Yield (path, node) pairs in depth-first order, parents first."""
        stack = [("", self.root)]
        while stack:
            prefix, node = stack.pop()
            for name in sorted(node.children, reverse=True):
                child = node.children[name]
                stack.append((f"{prefix}/{name}", child))
            if prefix:
                yield prefix, node

    def node_count(self) -> int:
        return sum(1 for _ in self.walk())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for p, node in self.walk():
                kind = "d" if node.kind == Kind.DIRECTORY else "f"
                fh.write(f"{kind}\t{node.mtime}\t{node.size_bytes}\t{p}\n")

    @classmethod
    def load(cls, path, time_source=None) -> "DirectoryTree":
        tree = cls(time_source)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                kind, mtime, size, p = line.split("\t", 3)
                segs = ResourcePath.parse(p).segments
                parent = tree._find(segs[:-1])
                if parent is None:
                    raise TreeError(f"snapshot lists {p} before its parent")
                parent.children[segs[-1]] = Node(
                    segs[-1], Kind.DIRECTORY if kind == "d" else Kind.FILE, int(size), int(mtime)
                )
                tree._last_mtime = max(tree._last_mtime, int(mtime))
        return tree

    def snapshot(self) -> dict[str, tuple[str, int, int]]:
        out = {}
        for p, node in self.walk():
            out[p] = ("d" if node.kind == Kind.DIRECTORY else "f", node.mtime, node.size_bytes)
        return out


def entry_line(entry: ChildEntry, name: Optional[str] = None) -> str:
    kind = "d" if entry.kind == Kind.DIRECTORY else "f"
    return f" {kind}\t{entry.mtime}\t{entry.size_bytes}\t{entry.name if name is None else name}"


def parse_entry_line(line: str) -> ChildEntry:
    kind, mtime, size, name = line[1:].split("\t", 3)
    return ChildEntry(name, Kind.DIRECTORY if kind == "d" else Kind.FILE, int(size), int(mtime))


class SMPSession:
    """Per-connection command interpreter; returns reply lines for one command line."""

    def __init__(self, tree: DirectoryTree):
        self.tree = tree
        self.authenticated = False
        self.closed = False

    def handle(self, line: str) -> list[str]:
        line = line.rstrip("\r\n")
        verb, _, arg = line.partition(" ")
        verb = verb.upper()
        if verb == "NOOP" and not arg:
            return ["200 OK"]
        if verb == "QUIT" and not arg:
            self.closed = True
            return ["221 Bye"]
        if verb == "AUTH":
            if not arg:
                return ["530 Missing token"]
            self.authenticated = True
            return ["230 Authenticated"]
        if verb not in ("STAT", "LIST", "MLSC") or not arg:
            return ["500 Syntax error"]
        try:
            rp = ResourcePath.parse(arg)
        except ValueError:
            return ["501 Invalid path"]
        if verb == "STAT":
            entry = self.tree.stat(rp)
            if entry is None:
                return [NO_SUCH_PATH]
            kind = "d" if entry.kind == Kind.DIRECTORY else "f"
            return [f"213 {kind}\t{entry.mtime}\t{entry.size_bytes}\t{rp}"]
        record = self.tree.record(rp)
        if record is None:
            return [NO_SUCH_PATH]
        lines = ["150 Listing"]
        if verb == "MLSC":
            lines.append(entry_line(ChildEntry(".", record.kind, record.size_bytes, record.mtime)))
        if record.kind == Kind.FILE:
            if verb == "LIST":
                lines.append(entry_line(ChildEntry(rp.name, record.kind, record.size_bytes, record.mtime)))
        else:
            lines.extend(entry_line(c) for c in record.children)
        lines.append("250 Done")
        return lines


# -- in-process endpoint ----------------------------------------------------


class SimConnection:
    """Client end of an in-process SMP connection."""

    _ids = itertools.count(1)

    def __init__(self, endpoint: "SimEndpoint", on_lines, on_close):
        self.id = next(self._ids)
        self.endpoint = endpoint
        self.session = SMPSession(endpoint.tree)
        self.on_lines = on_lines
        self.on_close = on_close
        self.up = Pipe(endpoint.clock, endpoint.latency)
        self.down = Pipe(endpoint.clock, endpoint.latency)
        self.open = True
        self.commands_received = 0
        self._server_free_at = 0.0
        self._idle_token = 0

    def send_lines(self, lines: list[str]) -> None:
        if not self.open:
            raise ConnectionError("connection closed")
        self.up.deliver(self._server_receive, list(lines))

    def _server_receive(self, lines: list[str]) -> None:
        if not self.open:
            return
        ep = self.endpoint
        replies: list[str] = []
        for line in lines:
            self.commands_received += 1
            ep.commands_received += 1
            injected = ep.faults(line) if ep.faults else None
            out = injected if injected is not None else self.session.handle(line)
            replies.extend(out)
            ep.log.append((self.id, line, tuple(out)))
        if ep.service_ms:
            now = ep.clock.now()
            start = max(now, self._server_free_at)
            self._server_free_at = start + ep.service_ms * len(lines)
            ep.clock.call_at(self._server_free_at, self._reply, replies)
        else:
            self._reply(replies)
        self._arm_idle()

    def _reply(self, replies: list[str]) -> None:
        if not self.open:
            return
        self.down.deliver(self._client_receive, replies)
        if self.session.closed:
            self.down.deliver(self._client_closed, "quit")
            self.open = False

    def _client_receive(self, replies: list[str]) -> None:
        if self.on_lines is not None:
            self.on_lines(replies)

    def _client_closed(self, reason: str) -> None:
        if self.on_close is not None:
            self.on_close(reason)

    def _arm_idle(self) -> None:
        ep = self.endpoint
        if ep.idle_timeout_ms is None:
            return
        self._idle_token += 1
        ep.clock.call_later(ep.idle_timeout_ms, self._idle_check, self._idle_token)

    def _idle_check(self, token: int) -> None:
        if token != self._idle_token or not self.open:
            return
        self.open = False
        self.down.deliver(self._client_receive, ["421 TIMEOUT"])
        self.down.deliver(self._client_closed, "idle")

    def server_close(self, reason: str = "reset") -> None:
        """Server-side abort: the client learns after one-way delay."""
        if not self.open:
            return
        self.open = False
        self.down.deliver(self._client_closed, reason)

    def close(self) -> None:
        self.open = False


class SimEndpoint:
    """In-process SMP server reached through latency-injected FIFO pipes.

    ``faults`` may return replacement reply lines for a command line (or None
    to serve it normally); it is how tests inject 4xx/5xx replies.
    """

    def __init__(self, tree: DirectoryTree, clock, latency: LatencyModel,
                 service_ms: float = 0.0, idle_timeout_ms: Optional[float] = None,
                 faults: Optional[Callable[[str], Optional[list[str]]]] = None):
        self.tree = tree
        self.clock = clock
        self.latency = latency
        self.service_ms = service_ms
        self.idle_timeout_ms = idle_timeout_ms
        self.faults = faults
        self.running = True
        self.connections: list[SimConnection] = []
        self.commands_received = 0
        self.log: list = []

    def connect(self, on_lines, on_close) -> SimConnection:
        if not self.running:
            raise ConnectionRefusedError("endpoint stopped")
        conn = SimConnection(self, on_lines, on_close)
        self.connections.append(conn)
        return conn

    def stop(self) -> None:
        self.running = False
        for c in self.connections:
            c.server_close("stopped")

    def start(self) -> None:
        self.running = True

    def reset_connections(self) -> None:
        for c in self.connections:
            c.server_close("reset")


# -- TCP server -------------------------------------------------------------


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: SMPServer = self.server.smp  # type: ignore[attr-defined]
        session = SMPSession(server.tree)
        sock = self.connection
        sock.settimeout(server.idle_timeout_s)
        out: "queue.Queue[Optional[tuple[float, bytes]]]" = queue.Queue()
        writer = threading.Thread(target=self._writer, args=(sock, out), daemon=True)
        writer.start()
        last_due = 0.0
        try:
            while True:
                try:
                    raw = self.rfile.readline()
                except (socket.timeout, TimeoutError):
                    out.put((0.0, b"421 TIMEOUT\n"))
                    break
                except OSError:
                    break
                if not raw:
                    break
                received = time.monotonic()
                try:
                    line = raw.decode("utf-8")
                    replies = server.faults(line) if server.faults else None
                    if replies is None:
                        replies = session.handle(line)
                except UnicodeDecodeError:
                    replies = ["500 Syntax error"]
                with server.lock:
                    server.commands_received += 1
                delay = server.latency.sample() * 2 / 1000.0
                due = max(received + delay, last_due)
                last_due = due
                out.put((due, ("\n".join(replies) + "\n").encode("utf-8")))
                if session.closed:
                    break
        finally:
            out.put(None)
            writer.join(timeout=5)
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    @staticmethod
    def _writer(sock, out):
        while True:
            item = out.get()
            if item is None:
                return
            due, data = item
            wait = due - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            try:
                sock.sendall(data)
            except OSError:
                return


class _ThreadingServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class SMPServer:
    """Handle for a running TCP SMP server.

    Injected latency is applied to every reply: it leaves ``2 * one_way``
    after its command arrived, and replies never overtake each other.
    """

    def __init__(self, tree: DirectoryTree, address=("127.0.0.1", 0),
                 latency: Optional[LatencyModel] = None, idle_timeout_s: Optional[float] = 30.0,
                 faults=None):
        self.tree = tree
        self.latency = latency or LatencyModel()
        self.idle_timeout_s = idle_timeout_s
        self.faults = faults
        self.lock = threading.Lock()
        self.commands_received = 0
        self._server = _ThreadingServer(address, _Handler)
        self._server.smp = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_smp(tree: DirectoryTree, listen_address=("127.0.0.1", 0),
              latency: Optional[LatencyModel] = None, idle_timeout_s: Optional[float] = 30.0,
              faults=None) -> SMPServer:
    return SMPServer(tree, listen_address, latency, idle_timeout_s, faults)
