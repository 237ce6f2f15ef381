"""Trace events and the two on-disk formats.

Native TSV, one event per line::

    timestamp_ms <TAB> op <TAB> path [<TAB> path2] [<TAB> user,process,host]

HDFS audit lines are key=value pairs; ``cmd``, ``src`` and optionally ``dst``
and ``ugi``/``ip`` are used.  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from ..core import ResourcePath

log = logging.getLogger(__name__)

READ_OPS = {"listStatus", "open", "getfileinfo", "stat"}
WRITE_OPS = {"mkdir", "mkdirs", "create", "delete", "rename", "setPermission", "setOwner", "setReplication"}
LIST_OP = "listStatus"


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEvent:
    timestamp: int
    op: str
    path: ResourcePath
    path2: Optional[ResourcePath] = None
    user: Optional[str] = None
    process: Optional[str] = None
    host: Optional[str] = None

    @property
    def attributes(self) -> Optional[dict]:
        if self.user is None and self.process is None and self.host is None:
            return None
        return {"user": self.user, "process": self.process, "host": self.host}

    def to_tsv(self) -> str:
        cols = [str(self.timestamp), self.op, str(self.path)]
        if self.path2 is not None:
            cols.append(str(self.path2))
        if self.attributes is not None:
            cols.append(",".join(v or "" for v in (self.user, self.process, self.host)))
        return "\t".join(cols)


def _attrs(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError("attributes must be user,process,host")
    return tuple(p or None for p in parts)


def parse_tsv_line(line: str) -> TraceEvent:
    cols = line.split("\t")
    if len(cols) < 3 or len(cols) > 5:
        raise ValueError("expected 3 to 5 columns")
    ts = int(float(cols[0]))
    op, path = cols[1], ResourcePath.parse(cols[2])
    if not op:
        raise ValueError("empty op")
    path2 = None
    attrs = (None, None, None)
    rest = cols[3:]
    if rest and rest[0].startswith("/"):
        path2 = ResourcePath.parse(rest.pop(0))
    if rest:
        attrs = _attrs(rest.pop(0))
    if rest:
        raise ValueError("unexpected trailing column")
    return TraceEvent(ts, op, path, path2, *attrs)


_KV = re.compile(r"(\w+)=(\S*)")
_AUDIT_TS = re.compile(r"^(\d{4}-\d\d-\d\d) (\d\d):(\d\d):(\d\d)(?:[,.](\d{3}))?")


def parse_audit_line(line: str, fallback_ts: int = 0) -> TraceEvent:
    kv = dict(_KV.findall(line))
    if "cmd" not in kv or "src" not in kv:
        raise ValueError("audit line without cmd/src")
    ts = fallback_ts
    m = _AUDIT_TS.match(line)
    if m:
        h, mi, s = int(m.group(2)), int(m.group(3)), int(m.group(4))
        ts = ((h * 60 + mi) * 60 + s) * 1000 + int(m.group(5) or 0)
    dst = kv.get("dst")
    path2 = ResourcePath.parse(dst) if dst and dst != "null" else None
    user = kv.get("ugi") or None
    if user:
        user = user.split("(")[0]
    host = kv.get("ip") or None
    if host:
        host = host.lstrip("/")
    return TraceEvent(ts, kv["cmd"], ResourcePath.parse(kv["src"]), path2, user, None, host)


class TraceReader:
    """Streams events from a trace file; counts and skips malformed lines.

    Raises :class:`TraceFormatError` at the end of the stream if more than
    ``max_bad_fraction`` of the non-comment lines were malformed.
    """

    def __init__(self, path, max_bad_fraction: float = 0.5):
        self.path = path
        self.max_bad_fraction = max_bad_fraction
        self.lines = 0
        self.malformed = 0
        self.first_errors: list[str] = []

    def __iter__(self) -> Iterator[TraceEvent]:
        last_ts = 0
        with open(self.path, encoding="utf-8", errors="replace") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.rstrip("\r\n")
                if not line.strip() or line.startswith("#"):
                    continue
                self.lines += 1
                try:
                    if "cmd=" in line:
                        ev = parse_audit_line(line, last_ts)
                    else:
                        ev = parse_tsv_line(line)
                except ValueError as exc:
                    self.malformed += 1
                    if len(self.first_errors) < 5:
                        self.first_errors.append(f"line {lineno}: {exc}")
                    continue
                last_ts = ev.timestamp
                yield ev
        if self.lines and self.malformed / self.lines > self.max_bad_fraction:
            raise TraceFormatError(
                f"{self.path}: {self.malformed}/{self.lines} lines malformed; first errors: "
                + "; ".join(self.first_errors))


def parse_trace(path, max_bad_fraction: float = 0.5) -> Iterator[TraceEvent]:
    with open(path, "rb"):  # fail early on unreadable files
        pass
    return iter(TraceReader(path, max_bad_fraction))


def write_trace(events: Iterable[TraceEvent], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_tsv())
            fh.write("\n")
            n += 1
    return n
