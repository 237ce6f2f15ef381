"""Protocol libraries: named request builders over command/parser pairs.

A protocol maps a request type to a builder ``builder(request, *args)`` that
appends the initial pairs.  Parsers may append follow-up pairs while running,
which is how stateful chains (STAT, then LIST if the path is a directory) are
expressed without the caller knowing the chain length up front.
"""

from __future__ import annotations

from typing import Callable, Optional

from ..core import ChildEntry, Kind, MetadataRecord, ResourcePath
from ..remote import parse_entry_line
from .stream import Command, Outcome, Parser, Request


class UnknownProtocol(KeyError):
    pass


def reply_code(line: str) -> Optional[int]:
    if len(line) >= 3 and line[:3].isdigit() and (len(line) == 3 or line[3] == " "):
        return int(line[:3])
    return None


class ReplyParser(Parser):
    """Consumes one reply: any 1xx/entry lines, then a final 2xx/4xx/5xx line."""

    def feed(self, line, request):
        code = reply_code(line)
        if code is None or code < 200:
            self.on_intermediate(line, code, request)
            return False
        if code < 300:
            self.on_success(line, code, request)
            if self.outcome is Outcome.PENDING:
                self.succeed(code)
            return True
        if code == 550:
            return self.deleted(line[4:])
        return self.fail(code, line[4:])

    def on_intermediate(self, line, code, request):
        pass

    def on_success(self, line, code, request):
        pass


class AuthParser(ReplyParser):
    def on_success(self, line, code, request):
        request.save("authenticated", True)


class StatParser(ReplyParser):
    def on_success(self, line, code, request):
        kind, mtime, size, path = line[4:].split("\t", 3)
        rp = ResourcePath.parse(path)
        entry = ChildEntry(rp.name, Kind.DIRECTORY if kind == "d" else Kind.FILE, int(size), int(mtime))
        request.save("stat", entry)
        request.save("result", MetadataRecord(rp, entry.kind, entry.size_bytes, entry.mtime))


class ListParser(ReplyParser):
    def __init__(self, command):
        super().__init__(command)
        self.entries: list[ChildEntry] = []

    def on_intermediate(self, line, code, request):
        if code is None and line.startswith(" "):
            self.entries.append(parse_entry_line(line))

    def on_success(self, line, code, request):
        request.save("listing", self.entries)
        stat = request.get("stat")
        if stat is not None:
            rp = ResourcePath.parse(self.command.args[0])
            request.save("result", MetadataRecord(rp, stat.kind, stat.size_bytes, stat.mtime,
                                                  tuple(self.entries)))


class FetchParser(ListParser):
    """MLSC: the first entry (named ``.``) describes the path itself."""

    def on_success(self, line, code, request):
        if not self.entries or self.entries[0].name != ".":
            self.fail(None, "MLSC reply without self entry")
            return
        me, children = self.entries[0], tuple(self.entries[1:])
        rp = ResourcePath.parse(self.command.args[0])
        request.save("result", MetadataRecord(rp, me.kind, me.size_bytes, me.mtime, children))


class ChainedStatParser(StatParser):
    """STAT that appends a dependent LIST when the path is a directory."""

    def on_success(self, line, code, request):
        super().on_success(line, code, request)
        entry = request.get("stat")
        if entry.kind == Kind.DIRECTORY:
            request.add_pair(Command("LIST", (self.command.args[0],)), ListParser, dependent=True)


class Protocol:
    def __init__(self, name: str):
        self.name = name
        self.builders: dict[str, Callable] = {}

    def register(self, request_type: str, builder: Callable) -> None:
        self.builders[request_type] = builder

    def extend(self, request: Request, request_type: str, *args, **kwargs) -> Request:
        try:
            builder = self.builders[request_type]
        except KeyError:
            raise ValueError(f"{self.name}: unknown request type {request_type!r}") from None
        builder(request, *args, **kwargs)
        return request

    def build(self, request_type: str, *args, dependent: bool = True, payload=None, **kwargs) -> Request:
        req = Request(dependent=dependent, kind=request_type, payload=payload)
        return self.extend(req, request_type, *args, **kwargs)


_REGISTRY: dict[str, Protocol] = {}


def register_protocol(protocol: Protocol) -> None:
    _REGISTRY[protocol.name] = protocol


def get_protocol(name: str) -> Protocol:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownProtocol(name) from None


def _path_arg(path) -> str:
    return str(ResourcePath.parse(path))


def _auth(req, token="anonymous"):
    req.add_pair(Command("AUTH", (token,)), AuthParser)


def _stat(req, path):
    req.add_pair(Command("STAT", (_path_arg(path),)), StatParser)


def _list(req, path):
    req.add_pair(Command("LIST", (_path_arg(path),)), ListParser)


def _fetch(req, path):
    req.add_pair(Command("MLSC", (_path_arg(path),)), FetchParser)


def _fetch_chained(req, path):
    req.add_pair(Command("STAT", (_path_arg(path),)), ChainedStatParser)


def _noop(req):
    req.add_pair(Command("NOOP"), ReplyParser)


def _raw(req, lines):
    for text in lines:
        verb, *args = text.split(" ")
        req.add_pair(Command(verb, tuple(args)), ReplyParser)


SMP = Protocol("smp")
for _name, _builder in [("auth", _auth), ("stat", _stat), ("list", _list), ("fetch", _fetch),
                        ("fetch_chained", _fetch_chained), ("noop", _noop), ("raw", _raw)]:
    SMP.register(_name, _builder)
register_protocol(SMP)
