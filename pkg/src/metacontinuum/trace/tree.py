from __future__ import annotations

from dataclasses import dataclass

from ..remote import DirectoryTree, TreeError
from .events import LIST_OP, READ_OPS


@dataclass
class ReconstructReport:
    events: int = 0
    mutations: int = 0
    repairs: int = 0
    skipped: int = 0


def reconstruct_tree(events, tree: DirectoryTree = None, read_ops=None):
    """Build a directory tree from a trace.

    Reads are creation hints: the path becomes a file unless something was
    already seen below it.  Writes are applied in order; a rename or delete of
    a path never seen is first created, and counted as a repair.
    Returns ``(tree, report)``.
    """
    tree = tree or DirectoryTree()
    read_ops = READ_OPS if read_ops is None else read_ops
    rep = ReconstructReport()
    for ev in events:
        rep.events += 1
        op = ev.op
        try:
            if op in read_ops or op == LIST_OP:
                _ensure(tree, ev.path)
            elif op in ("mkdir", "mkdirs"):
                if not tree.exists(ev.path):
                    _ensure_dir(tree, ev.path)
                rep.mutations += 1
            elif op == "create":
                if not tree.exists(ev.path):
                    _ensure(tree, ev.path)
                rep.mutations += 1
            elif op == "delete":
                if not tree.exists(ev.path):
                    _ensure(tree, ev.path)
                    rep.repairs += 1
                tree.delete(ev.path)
                rep.mutations += 1
            elif op == "rename":
                if ev.path2 is None:
                    rep.skipped += 1
                    continue
                if not tree.exists(ev.path):
                    _ensure(tree, ev.path)
                    rep.repairs += 1
                if tree.exists(ev.path2) or ev.path.is_ancestor_of(ev.path2) or ev.path == ev.path2:
                    rep.skipped += 1
                    continue
                if ev.path2.parent is not None and not tree.exists(ev.path2.parent):
                    _ensure_dir(tree, ev.path2.parent)
                tree.rename(ev.path, ev.path2)
                rep.mutations += 1
            else:
                rep.skipped += 1  # metadata-only writes do not change the namespace
        except TreeError:
            rep.skipped += 1
    return tree, rep


def _ensure_dir(tree: DirectoryTree, path) -> None:
    if path.is_root:
        return
    node = tree.stat(path)
    if node is None:
        _ensure_dir(tree, path.parent)
        tree.mkdir(path)
    elif node.kind.name == "FILE":
        # a file cannot have children: promote it to a directory
        tree.delete(path)
        tree.mkdir(path)


def _ensure(tree: DirectoryTree, path) -> None:
    if path.is_root or tree.exists(path):
        return
    _ensure_dir(tree, path.parent)
    tree.create(path)
