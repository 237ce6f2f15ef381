from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .events import LIST_OP


@dataclass
class TraceStats:
    list_ops: int = 0
    unique_paths: int = 0
    once_accessed: int = 0
    files_per_directory_cdf: list = field(default_factory=list)
    files_per_directory_weighted_cdf: list = field(default_factory=list)
    depth_distribution: dict = field(default_factory=dict)
    ops: dict = field(default_factory=dict)

    @property
    def unique_fraction(self) -> float:
        return self.unique_paths / self.list_ops if self.list_ops else 0.0

    @property
    def once_fraction(self) -> float:
        return self.once_accessed / self.unique_paths if self.unique_paths else 0.0

    def as_dict(self) -> dict:
        return {
            "list_ops": self.list_ops,
            "unique_paths": self.unique_paths,
            "once_accessed": self.once_accessed,
            "unique_fraction": round(self.unique_fraction, 6),
            "once_fraction": round(self.once_fraction, 6),
            "depth_distribution": {str(k): v for k, v in sorted(self.depth_distribution.items())},
            "files_per_directory_cdf": self.files_per_directory_cdf,
            "files_per_directory_weighted_cdf": self.files_per_directory_weighted_cdf,
            "ops": dict(sorted(self.ops.items())),
        }


def _cdf(values, weighted: bool) -> list:
    counts = Counter(values)
    total = sum(v * n for v, n in counts.items()) if weighted else sum(counts.values())
    out, acc = [], 0
    for x in sorted(counts):
        acc += x * counts[x] if weighted else counts[x]
        out.append((x, round(acc / total, 6)))
    return out


def compute_stats(events) -> TraceStats:
    """Exact counts over listStatus events."""
    hist: Counter = Counter()
    ops: Counter = Counter()
    n = 0
    for ev in events:
        ops[ev.op] += 1
        if ev.op == LIST_OP:
            hist[ev.path] += 1
            n += 1
    per_dir: Counter = Counter()
    depth: Counter = Counter()
    for p in hist:
        depth[p.depth] += 1
        parent = p.parent
        per_dir[parent if parent is not None else p] += 1
    return TraceStats(
        list_ops=n,
        unique_paths=len(hist),
        once_accessed=sum(1 for c in hist.values() if c == 1),
        files_per_directory_cdf=_cdf(per_dir.values(), False) if per_dir else [],
        files_per_directory_weighted_cdf=_cdf(per_dir.values(), True) if per_dir else [],
        depth_distribution=dict(depth),
        ops=dict(ops),
    )
