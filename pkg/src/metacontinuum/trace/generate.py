"""Synthetic listStatus traces with exact access-skew targets.

The generator is constructive.  For ``N`` events with unique fraction ``u``
and once-accessed fraction ``h1`` it derives

    U  = round(u * N)       unique paths
    U1 = round(h1 * U)      paths accessed exactly once
    Um = U - U1             paths accessed at least twice
    R  = N - U1             accesses that go to the multi-access paths

and needs ``R >= 2 * Um``.  Multi-access files live in "hot" directories that
are scanned in rounds (round ``r`` visits, in random order, the files whose
access count exceeds ``r``).  Once-accessed paths come from sorted directory
scans, suffix scans (``P/<child>/<leaf>``) and a little noise.  Every scan or
round is a job; jobs are cut into bursts and the bursts of all jobs are
interleaved, each job's bursts staying close to a random start point.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from ..core import ResourcePath
from .events import LIST_OP, TraceEvent


class InfeasibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class TraceSpec:
    events: int = 100_000
    unique_fraction: float = 0.62
    once_fraction: float = 0.92
    min_depth: int = 4
    max_depth: int = 9
    hot_dir_size: tuple = (20, 80)
    scan_size: tuple = (40, 160)
    suffix_scan_size: tuple = (20, 60)
    suffix_scan_share: float = 0.15
    noise_share: float = 0.02
    hot_skew: float = 1.2
    burst_len: int = 32
    spread: float = 0.002
    gap_ms: tuple = (50, 150)
    mutation_rate: float = 0.0
    long_tokens: bool = False
    users: int = 40
    hosts: int = 16

    def targets(self) -> tuple[int, int, int, int]:
        """Return (U, U1, Um, R) after validating the spec."""
        n = self.events
        if n < 0:
            raise InfeasibleSpec("event count must be >= 0")
        if not 0.0 < self.unique_fraction <= 1.0:
            raise InfeasibleSpec("unique fraction must be in (0, 1]")
        if not 0.0 <= self.once_fraction <= 1.0:
            raise InfeasibleSpec("once-accessed fraction must be in [0, 1]")
        if not 1 <= self.min_depth <= self.max_depth:
            raise InfeasibleSpec("need 1 <= min_depth <= max_depth")
        if self.min_depth < 2:
            raise InfeasibleSpec("paths must be at least two segments deep")
        u = round(self.unique_fraction * n)
        u1 = round(self.once_fraction * u)
        um = u - u1
        r = n - u1
        if n and u == 0:
            raise InfeasibleSpec("spec yields no unique paths")
        if r < 2 * um or (um == 0 and r > 0):
            raise InfeasibleSpec(
                f"{n} events cannot give {um} multi-access paths ({r} accesses left for them)")
        return u, u1, um, r


@dataclass
class Job:
    kind: str
    paths: list
    attrs: tuple


@dataclass
class GeneratedTrace:
    spec: TraceSpec
    seed: int
    events: list = field(default_factory=list)
    tallies: dict = field(default_factory=dict)
    hot_dirs: list = field(default_factory=list)
    scan_jobs: list = field(default_factory=list)

    @property
    def list_paths(self) -> list:
        return [e.path for e in self.events if e.op == LIST_OP]


class _Namespace:
    def __init__(self, rng: random.Random, long_tokens: bool, tag: str = ""):
        self.rng = rng
        self.long_tokens = long_tokens
        self.tag = tag
        self.counter = 0
        self.dirs_by_depth: dict[int, list] = {}
        self.roots = [self._fresh_dir(()) for _ in range(8)]

    def token(self, prefix: str) -> str:
        self.counter += 1
        name = f"{prefix}{self.tag}{self.counter:x}"
        if self.long_tokens:
            return hashlib.blake2b(name.encode(), digest_size=16).hexdigest()[:27]
        return name

    def _fresh_dir(self, base: tuple) -> tuple:
        d = base + (self.token("d"),)
        self.dirs_by_depth.setdefault(len(d), []).append(d)
        return d

    def base_dir(self, depth: int) -> tuple:
        """An intermediate directory at ``depth``, reused often so trees branch."""
        if depth == 0:
            return ()
        pool = self.dirs_by_depth.get(depth)
        if pool and self.rng.random() < 0.8:
            return self.rng.choice(pool)
        return self._fresh_dir(self.base_dir(depth - 1))

    def fresh_parent(self, depth: int) -> tuple:
        """A brand-new directory at ``depth`` whose children only this job uses."""
        return self.base_dir(depth - 1) + (self.token("p"),)


def _split_sizes(total: int, lo: int, hi: int, rng: random.Random) -> list[int]:
    sizes = []
    left = total
    while left > 0:
        s = min(left, rng.randint(lo, hi))
        sizes.append(s)
        left -= s
    return sizes


class _Builder:
    def __init__(self, spec: TraceSpec, rng: random.Random, ns: _Namespace):
        self.spec = spec
        self.rng = rng
        self.ns = ns

    def attrs(self, user: Optional[str] = None) -> tuple:
        rng = self.rng
        return (user or f"u{rng.randrange(self.spec.users)}", self.ns.token("proc"),
                f"h{rng.randrange(self.spec.hosts)}")

    def child_depth(self) -> int:
        return self.rng.randint(self.spec.min_depth, self.spec.max_depth)

    def hot_dirs(self, um: int) -> list[tuple[tuple, list]]:
        out = []
        lo, hi = self.spec.hot_dir_size
        for size in _split_sizes(um, lo, hi, self.rng):
            parent = self.ns.fresh_parent(self.child_depth() - 1)
            files = [parent + (self.ns.token("f"),) for _ in range(size)]
            out.append((parent, sorted(files)))
        return out

    def hot_rounds(self, dirs, r: int) -> list[Job]:
        rng = self.rng
        files = [f for _, fs in dirs for f in fs]
        counts = {f: 2 for f in files}
        extra = r - 2 * len(files)
        weights = [rng.paretovariate(self.spec.hot_skew) for _ in dirs]
        wsum = sum(weights) or 1.0
        spent = 0
        for (parent, fs), w in zip(dirs, weights):
            budget = int(extra * w / wsum)
            per, rem = divmod(budget, len(fs))
            for f in fs:
                counts[f] += per
            for f in rng.sample(fs, rem):
                counts[f] += 1
            spent += budget
        for f in rng.choices(files, k=extra - spent):
            counts[f] += 1
        jobs = []
        for parent, fs in dirs:
            user = f"u{rng.randrange(self.spec.users)}"
            rounds = max(counts[f] for f in fs)
            for rnd in range(rounds):
                members = [f for f in fs if counts[f] > rnd]
                rng.shuffle(members)
                jobs.append(Job("hot", members, self.attrs(user)))
        return jobs

    def cold_jobs(self, u1: int, reuse: Optional[list] = None) -> list[Job]:
        spec, rng = self.spec, self.rng
        jobs = list(reuse or [])
        have = sum(len(j.paths) for j in jobs)
        budget = u1 - have
        if budget < 0:
            raise InfeasibleSpec("reused jobs exceed the once-accessed budget")
        n_noise = round(spec.noise_share * budget)
        n_suffix = round(spec.suffix_scan_share * budget)
        n_scan = budget - n_noise - n_suffix
        for size in _split_sizes(n_scan, *spec.scan_size, rng):
            parent = self.ns.fresh_parent(self.child_depth() - 1)
            paths = sorted(parent + (self.ns.token("f"),) for _ in range(size))
            jobs.append(Job("scan", paths, self.attrs()))
        lo, hi = spec.suffix_scan_size
        for size in _split_sizes(n_suffix, lo, hi, rng):
            depth = max(self.child_depth(), 3)
            parent = self.ns.fresh_parent(depth - 2)
            leaf = self.ns.token("l")
            paths = sorted(parent + (self.ns.token("c"), leaf) for _ in range(size))
            jobs.append(Job("suffix", paths, self.attrs()))
        for _ in range(n_noise):
            depth = self.child_depth()
            jobs.append(Job("noise", [self.ns.base_dir(depth - 1) + (self.ns.token("n"),)], self.attrs()))
        return jobs

    def mutation_jobs(self, n_events: int) -> list[Job]:
        jobs = []
        episodes = int(self.spec.mutation_rate * n_events / 4)
        for _ in range(episodes):
            d = self.ns.fresh_parent(self.rng.randint(2, max(2, self.spec.max_depth - 1)))
            a, b = d + (self.ns.token("m"),), d + (self.ns.token("m"),)
            jobs.append(Job("mutation", [("mkdir", d, None), ("create", a, None),
                                         ("rename", a, b), ("delete", b, None)], self.attrs()))
        return jobs

    def interleave(self, jobs: list[Job]) -> list[tuple]:
        spec, rng = self.spec, self.rng
        keyed = []
        seq = 0
        for job in jobs:
            start = rng.random()
            blen = spec.burst_len if spec.burst_len > 0 else len(job.paths)
            bursts = [job.paths[i:i + blen] for i in range(0, len(job.paths), blen)]
            offsets = sorted(rng.uniform(0.0, spec.spread) for _ in bursts)
            offsets[0] = 0.0
            for off, burst in zip(offsets, bursts):
                keyed.append((start + off, seq, job, burst))
                seq += 1
        keyed.sort(key=lambda k: (k[0], k[1]))
        out = []
        for _, _, job, burst in keyed:
            for item in burst:
                out.append((job, item))
        return out

    def emit(self, ordered: list[tuple]) -> list[TraceEvent]:
        rng = self.rng
        lo, hi = self.spec.gap_ms
        ts = 0
        events = []
        for job, item in ordered:
            ts += rng.randint(lo, hi)
            user, proc, host = job.attrs
            if job.kind == "mutation":
                op, p, p2 = item
                events.append(TraceEvent(ts, op, ResourcePath(p), None if p2 is None else ResourcePath(p2),
                                         user, proc, host))
            else:
                events.append(TraceEvent(ts, LIST_OP, ResourcePath(item), None, user, proc, host))
        return events


def _tally(events) -> dict:
    counts: dict = {}
    for e in events:
        if e.op == LIST_OP:
            counts[e.path] = counts.get(e.path, 0) + 1
    return {"list_ops": sum(counts.values()), "unique_paths": len(counts),
            "once_accessed": sum(1 for c in counts.values() if c == 1)}


def _build_day(spec, rng, ns, hot=None, reuse=None) -> GeneratedTrace:
    u, u1, um, r = spec.targets()
    b = _Builder(spec, rng, ns)
    if hot is None:
        hot = b.hot_dirs(um)
    jobs = b.hot_rounds(hot, r) if um else []
    cold = b.cold_jobs(u1, reuse)
    jobs += cold
    jobs += b.mutation_jobs(spec.events)
    events = b.emit(b.interleave(jobs))
    out = GeneratedTrace(spec, 0, events, {}, hot, [j for j in cold if j.kind == "scan"])
    out.tallies = {"targets": {"unique": u, "once": u1, "multi": um, "multi_accesses": r}}
    return out


def generate_trace(spec: TraceSpec, seed: int = 0) -> GeneratedTrace:
    spec.targets()
    if spec.events == 0:
        return GeneratedTrace(spec, seed, [], {"list_ops": 0, "unique_paths": 0, "once_accessed": 0})
    rng = random.Random(seed)
    out = _build_day(spec, rng, _Namespace(rng, spec.long_tokens))
    out.seed = seed
    out.tallies.update(_tally(out.events))
    return out


def generate_trace_pair(spec: TraceSpec, seed: int = 0, overlap: float = 0.6):
    """Two correlated days.

    Day 2 reuses day 1's hot directories and re-runs ``overlap`` of day 1's
    directory-scan jobs (same paths, same order); everything else is fresh.
    """
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must be in [0, 1]")
    if spec.events == 0:
        return generate_trace(spec, seed), generate_trace(spec, seed + 1)
    rng = random.Random(seed)
    ns = _Namespace(rng, spec.long_tokens)
    day1 = _build_day(spec, rng, ns)
    day1.seed = seed
    day1.tallies.update(_tally(day1.events))
    scans = list(day1.scan_jobs)
    rng.shuffle(scans)
    want = overlap * sum(len(j.paths) for j in scans)
    reuse, got = [], 0
    for j in scans:
        if got + len(j.paths) > want:
            continue
        reuse.append(Job("scan", list(j.paths), j.attrs))
        got += len(j.paths)
    ns2 = _Namespace(rng, spec.long_tokens, tag="x")
    ns2.dirs_by_depth = ns.dirs_by_depth
    day2 = _build_day(spec, rng, ns2, hot=day1.hot_dirs, reuse=reuse)
    day2.seed = seed
    day2.tallies.update(_tally(day2.events))
    day2.tallies["rerun_paths"] = got
    return day1, day2


def spec_with(spec: TraceSpec, **changes) -> TraceSpec:
    return replace(spec, **changes)
