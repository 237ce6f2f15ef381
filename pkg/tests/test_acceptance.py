"""Acceptance criteria 1-11.

Each test prints one ``PASS``/``FAIL`` line (visible without ``-s``) and then
asserts.  Tolerances are module constants so they cannot drift per test.
Run with ``pytest tests/test_acceptance.py -v``.
"""

import math
import random
import sys
import threading

import pytest

from metacontinuum.clock import LatencyModel, SimClock
from metacontinuum.continuum import DELETED, WaitNotifyQueue, build_continuum
from metacontinuum.core import (BlockStore, ChildEntry, Kind, MetadataRecord, ResourcePath, Status,
                                join_blocks, split_blocks)
from metacontinuum.predictors import NGramModel
from metacontinuum.predictors.dls import HistoryWindow, detect_pattern
from metacontinuum.predictors.nexus import SuccessorGraph
from metacontinuum.prefetch import PRIORITY_DEMAND, PrefetchRequest
from metacontinuum.remote import DirectoryTree, SimEndpoint
from metacontinuum.replay import LayerConfig, ReplayConfig, bench_pool, build_tree, replay
from metacontinuum.trace import TraceSpec, compute_stats, generate_trace, generate_trace_pair
from metacontinuum.transfer import Command, Outcome, Request, channel_open
from metacontinuum.transfer.protocols import StatParser
from oracles import brute_force_pattern, live_ghosts, nexus_oracle, trigram_oracle

P = ResourcePath.parse

# criterion 1
SCHEDULES = 10_000
# criterion 2
PIPE_RTT_MS = 50.0
TICK_MS = 1e-6
# criterion 3
POOL_REQUESTS = 1000
POOL_RTT_MS = 40.0
P95_RATIO_MIN = 5.0
IN_WINDOW_MIN = 0.70
# criterion 4
PATTERN_INSTANCES = 5000
MAX_WINDOW = 64
NEXUS_SEQ_LEN = 20
# criterion 5 and 6
TRACE_EVENTS = 200_000
TRACE_UNIQUE = 0.6
TRACE_ONCE = 0.92
TRACE_SEED = 1
CACHE_SHARE = "10%"
DLS_HIT_MIN = 0.85
HISTORY_HIT_MAX = 0.35
AMP_OVER_LRU_MIN = 0.15
LATENCY_RATIO_MAX = 0.5
# criterion 7
EDGE_SHARE = "0.5%"
FOG_SWEEP = ("1%", "2%", "5%", "10%")
FOG_DLS = dict(pattern_min=2, threshold=0)
MONOTONE_NOISE = 0.05
FOG_REDUCTION_MIN = 0.30
# criterion 8
DEDUP_THREADS = 64
DEDUP_ITERATIONS = 1000
# criterion 9 (at least this many scripted cases)
BACKTRACE_CASES = 20
# criterion 10
BLOCK_RECORDS = 1000
BLOCK_SIZES = (1, 7, 64 * 1024)
CAS_WAYS = 8
CAS_TRIALS = 10_000
# criterion 11
TARGET_UNIQUE = 0.6252
TARGET_ONCE = 0.9233
FRACTION_TOL = 0.02


@pytest.fixture
def verdict(capsys):
    def emit(label, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {label}: {detail}")
        assert ok, detail
    return emit


# -- 1. parse order equals send order ------------------------------------------


class EchoStat(StatParser):
    """Remembers which path the reply it consumed was about."""

    def on_success(self, line, code, request):
        super().on_success(line, code, request)
        request.payload.append(line[4:].split("\t", 3)[3])


def _stat_tree(n):
    t = DirectoryTree()
    t.mkdir("/s")
    for i in range(n):
        t.create(f"/s/f{i}", i)
    return t


def test_c01_matrix_ordering(verdict):
    rng = random.Random(101)
    tree = _stat_tree(64)
    violations = 0
    for schedule in range(SCHEDULES):
        clk = SimClock()
        ep = SimEndpoint(tree, clk, LatencyModel(rng.uniform(1, 20), jitter_ms=rng.uniform(0, 10),
                                                 seed=schedule))
        ch = channel_open(ep, "smp", rng.randint(1, 8), idle_timeout_ms=None, record_events=True)
        reqs = []
        for _ in range(rng.randint(1, 12)):
            asked = [f"/s/f{rng.randrange(64)}" for _ in range(rng.randint(1, 4))]
            req = Request(dependent=rng.random() < 0.5, kind="echo", payload=[])
            for p in asked:
                req.add_pair(Command("STAT", (p,)), EchoStat)
            req.asked = asked
            reqs.append(req)
            clk.call_at(rng.uniform(0, 30), ch.send, req)
        clk.run()
        # oracle 1: every request got exactly the replies for its own commands
        if any(r.outcome is not Outcome.SUCCESS or r.payload != r.asked for r in reqs):
            violations += 1
            continue
        # oracle 2: per connection generation, parses replay sends in order
        per_gen = {}
        for kind, rid, idx, gen in ch.events:
            per_gen.setdefault(gen, {"send": [], "parse": []})[kind].append((rid, idx))
        if any(v["send"] != v["parse"] for v in per_gen.values()):
            violations += 1
    verdict("c01 matrix ordering", violations == 0, f"{violations} violations in {SCHEDULES} schedules")


# -- 2. pipeline timing ---------------------------------------------------------


def _noop_completion(capacity, count, commands=1, dependent=False):
    clk = SimClock()
    ep = SimEndpoint(_stat_tree(1), clk, LatencyModel.from_rtt(PIPE_RTT_MS))
    ch = channel_open(ep, "smp", capacity, idle_timeout_ms=None)
    reqs = [ch.build("raw", ["NOOP"] * commands, dependent=dependent) for _ in range(count)]
    for r in reqs:
        ch.send(r)
    clk.run()
    assert all(r.outcome is Outcome.SUCCESS for r in reqs)
    return clk.now()


def test_c02_pipeline_timing(verdict):
    wide = _noop_completion(100, 100)
    narrow = _noop_completion(1, 100)
    chained = _noop_completion(5, 1, commands=10, dependent=True)
    ok = (wide <= 3 * PIPE_RTT_MS + TICK_MS and narrow >= 100 * PIPE_RTT_MS - TICK_MS
          and chained >= 10 * PIPE_RTT_MS - TICK_MS)
    verdict("c02 pipeline timing", ok,
            f"capacity 100: {wide} ms (<= {3 * PIPE_RTT_MS}), capacity 1: {narrow} ms "
            f"(>= {100 * PIPE_RTT_MS}), dependent x10: {chained} ms (>= {10 * PIPE_RTT_MS})")


# -- 3. service pool scaling ----------------------------------------------------


def _p95(values):
    ordered = sorted(values)
    return ordered[math.ceil(0.95 * len(ordered)) - 1]


def test_c03_service_pool_scaling(verdict):
    few = bench_pool(POOL_REQUESTS, 5, rtt_ms=POOL_RTT_MS, seed=3)
    many = bench_pool(POOL_REQUESTS, 30, rtt_ms=POOL_RTT_MS, seed=3)
    assert len(few.latencies) == len(many.latencies) == POOL_REQUESTS
    p95_few, p95_many = _p95(few.latencies), _p95(many.latencies)
    inside = sum(1 for x in many.latencies if POOL_RTT_MS <= x <= 2 * POOL_RTT_MS) / POOL_REQUESTS
    ok = p95_few > P95_RATIO_MIN * p95_many and inside >= IN_WINDOW_MIN
    verdict("c03 service pool scaling", ok,
            f"p95 5 services {p95_few:.1f} ms vs 30 services {p95_many:.1f} ms "
            f"(ratio {p95_few / p95_many:.1f} > {P95_RATIO_MIN}), "
            f"{inside:.1%} of 30-service latencies in [{POOL_RTT_MS:g}, {2 * POOL_RTT_MS:g}] ms")


# -- 4. predictor oracles -------------------------------------------------------


def test_c04_predictor_oracles(verdict):
    rng = random.Random(404)
    alphabet = ["a", "b", "c", "d", "e"]

    def rand_path():
        return P("/" + "/".join(rng.choice(alphabet) for _ in range(rng.randint(1, 5))))

    pattern_bad = 0
    for _ in range(PATTERN_INSTANCES):
        size = rng.randint(1, MAX_WINDOW)
        w = HistoryWindow(size)
        for _ in range(rng.randint(0, 2 * size)):
            w.add(rand_path())
        path, pm = rand_path(), rng.randint(1, 4)
        got = detect_pattern(w, path, pm)
        want = brute_force_pattern(list(w), path, pm)
        got_t = None if got is None else (got.prefix, got.suffix, got.match_count)
        pattern_bad += got_t != want

    amp_bad = 0
    for _ in range(500):
        seq = [rng.choice("abcdefgh") for _ in range(rng.randint(0, 200))]
        model = NGramModel.train(seq)
        for ctx in {(x, y) for x in "abcd" for y in "abcd"}:
            m = rng.randint(1, 8)
            amp_bad += model.predict(ctx, m) != trigram_oracle(seq, ctx, m)

    nexus_bad = 0
    for _ in range(1000):
        seq = [rng.choice("abcdefg") for _ in range(NEXUS_SEQ_LEN)]
        window = rng.randint(1, 8)
        g = SuccessorGraph(window=window, max_successors=100)
        for x in seq:
            g.update(x)
        got = {(p, s): wgt for p in g.edges for s, wgt in g.edges[p].items()}
        nexus_bad += got != dict(nexus_oracle(seq, window))

    total = pattern_bad + amp_bad + nexus_bad
    verdict("c04 predictor oracles", total == 0,
            f"mismatches: detect_pattern {pattern_bad}/{PATTERN_INSTANCES}, AMP {amp_bad}, "
            f"NEXUS {nexus_bad}")


# -- 5, 6. hit-rate separation and latency reduction ----------------------------


@pytest.fixture(scope="module")
def day_trace():
    g = generate_trace(TraceSpec(events=TRACE_EVENTS, unique_fraction=TRACE_UNIQUE,
                                 once_fraction=TRACE_ONCE), TRACE_SEED)
    return g.events, build_tree(g.events)


@pytest.fixture(scope="module")
def scheme_reports(day_trace):
    events, tree = day_trace
    out = {}
    for name in ("none", "dls", "nexus", "farmer"):
        cfg = ReplayConfig(topology="EC", edge=LayerConfig(capacity=CACHE_SHARE, predictor=name))
        out[name] = replay(events, cfg, tree=tree)
    return out


def test_c05_hit_rate_separation(verdict, scheme_reports):
    hit = {k: r.hit_rate for k, r in scheme_reports.items()}
    d1, d2 = generate_trace_pair(TraceSpec(events=TRACE_EVENTS, unique_fraction=TRACE_UNIQUE,
                                           once_fraction=TRACE_ONCE), TRACE_SEED, overlap=0.6)
    model = NGramModel.train(e.path for e in d1.events if e.op == "listStatus")
    tree2 = build_tree(d1.events, d2.events)
    day2 = {}
    for name in ("none", "amp"):
        cfg = ReplayConfig(topology="EC", edge=LayerConfig(capacity=CACHE_SHARE, predictor=name))
        day2[name] = replay(d2.events, cfg, tree=tree2, amp_model=model).hit_rate
    amp_gain = day2["amp"] - day2["none"]
    ok = (hit["dls"] >= DLS_HIT_MIN
          and all(hit[k] <= HISTORY_HIT_MAX for k in ("none", "nexus", "farmer"))
          and amp_gain >= AMP_OVER_LRU_MIN)
    verdict("c05 hit-rate separation", ok,
            f"DLS {hit['dls']:.4f} (>= {DLS_HIT_MIN}), LRU {hit['none']:.4f}, NEXUS {hit['nexus']:.4f}, "
            f"FARMER {hit['farmer']:.4f} (each <= {HISTORY_HIT_MAX}), AMP day-2 {day2['amp']:.4f} "
            f"vs LRU day-2 {day2['none']:.4f} (+{100 * amp_gain:.1f} points, >= {100 * AMP_OVER_LRU_MIN:g})")


def test_c06_latency_reduction(verdict, day_trace, scheme_reports):
    events, tree = day_trace
    nocache = replay(events, ReplayConfig(topology="EC", edge=LayerConfig(capacity=0),
                                          cloud=LayerConfig(capacity=0)), tree=tree)
    direct = replay(events, ReplayConfig(topology="E", edge=LayerConfig(capacity=0)), tree=tree)
    dls = scheme_reports["dls"].avg_latency_ms
    others = {"LRU": scheme_reports["none"].avg_latency_ms,
              "NEXUS": scheme_reports["nexus"].avg_latency_ms,
              "FARMER": scheme_reports["farmer"].avg_latency_ms,
              "remote-direct": direct.avg_latency_ms}
    best_name = min(others, key=others.get)
    base = nocache.avg_latency_ms
    ok = dls <= LATENCY_RATIO_MAX * base and dls <= LATENCY_RATIO_MAX * others[best_name]
    verdict("c06 latency reduction", ok,
            f"DLS {dls:.3f} ms vs EC no-cache {base:.3f} ms ({dls / base:.1%}) and best non-DLS "
            f"{best_name} {others[best_name]:.3f} ms ({dls / others[best_name]:.1%}), "
            f"limit {LATENCY_RATIO_MAX:.0%}")


# -- 7. fog sweep -----------------------------------------------------------------


def test_c07_fog_sweep(verdict, day_trace):
    events, tree = day_trace
    edge = LayerConfig(capacity=EDGE_SHARE, predictor="dls")
    base = replay(events, ReplayConfig(topology="EC", edge=edge), tree=tree).avg_latency_ms
    sweep = []
    for share in FOG_SWEEP:
        cfg = ReplayConfig(topology="EFC", edge=LayerConfig(capacity=EDGE_SHARE, predictor="dls"),
                           fog=LayerConfig(capacity=share, predictor="dls", params=dict(FOG_DLS),
                                           prefetch_ttl=1))
        sweep.append(replay(events, cfg, tree=tree).avg_latency_ms)
    monotone = all(b <= a * (1 + MONOTONE_NOISE) for a, b in zip(sweep, sweep[1:]))
    reduction = 1 - sweep[-1] / base
    ok = monotone and reduction >= FOG_REDUCTION_MIN
    points = ", ".join(f"fog {s} {v:.3f}" for s, v in zip(FOG_SWEEP, sweep))
    verdict("c07 fog sweep", ok,
            f"no fog {base:.3f} ms; {points} ms; monotone={monotone}, "
            f"reduction {reduction:.1%} (>= {FOG_REDUCTION_MIN:.0%})")


# -- 8. dedup queue under contention --------------------------------------------


def test_c08_dedup_queue(verdict):
    lock = threading.Lock()
    calls = []
    held = []

    def upstream(req, ctx, respond):
        with lock:
            calls.append(req)
            held.append((ctx, respond))

    q = WaitNotifyQueue(upstream, threaded=True)
    start = threading.Barrier(DEDUP_THREADS + 1)
    submitted = threading.Barrier(DEDUP_THREADS + 1)
    futures = [None] * DEDUP_THREADS
    stop = False

    def worker(i):
        while True:
            start.wait()
            if stop:
                return
            futures[i] = q.submit(PrefetchRequest("/same/key", PRIORITY_DEMAND))
            submitted.wait()

    old_switch = sys.getswitchinterval()
    sys.setswitchinterval(1e-6)
    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(DEDUP_THREADS)]
    for t in threads:
        t.start()
    bad = 0
    try:
        for it in range(DEDUP_ITERATIONS):
            calls.clear()
            held.clear()
            sends_before = q.sends
            start.wait()
            submitted.wait()
            # wait for the sender thread to hand every queued send upstream
            while len(held) < q.sends - sends_before:
                threading.Event().wait(1e-4)
            for ctx, respond in list(held):
                respond(ctx, it)
            completed = sum(1 for f in futures if f.result(timeout=5) == it)
            if len(calls) != 1 or completed != DEDUP_THREADS:
                bad += 1
    finally:
        sys.setswitchinterval(old_switch)
        stop = True
        start.wait()
        q.close()
    verdict("c08 dedup queue", bad == 0,
            f"{DEDUP_ITERATIONS} iterations x {DEDUP_THREADS} threads, {bad} with sends != 1 "
            f"or completions != {DEDUP_THREADS}")


# -- 9. backtrace sync soundness --------------------------------------------------


def _backtrace_tree():
    t = DirectoryTree()
    for f in ("/a/b/x", "/a/b/y", "/a/b/c/k", "/a/b/c/m", "/a/d/z", "/e/f"):
        t.create(f, parents=True)
    return t


_ALL = ["/a", "/a/b", "/a/b/x", "/a/b/y", "/a/b/c", "/a/b/c/k", "/a/d", "/a/d/z", "/e", "/e/f"]

# (name, warm set, mutations, paths refreshed afterwards, expect early stop)
_SCRIPTS = [
    ("rename dir", _ALL, [("rename", "/a/b", "/a/q")], ["/a/b/x"], False),
    ("delete file", _ALL, [("delete", "/a/b/x", None)], ["/a/b/x"], False),
    ("delete nested parents", _ALL, [("delete", "/a/b", None)], ["/a/b/c/k"], False),
    ("rename top, three invalid levels", _ALL, [("rename", "/a", "/r")], ["/a/b/c/k", "/a/d/z"], False),
    ("two subtrees", _ALL, [("delete", "/a/b/c", None), ("rename", "/e", "/g")],
     ["/a/b/c/m", "/e/f"], False),
    ("uncached parents", ["/a/b/c/k"], [("delete", "/a/b/c/k", None)], ["/a/b/c/k"], True),
    ("uncached parents, dir removed", ["/a/b/c/k"], [("delete", "/a/b/c", None)], ["/a/b/c/k"], True),
]


def _backtrace_cases():
    cases = []
    for topology in ("EC", "EFC"):
        for backend in ("direct", "pool"):
            for script in _SCRIPTS:
                cases.append((topology, backend) + script)
    return cases


def test_c09_backtrace_soundness(verdict):
    cases = _backtrace_cases()
    assert len(cases) >= BACKTRACE_CASES
    failures = []
    early_checked = 0
    for topology, backend, name, warm, mutations, refresh, early in cases:
        clk = SimClock()
        tree = _backtrace_tree()
        cont = build_continuum(tree, clk, topology, backend=backend)
        for p in warm:
            cont.edge.fetch(p)
            clk.run()
        for op, src, dst in mutations:
            tree.mutate(op, src, dst)
        results = [cont.edge.fetch(p, force_refresh=True) for p in refresh]
        clk.run()
        label = f"{topology}/{backend}/{name}"
        if any(f.result().status != DELETED for f in results):
            failures.append(f"{label}: refresh not DELETED")
        ghosts = live_ghosts(cont, tree)
        if ghosts:
            failures.append(f"{label}: ghosts {ghosts}")
        if early:
            early_checked += 1
            stops = sum(n.stats.early_stops for n in cont.nodes)
            if stops < 1 or cont.top.cache.peek("/a/b") is not None:
                failures.append(f"{label}: no early stop")
    ok = not failures and early_checked > 0
    verdict("c09 backtrace soundness", ok,
            f"{len(cases)} cases, {early_checked} early-stop cases, failures: {failures or 'none'}")


# -- 10. block store ----------------------------------------------------------------


def _random_record(rng, i):
    name = "".join(rng.choice("abcxyzé_-0123456789") for _ in range(rng.randint(1, 20)))
    path = f"/r{i}/" + name
    status = rng.choice([Status.LIVE, Status.LIVE, Status.DELETED])
    if rng.random() < 0.4:
        return MetadataRecord(path, Kind.FILE, rng.randrange(2 ** 40), rng.randrange(2 ** 50),
                              status=status)
    children = tuple(ChildEntry(f"c{j}{rng.choice('xyz')}", rng.choice([Kind.FILE, Kind.DIRECTORY]),
                                rng.randrange(2 ** 32), rng.randrange(2 ** 40))
                     for j in range(rng.randint(0, 40)))
    return MetadataRecord(path, Kind.DIRECTORY, 0, rng.randrange(2 ** 50), children, status)


def test_c10_block_store(verdict, tmp_path):
    rng = random.Random(1010)
    records = [_random_record(rng, i) for i in range(BLOCK_RECORDS)]
    roundtrip_bad = 0
    for size in BLOCK_SIZES:
        store = BlockStore(block_size=size)
        for rec in records:
            manifest, blocks = split_blocks(rec, size)
            shuffled = blocks[:]
            rng.shuffle(shuffled)
            if join_blocks(manifest, shuffled) != rec or any(len(b.payload) > size for b in blocks):
                roundtrip_bad += 1
            store.put(str(rec.path), rec)
        path = tmp_path / f"store{size}.bin"
        store.save(path)
        loaded = BlockStore.load(path, block_size=size)
        for rec in records:
            manifest, blocks = loaded.read_blocks(str(rec.path))
            if loaded.get(str(rec.path)) != rec or join_blocks(manifest, blocks) != rec:
                roundtrip_bad += 1

    store = BlockStore(block_size=7)
    start = threading.Barrier(CAS_WAYS + 1)
    finished = threading.Barrier(CAS_WAYS + 1)
    wins = []
    state = {"base": None, "stop": False}

    def contend(i):
        while True:
            start.wait()
            if state["stop"]:
                return
            base = state["base"]
            cand = MetadataRecord("/race", Kind.FILE, i, base.mtime + 1 + i)
            if store.compare_and_set("/race", base.digest, cand):
                wins.append(cand)
            finished.wait()

    threads = [threading.Thread(target=contend, args=(i,), daemon=True) for i in range(CAS_WAYS)]
    for t in threads:
        t.start()
    cas_bad = 0
    for trial in range(CAS_TRIALS):
        base = MetadataRecord("/race", Kind.FILE, 0, trial * 100)
        store.put("/race", base)
        state["base"] = base
        wins.clear()
        start.wait()
        finished.wait()
        if len(wins) != 1 or store.get("/race") != wins[0]:
            cas_bad += 1
    state["stop"] = True
    start.wait()
    ok = roundtrip_bad == 0 and cas_bad == 0
    verdict("c10 block store", ok,
            f"round-trip failures {roundtrip_bad} over {BLOCK_RECORDS} records x {len(BLOCK_SIZES)} "
            f"block sizes; CAS trials without exactly one winner {cas_bad}/{CAS_TRIALS}")


# -- 11. trace tooling closes the loop ----------------------------------------------


def test_c11_generate_stats_loop(verdict):
    g = generate_trace(TraceSpec(events=TRACE_EVENTS, unique_fraction=TARGET_UNIQUE,
                                 once_fraction=TARGET_ONCE), seed=11)
    s = compute_stats(g.events)
    du, do = abs(s.unique_fraction - TARGET_UNIQUE), abs(s.once_fraction - TARGET_ONCE)
    ok = du <= FRACTION_TOL and do <= FRACTION_TOL
    verdict("c11 generate-stats loop", ok,
            f"unique {s.unique_fraction:.4f} (target {TARGET_UNIQUE}), once {s.once_fraction:.4f} "
            f"(target {TARGET_ONCE}), tolerance {FRACTION_TOL}")
