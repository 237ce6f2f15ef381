import threading

import pytest

from metacontinuum.clock import LatencyModel, SimClock
from metacontinuum.continuum import (DELETED, OK, LayerNode, Response, ServicePool,
                                     WaitNotifyQueue, build_continuum)
from metacontinuum.continuum.wire import (decode_request, decode_response, encode_request,
                                          encode_response)
from metacontinuum.core import FramingError, Kind, MetadataRecord, ResourcePath
from metacontinuum.prefetch import PRIORITY_DEMAND, Origin, PrefetchRequest
from metacontinuum.predictors import Predictor
from metacontinuum.remote import DirectoryTree, SimEndpoint
from metacontinuum.transfer import Outcome, channel_open, get_protocol
from oracles import live_ghosts

P = ResourcePath.parse


def sample_tree():
    t = DirectoryTree()
    for d in ("/a", "/a/b", "/a/d"):
        t.mkdir(d)
    for f in ("/a/b/x", "/a/b/y", "/a/d/z"):
        t.create(f)
    return t


# -- wait-and-notify queue ----------------------------------------------------


def test_queue_dedups_concurrent_identical_requests():
    sends = []
    gate = threading.Event()

    def upstream(req, ctx, respond):
        sends.append(req)
        threading.Thread(target=lambda: (gate.wait(), respond(ctx, "done"))).start()

    q = WaitNotifyQueue(upstream, threaded=True)
    req = PrefetchRequest("/same", PRIORITY_DEMAND)
    results = []
    barrier = threading.Barrier(5)

    def worker():
        barrier.wait()
        fut = q.submit(req)
        results.append(fut)

    threads = [threading.Thread(target=worker) for _ in range(5)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    gate.set()
    assert [f.result(timeout=5) for f in results] == ["done"] * 5
    assert len(sends) == 1
    assert q.sends == 1 and q.joins == 4
    q.close()


def test_queue_out_of_order_responses():
    held = {}
    q = WaitNotifyQueue(lambda req, ctx, respond: held.setdefault(str(req.path), (ctx, respond)))
    fa = q.submit(PrefetchRequest("/a"))
    fb = q.submit(PrefetchRequest("/b"))
    ctx, respond = held["/b"]
    respond(ctx, "B")
    assert fb.result() == "B" and not fa.done()
    ctx, respond = held["/a"]
    respond(ctx, "A")
    assert fa.result() == "A"
    assert q.in_flight() == 0


def test_queue_force_refresh_not_joined_with_plain():
    calls = []
    q = WaitNotifyQueue(lambda req, ctx, respond: calls.append(req))
    q.submit(PrefetchRequest("/p"))
    q.submit(PrefetchRequest("/p", force_refresh=True))
    assert len(calls) == 2


def test_queue_failure_reaches_all_waiters():
    held = []
    q = WaitNotifyQueue(lambda req, ctx, respond: held.append((ctx, respond)))
    f1, f2 = q.submit(PrefetchRequest("/e")), q.submit(PrefetchRequest("/e"))
    ctx, respond = held[0]
    respond(ctx, RuntimeError("upstream down"))
    for f in (f1, f2):
        with pytest.raises(RuntimeError):
            f.result()


def test_queue_wait_mode_and_sync_refusal():
    q = WaitNotifyQueue(lambda req, ctx, respond: respond(ctx, 42))
    assert q.submit(PrefetchRequest("/w"), wait=True) == 42

    def refuse(req, ctx, respond):
        raise ConnectionError("no route")

    q2 = WaitNotifyQueue(refuse)
    with pytest.raises(ConnectionError):
        q2.submit(PrefetchRequest("/w")).result()


# -- service pool ---------------------------------------------------------------


def _pool(services, capacity=5, rtt=20, n=50):
    clk = SimClock()
    tree = DirectoryTree()
    tree.mkdir("/j")
    for i in range(n):
        tree.create(f"/j/{i}")
    ep = SimEndpoint(tree, clk, LatencyModel.from_rtt(rtt))
    pool = ServicePool(lambda i: channel_open(ep, "smp", capacity, idle_timeout_ms=None),
                       services, capacity, clk)
    return clk, ep, pool


def _submit(pool, i, done, priority=PRIORITY_DEMAND):
    proto = get_protocol("smp")
    return pool.submit(i, priority, lambda j: proto.build("fetch", f"/j/{j}"),
                       lambda job, req: done.append((job.payload, req)))


def test_pool_round_robin_assignment():
    clk, ep, pool = _pool(3)
    done = []
    for i in range(7):
        _submit(pool, i, done)
    assert [s.assigned for s in pool.services] == [3, 2, 2]
    clk.run()
    assert len(done) == 7 and pool.acked == 7


def test_pool_kill_redispatches_to_survivor():
    clk, ep, pool = _pool(2)
    done = []
    for i in range(8):
        _submit(pool, i, done)
    clk.call_at(5, pool.kill, 0)
    clk.run()
    assert sorted(p for p, _ in done) == list(range(8))
    assert all(req.outcome is Outcome.SUCCESS for _, req in done)
    assert pool.redispatched == 4
    assert all(req is not None for _, req in done)


def test_pool_priority_order():
    clk, ep, pool = _pool(1, capacity=1)
    done = []
    _submit(pool, 0, done)                 # occupies the only slot
    _submit(pool, 1, done, priority=49)    # ttl expansion
    _submit(pool, 2, done, priority=50)    # predictor
    _submit(pool, 3, done)                 # demand
    clk.run()
    assert [p for p, _ in done] == [0, 3, 2, 1]


def test_pool_holds_jobs_until_service_returns():
    clk, ep, pool = _pool(1)
    pool.kill(0)
    done = []
    _submit(pool, 1, done)
    clk.run()
    assert done == [] and pool.queued() == 1
    pool.revive(0)
    clk.run()
    assert [p for p, _ in done] == [1]


def test_pool_reclaims_stale_low_priority_jobs():
    clk, ep, pool = _pool(1)
    pool.kill(0)
    done = []
    _submit(pool, 1, done, priority=50)
    _submit(pool, 2, done, priority=PRIORITY_DEMAND)
    clk.call_at(61_000, pool.dispatch)
    clk.run()
    assert done == [(1, None)]
    assert pool.reclaimed == 1 and pool.queued() == 1


def test_pool_add_service():
    clk, ep, pool = _pool(1, capacity=1)
    done = []
    for i in range(3):
        _submit(pool, i, done)
    idx = pool.add_service()
    assert idx == 1 and pool.services[1].assigned == 1
    clk.run()
    assert len(done) == 3


# -- nodes ------------------------------------------------------------------


def test_fetch_latency_by_layer():
    clk = SimClock()
    cont = build_continuum(sample_tree(), clk, "EFC")
    edge, fog = cont.edge, cont.node("fog")

    def timed(node, path):
        start = clk.now()
        fut = node.fetch(path)
        clk.run()
        return fut.result(), clk.now() - start

    resp, ms = timed(edge, "/a/b")
    assert resp.ok and ms == 40
    resp, ms = timed(edge, "/a/b")
    assert ms == 0
    fog.cache.put("/a/d", sample_tree().record("/a/d"))
    resp, ms = timed(edge, "/a/d")
    assert resp.ok and ms == 2


def test_missing_path_is_deleted_response():
    clk = SimClock()
    cont = build_continuum(sample_tree(), clk, "EC")
    fut = cont.edge.fetch("/nope")
    clk.run()
    assert fut.result().status == DELETED


class FixedPredictor(Predictor):
    def __init__(self, paths):
        self.paths = paths

    def on_request(self, inp, hit, cache):
        return [PrefetchRequest(p) for p in self.paths]


def test_prefetch_filters_cached_candidates():
    clk = SimClock()
    tree = DirectoryTree()
    tree.mkdir("/c")
    for i in range(10):
        tree.create(f"/c/{i}")
    cands = [f"/c/{i}" for i in range(10)]
    cont = build_continuum(tree, clk, "EC", predictors={"edge": FixedPredictor(cands)})
    for i in range(4):
        cont.edge.cache.put(f"/c/{i}", tree.record(f"/c/{i}"))
    cont.edge.fetch("/c")
    assert cont.edge.stats.prefetch_issued == 6
    clk.run()
    assert all(cont.edge.cache.peek(p) is not None for p in cands)


def test_hit_still_feeds_predictor():
    seen = []

    class Spy(Predictor):
        def on_request(self, inp, hit, cache):
            seen.append((str(inp.path), hit))
            return []

    clk = SimClock()
    cont = build_continuum(sample_tree(), clk, "E", predictors={"edge": Spy()})
    cont.edge.fetch("/a")
    clk.run()
    cont.edge.fetch("/a")
    assert seen == [("/a", False), ("/a", True)]


def test_overlapping_prefetch_sent_upstream_once():
    clk = SimClock()
    tree = sample_tree()
    overlap = ["/a/b/x", "/a/b/y"]
    cont = build_continuum(tree, clk, "EFC",
                           predictors={"edge": FixedPredictor(overlap), "fog": FixedPredictor(overlap)})
    cont.edge.fetch("/a")
    clk.run()
    cloud = cont.top
    assert cont.backend.requests == 3  # /a plus each overlapping path once
    assert cloud.queue.sends == 3
    assert all(cont.edge.cache.peek(p) is not None for p in overlap)


def test_ttl_expansion_lower_priority():
    req = PrefetchRequest("/a", 50, 1)
    child = req.expand(P("/a/b"))
    assert child.priority < req.priority and child.ttl == 0
    assert child.origin is Origin.TTL_EXPANSION
    with pytest.raises(ValueError):
        child.expand(P("/a/b/c"))


def test_fog_ttl_prefetch_expands_children():
    clk = SimClock()
    cont = build_continuum(sample_tree(), clk, "EFC",
                           predictors={"fog": FixedPredictor(["/a"])}, prefetch_ttl={"fog": 1})
    cont.edge.fetch("/a/d/z")
    clk.run()
    fog = cont.node("fog")
    assert fog.cache.peek("/a/b") is not None and fog.cache.peek("/a/d") is not None
    assert fog.stats.ttl_expansions == 2


def test_node_requires_one_upstream():
    with pytest.raises(ValueError):
        LayerNode("x", "edge", SimClock())


# -- backtrace ---------------------------------------------------------------


def _warm(cont, clk, paths):
    for p in paths:
        cont.edge.fetch(p)
        clk.run()



@pytest.mark.parametrize("backend", ["direct", "pool"])
def test_backtrace_after_rename(backend):
    clk = SimClock()
    tree = sample_tree()
    cont = build_continuum(tree, clk, "EFC", backend=backend)
    _warm(cont, clk, ["/a", "/a/b", "/a/b/x", "/a/b/y"])
    tree.rename("/a/b", "/a/c")
    fut = cont.edge.fetch("/a/b/x", force_refresh=True)
    clk.run()
    assert fut.result().status == DELETED
    for node in cont.nodes:
        for key in ("/a/b", "/a/b/x", "/a/b/y"):
            assert node.cache.peek(key).deleted, (node.role, key)
        assert not node.cache.peek("/a").deleted
    assert live_ghosts(cont, tree) == []
    cloud = cont.top
    assert {c.name for c in cloud.cache.peek("/a").children} == {"c", "d"}
    for p in ("/a/c", "/a/d"):
        assert cloud.cache.peek(p) is not None
    assert cont.edge.cache.peek("/a").children == cloud.cache.peek("/a").children
    assert any(kind == "delete" for *_, kind, _ in cloud.delivery_log)


def test_backtrace_early_stop_uncached_parent():
    clk = SimClock()
    tree = sample_tree()
    cont = build_continuum(tree, clk, "EC")
    _warm(cont, clk, ["/a/b/x"])
    tree.delete("/a/b/x")
    cont.edge.fetch("/a/b/x", force_refresh=True)
    clk.run()
    cloud = cont.top
    assert cloud.stats.early_stops == 1
    assert cloud.cache.peek("/a/b") is None
    assert cont.edge.cache.peek("/a/b/x").deleted


def test_backtrace_nested_invalid_parents():
    clk = SimClock()
    tree = DirectoryTree()
    tree.create("/a/b/c/x", parents=True)
    cont = build_continuum(tree, clk, "EFC")
    _warm(cont, clk, ["/a", "/a/b", "/a/b/c", "/a/b/c/x"])
    tree.rename("/a/b", "/a/z")
    cont.edge.fetch("/a/b/c/x", force_refresh=True)
    clk.run()
    assert live_ghosts(cont, tree) == []
    cloud = cont.top
    assert cloud.stats.backtraces == 3
    for p in ("/a/z", "/a/z/c", "/a/z/c/x"):
        assert cloud.cache.peek(p) is not None, p


def test_backtrace_lost_race_keeps_fresh_record():
    clk = SimClock()
    tree = sample_tree()
    cont = build_continuum(tree, clk, "EC")
    _warm(cont, clk, ["/a/b/x"])
    tree.delete("/a/b/x")
    fut = cont.edge.fetch("/a/b/x", force_refresh=True)
    fresh = MetadataRecord("/a/b/x", Kind.FILE, 7, 10**9)
    clk.call_at(clk.now() + 15, cont.top.cache.put, "/a/b/x", fresh)
    clk.run()
    assert fut.result().status == OK and fut.result().record == fresh
    assert cont.top.stats.lost_races == 1
    assert not cont.top.cache.peek("/a/b/x").deleted


# -- wire frames ----------------------------------------------------------------


def test_wire_roundtrip():
    req = PrefetchRequest("/w/x", 80, 2, True, Origin.DELETE_RESYNC)
    ctx, back = decode_request(encode_request(2**64 - 1, req))
    assert ctx == 2**64 - 1 and back == req
    rec = sample_tree().record("/a")
    ctx, resp = decode_response(encode_response(7, Response(rec.path, OK, rec)))
    assert ctx == 7 and resp.record == rec and resp.status == OK
    ctx, resp = decode_response(encode_response(8, Response(P("/g"), DELETED)), P("/g"))
    assert resp.status == DELETED and resp.record is None and resp.path == P("/g")


@pytest.mark.parametrize("frame", [b"", b"XX" + bytes(30), encode_request(1, PrefetchRequest("/a"))[:-1]])
def test_wire_rejects_bad_frames(frame):
    with pytest.raises(FramingError):
        decode_request(frame)
