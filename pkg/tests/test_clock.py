import threading

from metacontinuum.clock import LatencyModel, Link, Pipe, RealClock, SimClock


def test_sim_clock_orders_events():
    clk = SimClock()
    seen = []
    clk.call_at(5, seen.append, "b")
    clk.call_later(1, seen.append, "a")
    clk.call_at(5, seen.append, "c")  # same time keeps insertion order
    clk.run()
    assert seen == ["a", "b", "c"]
    assert clk.now() == 5


def test_sim_clock_run_until():
    clk = SimClock()
    seen = []
    for t in (1, 2, 3):
        clk.call_at(t, seen.append, t)
    clk.run(until=2)
    assert seen == [1, 2]
    assert clk.pending() == 1


def test_latency_model():
    lat = LatencyModel.from_rtt(40)
    assert lat.rtt_ms == 40
    assert lat.sample() == 20
    jit = LatencyModel.from_rtt(40, jitter_ms=5, seed=3)
    samples = [jit.sample() for _ in range(200)]
    assert all(15 <= s <= 25 for s in samples)
    again = LatencyModel.from_rtt(40, jitter_ms=5, seed=3)
    assert samples == [again.sample() for _ in range(200)]


def test_pipe_is_fifo_under_jitter():
    clk = SimClock()
    pipe = Pipe(clk, LatencyModel(10, jitter_ms=9, seed=1))
    got = []
    for i in range(50):
        clk.call_at(i * 0.1, pipe.deliver, got.append, i)
    clk.run()
    assert got == list(range(50))


def test_link_rtt():
    assert Link(SimClock(), LatencyModel.from_rtt(30)).rtt_ms == 30


def test_real_clock_fires():
    clk = RealClock()
    ev = threading.Event()
    clk.call_later(5, ev.set)
    assert ev.wait(2)
    clk.close()
