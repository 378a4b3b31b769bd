"""Clock, latency models, scheduling, and determinism of the event core."""

import math

import pytest

from evrelaysim.netsim import (
    DELAY_FLOOR_S,
    EmptyQueue,
    Frame,
    LatencyModel,
    LinkDown,
    Network,
    SimClock,
    make_rng,
    sample_delay,
    sample_delays,
)


class TestSampleDelay:
    def test_constant_model_returns_base_exactly(self):
        m = LatencyModel.constant(1.0e-3)
        assert sample_delay(m, make_rng(0)) == 1.0e-3

    def test_zero_jitter_returns_base_exactly(self):
        m = LatencyModel.jittered(2.0e-3, 0.0)
        assert sample_delay(m, make_rng(0)) == 2.0e-3

    def test_lns_preset_seed42_regression(self):
        # Recorded once with the shipped RNG; drift means the delay
        # sampling or preset calibration changed.
        m = LatencyModel.propagation("lns", 2.0, "80211ac")
        value = sample_delay(m, make_rng(42))
        assert value == pytest.approx(0.00091765470771818, rel=0, abs=0)
        base, jitter = m.resolved()
        assert DELAY_FLOOR_S < value < base + 5 * jitter

    def test_degenerate_parameters_clamp_to_floor(self):
        assert sample_delay(LatencyModel.constant(0.0), make_rng(0)) == DELAY_FLOOR_S
        assert sample_delay(LatencyModel.constant(-1.0), make_rng(0)) == DELAY_FLOOR_S

    def test_positivity_over_a_million_samples(self):
        # Heavy path of the delay-positivity property: a jittered model
        # whose base sits far below 5 sigma, so raw gaussians often go
        # negative and must clamp.
        rng = make_rng(99)
        m = LatencyModel.jittered(0.05e-3, 0.4e-3)
        n = 1_000_000
        bad = sum(1 for d in sample_delays(m, rng, n) if d < DELAY_FLOOR_S)
        assert bad == 0

    def test_positivity_across_preset_models(self):
        rng = make_rng(7)
        for name in ("ldpl", "lns"):
            for std in ("80211g", "80211ac"):
                m = LatencyModel.propagation(name, 10.0, std)
                assert all(d >= DELAY_FLOOR_S
                           for d in sample_delays(m, rng, 10_000))

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValueError):
            LatencyModel.propagation("fresnel", 2.0, "80211ac")
        with pytest.raises(ValueError):
            LatencyModel.propagation("lns", 2.0, "80211n")


class TestClock:
    def test_monotonicity_enforced(self):
        clock = SimClock()
        clock.advance_to(1.0)
        with pytest.raises(ValueError):
            clock.advance_to(0.5)

    def test_clock_advances_only_via_queue(self):
        net = Network(make_rng(1))
        link = net.add_link("a", "b", LatencyModel.constant(1e-3))
        net.add_node("a", _Sink())
        net.add_node("b", _Sink())
        net.schedule_send(link, "a", b"x")
        assert net.clock.now == 0.0
        net.step()
        assert net.clock.now == pytest.approx(1e-3)


class _Sink:
    def __init__(self):
        self.frames = []
        self.timers = []

    def on_frame(self, net, frame):
        self.frames.append(frame)

    def on_timer(self, net, timer):
        self.timers.append(timer)


class TestScheduleSend:
    def test_constant_delay_delivery_time(self):
        net = Network(make_rng(1))
        link = net.add_link("a", "b", LatencyModel.constant(1e-3))
        frame = net.schedule_send(link, "a", b"payload")
        assert frame.deliver_at == pytest.approx(0.001)
        assert frame.src == "a" and frame.dst == "b"
        assert frame.sent_at == 0.0

    def test_down_link_raises(self):
        net = Network(make_rng(1))
        link = net.add_link("a", "b", LatencyModel.constant(1e-3))
        link.up = False
        with pytest.raises(LinkDown):
            net.schedule_send(link, "a", b"x")

    def test_delivery_order_matches_sampled_delay_order(self):
        # Enumerated with a fixed seed: replay the same RNG stream
        # independently to know the sampled delays, then check the queue
        # delivers in that order.
        model = LatencyModel.jittered(1e-3, 0.3e-3)
        oracle_rng = make_rng(123)
        d1 = sample_delay(model, oracle_rng)
        d2 = sample_delay(model, oracle_rng)
        assert d1 != d2

        net = Network(make_rng(123))
        link = net.add_link("a", "b", model)
        f1 = net.schedule_send(link, "a", b"first")
        f2 = net.schedule_send(link, "a", b"second")
        assert f1.deliver_at == pytest.approx(d1, rel=0, abs=0)
        assert f2.deliver_at == pytest.approx(d2, rel=0, abs=0)
        order = [net.advance().payload, net.advance().payload]
        expected = [b"first", b"second"] if d1 < d2 else [b"second", b"first"]
        assert order == expected

    def test_processing_delay_added(self):
        net = Network(make_rng(1))
        link = net.add_link("a", "b", LatencyModel.constant(1e-3))
        frame = net.schedule_send(link, "a", b"x", extra_delay=0.05e-3)
        assert frame.deliver_at == pytest.approx(1.05e-3)

    def test_deliver_at_never_below_floor(self):
        net = Network(make_rng(5))
        link = net.add_link("a", "b", LatencyModel.jittered(0.01e-3, 1e-3))
        for _ in range(2000):
            f = net.schedule_send(link, "a", b"x")
            assert f.deliver_at - f.sent_at >= DELAY_FLOOR_S


class TestAdvance:
    def test_earliest_event_first(self):
        net = Network(make_rng(1))
        net.schedule_timer(3e-3, "n", "late")
        net.schedule_timer(1e-3, "n", "early")
        ev = net.advance()
        assert ev.tag == "early"
        assert net.clock.now == pytest.approx(0.001)

    def test_equal_times_fifo(self):
        net = Network(make_rng(1))
        net.schedule_timer(2e-3, "n", "first")
        net.schedule_timer(2e-3, "n", "second")
        assert net.advance().tag == "first"
        assert net.advance().tag == "second"

    def test_empty_queue_raises(self):
        net = Network(make_rng(1))
        with pytest.raises(EmptyQueue):
            net.advance()

    def test_clock_monotone_over_random_event_soup(self):
        net = Network(make_rng(11))
        rng = make_rng(12)
        link = net.add_link("a", "b", LatencyModel.jittered(1e-3, 0.5e-3))
        net.add_node("a", _Sink())
        net.add_node("b", _Sink())
        for _ in range(500):
            net.schedule_send(link, "a", b"x")
            net.schedule_timer(rng.uniform(0, 5e-3), "a", "t")
        last = 0.0
        while net.pending():
            net.step()
            assert net.clock.now >= last
            last = net.clock.now

    def test_timer_in_past_rejected(self):
        net = Network(make_rng(1))
        net.schedule_timer(1e-3, "n", "x")
        net.advance()
        with pytest.raises(ValueError):
            net.schedule_timer(0.5e-3, "n", "y")


class TestDeterminism:
    def _trace_once(self, seed):
        net = Network(make_rng(seed), trace=True)
        link = net.add_link("a", "b", LatencyModel.jittered(1e-3, 0.4e-3))
        a, b = _Echo("a", link), _Sink()
        net.add_node("a", a)
        net.add_node("b", b)
        for _ in range(50):
            net.schedule_send(link, "a", b"ping")
        net.run()
        return list(net.trace)

    def test_same_seed_identical_trace(self):
        assert self._trace_once(77) == self._trace_once(77)

    def test_different_seed_different_trace(self):
        assert self._trace_once(77) != self._trace_once(78)


class _Echo:
    def __init__(self, node_id, link):
        self.id = node_id
        self.link = link

    def on_frame(self, net, frame):
        pass

    def on_timer(self, net, timer):
        pass
