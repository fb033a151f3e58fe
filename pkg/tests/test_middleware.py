import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resilsim.kernel import FaultSpec, Kernel, PlatformMapping
from resilsim.middleware import (
    LinkModel,
    Middleware,
    QoS,
    SubscriptionError,
    Topic,
    UnknownTopic,
)
from resilsim.timebase import ms


def setup(link=None, qos=QoS(), seed=0):
    k = Kernel(seed=seed)
    k.set_mapping(PlatformMapping(comm_cost={("A->B", "*"): ms(0.62)}))
    mw = Middleware(k, link)
    mw.declare(Topic("data", "real", qos))
    got = []
    mw.subscribe("data", "B", "in", lambda ev, p, t: got.append((t, p["n"])))
    return k, mw, got


def publish_at(k, mw, times):
    for i, t in enumerate(times):
        k.schedule(t, "A", "send", lambda i=i: mw.publish("data", {"n": i}, "A"))


class TestDelivery:
    def test_latency_comes_from_mapping(self):
        k, mw, got = setup()
        publish_at(k, mw, [100])
        k.run_until(1000)
        assert got == [(162, 0)]
        assert mw.delivery_log == ['162,data,A,B,{"n"=0},0.62,delivered']

    def test_explicit_latency(self):
        k, mw, got = setup(LinkModel(latency_ms=2))
        publish_at(k, mw, [0])
        k.run_until(1000)
        assert got == [(200, 0)]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 500), min_size=1, max_size=30), st.integers(0, 1000))
    def test_fifo_under_jitter(self, times, seed):
        k, mw, got = setup(LinkModel(latency_ms=1, jitter_ms=5), seed=seed)
        publish_at(k, mw, sorted(times))
        k.run_until(5000)
        assert [n for _, n in got] == list(range(len(times)))
        assert [t for t, _ in got] == sorted(t for t, _ in got)

    def test_certain_drop(self):
        k, mw, got = setup(LinkModel(drop_prob=1.0))
        publish_at(k, mw, [0, 10])
        k.run_until(1000)
        assert got == []
        assert all(line.endswith(",dropped") for line in mw.delivery_log)

    def test_link_fault_down(self):
        k, mw, got = setup()
        k.add_target("A->B", "link")
        k.inject_fault(FaultSpec("A->B", 0, "permanent", "down"))
        publish_at(k, mw, [5])
        k.run_until(1000)
        assert got == []

    def test_no_subscribers(self):
        k = Kernel()
        mw = Middleware(k)
        mw.declare(Topic("t"))
        assert mw.publish("t", {}, "A") == []

    def test_registry_errors(self):
        k, mw, _ = setup()
        with pytest.raises(UnknownTopic):
            mw.publish("nope", {}, "A")
        with pytest.raises(UnknownTopic):
            mw.subscribe("nope", "B", "in", lambda *a: None)
        with pytest.raises(SubscriptionError):
            mw.subscribe("data", "B", "in", lambda *a: None)
        with pytest.raises(ValueError):
            mw.declare(Topic("data"))
        with pytest.raises(ValueError):
            mw.declare_fault_channel("alarms")

    def test_unsubscribe_stops_in_flight_delivery(self):
        k = Kernel()
        mw = Middleware(k, LinkModel(latency_ms=1))
        mw.declare(Topic("t"))
        got = []
        sid = mw.subscribe("t", "B", "in", lambda *a: got.append(a))
        mw.publish("t", {}, "A")
        mw.unsubscribe(sid)
        k.run_until(1000)
        assert got == []

    @pytest.mark.parametrize("kw", [{"latency_ms": -1}, {"jitter_ms": -1}, {"drop_prob": 2}])
    def test_bad_link(self, kw):
        with pytest.raises(ValueError):
            LinkModel(**kw)


class TestQos:
    def test_deadline_fires_one_tick_after_gap(self):
        k, mw, _ = setup(LinkModel(latency_ms=0), QoS(deadline_ms=10))
        publish_at(k, mw, [0, ms(10), ms(30)])
        k.run_until(ms(100))
        ticks = [v["tick"] for v in mw.qos_violations]
        assert ticks == [ms(20) + 1, ms(40) + 1]

    def test_deadline_violation_goes_to_fault_channel(self):
        k, mw, _ = setup(LinkModel(latency_ms=0), QoS(deadline_ms=10))
        seen = []
        mw.declare_fault_channel("fault/qos")
        mw.subscribe("fault/qos", "RM", "fault", lambda ev, p, t: seen.append(p))
        k.run_until(ms(50))
        assert [p["kind"] for p in seen] == ["deadline"]

    def test_latency_budget_per_subscriber(self):
        k = Kernel()
        mw = Middleware(k)
        mw.declare(Topic("t", qos=QoS(latency_budget_ms=1)))
        mw.set_link("A", "fast", LinkModel(latency_ms=0.5))
        mw.set_link("A", "slow", LinkModel(latency_ms=3))
        for s in ("fast", "slow"):
            mw.subscribe("t", s, "in", lambda *a: None)
        mw.publish("t", {}, "A")
        k.run_until(ms(10))
        assert [(v["subscriber"], v["kind"]) for v in mw.qos_violations] == [("slow", "latency_budget")]

    def test_payload_text_is_csv_safe(self):
        k, mw, _ = setup(LinkModel(latency_ms=0))
        mw.publish("data", {"n": 1, "m": [1, 2]}, "A")
        k.run_until(10)
        field = mw.delivery_log[0].split(",")[4]
        assert json.loads(field.replace(";", ",").replace("=", ":")) == {"n": 1, "m": [1, 2]}

    def test_bad_qos(self):
        with pytest.raises(ValueError):
            QoS(deadline_ms=0)
