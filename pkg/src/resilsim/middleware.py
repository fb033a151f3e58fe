"""Simulated publish/subscribe layer with per-topic QoS and fault channels."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

from resilsim.kernel import Kernel, SimEvent
from resilsim.timebase import Time, fmt_ms, ms

log = logging.getLogger(__name__)

FAULT_PREFIX = "fault/"

Handler = Callable[[str, dict, Time], None]  # (event, payload, delivery tick)


class UnknownTopic(KeyError):
    pass


class SubscriptionError(ValueError):
    pass


@dataclass(frozen=True)
class QoS:
    deadline_ms: float | None = None  # max gap between deliveries to one subscriber
    latency_budget_ms: float | None = None  # max transit time

    def __post_init__(self):
        for name in ("deadline_ms", "latency_budget_ms"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class Topic:
    name: str
    domain: str = "any"
    qos: QoS = field(default_factory=QoS)


@dataclass(frozen=True)
class LinkModel:
    latency_ms: float | None = None  # None: take the mapping's communication cost
    jitter_ms: float = 0.0
    drop_prob: float = 0.0

    def __post_init__(self):
        if self.latency_ms is not None and self.latency_ms < 0:
            raise ValueError("latency must be >= 0")
        if self.jitter_ms < 0:
            raise ValueError("jitter must be >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")


@dataclass
class Subscription:
    id: str
    topic: str
    component: str
    event: str
    handler: Handler


@dataclass(frozen=True)
class Delivery:
    topic: str
    publisher: str
    subscriber: str
    payload: dict
    sent: Time
    at: Time | None  # None when dropped

    @property
    def status(self) -> str:
        return "dropped" if self.at is None else "delivered"


@dataclass
class _QosState:
    last: Time
    check: SimEvent | None = None
    deadline_open: bool = False
    budget_open: bool = False


def _payload_text(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(";", "=")).replace(",", ";")


class Middleware:
    """Topic registry and delivery engine driven by the kernel.

    Deliveries on a (publisher, subscriber) pair never overtake each other:
    a jittered delivery time is clamped to the previous one on that pair.
    """

    def __init__(self, kernel: Kernel, default_link: LinkModel | None = None):
        self.kernel = kernel
        self.default_link = default_link or LinkModel()
        self.topics: dict[str, Topic] = {}
        self.links: dict[tuple[str, str], LinkModel] = {}
        self._subs: dict[str, Subscription] = {}
        self._sub_seq = 0
        self._last_delivery: dict[tuple[str, str], Time] = {}
        self._qos: dict[tuple[str, str], _QosState] = {}
        self.delivery_log: list[str] = []
        self.qos_violations: list[dict] = []

    # -- registry -------------------------------------------------------------

    def declare(self, topic: Topic) -> Topic:
        if topic.name in self.topics:
            raise ValueError(f"duplicate topic {topic.name}")
        self.topics[topic.name] = topic
        return topic

    def declare_fault_channel(self, name: str) -> Topic:
        if not name.startswith(FAULT_PREFIX):
            raise ValueError(f"fault channels live under {FAULT_PREFIX!r}")
        return self.topics.get(name) or self.declare(Topic(name, "fault"))

    def set_link(self, publisher: str, subscriber: str, link: LinkModel) -> None:
        self.links[(publisher, subscriber)] = link

    def subscribe(self, topic: str, component: str, event: str, handler: Handler) -> str:
        if topic not in self.topics:
            raise UnknownTopic(f"unknown topic {topic!r}")
        for s in self._subs.values():
            if s.topic == topic and s.component == component:
                raise SubscriptionError(f"{component} already subscribes to {topic}")
        self._sub_seq += 1
        sid = f"sub{self._sub_seq}"
        self._subs[sid] = Subscription(sid, topic, component, event, handler)
        if self.topics[topic].qos.deadline_ms is not None:
            self._arm_deadline(topic, component, self.kernel.now)
        return sid

    def unsubscribe(self, sid: str) -> None:
        sub = self._subs.pop(sid)
        state = self._qos.pop((sub.topic, sub.component), None)
        if state is not None and state.check is not None:
            self.kernel.cancel(state.check)

    def subscribers(self, topic: str) -> list[Subscription]:
        return [s for s in self._subs.values() if s.topic == topic]

    # -- delivery -------------------------------------------------------------

    def _transit(self, publisher: str, subscriber: str, behaviour: str | None) -> Time | None:
        """Latency draw in ticks, or None if the message is dropped."""
        link = self.links.get((publisher, subscriber), self.default_link)
        rng = self.kernel.rng
        if link.drop_prob > 0 and (link.drop_prob >= 1 or rng.random() < link.drop_prob):
            return None
        if link.latency_ms is not None:
            base = ms(link.latency_ms, strict=False)
        else:
            base = self.kernel.mapping.comm_for(f"{publisher}->{subscriber}", behaviour) or 0
        if link.jitter_ms > 0:
            base += ms(rng.uniform(0, link.jitter_ms), strict=False)
        return self._link_fault(publisher, subscriber, base)

    def _link_fault(self, publisher: str, subscriber: str, transit: Time) -> Time | None:
        link_id = f"{publisher}->{subscriber}"
        try:
            effects = self.kernel.active_effects(link_id)
        except KeyError:
            return transit
        for f in effects:
            if f.effect == "down":
                return None
            if f.effect == "slowdown":
                transit = int(round(transit * f.factor))
        return transit

    def publish(self, topic: str, payload: dict, publisher: str, behaviour: str | None = None) -> list[Delivery]:
        if topic not in self.topics:
            raise UnknownTopic(f"unknown topic {topic!r}")
        now = self.kernel.now
        out = []
        for sub in self.subscribers(topic):
            transit = self._transit(publisher, sub.component, behaviour)
            if transit is None:
                self.delivery_log.append(
                    f"{now},{topic},{publisher},{sub.component},{_payload_text(payload)},,dropped"
                )
                out.append(Delivery(topic, publisher, sub.component, payload, now, None))
                continue
            pair = (publisher, sub.component)
            at = max(now + transit, self._last_delivery.get(pair, now))
            self._last_delivery[pair] = at
            d = Delivery(topic, publisher, sub.component, dict(payload), now, at)
            self.kernel.schedule(at, sub.component, "deliver", lambda d=d, s=sub: self._deliver(d, s), topic)
            out.append(d)
        return out

    def _deliver(self, d: Delivery, sub: Subscription) -> None:
        if sub.id not in self._subs:
            return
        self.delivery_log.append(
            f"{d.at},{d.topic},{d.publisher},{d.subscriber},{_payload_text(d.payload)},{fmt_ms(d.at - d.sent)},delivered"
        )
        self._qos_on_delivery(d)
        sub.handler(sub.event, d.payload, d.at)

    # -- QoS ------------------------------------------------------------------

    def _fault(self, topic: str, subscriber: str, kind: str, t: Time) -> dict:
        msg = {"topic": topic, "subscriber": subscriber, "kind": kind, "tick": t}
        self.qos_violations.append(msg)
        channel = FAULT_PREFIX + "qos"
        self.declare_fault_channel(channel)
        self.publish(channel, msg, "middleware")
        return msg

    def _arm_deadline(self, topic: str, subscriber: str, last: Time) -> None:
        qos = self.topics[topic].qos
        key = (topic, subscriber)
        state = self._qos.setdefault(key, _QosState(last))
        state.last = last
        if state.check is not None:
            self.kernel.cancel(state.check)
        # a gap equal to the deadline is still fine; the first failing tick is one later
        due = last + ms(qos.deadline_ms, strict=False) + 1
        state.check = self.kernel.schedule(
            due, subscriber, "qos_check", lambda: self.qos_monitor_step(topic, self.kernel.now), topic
        )

    def _qos_on_delivery(self, d: Delivery) -> None:
        qos = self.topics[d.topic].qos
        key = (d.topic, d.subscriber)
        if qos.latency_budget_ms is not None:
            state = self._qos.setdefault(key, _QosState(d.at))
            over = d.at - d.sent > ms(qos.latency_budget_ms, strict=False)
            if over and not state.budget_open:
                state.budget_open = True
                self._fault(d.topic, d.subscriber, "latency_budget", d.at)
            elif not over:
                state.budget_open = False
        if qos.deadline_ms is not None:
            state = self._qos.setdefault(key, _QosState(d.at))
            state.deadline_open = False
            self._arm_deadline(d.topic, d.subscriber, d.at)

    def qos_monitor_step(self, topic: str, t: Time) -> list[dict]:
        """Check deadline QoS for every subscriber of ``topic`` at tick ``t``."""
        qos = self.topics[topic].qos
        found = []
        if qos.deadline_ms is None:
            return found
        limit = ms(qos.deadline_ms, strict=False)
        for sub in self.subscribers(topic):
            state = self._qos.get((topic, sub.component))
            if state is None or state.deadline_open:
                continue
            if t - state.last > limit:
                state.deadline_open = True
                found.append(self._fault(topic, sub.component, "deadline", t))
        return found
