"""Deterministic discrete-event network core.

A simulated clock, links with configurable latency models, and a single
event queue holding in-flight frames and timers. All randomness flows
through one seeded RNG per run, so a scenario replays byte-identically
for a given seed: same delay samples, same delivery order, same trace.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from heapq import heappop, heappush

# One-way delays can never sample at or below this floor (1 microsecond).
DELAY_FLOOR_S = 1e-6

# Per-hop turnaround of the wireless propagation presets, one-way seconds.
# The distance term adds a small penalty per meter between the endpoints
# (retransmissions and contention grow with range; raw propagation time is
# negligible at parking-lot scale).
_PROPAGATION_HOP_S = {"80211g": 1.05e-3, "80211ac": 0.95e-3}
_PROPAGATION_DIST_S_PER_M = 4.0e-6
_PROPAGATION_JITTER_S = {"ldpl": 0.18e-3, "lns": 0.28e-3}


class LinkDown(RuntimeError):
    """A frame was scheduled on a link that is administratively down."""


class EmptyQueue(RuntimeError):
    """advance() was called with no pending events."""


def make_rng(seed: int) -> random.Random:
    """Seeded RNG for one simulation run. Seeds live in 64-bit space."""
    return random.Random(seed & 0xFFFF_FFFF_FFFF_FFFF)


@dataclass
class SimClock:
    """Monotonic simulated time in seconds; advances only via the queue."""

    now: float = 0.0

    def advance_to(self, t: float) -> None:
        if t < self.now:
            raise ValueError(f"clock would move backwards: {t} < {self.now}")
        self.now = t


@dataclass(frozen=True)
class LatencyModel:
    """One-way delay distribution of a link.

    kind is one of:
      constant  - every sample equals base_delay_s
      jittered  - gaussian around base_delay_s with std jitter_std_s
      preset    - named propagation preset (ldpl or lns) parameterized by
                  distance in meters and WiFi standard, realized as a
                  calibrated jittered distribution

    Samples are clamped to DELAY_FLOOR_S, so they are always positive.
    """

    kind: str
    base_delay_s: float = 0.0
    jitter_std_s: float = 0.0
    preset_name: str | None = None
    distance_m: float = 2.0
    wifi_standard: str = "80211ac"

    @classmethod
    def constant(cls, delay_s: float) -> "LatencyModel":
        return cls(kind="constant", base_delay_s=delay_s)

    @classmethod
    def jittered(cls, base_delay_s: float, jitter_std_s: float) -> "LatencyModel":
        return cls(kind="jittered", base_delay_s=base_delay_s, jitter_std_s=jitter_std_s)

    @classmethod
    def propagation(cls, preset_name: str, distance_m: float,
                    wifi_standard: str) -> "LatencyModel":
        if preset_name not in _PROPAGATION_JITTER_S:
            raise ValueError(f"unknown propagation preset {preset_name!r}")
        if wifi_standard not in _PROPAGATION_HOP_S:
            raise ValueError(f"unknown wifi standard {wifi_standard!r}")
        return cls(kind="preset", preset_name=preset_name,
                   distance_m=distance_m, wifi_standard=wifi_standard)

    def resolved(self) -> tuple[float, float]:
        """(base, jitter_std) seconds after resolving any preset."""
        if self.kind == "preset":
            base = (_PROPAGATION_HOP_S[self.wifi_standard]
                    + _PROPAGATION_DIST_S_PER_M * self.distance_m)
            return base, _PROPAGATION_JITTER_S[self.preset_name]
        return self.base_delay_s, self.jitter_std_s


def sample_delay(model: LatencyModel, rng: random.Random) -> float:
    """Draw one one-way delay. Degenerate parameters clamp to the floor;
    with zero jitter the (sane) base delay is returned exactly."""
    base, jitter = model.resolved()
    if model.kind == "constant" or jitter == 0.0:
        return base if base > DELAY_FLOOR_S else DELAY_FLOOR_S
    d = rng.gauss(base, jitter)
    return d if d > DELAY_FLOOR_S else DELAY_FLOOR_S


def sample_delays(model: LatencyModel, rng: random.Random, n: int) -> list[float]:
    """n independent draws, in RNG order."""
    return [sample_delay(model, rng) for _ in range(n)]


@dataclass(slots=True)
class Frame:
    """A payload in flight between two directly linked nodes."""

    src: str
    dst: str
    payload: bytes
    sent_at: float
    deliver_at: float


@dataclass(slots=True)
class Timer:
    """A deferred callback token delivered to its owning node."""

    node: str
    tag: str
    data: object
    at: float


@dataclass
class Link:
    """Point-to-point connection with its own latency model. Delays are
    sampled per frame, so two frames in flight the same way may reorder;
    anything needing ordering handles it above this layer."""

    a: str
    b: str
    model: LatencyModel
    up: bool = True
    _resolved: tuple = None

    def __post_init__(self):
        self._resolved = self.model.resolved()

    def other(self, node: str) -> str:
        if node == self.a:
            return self.b
        if node == self.b:
            return self.a
        raise ValueError(f"{node} is not an endpoint of {self.a}<->{self.b}")


class Network:
    """Event loop shared by every node of one simulation run.

    Single-threaded by contract: one queue, one clock, one RNG. Events with
    equal times are delivered in insertion (FIFO) order, which makes runs
    reproducible and testable.
    """

    def __init__(self, rng: random.Random, trace: bool = False):
        self.rng = rng
        self.clock = SimClock()
        self.links: list[Link] = []
        self.nodes: dict[str, object] = {}
        self._heap: list[tuple[float, int, object]] = []
        self._seq = 0
        self.trace: list[str] | None = [] if trace else None
        self.events_processed = 0

    # -- topology ---------------------------------------------------------

    def add_node(self, node_id: str, handler: object) -> None:
        if node_id in self.nodes:
            raise ValueError(f"duplicate node id {node_id!r}")
        self.nodes[node_id] = handler

    def add_link(self, a: str, b: str, model: LatencyModel) -> Link:
        link = Link(a, b, model)
        self.links.append(link)
        return link

    # -- scheduling -------------------------------------------------------

    def _push(self, at: float, item: object) -> None:
        heappush(self._heap, (at, self._seq, item))
        self._seq += 1

    def schedule_send(self, link: Link, src: str, payload: bytes,
                      extra_delay: float = 0.0) -> Frame:
        """Enqueue a frame on a link. Delivery happens after the link's
        sampled one-way delay plus any local processing delay."""
        if not link.up:
            raise LinkDown(f"link {link.a}<->{link.b} is down")
        now = self.clock.now
        base, jitter = link._resolved
        if jitter == 0.0:
            delay = base if base > DELAY_FLOOR_S else DELAY_FLOOR_S
        else:
            delay = self.rng.gauss(base, jitter)
            if delay <= DELAY_FLOOR_S:
                delay = DELAY_FLOOR_S
        delay += extra_delay
        frame = Frame(src=src, dst=link.other(src), payload=payload,
                      sent_at=now, deliver_at=now + delay)
        self._push(frame.deliver_at, frame)
        return frame

    def schedule_timer(self, at: float, node: str, tag: str,
                       data: object = None) -> Timer:
        if at < self.clock.now:
            raise ValueError("timer scheduled in the past")
        timer = Timer(node=node, tag=tag, data=data, at=at)
        self._push(at, timer)
        return timer

    # -- execution --------------------------------------------------------

    def pending(self) -> int:
        return len(self._heap)

    def peek_time(self) -> float:
        if not self._heap:
            raise EmptyQueue("no pending events")
        return self._heap[0][0]

    def advance(self):
        """Pop the earliest event (ties: insertion order), move the clock
        to its time, and return it. Raises EmptyQueue when idle."""
        if not self._heap:
            raise EmptyQueue("no pending events")
        at, _, item = heappop(self._heap)
        self.clock.advance_to(at)
        return item

    def step(self):
        """advance() plus dispatch to the destination node, if registered."""
        item = self.advance()
        self.events_processed += 1
        if isinstance(item, Frame):
            if self.trace is not None:
                self.trace.append(
                    f"{item.deliver_at:.9f} frame {item.src}->{item.dst} "
                    f"tag={item.payload[0]:02x} len={len(item.payload)}")
            handler = self.nodes.get(item.dst)
            if handler is not None:
                handler.on_frame(self, item)
        else:
            if self.trace is not None:
                self.trace.append(f"{item.at:.9f} timer {item.node} {item.tag}")
            handler = self.nodes.get(item.node)
            if handler is not None:
                handler.on_timer(self, item)
        return item

    def run(self, until: float | None = None, max_events: int | None = None) -> int:
        """Process events until the queue drains, the next event would pass
        `until`, or `max_events` have been handled. Returns events handled."""
        n = 0
        while self._heap:
            if until is not None and self._heap[0][0] > until:
                break
            if max_events is not None and n >= max_events:
                break
            self.step()
            n += 1
        return n
