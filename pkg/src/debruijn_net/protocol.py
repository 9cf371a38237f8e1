"""Receiver-driven distributed DA-link scheduling.

A destination that sees an elephant source offers its free DA input ports
(PortRequest); the source picks one of them it can also serve, tunes its
laser and answers PortApprove, or answers DeclineRequest.

Safety under loss and delay rests on one shared deadline per exchange,
``request.send_time + timeout``, known to both ends:

* the destination holds the offered ports tentatively until the deadline
  and rejects any approve that arrives later;
* the source tears its new link down at the deadline unless the destination
  has confirmed it (the receiver locking onto the circuit).

A link only goes up once it is confirmed, so no up link is ever half-open.
"""
from __future__ import annotations

import random
import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .debruijn import DaLink, HybridTopology
from .events import EventKind, EventQueue
from .forwarding import DOWN_EVENT, UP_EVENT, TableCache, route_hops
from .scheduling import SchedulerTiming

PORT_REQUEST = "PortRequest"
PORT_APPROVE = "PortApprove"
DECLINE = "DeclineRequest"

TRACE_FIELDS = ("time", "from", "to", "kind", "ports", "outcome")


@dataclass(frozen=True)
class ProtocolParams:
    theta_bytes: float = 1e5
    window: float = 1.0
    request_timeout: float | None = None
    msg_drop_prob: float = 0.0
    per_hop_latency: float = 1e-3
    detector: str = "exact"

    def __post_init__(self):
        if self.theta_bytes <= 0 or self.window <= 0:
            raise ValueError("elephant threshold and window must be > 0")
        if not 0 <= self.msg_drop_prob < 1:
            raise ValueError(f"drop probability {self.msg_drop_prob} outside [0, 1)")
        if self.per_hop_latency <= 0:
            raise ValueError("per-hop latency must be > 0")
        if self.request_timeout is not None and self.request_timeout <= 0:
            raise ValueError("request timeout must be > 0")
        if self.detector not in ("exact", "sketch"):
            raise ValueError(f"unknown detector {self.detector!r}")

    def timeout(self, d: int) -> float:
        if self.request_timeout is not None:
            return self.request_timeout
        # round trip over at most d hops each way, plus d hops of slack
        return 3 * d * self.per_hop_latency


class ElephantDetector:
    """Exact per-(destination, source) byte counts over a sliding window."""

    def __init__(self, window: float, theta: float):
        self.window = window
        self.theta = theta
        self._samples: dict[int, dict[int, deque]] = {}
        self._totals: dict[int, dict[int, float]] = {}

    def record(self, dst: int, src: int, time: float, nbytes: float) -> None:
        if nbytes <= 0:
            return
        self._samples.setdefault(dst, {}).setdefault(src, deque()).append((time, nbytes))
        totals = self._totals.setdefault(dst, {})
        totals[src] = totals.get(src, 0.0) + nbytes

    def _evict(self, dst: int, now: float) -> None:
        horizon = now - self.window
        samples = self._samples.get(dst, {})
        totals = self._totals.get(dst, {})
        for src in list(samples):
            q = samples[src]
            while q and q[0][0] <= horizon:
                totals[src] -= q.popleft()[1]
            if not q:
                del samples[src]
                del totals[src]

    def count(self, dst: int, src: int, now: float) -> float:
        self._evict(dst, now)
        return max(0.0, self._totals.get(dst, {}).get(src, 0.0))

    def elephants(self, dst: int, now: float) -> list[int]:
        self._evict(dst, now)
        totals = self._totals.get(dst, {})
        heavy = [(-c, s) for s, c in totals.items() if c >= self.theta]
        return [s for _, s in sorted(heavy)]

    def destinations(self) -> list[int]:
        return sorted(self._samples)


class CountMinDetector:
    """Count-min sketch per destination, bucketed into sub-windows.

    Estimates never undercount, so every true elephant is reported.
    """

    def __init__(self, window: float, theta: float, width: int = 64, depth: int = 3, buckets: int = 4):
        self.window = window
        self.theta = theta
        self.width = width
        self.depth = depth
        self.buckets = buckets
        self._span = window / buckets
        self._sketch: dict[int, dict[int, np.ndarray]] = {}
        self._seen: dict[int, dict[int, set]] = {}

    def _cols(self, src: int) -> list[int]:
        return [zlib.crc32(f"{row}:{src}".encode()) % self.width for row in range(self.depth)]

    def _live(self, now: float) -> int:
        return int(now // self._span) - self.buckets

    def record(self, dst: int, src: int, time: float, nbytes: float) -> None:
        if nbytes <= 0:
            return
        epoch = int(time // self._span)
        grid = self._sketch.setdefault(dst, {}).get(epoch)
        if grid is None:
            grid = self._sketch[dst][epoch] = np.zeros((self.depth, self.width))
        for row, col in enumerate(self._cols(src)):
            grid[row, col] += nbytes
        self._seen.setdefault(dst, {}).setdefault(epoch, set()).add(src)

    def _prune(self, dst: int, now: float) -> None:
        oldest = self._live(now)
        for table in (self._sketch.get(dst, {}), self._seen.get(dst, {})):
            for epoch in [e for e in table if e <= oldest]:
                del table[epoch]

    def count(self, dst: int, src: int, now: float) -> float:
        self._prune(dst, now)
        grids = list(self._sketch.get(dst, {}).values())
        if not grids:
            return 0.0
        total = sum(grids)
        return float(min(total[row, col] for row, col in enumerate(self._cols(src))))

    def elephants(self, dst: int, now: float) -> list[int]:
        self._prune(dst, now)
        candidates = set().union(*self._seen.get(dst, {}).values()) if self._seen.get(dst) else set()
        heavy = [(-c, s) for s in candidates if (c := self.count(dst, s, now)) >= self.theta]
        return [s for _, s in sorted(heavy)]

    def destinations(self) -> list[int]:
        return sorted(d for d, seen in self._seen.items() if seen)


def make_detector(params: ProtocolParams):
    if params.detector == "sketch":
        return CountMinDetector(params.window, params.theta_bytes)
    return ElephantDetector(params.window, params.theta_bytes)


@dataclass(frozen=True)
class ProtocolMessage:
    kind: str
    src: int
    dst: int
    send_time: float
    exchange: int
    ports: tuple[int, ...] = ()
    switch: int | None = None

    def __post_init__(self):
        if self.kind == PORT_REQUEST and not self.ports:
            raise ValueError("PortRequest must offer at least one port")
        if self.kind == PORT_APPROVE and self.switch is None:
            raise ValueError("PortApprove must name a switch")
        if self.kind not in (PORT_REQUEST, PORT_APPROVE, DECLINE):
            raise ValueError(f"unknown message kind {self.kind!r}")


@dataclass
class Commitment:
    peer: int
    until: float
    link: DaLink


@dataclass
class Tentative:
    peer: int
    expiry: float
    exchange: int


@dataclass
class PortSlot:
    committed: Commitment | None = None
    tentative: Tentative | None = None

    def offerable(self, now: float) -> bool:
        if self.tentative is not None:
            return False
        c = self.committed
        # a link still being set up is never up for grabs, whatever r is
        return c is None or (c.until <= now and c.link.is_up)


class PortReservationState:
    """One ToR's view of its DA ports, input and output side per switch."""

    def __init__(self, k_d: int):
        self.inputs = [PortSlot() for _ in range(k_d)]
        self.outputs = [PortSlot() for _ in range(k_d)]

    def free_inputs(self, now: float) -> list[int]:
        return [i for i, slot in enumerate(self.inputs) if slot.offerable(now)]

    def free_outputs(self, now: float, among=None) -> list[int]:
        candidates = range(len(self.outputs)) if among is None else among
        return [i for i in candidates if 0 <= i < len(self.outputs) and self.outputs[i].offerable(now)]


@dataclass
class Exchange:
    id: int
    receiver: int
    sender: int
    ports: tuple[int, ...]
    send_time: float
    expiry: float
    state: str = "pending"
    link: DaLink | None = field(default=None, repr=False)


class DistributedScheduler:
    """Per-ToR protocol state machines driven by an :class:`EventQueue`.

    The owner of the queue forwards MESSAGE_DELIVERY and RESERVATION_EXPIRY
    events to :meth:`handle` and activates links on LINK_UP events.
    ``on_link_event(kind, link, now)`` reports links going up or down.
    """

    def __init__(
        self,
        topology: HybridTopology,
        timing: SchedulerTiming,
        params: ProtocolParams,
        queue: EventQueue,
        hops=None,
        rng: random.Random | None = None,
        delay_fn=None,
        on_link_event=None,
        trace: list | None = None,
    ):
        self.topology = topology
        self.timing = timing
        self.params = params
        self.queue = queue
        self.timeout = params.timeout(topology.d)
        self.rng = rng if rng is not None else random.Random(0)
        self.delay_fn = delay_fn
        self.on_link_event = on_link_event
        self.trace = trace
        if hops is None:
            tables = TableCache(topology)
            self._own_tables = tables
            hops = lambda a, b: len(route_hops(tables, a, b))  # noqa: E731
        else:
            self._own_tables = None
        self.hops = hops
        self.states = [PortReservationState(topology.k_d) for _ in range(topology.n)]
        self.exchanges: dict[int, Exchange] = {}
        self.pending: dict[tuple[int, int], int] = {}
        self._next_id = 0
        self.links_set = 0
        self.messages_sent = 0
        self.messages_dropped = 0

    # -- plumbing -----------------------------------------------------------

    def _log(self, now, msg: ProtocolMessage, outcome: str) -> None:
        if self.trace is not None:
            ports = " ".join(str(p) for p in msg.ports) if msg.ports else (
                "" if msg.switch is None else str(msg.switch)
            )
            self.trace.append((now, msg.src, msg.dst, msg.kind, ports, outcome))

    def _send(self, msg: ProtocolMessage, now: float) -> None:
        self.messages_sent += 1
        if self.params.msg_drop_prob and self.rng.random() < self.params.msg_drop_prob:
            self.messages_dropped += 1
            self._log(now, msg, "dropped")
            return
        hops = self.hops(msg.src, msg.dst)
        if self.delay_fn is not None:
            delay = self.delay_fn(msg, hops)
        else:
            delay = hops * self.params.per_hop_latency
        if not delay > 0:
            raise ValueError(f"message delay must be positive, got {delay}")
        self.queue.push(now + delay, EventKind.MESSAGE_DELIVERY, msg, tiebreak=msg.src)
        self._log(now, msg, "sent")

    def _notify(self, kind: str, link: DaLink, now: float) -> None:
        if self._own_tables is not None:
            self._own_tables.apply(kind, link)
        if self.on_link_event is not None:
            self.on_link_event(kind, link, now)

    def _link_lost(self, link: DaLink, now: float) -> None:
        """Both endpoints observe loss of light and drop their commitment."""
        out = self.states[link.sender].outputs[link.switch]
        if out.committed is not None and out.committed.link is link:
            out.committed = None
        inp = self.states[link.receiver].inputs[link.switch]
        if inp.committed is not None and inp.committed.link is link:
            inp.committed = None
        was_up = link.is_up
        link.state = DOWN_EVENT
        if was_up:
            self._notify(DOWN_EVENT, link, now)

    def _teardown(self, link: DaLink, now: float) -> None:
        if self.topology.teardown(link):
            self._link_lost(link, now)

    def _release(self, ex: Exchange, keep: int | None = None) -> None:
        slots = self.states[ex.receiver].inputs
        for i in ex.ports:
            slot = slots[i]
            if i != keep and slot.tentative is not None and slot.tentative.exchange == ex.id:
                slot.tentative = None

    def _close(self, ex: Exchange, state: str) -> None:
        ex.state = state
        if self.pending.get((ex.receiver, ex.sender)) == ex.id:
            del self.pending[(ex.receiver, ex.sender)]

    # -- protocol -----------------------------------------------------------

    def has_link(self, s: int, t: int) -> bool:
        for i in range(self.topology.k_d):
            link = self.topology.in_link(t, i)
            if link is not None and link.sender == s:
                return True
        return False

    def on_elephant_detected(self, t: int, s: int, now: float) -> ProtocolMessage | None:
        """Destination t offers its free DA input ports to elephant source s."""
        if s == t or self.has_link(s, t) or (t, s) in self.pending:
            return None
        ports = tuple(self.states[t].free_inputs(now))
        if not ports:
            return None
        ex = Exchange(self._next_id, t, s, ports, now, now + self.timeout)
        self._next_id += 1
        self.exchanges[ex.id] = ex
        self.pending[(t, s)] = ex.id
        for i in ports:
            self.states[t].inputs[i].tentative = Tentative(s, ex.expiry, ex.id)
        msg = ProtocolMessage(PORT_REQUEST, t, s, now, ex.id, ports=ports)
        self.queue.push(ex.expiry, EventKind.RESERVATION_EXPIRY, ex.id, tiebreak=t)
        self._send(msg, now)
        return msg

    def on_port_request(self, msg: ProtocolMessage, now: float) -> ProtocolMessage:
        """Source side: approve the lowest offered port it can serve, else decline."""
        s, t = msg.dst, msg.src
        deadline = msg.send_time + self.timeout
        free = self.states[s].free_outputs(now, msg.ports)
        linked = any(
            (l := self.topology.out_link(s, i)) is not None and l.receiver == t
            for i in range(self.topology.k_d)
        )
        if now >= deadline or not free or linked:
            reply = ProtocolMessage(DECLINE, s, t, now, msg.exchange)
            self._log(now, msg, "declined")
            self._send(reply, now)
            return reply
        i = free[0]
        link, displaced = self.topology.set_da_link(
            s,
            t,
            i,
            now=now,
            delay=self.timing.delay,
            reservation=self.timing.reservation,
            displace=True,
            confirmed=False,
        )
        for old in displaced:
            self._link_lost(old, now)
        self.states[s].outputs[i].committed = Commitment(t, link.reserved_until, link)
        ex = self.exchanges.get(msg.exchange)
        if ex is not None:
            ex.link = link
        self.links_set += 1
        self.queue.push(link.up_at, EventKind.LINK_UP, link, tiebreak=s)
        reply = ProtocolMessage(PORT_APPROVE, s, t, now, msg.exchange, switch=i)
        self._log(now, msg, f"approved:{i}")
        self._send(reply, now)
        return reply

    def on_reply(self, msg: ProtocolMessage, now: float) -> None:
        """Destination side: handle PortApprove / DeclineRequest for an exchange."""
        t, s = msg.dst, msg.src
        ex = self.exchanges.get(msg.exchange)
        live = ex is not None and ex.state == "pending" and now < ex.expiry
        if msg.kind == DECLINE:
            if live:
                self._release(ex)
                self._close(ex, "declined")
            self._log(now, msg, "released")
            return
        i = msg.switch
        slot = self.states[t].inputs[i] if 0 <= i < self.topology.k_d else None
        link = self.topology.in_link(t, i) if slot is not None else None
        valid = (
            live
            and i in ex.ports
            and slot.tentative is not None
            and slot.tentative.exchange == ex.id
            and link is not None
            and link.sender == s
        )
        if not valid:
            # late or unexpected approve: tell the source to drop its side
            self._log(now, msg, "rejected")
            self._send(ProtocolMessage(DECLINE, t, s, now, msg.exchange), now)
            return
        slot.tentative = None
        slot.committed = Commitment(s, msg.send_time + self.timing.delay + self.timing.reservation, link)
        self._release(ex, keep=i)
        self._close(ex, "approved")
        link.confirmed = True
        if self.topology.activate(link, now):
            self._notify(UP_EVENT, link, now)
        self._log(now, msg, f"committed:{i}")

    def on_teardown_notice(self, msg: ProtocolMessage, now: float) -> None:
        ex = self.exchanges.get(msg.exchange)
        link = ex.link if ex is not None else None
        if link is not None and not link.confirmed and self.topology.contains(link):
            self._teardown(link, now)
            self._log(now, msg, "torn-down")
        else:
            self._log(now, msg, "ignored")

    def expire_reservations(self, now: float) -> list[tuple[int, str, int]]:
        """Close every exchange whose deadline has passed.

        Returns the committed ports that are past reservation (replaceable):
        their links stay up until a new commitment claims the port.
        """
        for ex_id in [e.id for e in self.exchanges.values() if e.expiry <= now]:
            self._deadline(ex_id, now)
        replaceable = []
        for v, state in enumerate(self.states):
            for side, slots in (("in", state.inputs), ("out", state.outputs)):
                for i, slot in enumerate(slots):
                    if slot.committed is not None and slot.committed.until <= now:
                        replaceable.append((v, side, i))
        return replaceable

    def _deadline(self, ex_id: int, now: float) -> None:
        # Both ends know the deadline: the destination drops its tentative
        # ports, the source drops a link the destination never confirmed.
        ex = self.exchanges.pop(ex_id, None)
        if ex is None:
            return
        if ex.state == "pending":
            self._release(ex)
            self._close(ex, "expired")
        link = ex.link
        if link is not None and not link.confirmed and self.topology.contains(link):
            self._teardown(link, now)

    def handle(self, event) -> bool:
        """Process a queue event addressed to the protocol; False if not ours."""
        now = event.time
        if event.kind == EventKind.MESSAGE_DELIVERY:
            msg = event.payload
            if msg.kind == PORT_REQUEST:
                self.on_port_request(msg, now)
            elif msg.kind == PORT_APPROVE:
                self.on_reply(msg, now)
            else:
                ex = self.exchanges.get(msg.exchange)
                if ex is not None and msg.dst == ex.sender:
                    self.on_teardown_notice(msg, now)
                else:
                    self.on_reply(msg, now)
            return True
        if event.kind == EventKind.RESERVATION_EXPIRY:
            self._deadline(event.payload, now)
            return True
        return False

    def activate(self, link: DaLink, now: float) -> bool:
        if self.topology.activate(link, now):
            self._notify(UP_EVENT, link, now)
            return True
        return False

    def poll(self, detector, now: float) -> list[ProtocolMessage]:
        """Run elephant detection at every destination and send requests."""
        sent = []
        for t in detector.destinations():
            for s in detector.elephants(t, now):
                msg = self.on_elephant_detected(t, s, now)
                if msg is not None:
                    sent.append(msg)
        return sent

    # -- checks -------------------------------------------------------------

    def check_invariants(self, now: float) -> list[str]:
        problems = list(self.topology.check_matching())
        links = {id(l): l for l in self.topology.da_links()}
        for link in links.values():
            out = self.states[link.sender].outputs[link.switch].committed
            if out is None or out.link is not link:
                problems.append(f"link {link.key} without source commitment")
            if link.is_up:
                inp = self.states[link.receiver].inputs[link.switch].committed
                if inp is None or inp.link is not link:
                    problems.append(f"up link {link.key} without receiver commitment")
                if not link.confirmed:
                    problems.append(f"up link {link.key} unconfirmed")
        for v, state in enumerate(self.states):
            for side, slots in (("in", state.inputs), ("out", state.outputs)):
                for i, slot in enumerate(slots):
                    c = slot.committed
                    if c is not None and id(c.link) not in links:
                        problems.append(f"node {v} {side}[{i}] committed to a missing link")
                    t = slot.tentative
                    if t is not None and t.expiry < now:
                        problems.append(f"node {v} in[{i}] tentative past expiry")
        return problems
