"""Centralized DA-link scheduling: BFS-DA-links and Greedy-DA-links.

Both schedulers run on a snapshot at a period boundary.  Ports are "available"
when empty or held by a link whose reservation has ended; links chosen earlier
in the same round take their ports immediately.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .debruijn import DA, DaLink, HybridTopology, PortConflictError, distance_matrix
from .forwarding import DOWN_EVENT, UP_EVENT, TableCache, route_hops

DECISION_FIELDS = (
    "round",
    "demand_src",
    "demand_dst",
    "volume",
    "action",
    "sender",
    "receiver",
    "switch",
    "reason",
)


@dataclass(frozen=True)
class SchedulerTiming:
    period: float = 1.0
    delay: float = 0.0
    reservation: float = 0.0

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"period must be > 0, got {self.period}")
        if self.delay < 0 or self.reservation < 0:
            raise ValueError("delay and reservation must be >= 0")


@dataclass
class Decision:
    round: int
    demand_src: int
    demand_dst: int
    volume: float
    action: str
    sender: int | None = None
    receiver: int | None = None
    switch: int | None = None
    reason: str = ""

    def row(self, label=str) -> list:
        def fmt(v):
            return "" if v is None else label(v)

        return [
            self.round,
            label(self.demand_src),
            label(self.demand_dst),
            repr(float(self.volume)),
            self.action,
            fmt(self.sender),
            fmt(self.receiver),
            "" if self.switch is None else self.switch,
            self.reason,
        ]


class LinkEvent(NamedTuple):
    time: float
    kind: str
    link: DaLink


@dataclass
class ScheduleResult:
    events: list[LinkEvent] = field(default_factory=list)
    set_links: list[DaLink] = field(default_factory=list)
    kept: list[DaLink] = field(default_factory=list)
    dropped: list[tuple[int, int, int]] = field(default_factory=list)


def validate_demand(demand, n: int) -> np.ndarray:
    D = np.asarray(demand, dtype=float)
    if D.shape != (n, n):
        raise ValueError(f"demand matrix must be {n}x{n}, got {D.shape}")
    if not np.isfinite(D).all() or (D < 0).any():
        raise ValueError("demand matrix needs finite non-negative entries")
    if np.diagonal(D).any():
        raise ValueError("demand matrix diagonal must be zero")
    return D


def top_demands(demand: np.ndarray, limit: int) -> list[tuple[int, int, float]]:
    """Positive demands by decreasing volume; ties by (source, destination)."""
    src, dst = np.nonzero(demand > 0)
    vol = demand[src, dst]
    order = np.lexsort((dst, src, -vol))[:limit]
    return [(int(src[k]), int(dst[k]), float(vol[k])) for k in order]


class PortBook:
    """Working copy of DA port occupancy during one scheduling round."""

    def __init__(self, topology: HybridTopology, now: float, k_d: int):
        self.k_d = k_d
        self.out_taken = [set() for _ in range(k_d)]
        self.in_taken = [set() for _ in range(k_d)]
        for link in topology.da_links():
            if link.switch < k_d and not link.replaceable(now):
                self.take(link.sender, link.receiver, link.switch)

    def take(self, sender: int, receiver: int, switch: int) -> None:
        self.out_taken[switch].add(sender)
        self.in_taken[switch].add(receiver)

    def out_free(self, v: int) -> list[int]:
        return [i for i in range(self.k_d) if v not in self.out_taken[i]]

    def in_free(self, v: int, switches) -> list[int]:
        return [i for i in switches if v not in self.in_taken[i]]


def _k_d(topology: HybridTopology, k_d: int | None) -> int:
    if k_d is None:
        return topology.k_d
    if not 0 <= k_d <= topology.k_d:
        raise ValueError(f"k_d={k_d} exceeds the topology's {topology.k_d} DA switches")
    return k_d


def static_next_hop(v: int, t: int, b: int, d: int) -> int:
    """Next node on the static shift path from v toward t (v != t)."""
    dist = distance_matrix(b, d)[v, t]
    return (v * b) % b**d + (t // b ** (dist - 1)) % b


def hybrid_distance(topology: HybridTopology, s, t, flow_key=0, tables: TableCache | None = None) -> int:
    """Length of the greedy route on the current topology (up links only)."""
    if tables is None:
        tables = TableCache(topology)
    return len(route_hops(tables, topology.node(s), topology.node(t), flow_key))


def forward_bruijn(topology: HybridTopology, book: PortBook, s: int, t: int):
    """First node on the static path s -> t with a free DA output, and its free switches."""
    v = s
    while v != t:
        switches = book.out_free(v)
        if switches:
            return v, switches
        v = static_next_hop(v, t, topology.b, topology.d)
    return None


def backward_bruijn_bfs(topology: HybridTopology, book: PortBook, s: int, t: int, switches, x: int):
    """Node nearest to t (by static distance) with a free DA input in ``switches``.

    Levels are scanned outward from t and stop before s's own level.  Nodes
    equal to x, static successors of x, or already DA-linked from x are skipped.
    """
    dist = distance_matrix(topology.b, topology.d)
    column = dist[:, t]
    successors = {topology.static_successor(x, i) for i in range(topology.b)}
    level = 0
    queue = [t]
    while s not in queue:
        for z in queue:
            if z == x or z in successors or topology.find_da_link(x, z) is not None:
                continue
            free = book.in_free(z, switches)
            if free:
                return z, free[0]
        level += 1
        if level > topology.d:
            break
        queue = [int(z) for z in np.nonzero(column == level)[0]]
    return None


def _retain_route_links(topology, book, tables, s, t, flow_key) -> list[DaLink]:
    kept = []
    for v, port, _ in route_hops(tables, s, t, flow_key):
        if port.kind == DA:
            link = topology.out_link(v, port.index)
            book.take(link.sender, link.receiver, link.switch)
            kept.append(link)
    return kept


def bfs_da_links(
    topology: HybridTopology,
    demand,
    k_d: int | None = None,
    now: float = 0.0,
    tables: TableCache | None = None,
    log: list | None = None,
    round_no: int = 0,
    flow_key=0,
) -> list[tuple[int, int, int]]:
    """BFS-DA-links: shortcut each top demand where it shortens the greedy path.

    DA links already on a demand's current route are kept (their ports are
    withheld from later demands this round).
    """
    k_d = _k_d(topology, k_d)
    D = validate_demand(demand, topology.n)
    if tables is None:
        tables = TableCache(topology)
    dist = distance_matrix(topology.b, topology.d)
    book = PortBook(topology, now, k_d)
    links = []
    for s, t, vol in top_demands(D, k_d * topology.n):
        current = hybrid_distance(topology, s, t, flow_key, tables)
        _retain_route_links(topology, book, tables, s, t, flow_key)
        decision = Decision(round_no, s, t, vol, "skip")
        found = forward_bruijn(topology, book, s, t)
        if found is None:
            decision.reason = "no-free-output"
        else:
            x, switches = found
            back = backward_bruijn_bfs(topology, book, s, t, switches, x)
            if back is None:
                decision.reason = "no-free-input"
            else:
                y, i = back
                decision.sender, decision.receiver, decision.switch = x, y, i
                if dist[s, x] + dist[y, t] + 1 <= current:
                    book.take(x, y, i)
                    links.append((x, y, i))
                    decision.action = "set"
                    decision.reason = f"{dist[s, x] + dist[y, t] + 1}<={current}"
                else:
                    decision.reason = f"no-gain:{dist[s, x] + dist[y, t] + 1}>{current}"
        if log is not None:
            log.append(decision)
    return links


def greedy_da_links(
    topology: HybridTopology,
    demand,
    k_d: int | None = None,
    now: float = 0.0,
    log: list | None = None,
    round_no: int = 0,
) -> list[tuple[int, int, int]]:
    """Greedy-DA-links: direct s -> t link on the lowest common free switch."""
    k_d = _k_d(topology, k_d)
    D = validate_demand(demand, topology.n)
    book = PortBook(topology, now, k_d)
    links = []
    for s, t, vol in top_demands(D, k_d * topology.n):
        decision = Decision(round_no, s, t, vol, "skip", s, t)
        existing = topology.find_da_link(s, t)
        if existing is not None and existing.switch < k_d:
            book.take(s, t, existing.switch)
            decision.switch = existing.switch
            decision.reason = "already-linked"
        else:
            common = book.in_free(t, book.out_free(s))
            if common:
                i = common[0]
                book.take(s, t, i)
                links.append((s, t, i))
                decision.action = "set"
                decision.switch = i
                decision.reason = "free"
            else:
                decision.reason = "no-common-switch"
        if log is not None:
            log.append(decision)
    return links


def apply_schedule(
    topology: HybridTopology, links, timing: SchedulerTiming, now: float
) -> ScheduleResult:
    """Install chosen links.

    Displaced links go down at ``now``; new links come up at ``now + delay``
    (the returned up events are pending: call ``topology.activate`` at their
    time).  Identical existing links are left alone; links whose ports were
    taken since the decision are dropped.
    """
    result = ScheduleResult()
    for sender, receiver, switch in links:
        existing = topology.out_link(sender, switch)
        if existing is not None and existing.receiver == receiver:
            result.kept.append(existing)
            continue
        try:
            link, displaced = topology.set_da_link(
                sender,
                receiver,
                switch,
                now=now,
                delay=timing.delay,
                reservation=timing.reservation,
                displace=True,
            )
        except PortConflictError:
            result.dropped.append((sender, receiver, switch))
            continue
        for old in displaced:
            result.events.append(LinkEvent(now, DOWN_EVENT, old))
        result.events.append(LinkEvent(link.up_at, UP_EVENT, link))
        result.set_links.append(link)
    return result
