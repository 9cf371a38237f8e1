"""Flow-level discrete-event simulation of a hybrid de Bruijn network.

Flows are fluids: between events every active flow moves at its max-min fair
rate over the directed links of its current greedy route.  A link is a
``(node, Port)`` pair: a static output port or a DA switch output port.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .debruijn import DA, DaLink, HybridTopology, Port, STATIC
from .events import EventKind, EventQueue
from .forwarding import DOWN_EVENT, UP_EVENT, TableCache, route_hops
from .protocol import DistributedScheduler, make_detector
from .scheduling import Decision, apply_schedule, bfs_da_links, greedy_da_links
from .workload import FlowEvent, load_workload

RATE_TOL = 1e-9
HIST_EDGES = tuple(round(0.1 * k, 1) for k in range(11))


class UnroutableFlowError(RuntimeError):
    pass


@dataclass(eq=False)
class Flow:
    id: int
    src: int
    dst: int
    size: float
    arrival: float
    residual: float = 0.0
    path: list = field(default_factory=list)
    links: list = field(default_factory=list)
    rate: float = 0.0
    completion: float | None = None
    first_path_len: int = 0
    hop_bytes: float = 0.0

    @property
    def delivered(self) -> float:
        return self.size - self.residual


def allocate_rates(paths, capacity: float = 1.0) -> np.ndarray:
    """Max-min fair rates by progressive filling.

    ``paths`` is a list of link-key sequences, one per flow.  Every link has
    the same ``capacity``.  Flows with an empty path get rate 0.
    """
    m = len(paths)
    rates = np.zeros(m)
    if m == 0:
        return rates
    index: dict = {}
    rows, cols = [], []
    for f, links in enumerate(paths):
        for key in links:
            rows.append(f)
            cols.append(index.setdefault(key, len(index)))
    if not index:
        return rates
    incidence = np.zeros((m, len(index)), dtype=bool)
    incidence[rows, cols] = True
    remaining = np.full(len(index), float(capacity))
    active = incidence.any(axis=1)
    while active.any():
        count = incidence[active].sum(axis=0)
        used = count > 0
        share = np.full(len(index), np.inf)
        share[used] = remaining[used] / count[used]
        inc = share.min()
        rates[active] += inc
        remaining[used] -= inc * count[used]
        # saturated links: the ones that set the share, up to rounding
        tight = used & (share <= inc * (1 + 1e-12))
        remaining[tight] = 0.0
        frozen = incidence[:, tight].any(axis=1)
        active &= ~frozen
    return rates


@dataclass
class MetricsReport:
    summary: dict
    flows: list[Flow]
    decisions: list[Decision] = field(default_factory=list)
    protocol_trace: list = field(default_factory=list)


def _percentile(values, q):
    return float(np.percentile(values, q)) if len(values) else 0.0


class Simulation:
    """One run.  ``observer(sim, now)`` is called after each event instant."""

    def __init__(self, config: ExperimentConfig, workload: list[FlowEvent], observer=None):
        self.config = config
        self.topology = HybridTopology(config.k_s, config.d, config.k_d)
        self.tables = TableCache(self.topology)
        self.queue = EventQueue()
        self.capacity = config.capacity
        self.observer = observer
        self.now = 0.0
        self.active: dict[int, Flow] = {}
        self.flows: list[Flow] = []
        self.decisions: list[Decision] = []
        self.trace: list = []
        self.link_bytes: dict = {}
        self.reconfigurations = 0
        self.events_processed = 0
        self.round = 0
        self._dirty = False
        self._pair_bytes: dict[tuple[int, int], float] = {}
        n = self.topology.n
        prev = -math.inf
        for k, f in enumerate(workload):
            if not (0 <= f.src < n and 0 <= f.dst < n) or f.src == f.dst:
                raise ValueError(f"flow {k}: bad endpoints {f.src}->{f.dst} for n={n}")
            if not f.size > 0 or f.arrival < prev:
                raise ValueError(f"flow {k}: sizes must be > 0 and arrivals sorted")
            prev = f.arrival
            flow = Flow(k, f.src, f.dst, float(f.size), float(f.arrival), residual=float(f.size))
            self.flows.append(flow)
            self.queue.push(flow.arrival, EventKind.FLOW_ARRIVAL, flow, tiebreak=k)
        self.pending_arrivals = len(self.flows)
        self.distributed = None
        self.detector = None
        if config.scheduler == "distributed":
            self.detector = make_detector(config.protocol)
            self.distributed = DistributedScheduler(
                self.topology,
                config.timing,
                config.protocol,
                self.queue,
                hops=lambda a, b: len(route_hops(self.tables, a, b)),
                rng=random.Random(config.seed),
                on_link_event=self._on_link_event,
                trace=self.trace if config.protocol_trace else None,
            )
        if config.scheduler != "none" and self.flows:
            self.queue.push(0.0, EventKind.PERIOD_TICK)

    # -- routing ------------------------------------------------------------

    def _route(self, flow: Flow) -> None:
        try:
            hops = route_hops(self.tables, flow.src, flow.dst, flow.id)
        except (LookupError, RuntimeError) as exc:
            raise UnroutableFlowError(f"flow {flow.id}: {exc}") from None
        flow.path = [flow.src] + [w for _, _, w in hops]
        flow.links = [(v, port) for v, port, _ in hops]

    def _on_link_event(self, kind: str, link: DaLink, now: float) -> None:
        self.tables.apply(kind, link)
        self._dirty = True

    def _reroute_all(self) -> None:
        for flow in self.active.values():
            self._route(flow)

    # -- fluid model --------------------------------------------------------

    def _reallocate(self) -> None:
        flows = list(self.active.values())
        rates = allocate_rates([f.links for f in flows], self.capacity)
        for f, r in zip(flows, rates):
            f.rate = float(r)

    def _finish_times(self) -> dict[int, float]:
        return {
            fid: self.now + f.residual / f.rate for fid, f in self.active.items() if f.rate > 0
        }

    def _advance(self, t: float) -> None:
        dt = t - self.now
        if dt < 0:
            raise RuntimeError(f"time went backwards: {self.now} -> {t}")
        if dt > 0:
            for f in self.active.values():
                self._move(f, min(f.residual, f.rate * dt))
        self.now = t

    def _move(self, f: Flow, moved: float) -> None:
        if moved <= 0:
            return
        f.residual -= moved
        f.hop_bytes += moved * len(f.links)
        for key in f.links:
            self.link_bytes[key] = self.link_bytes.get(key, 0.0) + moved
        if self.detector is not None:
            pair = (f.dst, f.src)
            self._pair_bytes[pair] = self._pair_bytes.get(pair, 0.0) + moved

    def _complete(self, t: float, finishing) -> bool:
        """Retire the flows whose finish time (at the old rates) is t."""
        done = [
            f
            for f in self.active.values()
            if f.id in finishing or f.residual <= f.size * 1e-12
        ]
        for f in done:
            self._move(f, f.residual)
            f.residual = 0.0
            f.rate = 0.0
            f.completion = t
            del self.active[f.id]
        return bool(done)

    # -- schedulers ---------------------------------------------------------

    def _flush_detector(self) -> None:
        for (dst, src), nbytes in sorted(self._pair_bytes.items()):
            self.detector.record(dst, src, self.now, nbytes)
        self._pair_bytes.clear()

    def _demand(self) -> np.ndarray:
        n = self.topology.n
        D = np.zeros((n, n))
        for f in self.active.values():
            D[f.src, f.dst] += f.residual
        return D

    def _tick(self) -> None:
        cfg = self.config
        if cfg.scheduler in ("bfs", "greedy"):
            D = self._demand()
            log = self.decisions if cfg.decisions_csv else None
            if cfg.scheduler == "bfs":
                links = bfs_da_links(
                    self.topology, D, now=self.now, tables=self.tables, log=log, round_no=self.round
                )
            else:
                links = greedy_da_links(self.topology, D, now=self.now, log=log, round_no=self.round)
            result = apply_schedule(self.topology, links, cfg.timing, self.now)
            for ev in result.events:
                if ev.kind == DOWN_EVENT:
                    was_up = ev.link.is_up
                    ev.link.state = DOWN_EVENT
                    if was_up:
                        self._on_link_event(DOWN_EVENT, ev.link, self.now)
                else:
                    self.queue.push(ev.time, EventKind.LINK_UP, ev.link, tiebreak=ev.link.sender)
            self.reconfigurations += len(result.set_links)
        elif cfg.scheduler == "distributed":
            self._flush_detector()
            self.distributed.expire_reservations(self.now)
            self.distributed.poll(self.detector, self.now)
        self.round += 1
        if self.active or self.pending_arrivals:
            self.queue.push(self.now + cfg.timing.period, EventKind.PERIOD_TICK)

    # -- main loop ----------------------------------------------------------

    def _dispatch(self, event) -> None:
        kind = event.kind
        if kind == EventKind.FLOW_ARRIVAL:
            flow = event.payload
            self.pending_arrivals -= 1
            self._route(flow)
            flow.first_path_len = len(flow.links)
            self.active[flow.id] = flow
        elif kind == EventKind.PERIOD_TICK:
            self._tick()
        elif kind == EventKind.LINK_UP:
            if self.distributed is not None:
                self.distributed.activate(event.payload, event.time)
            elif self.topology.activate(event.payload, event.time):
                self._on_link_event(UP_EVENT, event.payload, event.time)
        elif kind in (EventKind.MESSAGE_DELIVERY, EventKind.RESERVATION_EXPIRY):
            self.distributed.handle(event)
        else:
            raise RuntimeError(f"unexpected event {kind!r}")
        self.events_processed += 1

    def run(self) -> MetricsReport:
        max_time = self.config.max_time
        while True:
            t_event = self.queue.peek_time()
            finish = self._finish_times()
            t_done = min(finish.values(), default=math.inf)
            t = min(t_event, t_done)
            if t == math.inf:
                break
            if t > max_time:
                self._advance(max_time)
                break
            self._advance(t)
            changed = False
            while self.queue and self.queue.peek_time() <= t:
                self._dispatch(self.queue.pop())
                changed = True
            if self._complete(t, {fid for fid, ft in finish.items() if ft <= t}):
                changed = True
            if self._dirty:
                self._reroute_all()
                self._dirty = False
            if changed:
                self._reallocate()
            if self.observer is not None:
                self.observer(self, t)
            if not self.active and not self.pending_arrivals:
                break
        return MetricsReport(self.summary(), self.flows, self.decisions, self.trace)

    # -- metrics ------------------------------------------------------------

    def _utilization(self) -> dict:
        topo = self.topology
        keys = [(v, Port(STATIC, x)) for v, w, x in topo.static_edges() if v != w]
        keys += [(v, Port(DA, i)) for i in range(topo.k_d) for v in range(topo.n)]
        span = self.now * self.capacity
        util = np.array([self.link_bytes.get(k, 0.0) / span if span > 0 else 0.0 for k in keys])
        counts, _ = np.histogram(np.clip(util, 0.0, 1.0), bins=np.array(HIST_EDGES))
        return {"edges": list(HIST_EDGES), "counts": [int(c) for c in counts], "links": len(keys)}

    def summary(self) -> dict:
        done = [f for f in self.flows if f.completion is not None]
        fct = [f.completion - f.arrival for f in done]
        delivered = sum(f.delivered for f in self.flows)
        hop_bytes = sum(f.hop_bytes for f in self.flows)
        cfg = self.config
        out = {
            "scheduler": cfg.scheduler,
            "seed": cfg.seed,
            "n": self.topology.n,
            "k_s": cfg.k_s,
            "k_d": cfg.k_d,
            "d": cfg.d,
            "flows_total": len(self.flows),
            "flows_completed": len(done),
            "bytes_total": float(sum(f.size for f in self.flows)),
            "bytes_delivered": float(delivered),
            "fct_mean": float(np.mean(fct)) if fct else 0.0,
            "fct_median": _percentile(fct, 50),
            "fct_p99": _percentile(fct, 99),
            "byte_weighted_mean_path_length": float(hop_bytes / delivered) if delivered > 0 else 0.0,
            "reconfigurations": (
                self.distributed.links_set if self.distributed is not None else self.reconfigurations
            ),
            "events": self.events_processed,
            "sim_time": float(self.now),
            "utilization_histogram": self._utilization(),
        }
        if self.distributed is not None:
            out["messages_sent"] = self.distributed.messages_sent
            out["messages_dropped"] = self.distributed.messages_dropped
        return out

    # -- checks used by tests -----------------------------------------------

    def check_state(self, tol: float = RATE_TOL) -> list[str]:
        problems = []
        load: dict = {}
        for f in self.active.values():
            if f.path[0] != f.src or f.path[-1] != f.dst:
                problems.append(f"flow {f.id}: path endpoints {f.path[0]}->{f.path[-1]}")
            if not 0 <= f.residual <= f.size:
                problems.append(f"flow {f.id}: residual {f.residual} outside [0, {f.size}]")
            if not f.rate > 0:
                problems.append(f"flow {f.id}: rate {f.rate} not positive")
            for v, port in f.links:
                if port.kind == DA:
                    link = self.topology.out_link(v, port.index)
                    if link is None or not link.is_up:
                        problems.append(f"flow {f.id}: uses DA port {v}/{port.index} that is not up")
                elif port.kind != STATIC:
                    problems.append(f"flow {f.id}: bad port {port}")
                load[(v, port)] = load.get((v, port), 0.0) + f.rate
        for key, total in load.items():
            if total > self.capacity * (1 + tol):
                problems.append(f"link {key}: load {total} over capacity")
        return problems


def simulate(config: ExperimentConfig, workload=None, observer=None) -> MetricsReport:
    if workload is None:
        workload = load_workload(config.workload, config.k_s, config.d)
        if config.duration is not None:
            workload = [f for f in workload if f.arrival <= config.duration]
    return Simulation(config, workload, observer).run()


run = simulate
