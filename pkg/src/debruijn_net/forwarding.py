"""Longest-prefix-match forwarding tables built from local neighbor knowledge.

A neighbor z reached over port p contributes, for every suffix length l, the
rule "destinations starting with the last l symbols of z go to p": from z the
destination is d - l shifts away, so the rule's path length is d - l + 1.  LPM
over these rules picks the neighbor closest to the destination in de Bruijn
distance, which is exactly greedy routing.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .debruijn import (
    DA,
    LOCAL,
    DeBruijnAddress,
    HybridTopology,
    NodeLike,
    Port,
    _symbol_char,
    distance_matrix,
)

UP_EVENT = "up"
DOWN_EVENT = "down"


class LinkChange(NamedTuple):
    kind: str
    neighbor: int
    port: Port


def _symbols(value: int, b: int, length: int) -> tuple[int, ...]:
    out = []
    for _ in range(length):
        value, x = divmod(value, b)
        out.append(x)
    return tuple(reversed(out))


def _port_label(port: Port, single_da: bool) -> str:
    if single_da and port.kind == DA:
        return "DA"
    return str(port)


@dataclass(frozen=True)
class PrefixEntry:
    prefix: tuple[int, ...]
    ports: tuple[Port, ...]
    path_length: int

    def pattern(self, d: int, b: int = 2) -> str:
        if b > 36:
            head = ".".join(str(x) for x in self.prefix)
            return ".".join([head] + ["*"] * (d - len(self.prefix))) if head else "*"
        return "".join(_symbol_char(x) for x in self.prefix) + "*" * (d - len(self.prefix))


def _flow_hash(flow_key, owner: int) -> int:
    return zlib.crc32(f"{flow_key}:{owner}".encode())


def _reduce(candidates: dict, b: int, d: int) -> dict:
    """Drop rules whose every address is matched by a strictly longer rule."""
    extended = set()
    for length, value in candidates:
        for shorter in range(1, length):
            extended.add((shorter, value // b ** (length - shorter)))
    memo: dict = {}

    def covered(key) -> bool:
        if key in candidates:
            return True
        if key not in extended:
            return False
        if key not in memo:
            length, value = key
            memo[key] = all(covered((length + 1, value * b + c)) for c in range(b))
        return memo[key]

    kept = {}
    for key, ports in candidates.items():
        length, value = key
        if length < d and all(covered((length + 1, value * b + c)) for c in range(b)):
            continue
        kept[key] = ports
    return kept


def _sorted_ports(ports: Iterable[Port]) -> tuple[Port, ...]:
    return tuple(sorted(ports, key=Port.sort_key))


@dataclass(frozen=True)
class ForwardingTable:
    owner: int
    b: int
    d: int
    neighbors: tuple[tuple[Port, int], ...]
    entries: tuple[PrefixEntry, ...]
    _candidates: dict = field(compare=False, repr=False)
    _by_key: dict = field(compare=False, repr=False)
    _port_neighbor: dict = field(compare=False, repr=False)

    @property
    def local_entry(self) -> PrefixEntry:
        return PrefixEntry(_symbols(self.owner, self.b, self.d), (LOCAL,), 0)

    def neighbor_at(self, port: Port) -> int:
        return self._port_neighbor[port]

    def __len__(self) -> int:
        return len(self.entries)


def _add_candidates(candidates: dict, z: int, port: Port, b: int, d: int) -> None:
    for length in range(1, d + 1):
        key = (length, z % b**length)
        candidates[key] = candidates.get(key, frozenset()) | {port}


def _remove_candidates(candidates: dict, z: int, port: Port, b: int, d: int) -> None:
    for length in range(1, d + 1):
        key = (length, z % b**length)
        rest = candidates[key] - {port}
        if rest:
            candidates[key] = rest
        else:
            del candidates[key]


def _assemble(owner: int, b: int, d: int, port_neighbor: dict, candidates: dict) -> ForwardingTable:
    by_key = {}
    for (length, value), ports in _reduce(candidates, b, d).items():
        by_key[(length, value)] = PrefixEntry(
            _symbols(value, b, length), _sorted_ports(ports), d - length + 1
        )
    entries = tuple(by_key[k] for k in sorted(by_key, key=lambda k: (-k[0], k[1])))
    neighbors = tuple(sorted(port_neighbor.items(), key=lambda item: item[0].sort_key()))
    return ForwardingTable(owner, b, d, neighbors, entries, candidates, by_key, dict(port_neighbor))


def _build(owner: int, b: int, d: int, neighbors: Iterable[tuple[Port, int]]) -> ForwardingTable:
    port_neighbor: dict[Port, int] = {}
    candidates: dict = {}
    for port, z in neighbors:
        if port in port_neighbor:
            raise ValueError(f"duplicate port {port} in neighbor list of {owner}")
        port_neighbor[port] = z
        if z != owner:
            _add_candidates(candidates, z, port, b, d)
    return _assemble(owner, b, d, port_neighbor, candidates)


def build_table(owner: DeBruijnAddress, neighbors: Iterable[tuple[NodeLike, Port]]) -> ForwardingTable:
    """Build the reduced LPM table of ``owner`` from ``(neighbor, port)`` pairs.

    Self-loop neighbors produce no rules.
    """
    pairs = []
    for z, port in neighbors:
        if isinstance(z, DeBruijnAddress):
            if z.b != owner.b or z.d != owner.d:
                raise ValueError(f"neighbor {z} does not match owner {owner} dimensions")
            z = z.index
        elif isinstance(z, str):
            z = DeBruijnAddress.parse(z, owner.b)
            if z.d != owner.d:
                raise ValueError(f"neighbor {z} does not match owner {owner} dimensions")
            z = z.index
        pairs.append((port, int(z)))
    return _build(owner.index, owner.b, owner.d, pairs)


def table_for_node(topology: HybridTopology, v: int) -> ForwardingTable:
    return _build(v, topology.b, topology.d, topology.neighbors(v))


def update_table_on_link_event(table: ForwardingTable, change: LinkChange) -> ForwardingTable:
    """Return the table after a DA port of the owner comes up or goes down.

    Only the departed/arrived neighbor's rules are touched before re-reducing.
    """
    b, d = table.b, table.d
    port_neighbor = dict(table._port_neighbor)
    candidates = dict(table._candidates)
    if change.kind == UP_EVENT:
        old = port_neighbor.get(change.port)
        if old == change.neighbor:
            return table
        if old is not None and old != table.owner:
            _remove_candidates(candidates, old, change.port, b, d)
        port_neighbor[change.port] = change.neighbor
        if change.neighbor != table.owner:
            _add_candidates(candidates, change.neighbor, change.port, b, d)
    elif change.kind == DOWN_EVENT:
        if port_neighbor.get(change.port) != change.neighbor:
            raise KeyError(f"no link to {change.neighbor} on port {change.port} at node {table.owner}")
        del port_neighbor[change.port]
        if change.neighbor != table.owner:
            _remove_candidates(candidates, change.neighbor, change.port, b, d)
    else:
        raise ValueError(f"unknown link event kind {change.kind!r}")
    return _assemble(table.owner, b, d, port_neighbor, candidates)


def lookup(table: ForwardingTable, destination: NodeLike, flow_key=0) -> Port:
    """LPM lookup.  Equal-cost ports are split by a hash of ``flow_key``."""
    if isinstance(destination, DeBruijnAddress):
        destination = destination.index
    elif isinstance(destination, str):
        destination = DeBruijnAddress.parse(destination, table.b).index
    if destination == table.owner:
        return LOCAL
    b, d = table.b, table.d
    for length in range(d, 0, -1):
        entry = table._by_key.get((length, destination // b ** (d - length)))
        if entry is not None:
            ports = entry.ports
            if len(ports) == 1:
                return ports[0]
            return ports[_flow_hash(flow_key, table.owner) % len(ports)]
    raise LookupError(f"table of node {table.owner} has no rule for {destination}")


class TableCache:
    """Forwarding tables for every node, kept in sync with DA link events."""

    def __init__(self, topology: HybridTopology):
        self.topology = topology
        self._tables: dict[int, ForwardingTable] = {}

    def table(self, v: int) -> ForwardingTable:
        table = self._tables.get(v)
        if table is None:
            table = self._tables[v] = table_for_node(self.topology, v)
        return table

    __getitem__ = table

    def apply(self, kind: str, link) -> None:
        """Feed a DA link ``up``/``down`` event to the sender's table."""
        table = self._tables.get(link.sender)
        if table is None:
            return
        port = Port(DA, link.switch)
        if kind == DOWN_EVENT and table._port_neighbor.get(port) != link.receiver:
            return
        self._tables[link.sender] = update_table_on_link_event(
            table, LinkChange(kind, link.receiver, port)
        )

    def clear(self) -> None:
        self._tables.clear()


def route_hops(tables: TableCache, s: int, t: int, flow_key=0) -> list[tuple[int, Port, int]]:
    """Greedy path as ``(node, out_port, next_node)`` hops."""
    hops = []
    v = s
    limit = tables.topology.d
    while v != t:
        table = tables.table(v)
        port = lookup(table, t, flow_key)
        w = table.neighbor_at(port)
        hops.append((v, port, w))
        v = w
        if len(hops) > limit:
            raise RuntimeError(f"greedy route {s}->{t} exceeded {limit} hops")
    return hops


def greedy_route(
    topology: HybridTopology, s: NodeLike, t: NodeLike, flow_key=0, tables: TableCache | None = None
) -> list[DeBruijnAddress]:
    s, t = topology.node(s), topology.node(t)
    if tables is None:
        tables = TableCache(topology)
    path = [s] + [w for _, _, w in route_hops(tables, s, t, flow_key)]
    return [topology.address(v) for v in path]


def next_hop_matrix(topology: HybridTopology, flow_key=0, tables: TableCache | None = None) -> np.ndarray:
    """``N[v, t]`` = neighbor that v's table forwards destination t to (v on the diagonal)."""
    if tables is None:
        tables = TableCache(topology)
    b, d, n = topology.b, topology.d, topology.n
    dest = np.arange(n)
    nxt = np.full((n, n), -1, dtype=np.int64)
    for v in range(n):
        table = tables.table(v)
        row = np.full(n, -1, dtype=np.int64)
        h = _flow_hash(flow_key, v)
        for length in range(1, d + 1):
            level = np.full(b**length, -1, dtype=np.int64)
            for (ell, value), entry in table._by_key.items():
                if ell == length:
                    level[value] = table.neighbor_at(entry.ports[h % len(entry.ports)])
            hit = level[dest // b ** (d - length)]
            row = np.where(hit >= 0, hit, row)
        row[v] = v
        nxt[v] = row
    return nxt


def route_length_matrix(topology: HybridTopology, flow_key=0, tables: TableCache | None = None) -> np.ndarray:
    """All-pairs greedy route lengths, using the same lookup rule as :func:`lookup`.

    Raises ``RuntimeError`` if some hop fails to reduce the de Bruijn distance.
    """
    nxt = next_hop_matrix(topology, flow_key, tables)
    n, d = topology.n, topology.d
    dist = distance_matrix(topology.b, d)
    cols = np.broadcast_to(np.arange(n), (n, n))
    if (nxt < 0).any():
        raise RuntimeError("forwarding table without a matching rule")
    off = ~np.eye(n, dtype=bool)
    if not (dist[nxt, cols][off] < dist[off]).all():
        raise RuntimeError("greedy hop without distance progress")
    lengths = np.zeros((n, n), dtype=np.int64)
    for j in range(1, d + 1):
        mask = dist == j
        lengths[mask] = 1 + lengths[nxt[mask], cols[mask]]
    return lengths


def dump_table(table: ForwardingTable, scheme=None, single_da: bool = False) -> str:
    """Canonical text dump: longest prefixes first, local entry last.

    With an IP ``scheme`` each line also carries the rule's IP prefix.
    ``single_da`` prints DA ports as plain ``DA`` (one DA switch).
    """
    lines = []
    rows = list(table.entries) + [table.local_entry]
    for entry in rows:
        ports = ",".join(_port_label(p, single_da) for p in entry.ports)
        line = f"{entry.pattern(table.d, table.b)} {ports} {entry.path_length}"
        if scheme is not None:
            line += f" {scheme.symbols_prefix(entry.prefix)}"
        lines.append(line)
    return "\n".join(lines) + "\n"
