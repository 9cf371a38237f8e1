"""De Bruijn addressing, the static backbone and the demand-aware overlay.

Nodes are handled as integers internally: the address ``(v_1, ..., v_d)`` is
the base-``b`` number with ``v_1`` as the most significant digit.  A left
shift that appends symbol ``x`` is therefore ``(v * b) % n + x``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, NamedTuple, Union

import numpy as np

STATIC = "static"
DA = "da"
LOCAL_KIND = "local"

CONFIGURING = "configuring"
UP = "up"


class Port(NamedTuple):
    """An output port of a ToR: static matching ``i`` or DA switch ``i``."""

    kind: str
    index: int

    def sort_key(self):
        return ({STATIC: 0, DA: 1, LOCAL_KIND: 2}[self.kind], self.index)

    def __str__(self):
        if self.kind == STATIC:
            return str(self.index)
        if self.kind == DA:
            return f"DA{self.index}"
        return "Local"


LOCAL = Port(LOCAL_KIND, 0)


def _symbol_char(x: int) -> str:
    return "0123456789abcdefghijklmnopqrstuvwxyz"[x]


@dataclass(frozen=True, order=True)
class DeBruijnAddress:
    symbols: tuple[int, ...]
    b: int = 2

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(x) for x in self.symbols))
        if self.b < 2:
            raise ValueError(f"alphabet size must be >= 2, got {self.b}")
        if len(self.symbols) < 2:
            raise ValueError(f"dimension must be >= 2, got {len(self.symbols)}")
        for x in self.symbols:
            if not 0 <= x < self.b:
                raise ValueError(f"symbol {x} outside [0, {self.b - 1}]")

    @property
    def d(self) -> int:
        return len(self.symbols)

    @property
    def index(self) -> int:
        v = 0
        for x in self.symbols:
            v = v * self.b + x
        return v

    @classmethod
    def from_index(cls, index: int, b: int, d: int) -> "DeBruijnAddress":
        if not 0 <= index < b**d:
            raise ValueError(f"node index {index} outside [0, {b**d - 1}]")
        symbols = []
        for _ in range(d):
            index, x = divmod(index, b)
            symbols.append(x)
        return cls(tuple(reversed(symbols)), b)

    @classmethod
    def parse(cls, text: str, b: int = 2) -> "DeBruijnAddress":
        """Parse ``"011"``; alphabets above 36 use dot separators (``"40.2.7"``)."""
        text = text.strip()
        if "." in text or b > 36:
            parts = [int(p) for p in text.split(".")]
        else:
            try:
                parts = [int(ch, 36) for ch in text]
            except ValueError:
                raise ValueError(f"malformed address {text!r}") from None
        return cls(tuple(parts), b)

    def __str__(self) -> str:
        if self.b > 36:
            return ".".join(str(x) for x in self.symbols)
        return "".join(_symbol_char(x) for x in self.symbols)


NodeLike = Union[int, DeBruijnAddress, str]


def format_node(v: int, b: int, d: int) -> str:
    return str(DeBruijnAddress.from_index(v, b, d))


def shift_distance(v: int, w: int, b: int, d: int) -> int:
    """Smallest j such that the last d-j symbols of v are the first d-j of w."""
    for j in range(d + 1):
        if v % b ** (d - j) == w // b**j:
            return j
    raise AssertionError("unreachable")


def debruijn_distance(v: DeBruijnAddress, w: DeBruijnAddress) -> int:
    if v.b != w.b or v.d != w.d:
        raise ValueError(f"address mismatch: {v} (b={v.b}) vs {w} (b={w.b})")
    return shift_distance(v.index, w.index, v.b, v.d)


@lru_cache(maxsize=16)
def distance_matrix(b: int, d: int) -> np.ndarray:
    """All-pairs de Bruijn distance, ``D[v, w]``. Read-only."""
    n = b**d
    nodes = np.arange(n)
    dist = np.full((n, n), d, dtype=np.int64)
    for j in range(d - 1, -1, -1):
        match = (nodes % b ** (d - j))[:, None] == (nodes // b**j)[None, :]
        dist[match] = j
    dist.setflags(write=False)
    return dist


@dataclass(frozen=True)
class StaticMatching:
    index: int
    mapping: tuple[int, ...]

    def __call__(self, v: int) -> int:
        return self.mapping[v]

    def edges(self) -> list[tuple[int, int]]:
        return list(enumerate(self.mapping))


def _check_bd(b: int, d: int) -> None:
    if b < 2 or d < 2:
        raise ValueError(f"need b >= 2 and d >= 2, got b={b}, d={d}")


def decompose_matchings(b: int, d: int) -> list[StaticMatching]:
    """Split DB(b, d) into b permutations.

    Matching i sends v to (v_2, ..., v_d, (v_1 + i) mod b).  Inverse:
    v_1 = (w_d - i) mod b, so every mapping is a bijection.
    """
    _check_bd(b, d)
    n = b**d
    top = b ** (d - 1)
    return [
        StaticMatching(i, tuple((v * b) % n + (v // top + i) % b for v in range(n)))
        for i in range(b)
    ]


class PortConflictError(Exception):
    """A DA port is held by a link that may not be displaced."""

    def __init__(self, node: int, switch: int, side: str, occupant: "DaLink"):
        self.node = node
        self.switch = switch
        self.side = side
        self.occupant = occupant
        super().__init__(
            f"{side} port of node {node} on DA switch {switch} held by "
            f"{occupant.sender}->{occupant.receiver} until {occupant.reserved_until}"
        )


@dataclass(eq=False)
class DaLink:
    sender: int
    receiver: int
    switch: int
    state: str = CONFIGURING
    set_time: float = 0.0
    up_at: float = 0.0
    reserved_until: float = 0.0
    # False while the receiver has not yet committed its input port
    confirmed: bool = True

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.sender, self.receiver, self.switch)

    @property
    def is_up(self) -> bool:
        return self.state == UP

    def replaceable(self, now: float) -> bool:
        return self.reserved_until <= now


class HybridTopology:
    """Static DB(k_s, d) backbone plus ``k_d`` directed DA matchings.

    Each DA switch holds a partial injective map sender -> receiver.  Mutation
    goes through :meth:`set_da_link`, :meth:`teardown` and :meth:`activate`.
    """

    def __init__(self, b: int, d: int, k_d: int = 0):
        _check_bd(b, d)
        if k_d < 0:
            raise ValueError(f"k_d must be >= 0, got {k_d}")
        self.b = b
        self.d = d
        self.n = b**d
        self.k_d = k_d
        self.static_matchings = decompose_matchings(b, d)
        self._out: list[dict[int, DaLink]] = [{} for _ in range(k_d)]
        self._in: list[dict[int, DaLink]] = [{} for _ in range(k_d)]

    @property
    def k_s(self) -> int:
        return self.b

    def copy(self) -> "HybridTopology":
        return copy.deepcopy(self)

    # -- addressing ---------------------------------------------------------

    def address(self, v: int) -> DeBruijnAddress:
        return DeBruijnAddress.from_index(v, self.b, self.d)

    def node(self, x: NodeLike) -> int:
        if isinstance(x, DeBruijnAddress):
            if x.b != self.b or x.d != self.d:
                raise ValueError(f"address {x} does not belong to DB({self.b},{self.d})")
            return x.index
        if isinstance(x, str):
            return self.node(DeBruijnAddress.parse(x, self.b))
        v = int(x)
        if not 0 <= v < self.n:
            raise ValueError(f"node {v} outside [0, {self.n - 1}]")
        return v

    def label(self, v: int) -> str:
        return format_node(v, self.b, self.d)

    # -- static part --------------------------------------------------------

    def static_successor(self, v: int, i: int) -> int:
        return self.static_matchings[i].mapping[v]

    def static_edges(self) -> list[tuple[int, int, int]]:
        """All b^(d+1) static edges as (src, dst, matching), self-loops included."""
        return [(v, w, m.index) for m in self.static_matchings for v, w in m.edges()]

    def static_neighbors(self, v: int) -> list[tuple[Port, int]]:
        out = []
        for m in self.static_matchings:
            w = m.mapping[v]
            if w != v:
                out.append((Port(STATIC, m.index), w))
        return out

    def neighbors(self, v: int) -> list[tuple[Port, int]]:
        """Usable next hops of v: static non-loop edges plus up DA links."""
        out = self.static_neighbors(v)
        for i in range(self.k_d):
            link = self._out[i].get(v)
            if link is not None and link.state == UP:
                out.append((Port(DA, i), link.receiver))
        return out

    # -- DA part ------------------------------------------------------------

    def out_link(self, v: int, switch: int) -> DaLink | None:
        return self._out[switch].get(v)

    def in_link(self, v: int, switch: int) -> DaLink | None:
        return self._in[switch].get(v)

    def da_links(self, state: str | None = None) -> list[DaLink]:
        links = [l for i in range(self.k_d) for _, l in sorted(self._out[i].items())]
        if state is not None:
            links = [l for l in links if l.state == state]
        return links

    def find_da_link(self, sender: int, receiver: int) -> DaLink | None:
        for i in range(self.k_d):
            link = self._out[i].get(sender)
            if link is not None and link.receiver == receiver:
                return link
        return None

    def port_free(self, v: int, switch: int, side: str, now: float | None = None) -> bool:
        """True if the port is empty, or (given ``now``) its link is past reservation."""
        table = self._out if side == "out" else self._in
        link = table[switch].get(v)
        if link is None:
            return True
        return now is not None and link.replaceable(now)

    def set_da_link(
        self,
        sender: int,
        receiver: int,
        switch: int,
        now: float = 0.0,
        delay: float = 0.0,
        reservation: float = 0.0,
        displace: bool = False,
        confirmed: bool = True,
    ) -> tuple[DaLink, list[DaLink]]:
        """Record a new DA link in configuring state.

        Returns ``(link, displaced)``.  An identical existing link is returned
        untouched.  Occupied ports raise :class:`PortConflictError` unless
        ``displace`` is set and the occupant's reservation has ended.
        """
        sender, receiver = self.node(sender), self.node(receiver)
        if not 0 <= switch < self.k_d:
            raise ValueError(f"DA switch {switch} outside [0, {self.k_d - 1}]")
        if sender == receiver:
            raise ValueError(f"DA self-loop at node {sender} not allowed")
        existing = self._out[switch].get(sender)
        if existing is not None and existing.receiver == receiver:
            return existing, []
        blockers = []
        for side, table, node in (("out", self._out, sender), ("in", self._in, receiver)):
            link = table[switch].get(node)
            if link is None:
                continue
            if not displace or not link.replaceable(now):
                raise PortConflictError(node, switch, side, link)
            if link not in blockers:
                blockers.append(link)
        for link in blockers:
            self.teardown(link)
        link = DaLink(
            sender,
            receiver,
            switch,
            CONFIGURING,
            set_time=now,
            up_at=now + delay,
            reserved_until=now + delay + reservation,
            confirmed=confirmed,
        )
        self._out[switch][sender] = link
        self._in[switch][receiver] = link
        return link, blockers

    def teardown(self, link: DaLink) -> bool:
        if self._out[link.switch].get(link.sender) is not link:
            return False
        del self._out[link.switch][link.sender]
        del self._in[link.switch][link.receiver]
        return True

    def contains(self, link: DaLink) -> bool:
        return self._out[link.switch].get(link.sender) is link

    def activate(self, link: DaLink, now: float) -> bool:
        """Move a configuring link to up once its delay passed and it is confirmed."""
        if not self.contains(link) or link.state != CONFIGURING:
            return False
        if not link.confirmed or now < link.up_at:
            return False
        link.state = UP
        return True

    def check_matching(self) -> list[str]:
        """Violations of the per-switch matching property (empty when sound)."""
        problems = []
        for i in range(self.k_d):
            if len(self._out[i]) != len(self._in[i]):
                problems.append(f"switch {i}: out/in tables disagree")
            for v, link in self._out[i].items():
                if link.sender != v or self._in[i].get(link.receiver) is not link:
                    problems.append(f"switch {i}: dangling link {link.key}")
            receivers = [l.receiver for l in self._out[i].values()]
            if len(set(receivers)) != len(receivers):
                problems.append(f"switch {i}: receiver port shared")
        return problems

    def dump(self) -> str:
        """One edge per line: ``<src> <dst> <static|da> <switch>``."""
        lines = [
            f"{self.label(v)} {self.label(w)} static {i}" for v, w, i in sorted(self.static_edges())
        ]
        for link in self.da_links():
            lines.append(f"{self.label(link.sender)} {self.label(link.receiver)} da {link.switch}")
        return "\n".join(lines) + "\n"


def build_debruijn(b: int, d: int) -> HybridTopology:
    return HybridTopology(b, d, 0)


def iter_addresses(b: int, d: int) -> Iterator[DeBruijnAddress]:
    for v in range(b**d):
        yield DeBruijnAddress.from_index(v, b, d)
