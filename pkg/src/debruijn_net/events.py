"""Priority event queue shared by the simulator and the protocol harness."""
from __future__ import annotations

import heapq
import itertools
from enum import IntEnum
from typing import Any, NamedTuple


class EventKind(IntEnum):
    # Lower value runs first among events at the same instant.
    LINK_DOWN = 0
    LINK_UP = 1
    RESERVATION_EXPIRY = 2
    PERIOD_TICK = 3
    MESSAGE_DELIVERY = 4
    FLOW_ARRIVAL = 5
    FLOW_COMPLETION = 6


class SimEvent(NamedTuple):
    time: float
    kind: EventKind
    tiebreak: int
    seq: int
    payload: Any


class EventQueue:
    def __init__(self):
        self._heap: list[SimEvent] = []
        self._seq = itertools.count()

    def push(self, time: float, kind: EventKind, payload: Any = None, tiebreak: int = 0) -> SimEvent:
        event = SimEvent(float(time), kind, tiebreak, next(self._seq), payload)
        heapq.heappush(self._heap, event)
        return event

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)

    def peek_time(self) -> float:
        return self._heap[0].time if self._heap else float("inf")

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)
