"""Synthetic flow workloads and CSV traces."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .debruijn import DeBruijnAddress, format_node

PATTERNS = ("skewed", "all_to_all", "permutation", "trace")
TRACE_HEADER = ("arrival", "src", "dst", "bytes")


class FlowEvent(NamedTuple):
    arrival: float
    src: int
    dst: int
    size: float


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    pattern: str = "skewed"
    num_flows: int = 1000
    arrival_rate: float = 100.0
    elephant_bytes: float = 1e7
    mice_bytes: float = 1e4
    elephant_byte_fraction: float = 0.9
    elephant_pair_fraction: float = 0.1
    flows_per_pair: int = 1
    flow_bytes: float = 1e6
    size_dist: str = "fixed"
    pareto_shape: float = 1.5
    seed: int = 0
    trace: str | None = None
    trace_ids: str = "symbols"

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown workload pattern {self.pattern!r}")
        for name in ("elephant_byte_fraction", "elephant_pair_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("elephant_bytes", "mice_bytes", "flow_bytes", "arrival_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.num_flows < 0 or self.flows_per_pair < 1:
            raise ValueError("num_flows must be >= 0 and flows_per_pair >= 1")
        if self.size_dist not in ("fixed", "pareto"):
            raise ValueError(f"unknown size distribution {self.size_dist!r}")
        if self.size_dist == "pareto" and not self.pareto_shape > 1:
            raise ValueError("pareto shape must be > 1 for a finite mean")
        if self.trace_ids not in ("symbols", "index"):
            raise ValueError(f"trace_ids must be 'symbols' or 'index', not {self.trace_ids!r}")
        if self.pattern == "trace" and not self.trace:
            raise ValueError("pattern 'trace' needs a trace path")


def _sizes(spec: WorkloadSpec, rng: np.random.Generator, mean: float, count: int) -> np.ndarray:
    if spec.size_dist == "fixed":
        return np.full(count, float(mean))
    # Lomax + 1 scaled so the mean equals `mean`
    scale = mean * (spec.pareto_shape - 1) / spec.pareto_shape
    return scale * (1.0 + rng.pareto(spec.pareto_shape, count))


def _arrivals(rng: np.random.Generator, rate: float, count: int) -> np.ndarray:
    return np.cumsum(rng.exponential(1.0 / rate, count))


def _pairs(n: int) -> np.ndarray:
    src, dst = np.nonzero(~np.eye(n, dtype=bool))
    return np.stack([src, dst], axis=1)


def generate(spec: WorkloadSpec, n: int) -> list[FlowEvent]:
    """Flows sorted by arrival; deterministic given ``spec.seed``."""
    if n < 2:
        raise ValueError("need at least two ToRs")
    rng = np.random.default_rng(spec.seed)
    pairs = _pairs(n)
    if spec.pattern == "all_to_all":
        chosen = np.repeat(pairs, spec.flows_per_pair, axis=0)
        rng.shuffle(chosen)
        sizes = _sizes(spec, rng, spec.flow_bytes, len(chosen))
    elif spec.pattern == "permutation":
        # derangement by rejection: each ToR sends to one other ToR
        while True:
            perm = rng.permutation(n)
            if not (perm == np.arange(n)).any():
                break
        chosen = np.repeat(np.stack([np.arange(n), perm], axis=1), spec.flows_per_pair, axis=0)
        rng.shuffle(chosen)
        sizes = _sizes(spec, rng, spec.flow_bytes, len(chosen))
    elif spec.pattern == "skewed":
        chosen, sizes = _skewed(spec, rng, pairs)
    else:
        raise ValueError("trace workloads are loaded with load_trace")
    arrivals = _arrivals(rng, spec.arrival_rate, len(chosen))
    return [
        FlowEvent(float(a), int(s), int(t), float(z)) for a, (s, t), z in zip(arrivals, chosen, sizes)
    ]


def elephant_probability(spec: WorkloadSpec) -> float:
    """Share of flows that must be elephants to hit the byte fraction."""
    f = spec.elephant_byte_fraction
    e, m = spec.elephant_bytes, spec.mice_bytes
    if f >= 1:
        return 1.0
    return f * m / (f * m + (1 - f) * e)


def _skewed(spec: WorkloadSpec, rng, pairs):
    count = spec.num_flows
    hot_count = max(1, int(round(spec.elephant_pair_fraction * len(pairs))))
    order = rng.permutation(len(pairs))
    hot, cold = pairs[order[:hot_count]], pairs[order[hot_count:]]
    if len(cold) == 0:
        cold = hot
    n_elephants = int(round(elephant_probability(spec) * count))
    is_elephant = np.zeros(count, dtype=bool)
    is_elephant[rng.choice(count, n_elephants, replace=False)] = True
    chosen = np.empty((count, 2), dtype=np.int64)
    chosen[is_elephant] = hot[rng.integers(0, len(hot), n_elephants)]
    chosen[~is_elephant] = cold[rng.integers(0, len(cold), count - n_elephants)]
    sizes = np.where(
        is_elephant,
        _sizes(spec, rng, spec.elephant_bytes, count),
        _sizes(spec, rng, spec.mice_bytes, count),
    )
    return chosen, sizes


def elephant_pairs(spec: WorkloadSpec, n: int) -> set[tuple[int, int]]:
    """The hot pair set the skewed generator draws elephants from."""
    rng = np.random.default_rng(spec.seed)
    pairs = _pairs(n)
    hot_count = max(1, int(round(spec.elephant_pair_fraction * len(pairs))))
    order = rng.permutation(len(pairs))
    return {(int(s), int(t)) for s, t in pairs[order[:hot_count]]}


def _parse_tor(text: str, ids: str, b: int, d: int, lineno: int) -> int:
    n = b**d
    try:
        if ids == "index":
            v = int(text)
        else:
            addr = DeBruijnAddress.parse(text, b)
            if addr.d != d:
                raise ValueError(f"address {text!r} has dimension {addr.d}, expected {d}")
            v = addr.index
    except ValueError as exc:
        raise TraceError(f"line {lineno}: bad ToR {text!r}: {exc}") from None
    if not 0 <= v < n:
        raise TraceError(f"line {lineno}: ToR {text!r} outside [0, {n - 1}]")
    return v


def load_trace(path, b: int, d: int, ids: str = "symbols") -> list[FlowEvent]:
    """Read ``arrival,src,dst,bytes`` rows; sorted by arrival, stable on ties."""
    flows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
            raise TraceError(f"line 1: expected header {','.join(TRACE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise TraceError(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                arrival, size = float(row[0]), float(row[3])
            except ValueError:
                raise TraceError(f"line {lineno}: arrival and bytes must be numbers") from None
            if not np.isfinite(arrival) or arrival < 0:
                raise TraceError(f"line {lineno}: arrival must be finite and >= 0")
            if not size > 0 or not np.isfinite(size):
                raise TraceError(f"line {lineno}: bytes must be > 0")
            src = _parse_tor(row[1].strip(), ids, b, d, lineno)
            dst = _parse_tor(row[2].strip(), ids, b, d, lineno)
            if src == dst:
                raise TraceError(f"line {lineno}: source equals destination ({row[1].strip()})")
            flows.append(FlowEvent(arrival, src, dst, size))
    flows.sort(key=lambda f: f.arrival)
    return flows


def write_trace(flows, path, b: int, d: int, ids: str = "symbols") -> None:
    def fmt(v):
        return str(v) if ids == "index" else format_node(v, b, d)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for f in flows:
            writer.writerow([repr(float(f.arrival)), fmt(f.src), fmt(f.dst), repr(float(f.size))])


def load_workload(spec: WorkloadSpec, b: int, d: int) -> list[FlowEvent]:
    if spec.pattern == "trace":
        return load_trace(Path(spec.trace), b, d, spec.trace_ids)
    return generate(spec, b**d)
