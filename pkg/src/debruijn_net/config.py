"""Flat ``key = value`` experiment configuration.

Every key is known up front; anything else is an error.  Values are parsed
and validated before a run starts so typos never cost a simulation.
"""
from __future__ import annotations

import ipaddress
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .addressing import IpAddressingScheme
from .protocol import ProtocolParams
from .scheduling import SchedulerTiming
from .workload import PATTERNS, WorkloadSpec

SCHEDULERS = ("none", "bfs", "greedy", "distributed")


class ConfigError(ValueError):
    """Bad config file or value; the message names the offending key."""


def _int(text):
    return int(text)


def _float(text):
    value = float(text)
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _optional_float(text):
    return None if text.lower() in ("auto", "none", "") else _float(text)


def _str(text):
    return text


# key -> (parser, default, help).  Order here is the README order.
KEYS = {
    "topology.k_s": (_int, 2, "static spine switches; also the de Bruijn base b (>= 2)"),
    "topology.d": (_int, 3, "de Bruijn dimension; n = k_s ** d ToRs (>= 2)"),
    "topology.k_d": (_int, 1, "dynamic (DA) spine switches (>= 0)"),
    "scheduler": (_str, "none", "none | bfs | greedy | distributed"),
    "period": (_float, 1.0, "scheduling period; also the distributed detector poll interval (> 0)"),
    "delta": (_float, 0.0, "reconfiguration delay of a new DA link (>= 0)"),
    "reservation": (_float, 0.0, "time a DA link keeps its ports after coming up (>= 0)"),
    "elephant.theta_bytes": (_float, 1e5, "bytes in the window that make a source an elephant (> 0)"),
    "elephant.window": (_float, 1.0, "sliding detection window (> 0)"),
    "elephant.detector": (_str, "exact", "exact | sketch (count-min)"),
    "dist.request_timeout": (_optional_float, None, "PortRequest deadline; auto = 3 * d * per_hop_latency"),
    "dist.msg_drop_prob": (_float, 0.0, "probability a protocol message is lost, in [0, 1)"),
    "dist.per_hop_latency": (_float, 1e-3, "protocol message latency per hop (> 0)"),
    "workload.pattern": (_str, "skewed", "skewed | all_to_all | permutation | trace"),
    "workload.num_flows": (_int, 1000, "flows drawn by the skewed pattern"),
    "workload.duration": (_optional_float, None, "drop generated flows arriving after this time; auto = keep all"),
    "workload.arrival_rate": (_float, 100.0, "Poisson arrival rate, flows per time unit (> 0)"),
    "workload.elephant_bytes": (_float, 1e7, "mean elephant size in bytes (> 0)"),
    "workload.mice_bytes": (_float, 1e4, "mean mouse size in bytes (> 0)"),
    "workload.elephant_byte_fraction": (_float, 0.9, "share of bytes carried by elephants, in [0, 1]"),
    "workload.elephant_pair_fraction": (_float, 0.1, "share of ordered ToR pairs that carry elephants, in [0, 1]"),
    "workload.flows_per_pair": (_int, 1, "flows per pair for all_to_all and permutation (>= 1)"),
    "workload.flow_bytes": (_float, 1e6, "mean flow size for all_to_all and permutation (> 0)"),
    "workload.size_dist": (_str, "fixed", "fixed | pareto"),
    "workload.pareto_shape": (_float, 1.5, "pareto tail index when size_dist = pareto (> 1)"),
    "workload.trace": (_str, "", "CSV trace path for pattern = trace; relative to the config file"),
    "workload.trace_ids": (_str, "symbols", "trace ToR columns: symbols (e.g. 011) | index"),
    "ip.base_prefix": (_str, "10.0.0.0", "base network address for ToR prefixes"),
    "ip.base_len": (_int, 8, "base prefix length"),
    "link.capacity": (_float, 1.0, "capacity of every directed link, bytes per time unit (> 0)"),
    "seed": (_int, 0, "seed for the workload generator and protocol randomness"),
    "max_time": (_float, math.inf, "stop the simulation at this time; inf = run until drained"),
    "output.dir": (_str, "out", "directory for result files; relative to the working directory"),
    "output.flows_csv": (_bool, False, "write flows.csv with one row per flow"),
    "output.decisions_csv": (_bool, False, "write decisions.csv with centralized scheduler decisions"),
    "output.protocol_trace": (_bool, False, "write protocol_trace.csv with distributed protocol messages"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    k_s: int = 2
    d: int = 3
    k_d: int = 1
    scheduler: str = "none"
    timing: SchedulerTiming = field(default_factory=SchedulerTiming)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    duration: float | None = None
    ip: IpAddressingScheme = field(
        default_factory=lambda: IpAddressingScheme(ipaddress.IPv4Network("10.0.0.0/8"), 2, 3)
    )
    capacity: float = 1.0
    seed: int = 0
    max_time: float = math.inf
    output_dir: str = "out"
    flows_csv: bool = False
    decisions_csv: bool = False
    protocol_trace: bool = False
    values: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def b(self) -> int:
        return self.k_s

    @property
    def n(self) -> int:
        return self.k_s**self.d

    def with_seed(self, seed: int) -> "ExperimentConfig":
        values = dict(self.values, seed=seed)
        return replace(self, seed=seed, workload=replace(self.workload, seed=seed), values=values)


def parse_lines(lines, source: str = "<config>") -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in text.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def _check(key: str, ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(f"{key}: {message}")


def build_config(raw: dict[str, str], base_dir: Path | None = None) -> ExperimentConfig:
    """Parse and validate raw string values (unset keys take defaults)."""
    values = {}
    for key, (parse, default, _) in KEYS.items():
        if key in raw:
            try:
                values[key] = parse(str(raw[key]).strip())
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {raw[key]!r}: {exc}") from None
        else:
            values[key] = default
    unknown = sorted(set(raw) - set(KEYS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")

    v = values
    _check("topology.k_s", v["topology.k_s"] >= 2, "must be >= 2")
    _check("topology.d", v["topology.d"] >= 2, "must be >= 2")
    _check("topology.k_d", v["topology.k_d"] >= 0, "must be >= 0")
    _check("scheduler", v["scheduler"] in SCHEDULERS, f"must be one of {', '.join(SCHEDULERS)}")
    _check("period", v["period"] > 0 and math.isfinite(v["period"]), "must be finite and > 0")
    for key in ("delta", "reservation"):
        _check(key, 0 <= v[key] < math.inf, "must be finite and >= 0")
    _check("link.capacity", 0 < v["link.capacity"] < math.inf, "must be finite and > 0")
    _check("max_time", v["max_time"] >= 0, "must be >= 0")
    _check("seed", v["seed"] >= 0, "must be >= 0")
    _check("workload.num_flows", v["workload.num_flows"] >= 0, "must be >= 0")
    if v["workload.duration"] is not None:
        _check("workload.duration", v["workload.duration"] >= 0, "must be >= 0")
    if v["scheduler"] != "none":
        _check("topology.k_d", v["topology.k_d"] >= 1, f"scheduler {v['scheduler']} needs k_d >= 1")

    for key in ("elephant.theta_bytes", "elephant.window", "dist.per_hop_latency"):
        _check(key, 0 < v[key] < math.inf, "must be finite and > 0")
    _check("elephant.detector", v["elephant.detector"] in ("exact", "sketch"), "must be exact or sketch")
    if v["dist.request_timeout"] is not None:
        _check("dist.request_timeout", 0 < v["dist.request_timeout"] < math.inf, "must be auto or > 0")
    _check("dist.msg_drop_prob", 0 <= v["dist.msg_drop_prob"] < 1, "must lie in [0, 1)")
    _check("workload.pattern", v["workload.pattern"] in PATTERNS, f"must be one of {', '.join(PATTERNS)}")
    for key in ("workload.elephant_byte_fraction", "workload.elephant_pair_fraction"):
        _check(key, 0 <= v[key] <= 1, "must lie in [0, 1]")
    for key in ("workload.arrival_rate", "workload.elephant_bytes", "workload.mice_bytes", "workload.flow_bytes"):
        _check(key, 0 < v[key] < math.inf, "must be finite and > 0")
    _check("workload.flows_per_pair", v["workload.flows_per_pair"] >= 1, "must be >= 1")
    _check("workload.size_dist", v["workload.size_dist"] in ("fixed", "pareto"), "must be fixed or pareto")
    _check("workload.pareto_shape", v["workload.pareto_shape"] > 1, "must be > 1")
    _check("workload.trace_ids", v["workload.trace_ids"] in ("symbols", "index"), "must be symbols or index")
    _check("ip.base_len", 0 <= v["ip.base_len"] <= 32, "must lie in [0, 32]")
    try:
        base = ipaddress.IPv4Network(f"{v['ip.base_prefix']}/{v['ip.base_len']}")
    except ValueError as exc:
        raise ConfigError(f"ip.base_prefix: {exc}") from None
    tor_bits = (v["topology.k_s"] - 1).bit_length() * v["topology.d"]
    _check(
        "ip.base_len",
        v["ip.base_len"] + tor_bits <= 32,
        f"/{v['ip.base_len']} leaves fewer than the {tor_bits} bits the ToR addresses need",
    )

    timing = SchedulerTiming(v["period"], v["delta"], v["reservation"])
    protocol = ProtocolParams(
        theta_bytes=v["elephant.theta_bytes"],
        window=v["elephant.window"],
        request_timeout=v["dist.request_timeout"],
        msg_drop_prob=v["dist.msg_drop_prob"],
        per_hop_latency=v["dist.per_hop_latency"],
        detector=v["elephant.detector"],
    )
    trace = v["workload.trace"] or None
    if trace is not None and base_dir is not None and not Path(trace).is_absolute():
        trace = str(base_dir / trace)
    if v["workload.pattern"] == "trace":
        _check("workload.trace", trace is not None, "pattern = trace needs a trace file")
        _check("workload.trace", Path(trace).is_file(), f"trace file {trace} not found")
    workload = WorkloadSpec(
        pattern=v["workload.pattern"],
        num_flows=v["workload.num_flows"],
        arrival_rate=v["workload.arrival_rate"],
        elephant_bytes=v["workload.elephant_bytes"],
        mice_bytes=v["workload.mice_bytes"],
        elephant_byte_fraction=v["workload.elephant_byte_fraction"],
        elephant_pair_fraction=v["workload.elephant_pair_fraction"],
        flows_per_pair=v["workload.flows_per_pair"],
        flow_bytes=v["workload.flow_bytes"],
        size_dist=v["workload.size_dist"],
        pareto_shape=v["workload.pareto_shape"],
        seed=v["seed"],
        trace=trace,
        trace_ids=v["workload.trace_ids"],
    )
    ip = IpAddressingScheme(base, v["topology.k_s"], v["topology.d"])
    return ExperimentConfig(
        k_s=v["topology.k_s"],
        d=v["topology.d"],
        k_d=v["topology.k_d"],
        scheduler=v["scheduler"],
        timing=timing,
        protocol=protocol,
        workload=workload,
        duration=v["workload.duration"],
        ip=ip,
        capacity=v["link.capacity"],
        seed=v["seed"],
        max_time=v["max_time"],
        output_dir=v["output.dir"],
        flows_csv=v["output.flows_csv"],
        decisions_csv=v["output.decisions_csv"],
        protocol_trace=v["output.protocol_trace"],
        values=values,
    )


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    raw = parse_lines(text.splitlines(), str(path))
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"{key}: unknown key")
        raw[key] = str(value)
    return build_config(raw, path.parent)


def default_config(**overrides) -> ExperimentConfig:
    """Config from keyword overrides, dots spelled as double underscores."""
    raw = {k.replace("__", "."): str(v) for k, v in overrides.items()}
    return build_config(raw)


def render(config: ExperimentConfig) -> str:
    """Round-trippable ``key = value`` text of a config."""
    lines = []
    for key in KEYS:
        value = config.values.get(key, KEYS[key][1])
        if value is None:
            value = "auto"
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
