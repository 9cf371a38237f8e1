"""Command line entry point: run, dump-table, route, dump-topology, sweep."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import KEYS, ConfigError, build_config, load_config, parse_lines, render
from .debruijn import HybridTopology, format_node
from .forwarding import TableCache, dump_table, greedy_route
from .scheduling import DECISION_FIELDS
from .protocol import TRACE_FIELDS
from .simulator import MetricsReport, simulate

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
FLOW_FIELDS = ("id", "src", "dst", "bytes", "arrival", "completion", "path_len_first", "path_len_last")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# -- helpers ----------------------------------------------------------------


def _config(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if args.config is None:
        return build_config(overrides)
    return load_config(args.config, overrides)


def apply_scenario(topology: HybridTopology, path) -> None:
    """Apply ``set-da <sender> <receiver> <switch>`` lines; links come up at once."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read scenario {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        words = line.split("#", 1)[0].split()
        if not words:
            continue
        if words[0] != "set-da" or len(words) != 4:
            raise UsageError(f"{path}:{lineno}: expected 'set-da <sender> <receiver> <switch>'")
        try:
            sender, receiver = topology.node(words[1]), topology.node(words[2])
            link, _ = topology.set_da_link(sender, receiver, int(words[3]))
        except (ValueError, KeyError, IndexError) as exc:
            raise UsageError(f"{path}:{lineno}: {exc}") from None
        except Exception as exc:  # port conflicts in a hand-written scenario
            raise UsageError(f"{path}:{lineno}: {exc}") from None
        topology.activate(link, 0.0)


def _topology(config, scenario) -> HybridTopology:
    topology = HybridTopology(config.k_s, config.d, config.k_d)
    if scenario:
        apply_scenario(topology, scenario)
    return topology


def _node(topology, text):
    try:
        return topology.node(text)
    except (ValueError, KeyError, IndexError) as exc:
        raise UsageError(f"unknown ToR address {text!r}: {exc}") from None


def write_outputs(report: MetricsReport, config, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(report.summary, sort_keys=True, indent=2) + "\n")
    label = lambda v: format_node(v, config.k_s, config.d)  # noqa: E731
    if config.flows_csv:
        with open(out_dir / "flows.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FLOW_FIELDS)
            for f in report.flows:
                w.writerow(
                    [
                        f.id,
                        label(f.src),
                        label(f.dst),
                        repr(f.size),
                        repr(f.arrival),
                        "" if f.completion is None else repr(f.completion),
                        f.first_path_len,
                        len(f.links),
                    ]
                )
    if config.decisions_csv:
        with open(out_dir / "decisions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DECISION_FIELDS)
            for dec in report.decisions:
                w.writerow(dec.row(label))
    if config.protocol_trace:
        with open(out_dir / "protocol_trace.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_FIELDS)
            for time, src, dst, kind, ports, outcome in report.protocol_trace:
                w.writerow([repr(time), label(src), label(dst), kind, ports, outcome])
    return summary_path


def digest(summary: dict) -> str:
    return (
        f"scheduler={summary['scheduler']} flows={summary['flows_completed']}/{summary['flows_total']} "
        f"mean_path={summary['byte_weighted_mean_path_length']:.4f} "
        f"fct_mean={summary['fct_mean']:.6g} fct_p99={summary['fct_p99']:.6g} "
        f"reconfigurations={summary['reconfigurations']}"
    )


# -- subcommands ------------------------------------------------------------


def cmd_run(args) -> int:
    config = _config(args)
    out_dir = Path(args.output or config.output_dir)
    report = simulate(config)
    path = write_outputs(report, config, out_dir)
    print(f"{digest(report.summary)} -> {path}")
    return EXIT_OK


def cmd_dump_table(args) -> int:
    config = _config(args)
    topology = _topology(config, args.scenario)
    v = _node(topology, args.tor)
    table = TableCache(topology).table(v)
    scheme = config.ip if args.ip else None
    sys.stdout.write(dump_table(table, scheme, single_da=config.k_d == 1))
    return EXIT_OK


def cmd_route(args) -> int:
    config = _config(args)
    topology = _topology(config, args.scenario)
    s, t = _node(topology, args.src), _node(topology, args.dst)
    path = greedy_route(topology, s, t)
    print(" ".join(str(a) for a in path))
    print(f"length {len(path) - 1}")
    return EXIT_OK


def cmd_dump_topology(args) -> int:
    config = _config(args)
    sys.stdout.write(_topology(config, args.scenario).dump())
    return EXIT_OK


def _parse_vary(items) -> list[tuple[str, list[str]]]:
    axes = []
    for item in items:
        key, sep, values = item.partition("=")
        key = key.strip()
        if not sep or not values.strip():
            raise UsageError(f"--vary expects key=v1,v2,..., got {item!r}")
        if key not in KEYS:
            raise ConfigError(f"{key}: unknown key")
        axes.append((key, [v.strip() for v in values.split(",")]))
    return axes


def _sweep_one(job):
    config, out_dir = job
    report = simulate(config)
    write_outputs(report, config, Path(out_dir))
    return report.summary


def cmd_sweep(args) -> int:
    base = Path(args.config)
    axes = _parse_vary(args.vary)
    try:
        raw_lines = base.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {base}: {exc.strerror}") from None
    raw = parse_lines(raw_lines, str(base))
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    out_root = Path(args.output or build_config(raw, base.parent).output_dir)
    jobs, labels = [], []
    # validate every variant before running any of them
    for k, combo in enumerate(itertools.product(*[vals for _, vals in axes])):
        variant = dict(raw)
        variant.update({key: val for (key, _), val in zip(axes, combo)})
        config = build_config(variant, base.parent)
        out_dir = out_root / f"variant_{k:03d}"
        jobs.append((config, str(out_dir)))
        labels.append({key: val for (key, _), val in zip(axes, combo)})
    if args.workers == 1:
        summaries = [_sweep_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            summaries = list(pool.map(_sweep_one, jobs))
    out_root.mkdir(parents=True, exist_ok=True)
    index = []
    for (config, out_dir), label, summary in zip(jobs, labels, summaries):
        (Path(out_dir) / "config.txt").write_text(render(config))
        index.append({"dir": out_dir, "vary": label, "summary": summary})
        print(f"{out_dir}: {' '.join(f'{k}={v}' for k, v in label.items())} {digest(summary)}")
    (out_root / "sweep.json").write_text(json.dumps(index, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="debruijn-net", description="Hybrid de Bruijn datacenter network toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("run", help="run one simulation")
    common(p, config_required=True)
    p.add_argument("--output", help="output directory (overrides output.dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("dump-table", help="print a ToR's reduced forwarding table")
    common(p)
    p.add_argument("tor", help="ToR address, e.g. 011")
    p.add_argument("--scenario", help="file of 'set-da <sender> <receiver> <switch>' lines")
    p.add_argument("--ip", action="store_true", help="append the IP prefix of each entry")
    p.set_defaults(func=cmd_dump_table)

    p = sub.add_parser("route", help="print the greedy route between two ToRs")
    common(p)
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--scenario", help="file of 'set-da <sender> <receiver> <switch>' lines")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("dump-topology", help="print every static and DA edge")
    common(p)
    p.add_argument("--scenario", help="file of 'set-da <sender> <receiver> <switch>' lines")
    p.set_defaults(func=cmd_dump_topology)

    p = sub.add_parser("sweep", help="run the cartesian product of config variants in parallel")
    common(p, config_required=True)
    p.add_argument("--vary", action="append", default=[], metavar="KEY=V1,V2", help="axis to sweep")
    p.add_argument("--workers", type=int, default=None, help="parallel worker processes")
    p.add_argument("--output", help="root directory for variant outputs")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
