"""Hybrid de Bruijn datacenter networks: static shift topology plus demand-aware links."""
from .debruijn import (
    DaLink,
    DeBruijnAddress,
    HybridTopology,
    Port,
    build_debruijn,
    debruijn_distance,
    decompose_matchings,
    distance_matrix,
)
from .forwarding import ForwardingTable, build_table, dump_table, greedy_route, lookup, update_table_on_link_event
from .scheduling import apply_schedule, bfs_da_links, greedy_da_links, hybrid_distance

__all__ = [
    "DaLink",
    "DeBruijnAddress",
    "ForwardingTable",
    "HybridTopology",
    "Port",
    "apply_schedule",
    "bfs_da_links",
    "build_debruijn",
    "build_table",
    "debruijn_distance",
    "decompose_matchings",
    "distance_matrix",
    "dump_table",
    "greedy_da_links",
    "greedy_route",
    "hybrid_distance",
    "lookup",
    "update_table_on_link_event",
]
