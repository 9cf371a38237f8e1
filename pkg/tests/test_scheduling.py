import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from debruijn_net.debruijn import HybridTopology, distance_matrix
from debruijn_net.forwarding import DOWN_EVENT, UP_EVENT, TableCache
from debruijn_net.scheduling import (
    SchedulerTiming,
    apply_schedule,
    bfs_da_links,
    greedy_da_links,
    hybrid_distance,
    top_demands,
    validate_demand,
)


def _demand(n, entries):
    D = np.zeros((n, n))
    for s, t, vol in entries:
        D[s, t] = vol
    return D


def _random_demand(rng, n, count, values=(1, 2, 3, 5, 8, 13)):
    D = np.zeros((n, n))
    for _ in range(count):
        s, t = rng.sample(range(n), 2)
        D[s, t] = rng.choice(values)
    return D


def test_bfs_first_shortcut_is_direct():
    topo = HybridTopology(2, 3, 1)
    assert bfs_da_links(topo, _demand(8, [(3, 1, 10.0)])) == [(3, 1, 0)]


def test_bfs_skips_adjacent_pairs():
    topo = HybridTopology(2, 3, 1)
    assert bfs_da_links(topo, _demand(8, [(3, 6, 10.0)])) == []


def test_bfs_logs_every_considered_demand():
    topo = HybridTopology(2, 3, 1)
    log = []
    bfs_da_links(topo, _demand(8, [(3, 1, 10.0), (3, 6, 5.0)]), log=log)
    assert [(d.demand_src, d.demand_dst, d.action) for d in log] == [(3, 1, "set"), (3, 6, "skip")]


@pytest.mark.parametrize("seed", range(40))
def test_bfs_matches_reference_at_n8(seed):
    rng = random.Random(seed)
    D = _random_demand(rng, 8, 4)
    want = oracles.reference_bfs_da_links(2, 3, 1, D.tolist())
    assert bfs_da_links(HybridTopology(2, 3, 1), D) == want


@pytest.mark.parametrize("seed", range(20))
def test_bfs_matches_reference_multi_switch(seed):
    rng = random.Random(1000 + seed)
    b, d, k_d = rng.choice([(2, 3, 2), (2, 4, 2), (3, 2, 2), (2, 4, 3)])
    D = _random_demand(rng, b**d, rng.randrange(1, 30))
    want = oracles.reference_bfs_da_links(b, d, k_d, D.tolist())
    assert bfs_da_links(HybridTopology(b, d, k_d), D) == want


def test_greedy_hand_example():
    a, b_, c, d = 0, 1, 2, 3
    D = _demand(8, [(a, b_, 100), (a, c, 90), (d, b_, 80)])
    assert greedy_da_links(HybridTopology(2, 3, 1), D) == [(a, b_, 0)]


def test_greedy_empty_and_per_sender_cap():
    topo = HybridTopology(2, 4, 2)
    assert greedy_da_links(topo, np.zeros((16, 16))) == []
    D = _demand(16, [(5, t, 100 - t) for t in range(16) if t != 5])
    links = greedy_da_links(topo, D)
    assert len(links) == 2 and {i for _, _, i in links} == {0, 1}


@pytest.mark.parametrize("seed", range(30))
def test_greedy_matches_reference(seed):
    rng = random.Random(seed)
    k_d = rng.randrange(1, 4)
    D = _random_demand(rng, 16, rng.randrange(0, 60))
    assert greedy_da_links(HybridTopology(2, 4, k_d), D) == oracles.reference_greedy_da_links(16, k_d, D.tolist())


def test_greedy_subsumption_on_disjoint_pairs():
    # a perfect matching of demands always fits one switch
    perm = [(v, (v + 5) % 16, 10.0 + v) for v in range(16)]
    links = greedy_da_links(HybridTopology(2, 4, 1), _demand(16, perm))
    assert sorted((s, t) for s, t, _ in links) == sorted((s, t) for s, t, _ in perm)


def test_top_demands_order_and_limit():
    D = _demand(4, [(0, 1, 5.0), (2, 3, 5.0), (1, 0, 9.0), (3, 2, 1.0)])
    assert top_demands(D, 3) == [(1, 0, 9.0), (0, 1, 5.0), (2, 3, 5.0)]


@pytest.mark.parametrize(
    "bad",
    [np.zeros((3, 3)), -np.ones((8, 8)) + np.eye(8), np.eye(8), np.full((8, 8), np.nan)],
)
def test_demand_validation(bad):
    with pytest.raises(ValueError):
        validate_demand(bad, 8)


def test_k_d_above_topology_rejected():
    with pytest.raises(ValueError):
        greedy_da_links(HybridTopology(2, 3, 1), np.zeros((8, 8)), k_d=2)


def test_hybrid_distance_static_and_worked_example():
    topo = HybridTopology(2, 3, 1)
    dist = distance_matrix(2, 3)
    assert all(hybrid_distance(topo, s, t) == dist[s, t] for s in range(8) for t in range(8))
    link, _ = topo.set_da_link("011", "100", 0)
    topo.activate(link, 0)
    assert hybrid_distance(topo, "011", "001") == 2


def test_hybrid_distance_never_exceeds_static():
    rng = random.Random(3)
    dist = distance_matrix(2, 4)
    for _ in range(100):
        topo = HybridTopology(2, 4, 2)
        for i in range(2):
            perm = list(range(16))
            rng.shuffle(perm)
            for v, w in enumerate(perm):
                if v != w:
                    topo.activate(topo.set_da_link(v, w, i)[0], 0)
        tables = TableCache(topo)
        for s in range(16):
            for t in range(16):
                assert hybrid_distance(topo, s, t, tables=tables) <= dist[s, t]


def test_apply_schedule_timing():
    topo = HybridTopology(2, 3, 1)
    res = apply_schedule(topo, [(3, 1, 0)], SchedulerTiming(1.0, 2.0, 5.0), now=10.0)
    (link,) = res.set_links
    assert (link.up_at, link.reserved_until) == (12.0, 17.0)
    assert [(e.time, e.kind) for e in res.events] == [(12.0, UP_EVENT)]
    # the port is held until 17
    res2 = apply_schedule(topo, [(3, 2, 0)], SchedulerTiming(1.0, 2.0, 5.0), now=16.0)
    assert res2.dropped == [(3, 2, 0)] and topo.contains(link)
    res3 = apply_schedule(topo, [(3, 2, 0)], SchedulerTiming(1.0, 2.0, 5.0), now=17.0)
    assert [(e.time, e.kind, e.link is link) for e in res3.events][0] == (17.0, DOWN_EVENT, True)


def test_zero_delay_link_is_usable_same_tick():
    topo = HybridTopology(2, 3, 1)
    res = apply_schedule(topo, [(3, 1, 0)], SchedulerTiming(), now=4.0)
    (event,) = res.events
    assert event.time == 4.0 and topo.activate(event.link, 4.0)


def test_identical_link_is_a_no_op():
    topo = HybridTopology(2, 3, 1)
    timing = SchedulerTiming(1.0, 0.5, 3.0)
    first = apply_schedule(topo, [(3, 1, 0)], timing, now=0.0)
    again = apply_schedule(topo, [(3, 1, 0)], timing, now=1.0)
    assert again.events == [] and again.kept == first.set_links


def test_scheduler_respects_reserved_ports_across_rounds():
    topo = HybridTopology(2, 3, 1)
    timing = SchedulerTiming(1.0, 0.0, 5.0)
    apply_schedule(topo, greedy_da_links(topo, _demand(8, [(3, 1, 10.0)])), timing, 0.0)
    # a bigger demand from the same sender cannot steal the reserved port
    links = greedy_da_links(topo, _demand(8, [(3, 2, 99.0)]), now=1.0)
    assert links == []
    links = greedy_da_links(topo, _demand(8, [(3, 2, 99.0)]), now=5.0)
    assert links == [(3, 2, 0)]


def test_bfs_keeps_links_on_current_route():
    topo = HybridTopology(2, 3, 1)
    timing = SchedulerTiming(1.0, 0.0, 0.0)
    D = _demand(8, [(3, 1, 10.0)])
    res = apply_schedule(topo, bfs_da_links(topo, D), timing, 0.0)
    topo.activate(res.set_links[0], 0.0)
    # second round: the shortcut is on the route already; nothing new to set
    assert bfs_da_links(topo, D, now=1.0) == []


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_schedulers_are_deterministic(seed, k_d):
    rng = random.Random(seed)
    D = _random_demand(rng, 16, 25)
    for fn in (bfs_da_links, greedy_da_links):
        assert fn(HybridTopology(2, 4, k_d), D) == fn(HybridTopology(2, 4, k_d), D.copy())


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_bfs_improvement_condition(seed, k_d):
    rng = random.Random(seed)
    topo = HybridTopology(2, 4, k_d)
    dist = distance_matrix(2, 4)
    now = 0.0
    for _ in range(3):
        D = _random_demand(rng, 16, 30)
        tables = TableCache(topo)
        log = []
        links = bfs_da_links(topo, D, now=now, tables=tables, log=log)
        for dec in log:
            if dec.action == "set":
                s, t, x, y = dec.demand_src, dec.demand_dst, dec.sender, dec.receiver
                assert dist[s, x] + dist[y, t] + 1 <= hybrid_distance(topo, s, t, tables=tables)
                assert x != y and y not in {topo.static_successor(x, i) for i in range(2)}
        res = apply_schedule(topo, links, SchedulerTiming(1.0, 0.0, 0.5), now)
        for link in res.set_links:
            topo.activate(link, now)
        assert topo.check_matching() == []
        now += 1.0


def test_timing_validation():
    with pytest.raises(ValueError):
        SchedulerTiming(period=0)
    with pytest.raises(ValueError):
        SchedulerTiming(delay=-1)
