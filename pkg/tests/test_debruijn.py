import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from debruijn_net.debruijn import (
    DeBruijnAddress,
    HybridTopology,
    PortConflictError,
    build_debruijn,
    debruijn_distance,
    decompose_matchings,
    distance_matrix,
    shift_distance,
)

SIZES = [(2, 2), (2, 3), (2, 4), (3, 2), (3, 3), (4, 2), (5, 2)]


@st.composite
def addresses(draw, max_b=5, max_d=5):
    b = draw(st.integers(2, max_b))
    d = draw(st.integers(2, max_d))
    return b, d, draw(st.integers(0, b**d - 1))


def test_address_parse_and_index():
    a = DeBruijnAddress.parse("011")
    assert a.symbols == (0, 1, 1) and a.d == 3 and a.index == 3
    assert str(DeBruijnAddress.from_index(6, 2, 3)) == "110"


def test_wide_alphabet_uses_dotted_form():
    a = DeBruijnAddress.from_index(37 * 40 + 5, 40, 2)
    assert str(a) == "37.5"
    assert DeBruijnAddress.parse("37.5", 40) == a


@given(addresses())
def test_index_round_trip(case):
    b, d, v = case
    a = DeBruijnAddress.from_index(v, b, d)
    assert a.index == v
    assert DeBruijnAddress.parse(str(a), b) == a


def test_bad_symbols_rejected():
    with pytest.raises(ValueError):
        DeBruijnAddress.parse("012", 2)
    with pytest.raises(ValueError):
        DeBruijnAddress.from_index(8, 2, 3)


def test_worked_distance():
    assert debruijn_distance(DeBruijnAddress.parse("011"), DeBruijnAddress.parse("001")) == 3
    assert shift_distance(3, 6, 2, 3) == 1


def test_distance_rejects_mixed_graphs():
    with pytest.raises(ValueError):
        debruijn_distance(DeBruijnAddress.parse("011"), DeBruijnAddress.parse("0110"))


@pytest.mark.parametrize("b,d", SIZES)
def test_distance_matrix_matches_bfs(b, d):
    dist = distance_matrix(b, d)
    ref = oracles.all_pairs(oracles.adjacency(b, d))
    for v in range(b**d):
        for w in range(b**d):
            assert dist[v, w] == ref[v][w]


def test_distance_matrix_is_read_only():
    with pytest.raises(ValueError):
        distance_matrix(2, 3)[0, 1] = 0


@given(addresses(max_b=4, max_d=4), st.data())
def test_distance_properties(case, data):
    b, d, v = case
    w = data.draw(st.integers(0, b**d - 1))
    u = data.draw(st.integers(0, b**d - 1))
    D = distance_matrix(b, d)
    assert (D[v, w] == 0) == (v == w)
    assert 0 <= D[v, w] <= d
    assert D[v, w] <= D[v, u] + D[u, w]


@pytest.mark.parametrize("b,d", SIZES)
def test_static_graph_shape(b, d):
    topo = build_debruijn(b, d)
    edges = topo.static_edges()
    assert len(edges) == b ** (d + 1)
    expected = {(oracles.to_index(v, b), oracles.to_index(w, b)) for v, w in oracles.shift_edges(b, d)}
    assert {(v, w) for v, w, _ in edges} == expected
    outdeg = {v: 0 for v in range(b**d)}
    indeg = {v: 0 for v in range(b**d)}
    for v, w, _ in edges:
        outdeg[v] += 1
        indeg[w] += 1
    assert set(outdeg.values()) == {b} and set(indeg.values()) == {b}


def test_port_labels_match_shift_symbol():
    topo = build_debruijn(2, 3)
    assert topo.static_successor(3, 0) == 6  # 011 -> 110
    assert topo.static_successor(3, 1) == 7  # 011 -> 111
    assert [(str(p), topo.label(w)) for p, w in topo.static_neighbors(3)] == [("0", "110"), ("1", "111")]


def test_self_loops_are_not_neighbors():
    topo = build_debruijn(2, 3)
    assert [w for _, w in topo.static_neighbors(0)] == [1]


@pytest.mark.parametrize("b,d", SIZES)
def test_decomposition_into_permutations(b, d):
    ms = decompose_matchings(b, d)
    assert len(ms) == b
    union = set()
    for m in ms:
        assert sorted(m.mapping) == list(range(b**d))
        union |= set(m.edges())
    assert union == {(v, w) for v, w, _ in build_debruijn(b, d).static_edges()}
    # each node's b out-edges land in b distinct matchings
    for v in range(b**d):
        assert len({m(v) for m in ms}) == b


def test_da_link_guards():
    topo = HybridTopology(2, 3, 1)
    with pytest.raises(ValueError):
        topo.set_da_link("011", "011", 0)
    with pytest.raises(ValueError):
        topo.set_da_link("011", "100", 1)
    link, displaced = topo.set_da_link("011", "100", 0, now=0, delay=0, reservation=5)
    assert displaced == []
    with pytest.raises(PortConflictError):
        topo.set_da_link("011", "101", 0, now=1, displace=True)
    with pytest.raises(PortConflictError):
        topo.set_da_link("000", "100", 0, now=1, displace=True)
    same, _ = topo.set_da_link("011", "100", 0, now=2)
    assert same is link


def test_reservation_timing_contract():
    topo = HybridTopology(2, 3, 1)
    link, _ = topo.set_da_link(3, 4, 0, now=10, delay=2, reservation=5)
    assert link.up_at == 12 and link.reserved_until == 17
    assert not topo.activate(link, 11.9)
    assert topo.activate(link, 12)
    with pytest.raises(PortConflictError):
        topo.set_da_link(3, 5, 0, now=16.9, displace=True)
    new, displaced = topo.set_da_link(3, 5, 0, now=17, displace=True)
    assert displaced == [link] and not topo.contains(link) and topo.contains(new)


def test_unconfirmed_link_never_activates():
    topo = HybridTopology(2, 3, 1)
    link, _ = topo.set_da_link(3, 4, 0, confirmed=False)
    assert not topo.activate(link, 100)
    link.confirmed = True
    assert topo.activate(link, 100)


def test_neighbors_include_only_up_da_links():
    topo = HybridTopology(2, 3, 2)
    link, _ = topo.set_da_link(3, 4, 1, delay=1)
    assert [w for _, w in topo.neighbors(3)] == [6, 7]
    topo.activate(link, 1)
    assert [(str(p), w) for p, w in topo.neighbors(3)] == [("0", 6), ("1", 7), ("DA1", 4)]


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15), st.integers(0, 2), st.booleans()), max_size=60))
def test_matching_property_survives_any_sequence(ops):
    topo = HybridTopology(2, 4, 3)
    for step, (s, t, i, displace) in enumerate(ops):
        try:
            topo.set_da_link(s, t, i, now=step, reservation=2, displace=displace)
        except (ValueError, PortConflictError):
            pass
        assert topo.check_matching() == []
        senders = [(l.sender, l.switch) for l in topo.da_links()]
        receivers = [(l.receiver, l.switch) for l in topo.da_links()]
        assert len(set(senders)) == len(senders) and len(set(receivers)) == len(receivers)


def test_copy_is_independent():
    topo = HybridTopology(2, 3, 1)
    topo.set_da_link(3, 4, 0)
    twin = topo.copy()
    twin.teardown(twin.out_link(3, 0))
    assert topo.out_link(3, 0) is not None and twin.out_link(3, 0) is None


def test_dump_lists_every_edge():
    topo = HybridTopology(2, 3, 1)
    topo.set_da_link("011", "100", 0)
    lines = topo.dump().splitlines()
    assert len(lines) == 16 + 1
    assert "011 110 static 0" in lines and lines[-1] == "011 100 da 0"


def test_all_addresses_enumerated_in_order():
    from debruijn_net.debruijn import iter_addresses

    got = [a.symbols for a in iter_addresses(3, 2)]
    assert got == list(itertools.product(range(3), repeat=2))
