import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factormatch.flow import FlowNetwork, brute_min_cut, cut_capacity, decompose_paths, max_flow


def _diamond():
    net = FlowNetwork(4, 0, 3)
    net.add_arc(0, 1, 3)
    net.add_arc(0, 2, 2)
    net.add_arc(1, 2, 1)
    net.add_arc(1, 3, 2)
    net.add_arc(2, 3, 3)
    return net


def _check_flow(net, res):
    t, h, c = net.arrays()
    assert (res.flow >= 0).all() and (res.flow <= c).all()
    bal = np.bincount(h, res.flow, net.n_nodes) - np.bincount(t, res.flow, net.n_nodes)
    inner = np.ones(net.n_nodes, bool)
    inner[[net.source, net.sink]] = False
    assert (bal[inner] == 0).all()
    assert bal[net.sink] == res.value


def test_diamond_example():
    net = _diamond()
    res = max_flow(net)
    assert res.value == 5
    _check_flow(net, res)
    assert cut_capacity(net, res.source_side) == 5
    assert res.source_side[0] and not res.source_side[3]


def test_disconnected_sink():
    net = FlowNetwork(3, 0, 2)
    net.add_arc(0, 1, 4)
    res = max_flow(net)
    assert res.value == 0 and res.source_side.tolist() == [True, True, False]


def test_parallel_arcs_share_flow_in_order():
    net = FlowNetwork(2, 0, 1)
    net.add_arc(0, 1, 2)
    net.add_arc(0, 1, 3)
    res = max_flow(net)
    assert res.value == 5 and res.flow.tolist() == [2, 3]
    net2 = FlowNetwork(3, 0, 2)
    net2.add_arc(0, 1, 2)
    net2.add_arc(0, 1, 3)
    net2.add_arc(1, 2, 4)
    assert max_flow(net2).flow.tolist() == [2, 2, 4]


def test_source_equals_sink_rejected():
    with pytest.raises(ValueError):
        max_flow(FlowNetwork(2, 0, 0))
    with pytest.raises(ValueError):
        FlowNetwork(2, 0, 1).add_arc(0, 1, -1)


def _random_net(seed, n):
    rng = np.random.default_rng(seed)
    net = FlowNetwork(n, 0, n - 1)
    for _ in range(int(rng.integers(n, 4 * n))):
        u, v = rng.integers(0, n, 2)
        if u != v:
            net.add_arc(int(u), int(v), int(rng.integers(0, 6)))
    return net


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 10))
def test_max_flow_equals_brute_min_cut(seed, n):
    net = _random_net(seed, n)
    res = max_flow(net)
    _check_flow(net, res)
    best, _ = brute_min_cut(net)
    assert res.value == best == cut_capacity(net, res.source_side)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12))
def test_decomposition_recounts_flow(seed, n):
    net = _random_net(seed, n)
    res = max_flow(net)
    paths = decompose_paths(net, res.flow)
    assert sum(p.amount for p in paths) == res.value
    per_arc = np.zeros(net.n_arcs, dtype=np.int64)
    for p in paths:
        assert p.nodes[0] == net.source and p.nodes[-1] == net.sink
        assert len(set(p.nodes)) == len(p.nodes)
        t, h, _ = net.arrays()
        for a, (u, v) in zip(p.arcs, zip(p.nodes, p.nodes[1:])):
            assert t[a] == u and h[a] == v
        per_arc[p.arcs] += p.amount
    assert (per_arc <= res.flow).all()


def test_decomposition_cancels_cycles():
    net = FlowNetwork(4, 0, 3)
    net.add_arc(0, 1, 1)
    net.add_arc(1, 2, 1)
    net.add_arc(2, 1, 1)
    net.add_arc(1, 3, 1)
    flow = np.array([1, 1, 1, 1])
    paths = decompose_paths(net, flow)
    assert [p.nodes for p in paths] == [[0, 1, 3]]


def test_dimacs_round_trip():
    net = _diamond()
    text = net.to_dimacs("diamond\nsecond line")
    assert text.splitlines()[:4] == ["c diamond", "c second line", "p max 4 5", "n 1 s"]
    back = FlowNetwork.from_dimacs(text)
    assert (back.n_nodes, back.source, back.sink) == (4, 0, 3)
    assert back.arrays()[2].tolist() == net.arrays()[2].tolist()
    assert max_flow(back).value == 5


def test_brute_min_cut_size_limit():
    with pytest.raises(ValueError):
        brute_min_cut(FlowNetwork(23, 0, 22))


def test_max_flow_deterministic():
    net = _random_net(7, 12)
    a, b = max_flow(net), max_flow(net)
    assert np.array_equal(a.flow, b.flow) and np.array_equal(a.source_side, b.source_side)
