"""Integral max-flow, min-cut witnesses and path decomposition.

Max-flow itself is delegated to :func:`scipy.sparse.csgraph.maximum_flow`
(Dinic).  Parallel arcs are aggregated before the call and the net flow
is spread back over them in arc order, so results depend only on the
order in which arcs were added.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.sparse import csr_array
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

__all__ = ["FlowNetwork", "FlowResult", "FlowPath", "max_flow", "brute_min_cut", "cut_capacity", "decompose_paths", "residual_source_side"]


@dataclass
class FlowNetwork:
    n_nodes: int
    source: int
    sink: int
    tails: list = field(default_factory=list)
    heads: list = field(default_factory=list)
    caps: list = field(default_factory=list)

    def add_arc(self, u: int, v: int, cap: int) -> int:
        if cap < 0:
            raise ValueError("negative capacity")
        self.tails.append(int(u))
        self.heads.append(int(v))
        self.caps.append(int(cap))
        return len(self.caps) - 1

    def add_edge(self, u: int, v: int, cap: int) -> tuple[int, int]:
        """Undirected edge as two opposite arcs."""
        return self.add_arc(u, v, cap), self.add_arc(v, u, cap)

    @property
    def n_arcs(self) -> int:
        return len(self.caps)

    def arrays(self):
        return (np.asarray(self.tails, dtype=np.int64), np.asarray(self.heads, dtype=np.int64), np.asarray(self.caps, dtype=np.int64))

    def to_dimacs(self, comment: str = "") -> str:
        lines = []
        for c in comment.splitlines():
            lines.append(f"c {c}")
        lines.append(f"p max {self.n_nodes} {self.n_arcs}")
        lines.append(f"n {self.source + 1} s")
        lines.append(f"n {self.sink + 1} t")
        lines.extend(f"a {u + 1} {v + 1} {c}" for u, v, c in zip(self.tails, self.heads, self.caps))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dimacs(cls, text: str) -> "FlowNetwork":
        net = None
        s = t = None
        arcs = []
        for line in text.splitlines():
            tok = line.split()
            if not tok or tok[0] == "c":
                continue
            if tok[0] == "p":
                n = int(tok[2])
            elif tok[0] == "n":
                if tok[2] == "s":
                    s = int(tok[1]) - 1
                else:
                    t = int(tok[1]) - 1
            elif tok[0] == "a":
                arcs.append((int(tok[1]) - 1, int(tok[2]) - 1, int(tok[3])))
        net = cls(n, s, t)
        for u, v, c in arcs:
            net.add_arc(u, v, c)
        return net


@dataclass
class FlowResult:
    value: int
    flow: np.ndarray
    source_side: np.ndarray

    def cut_arcs(self, net: FlowNetwork) -> np.ndarray:
        t, h, _ = net.arrays()
        return np.flatnonzero(self.source_side[t] & ~self.source_side[h])


@dataclass
class FlowPath:
    nodes: list
    arcs: list
    amount: int = 1


def cut_capacity(net: FlowNetwork, source_side) -> int:
    t, h, c = net.arrays()
    side = np.asarray(source_side, dtype=bool)
    return int(c[side[t] & ~side[h]].sum())


def residual_source_side(net: FlowNetwork, flow: np.ndarray) -> np.ndarray:
    """Nodes reachable from the source in the residual graph."""
    t, h, c = net.arrays()
    fwd = flow < c
    bwd = flow > 0
    rows = np.r_[t[fwd], h[bwd]]
    cols = np.r_[h[fwd], t[bwd]]
    g = csr_array((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(net.n_nodes, net.n_nodes))
    order = breadth_first_order(g, net.source, directed=True, return_predecessors=False)
    side = np.zeros(net.n_nodes, dtype=bool)
    side[order] = True
    return side


def max_flow(net: FlowNetwork) -> FlowResult:
    if net.source == net.sink:
        raise ValueError("source and sink coincide")
    t, h, c = net.arrays()
    n = net.n_nodes
    flow = np.zeros(t.size, dtype=np.int64)
    live = (t != h) & (c > 0)
    if not live.any():
        side = residual_source_side(net, flow)
        return FlowResult(0, flow, side)
    key = t[live] * n + h[live]
    ukey, inv = np.unique(key, return_inverse=True)
    agg = np.bincount(inv, weights=c[live]).astype(np.int64)
    if agg.max() > np.iinfo(np.int32).max:
        raise OverflowError("capacity exceeds int32")
    mat = csr_array((agg.astype(np.int32), (ukey // n, ukey % n)), shape=(n, n))
    res = maximum_flow(mat, net.source, net.sink, method="dinic")
    fmat = res.flow.tocsr()
    # net flow per aggregated ordered pair, positive part only
    net_f = np.asarray(fmat[ukey // n, ukey % n]).reshape(-1).astype(np.int64)
    net_f = np.maximum(net_f, 0)
    idx = np.flatnonzero(live)
    order = np.lexsort((idx, inv))
    remaining = net_f.copy()
    for a in order:
        g = inv[a]
        if remaining[g] == 0:
            continue
        arc = idx[a]
        take = min(int(c[arc]), int(remaining[g]))
        flow[arc] = take
        remaining[g] -= take
    value = int(res.flow_value)
    return FlowResult(value, flow, residual_source_side(net, flow))


def brute_min_cut(net: FlowNetwork) -> tuple[int, np.ndarray]:
    """Exhaustive minimum cut (for small networks)."""
    inner = [v for v in range(net.n_nodes) if v not in (net.source, net.sink)]
    if len(inner) > 20:
        raise ValueError("too many nodes for exhaustive search")
    t, h, c = net.arrays()
    best, best_side = None, None
    for bits in product((False, True), repeat=len(inner)):
        side = np.zeros(net.n_nodes, dtype=bool)
        side[net.source] = True
        side[inner] = bits
        cap = int(c[side[t] & ~side[h]].sum())
        if best is None or cap < best:
            best, best_side = cap, side
    return best, best_side


def decompose_paths(net: FlowNetwork, flow: np.ndarray, value: int | None = None) -> list[FlowPath]:
    """Split an integral flow into source-sink paths, cancelling cycles met
    on the way.  Arcs are explored in index order."""
    t, h, _ = net.arrays()
    rem = np.asarray(flow, dtype=np.int64).copy()
    if value is None:
        out_s = rem[t == net.source].sum() - rem[h == net.source].sum()
        value = int(out_s)
    adj: list[list[int]] = [[] for _ in range(net.n_nodes)]
    for a in np.argsort(t, kind="stable"):
        adj[t[a]].append(int(a))
    ptr = [0] * net.n_nodes
    paths: list[FlowPath] = []
    emitted = 0

    def next_arc(u):
        lst = adj[u]
        while ptr[u] < len(lst) and rem[lst[ptr[u]]] == 0:
            ptr[u] += 1
        if ptr[u] == len(lst):
            raise RuntimeError(f"flow conservation violated at node {u}")
        return lst[ptr[u]]

    while emitted < value:
        nodes = [net.source]
        arcs: list[int] = []
        pos = {net.source: 0}
        u = net.source
        while u != net.sink:
            a = next_arc(u)
            v = int(h[a])
            if v in pos:
                k = pos[v]
                cyc = arcs[k:] + [a]
                amt = int(rem[cyc].min())
                rem[cyc] -= amt
                for w in nodes[k + 1 :]:
                    del pos[w]
                nodes = nodes[: k + 1]
                arcs = arcs[:k]
                u = v
                continue
            nodes.append(v)
            arcs.append(a)
            pos[v] = len(nodes) - 1
            u = v
        amt = min(int(rem[arcs].min()), value - emitted)
        rem[arcs] -= amt
        emitted += amt
        paths.append(FlowPath(nodes, arcs, amt))
    return paths
