"""Staged flow-based rematching for d >= 3.

Pipeline:

* classify chain cells at and above the basic level ``k`` as bad (surplus at
  least ``f(|C|)`` or not a pseudocube), ripe (not bad, some brick bad, and
  maximal) and elementary; the elementary cells form the partition ``P``;
* ``M_0`` is the greedy matching inside the cells of ``P``;
* at stage ``i`` every cubic cell ``K`` of the coarsening ``P_a(i)`` picks a
  sparse set ``U_i`` of ``sur(K)`` majority-colour sites, routes a flow in the
  network obtained by contracting the ``P``-cells of ``K``, and flips the
  alternating paths read off the flow so that exactly ``K \\ U_i`` is matched.

A cell whose flow falls short keeps its matching and logs a minimum cut.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .flow import FlowNetwork, cut_capacity, decompose_paths, max_flow
from .lattice import Configuration, Torus
from .matching import Matching, greedy_stage
from .partitions import CUBE, Partition, PartitionChain, Schedule, build_chain, pseudocube_report

__all__ = [
    "SurplusFn",
    "ScheduleError",
    "capacity_unit",
    "default_k",
    "surplus",
    "Classification",
    "classify",
    "select_U",
    "DEFAULT_C_SEP",
    "ContractedCell",
    "build_network",
    "lift_paths",
    "StageEvent",
    "Result3d",
    "run3d",
    "check_schedule",
    "chernoff_bound",
]


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class SurplusFn:
    """Threshold ``f`` for bad cells.

    ``power``: ``x^((d - 1 - eps/2) / d)``.
    ``loglog``: ``x^((d-1)/d) / (ln x * ln ln x)``; only defined for
    ``x > e^e``, smaller cells get an infinite threshold.
    """

    form: str = "power"
    epsilon: float = 0.5

    def __post_init__(self):
        if self.form not in ("power", "loglog"):
            raise ValueError(f"unknown surplus form {self.form!r}")

    def __call__(self, x, d: int):
        x = np.asarray(x, dtype=float)
        if self.form == "power":
            return x ** ((d - 1 - self.epsilon / 2) / d)
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(x)
            val = x ** ((d - 1) / d) / (lx * np.log(lx))
        return np.where(x > math.e**math.e, val, np.inf)


def capacity_unit(k: int, d: int) -> tuple[int, float]:
    """``cap0 = k^(d/(d-1)) / (12 d')`` with the smallest ``d'`` in
    ``[d, 2d)`` that makes it a positive integer."""
    if d < 2:
        raise ScheduleError("capacity rule needs d >= 2")
    base = k ** (d / (d - 1)) / 12.0
    cap0 = math.floor(base / d + 1e-9)
    if cap0 < 1:
        raise ScheduleError(f"k={k} too small in d={d}: no d' in [d, 2d) gives a positive integer capacity")
    dprime = base / cap0
    if not d <= dprime + 1e-12 or not dprime < 2 * d:
        raise ScheduleError(f"k={k}: d'={dprime:.3f} outside [d, 2d)")
    return cap0, dprime


def default_k(d: int) -> int:
    k = 2
    while True:
        try:
            capacity_unit(k, d)
            return k
        except ScheduleError:
            k *= 2


def surplus(config: Configuration, sites) -> int:
    s = np.asarray(sites, dtype=np.int64)
    blue = int(config.flat_labels[s].sum(dtype=np.int64))
    return abs(2 * blue - s.size)


@dataclass(eq=False)
class Classification:
    basic: int
    bad: dict
    prop: dict
    ripe_level: np.ndarray
    P: Partition
    P_level: np.ndarray
    chain: PartitionChain

    def coarsening(self, i: int) -> Partition:
        """Finest common coarsening of ``Q_i`` and ``P``."""
        if i < self.basic:
            raise ValueError("coarsenings exist from the basic level up")
        lvl = np.maximum(self.ripe_level, i)
        return _mixed_partition(self.chain, lvl, f"P{i}")

    def n_ripe(self) -> int:
        return int(np.unique(self.P.ids[self.ripe_level > self.basic]).size)


def _mixed_partition(chain: PartitionChain, lvl: np.ndarray, name: str) -> Partition:
    torus = chain.torus
    key = np.empty(torus.n, dtype=np.int64)
    off = 0
    for j, p in enumerate(chain.levels):
        sel = lvl == j
        if sel.any():
            key[sel] = off + p.ids[sel]
        off += p.n_cells
    ids = np.unique(key, return_inverse=True)[1].reshape(-1)
    first = np.unique(ids, return_index=True)[1]
    anchors = np.empty((first.size, torus.d), dtype=np.int64)
    kinds = np.empty(first.size, dtype=np.uint8)
    for j, p in enumerate(chain.levels):
        sel = lvl[first] == j
        if sel.any():
            c = p.ids[first[sel]]
            anchors[sel] = p.anchors[c]
            kinds[sel] = p.kinds[c]
    return Partition(torus, ids, anchors, kinds, 0, name)


def classify(config: Configuration, chain: PartitionChain, k: int, f: SurplusFn) -> Classification:
    torus = config.torus
    d = torus.d
    j0 = chain.level_index(k)
    lab = config.flat_labels
    bad: dict[int, np.ndarray] = {}
    prop: dict[int, np.ndarray] = {}
    for j in range(j0, len(chain.levels)):
        p = chain.levels[j]
        size = p.cell_sizes
        blue = np.bincount(p.ids, weights=lab, minlength=p.n_cells)
        sur = np.abs(2 * blue - size)
        pc = pseudocube_report(p, chain.sizes[j]).ok
        fresh_bad = (sur >= f(size, d)) | ~pc
        if j == j0:
            bad[j] = fresh_bad
            prop[j] = np.zeros(p.n_cells, dtype=bool)
            continue
        q = chain.levels[j - 1]
        rep = np.unique(p.ids, return_index=True)[1]
        prev = q.ids[rep]
        inherited = q.cell_sizes[prev] == size
        brick_bad = np.bincount(p.ids, weights=bad[j - 1][q.ids], minlength=p.n_cells) > 0
        bad[j] = np.where(inherited, bad[j - 1][prev], fresh_bad)
        prop[j] = np.where(inherited, prop[j - 1][prev], ~bad[j] & brick_bad)
    lvl = np.full(torus.n, j0, dtype=np.int64)
    for j in range(j0 + 1, len(chain.levels)):
        lvl = np.where(prop[j][chain.levels[j].ids], j, lvl)
    P = _mixed_partition(chain, lvl, "P")
    first = np.unique(P.ids, return_index=True)[1]
    return Classification(j0, bad, prop, lvl, P, lvl[first], chain)


def no_bad_violations(config: Configuration, cls: Classification, f: SurplusFn, levels=None) -> int:
    """Number of bad cells among the coarsenings ``P_i`` (expected zero)."""
    chain = cls.chain
    lab = config.flat_labels
    out = 0
    for i in levels if levels is not None else range(cls.basic, len(chain.levels)):
        Pi = cls.coarsening(i)
        size = Pi.cell_sizes
        blue = np.bincount(Pi.ids, weights=lab, minlength=Pi.n_cells)
        sur = np.abs(2 * blue - size)
        out += int((sur >= f(size, config.d)).sum())
    return out


@lru_cache(maxsize=None)
def _ball_offsets(d: int, r: int) -> np.ndarray:
    rng = np.arange(-r, r + 1)
    return np.stack(np.meshgrid(*([rng] * d), indexing="ij"), axis=-1).reshape(-1, d)


# separation constant; at 1.0 the greedy selection of U runs out of sites in
# some d=3 cells of side 32, at 0.75 it does not
DEFAULT_C_SEP = 0.75


def separation(cell_size: int, d: int, epsilon: float, c_sep: float = DEFAULT_C_SEP) -> int:
    return int(math.ceil(c_sep * cell_size ** ((1 + epsilon / 2) / d**2) - 1e-12))


def select_U(torus: Torus, labels: np.ndarray, sites, anchor, count: int, color: int, sep: int) -> np.ndarray | None:
    """Greedy sparse subset: scan sites of ``color`` by offset from ``anchor``,
    accept those at distance ``>= sep`` from all accepted ones, stop after
    ``count``.  Returns ``None`` when fewer than ``count`` are found."""
    if count == 0:
        return np.empty(0, dtype=np.int64)
    sites = np.asarray(sites, dtype=np.int64)
    cand = sites[labels[sites] == color]
    cand = cand[np.argsort(torus.offset_key(cand, anchor), kind="stable")]
    offs = _ball_offsets(torus.d, max(sep - 1, 0))
    blocked: set[int] = set()
    acc: list[int] = []
    coords = torus.unflat(cand)
    for x, cx in zip(cand.tolist(), coords):
        if x in blocked:
            continue
        acc.append(x)
        if len(acc) == count:
            break
        blocked.update(torus.flat(cx + offs).tolist())
    if len(acc) < count:
        return None
    return np.asarray(acc, dtype=np.int64)


@dataclass(eq=False)
class ContractedCell:
    sites: np.ndarray
    site_node: np.ndarray
    n_nodes: int
    node_boundary: np.ndarray
    node_key: np.ndarray
    rep: dict
    network: FlowNetwork
    arc_site: dict
    sigma: int
    multi_edges: dict

    @property
    def source(self) -> int:
        return self.n_nodes

    @property
    def sink(self) -> int:
        return self.n_nodes + 1


def build_network(
    torus: Torus,
    labels: np.ndarray,
    K_sites,
    K_anchor,
    P: Partition,
    Pb: Partition,
    pb_boundary_site: np.ndarray,
    U_prev,
    U_cur,
    cap0: int,
) -> ContractedCell:
    """Contract the ``P``-cells of ``K`` to nodes and attach the unit arcs of
    the leftover sites.  Raises ``LookupError`` if some leftover site's
    ``P_b``-cell has no boundary node."""
    ks = np.asarray(K_sites, dtype=np.int64)
    kkey = torus.offset_key(ks, K_anchor)
    order = np.argsort(kkey, kind="stable")
    ks = ks[order]
    pid = P.ids[ks]
    uniq, first = np.unique(pid, return_index=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
    site_node = rank[np.searchsorted(uniq, pid)]
    m = int(uniq.size)
    loc = {int(s): i for i, s in enumerate(ks.tolist())}
    loc_arr = np.full(torus.n, -1, dtype=np.int64)
    loc_arr[ks] = np.arange(ks.size)

    # lattice edges between different nodes, counted per node pair
    pu, pv = [], []
    coords = torus.coords[ks]
    for ax in range(torus.d):
        step = np.zeros(torus.d, dtype=np.int64)
        step[ax] = 1
        nb = torus.flat(coords + step)
        li = loc_arr[nb]
        ok = li >= 0
        a = site_node[ok]
        b = site_node[li[ok]]
        diff = a != b
        pu.append(np.minimum(a, b)[diff])
        pv.append(np.maximum(a, b)[diff])
    pu = np.concatenate(pu)
    pv = np.concatenate(pv)
    pairs, mult = np.unique(pu * m + pv, return_counts=True)

    nb_site = pb_boundary_site[ks]
    node_boundary = np.bincount(site_node, weights=nb_site, minlength=m) > 0
    pb = Pb.ids[ks]
    bkey = torus.offset_key(ks, Pb.anchors[pb])
    node_key = np.full(m, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(node_key, site_node, bkey)
    node_pb = np.empty(m, dtype=np.int64)
    node_pb[site_node] = pb
    rep: dict[int, int] = {}
    bn = np.flatnonzero(node_boundary)
    for nd in bn[np.lexsort((node_key[bn], node_pb[bn]))].tolist():
        rep.setdefault(int(node_pb[nd]), nd)

    net = FlowNetwork(m + 2, m, m + 1)
    multi = {}
    for key, c in zip(pairs.tolist(), mult.tolist()):
        u, v = divmod(key, m)
        multi[(u, v)] = c
        if node_boundary[u] and node_boundary[v]:
            net.add_edge(u, v, c * cap0)

    U_prev = np.asarray(U_prev, dtype=np.int64)
    U_cur = np.asarray(U_cur, dtype=np.int64)
    both = np.intersect1d(U_prev, U_cur)
    prev_only = np.setdiff1d(U_prev, both)
    cur_only = np.setdiff1d(U_cur, both)
    term = np.concatenate([prev_only, cur_only])
    in_cur = np.concatenate([np.zeros(prev_only.size, bool), np.ones(cur_only.size, bool)])
    o = np.argsort(loc_arr[term], kind="stable")
    term, in_cur = term[o], in_cur[o]
    arc_site = {}
    n_b = n_y = 0
    for x, cur in zip(term.tolist(), in_cur.tolist()):
        px = int(Pb.ids[x])
        if px not in rep:
            raise LookupError(f"no boundary node in the P_b cell of site {x}")
        node = rep[px]
        blue = labels[x] == 1
        if blue != cur:
            arc = net.add_arc(m, node, 1)
            n_b += 1
        else:
            arc = net.add_arc(node, m + 1, 1)
            n_y += 1
        arc_site[arc] = (x, bool(cur))
    if n_b != n_y:
        raise RuntimeError(f"unbalanced terminals: {n_b} source arcs vs {n_y} sink arcs")
    return ContractedCell(ks, site_node, m, node_boundary, node_key, rep, net, arc_site, n_b, multi)


class LiftError(RuntimeError):
    pass


def _endpoints(cc: ContractedCell, paths, torus: Torus, rule: str) -> list:
    """Endpoint sites and interior nodes of each flow path.

    Paths with the same node sequence joining two old leftover sites are
    interchangeable; under ``rule="nearest"`` their start and end sites are
    re-paired greedily by distance (closest pair first, ties in path order).
    """
    out = []
    groups: dict[tuple, list[int]] = {}
    for path in paths:
        (u, u_cur), (w, w_cur) = cc.arc_site[path.arcs[0]], cc.arc_site[path.arcs[-1]]
        nodes = tuple(path.nodes[1:-1])
        out.append([u, u_cur, w, w_cur, list(nodes)])
        if rule == "nearest" and not u_cur and not w_cur:
            groups.setdefault(nodes, []).append(len(out) - 1)
    for members in groups.values():
        if len(members) < 2:
            continue
        us = np.array([out[i][0] for i in members], dtype=np.int64)
        ws = np.array([out[i][2] for i in members], dtype=np.int64)
        dist = np.abs(torus.wrap(torus.coords[us][:, None, :] - torus.coords[ws][None, :, :])).max(axis=2)
        order = np.argsort(dist, axis=None, kind="stable")
        free_u = np.ones(us.size, dtype=bool)
        free_w = np.ones(ws.size, dtype=bool)
        left = us.size
        for flat in order.tolist():
            a, b = divmod(flat, ws.size)
            if free_u[a] and free_w[b]:
                out[members[a]][2] = int(ws[b])
                free_u[a] = free_w[b] = False
                left -= 1
                if not left:
                    break
    return out


def lift_paths(
    cc: ContractedCell,
    paths,
    config: Configuration,
    matching: Matching,
    P: Partition,
    reserved: set,
    rule: str = "lex",
) -> tuple[list, list, list]:
    """Turn node paths into alternating site paths.

    Returns ``(new_pairs, removed_pairs, site_paths)``.  Each node on a path
    contributes one currently matched site of the colour opposite to the path
    start, and its old partner continues the path.  With ``rule="lex"`` the
    first unused such site in lexicographic order of offset from the node's
    ``P``-cell anchor is taken; with ``rule="nearest"`` the unused one closest
    to the current path end (ties to the lexicographically first).
    """
    if rule not in ("lex", "nearest"):
        raise ValueError(f"unknown lifting rule {rule!r}")
    torus = config.torus
    lab = config.flat_labels
    partner = matching.partner
    node_of = dict(zip(cc.sites.tolist(), cc.site_node.tolist()))
    used: set[int] = set()
    pools: dict[tuple[int, int], np.ndarray] = {}
    free: dict[tuple[int, int], np.ndarray] = {}

    def pool(node: int, color: int):
        key = (node, color)
        if key not in pools:
            s = cc.sites[cc.site_node == node]
            s = s[(lab[s] == color) & (partner[s] >= 0)]
            if s.size:
                s = s[np.argsort(torus.offset_key(s, P.anchors[P.ids[s[0]]]), kind="stable")]
            pools[key] = s
            free[key] = np.array([x not in reserved and x not in used for x in s.tolist()], dtype=bool)
        return pools[key], free[key]

    def pick(node: int, color: int, near: int) -> int:
        s, ok = pool(node, color)
        cand = np.flatnonzero(ok)
        if cand.size == 0:
            raise LiftError(f"node {node} has no free matched site of colour {color}")
        if rule == "lex":
            return int(s[cand[0]])
        dist = np.abs(torus.wrap(torus.coords[s[cand]] - torus.coords[near])).max(axis=1)
        return int(s[cand[np.argmin(dist)]])

    def take(x: int) -> None:
        used.add(x)
        key = (node_of[x], int(lab[x]))
        if key in pools:
            s, ok = pools[key], free[key]
            hit = np.flatnonzero(s == x)
            ok[hit] = False

    new_pairs: list[tuple[int, int]] = []
    removed: list[tuple[int, int]] = []
    site_paths: list[list[int]] = []
    for u, u_cur, w, w_cur, nodes in _endpoints(cc, paths, torus, rule):
        if u_cur and w_cur:
            raise LiftError("path joins two sites of the new leftover set")
        if u_cur:
            # walk from the unmatched end
            u, w, nodes = w, u, nodes[::-1]
            w_cur = True
        target = int(partner[w]) if w_cur else w
        want = 1 - int(lab[u])
        if lab[target] != want:
            raise LiftError("endpoint colours do not alternate")
        seq = [u]
        cur = u
        take(u)
        for j, nd in enumerate(nodes):
            if j == len(nodes) - 1 and node_of[target] == nd:
                break
            if node_of[cur] == nd:
                continue
            e = pick(nd, want, cur)
            pe = int(partner[e])
            take(e)
            take(pe)
            new_pairs.append((cur, e))
            removed.append((e, pe))
            seq += [e, pe]
            cur = pe
        new_pairs.append((cur, target))
        seq.append(target)
        take(target)
        if w_cur:
            removed.append((target, w))
            seq.append(w)
            take(w)
        site_paths.append(seq)
    return new_pairs, removed, site_paths


@dataclass
class StageEvent:
    stage: int
    cell_anchor: tuple
    cell_size: int
    status: str
    sigma: int = 0
    achieved: int = 0
    witness: dict | None = None
    rematched: int = 0
    max_new_edge: int = 0
    n_paths: int = 0
    separation: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "stage": self.stage,
                "cell": list(self.cell_anchor),
                "cell_size": self.cell_size,
                "status": self.status,
                "sigma": self.sigma,
                "achieved": self.achieved,
                "witness": self.witness,
                "rematched": self.rematched,
                "max_new_edge": self.max_new_edge,
                "n_paths": self.n_paths,
                "separation": self.separation,
            },
            sort_keys=True,
        )


@dataclass(eq=False)
class Result3d:
    matching: Matching
    events: list
    chain: PartitionChain
    classification: Classification
    stages: list
    U: list
    snapshots: list
    k: int
    cap0: int
    dprime: float
    stabilization_violations: int = 0
    flags: dict = field(default_factory=dict)

    def event_log(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def shortfall_residue(self) -> int:
        """Unmatched sites beyond the global surplus."""
        free = int((self.matching.partner < 0).sum())
        return free - self.flags.get("global_surplus", 0)


def initial_matching(config: Configuration, cls: Classification, mode: str = "single") -> Matching:
    """Greedy matching inside the cells of ``P`` (tag 0).

    ``single``: one rank-against-rank pass per ``P``-cell.
    ``multiscale``: rank-against-rank passes over ``Q_j`` intersected with
    ``P`` for every chain level ``j``, finest first; the last pass is on
    ``P`` itself, so every ``P``-cell again keeps exactly its surplus
    unmatched, but most pairs are formed inside small cells first.
    """
    M = Matching.empty(config.torus)
    if mode == "single":
        greedy_stage(config, cls.P, M, 0)
        return M
    if mode != "multiscale":
        raise ValueError(f"unknown initial matching mode {mode!r}")
    top = int(cls.ripe_level.max())
    for j in range(top + 1):
        greedy_stage(config, _mixed_partition(cls.chain, np.minimum(cls.ripe_level, j), f"PQ{j}"), M, 0)
    return M


def default_stages(chain: PartitionChain, basic: int) -> list[tuple[int, int | None]]:
    a = list(range(basic + 1, len(chain.levels)))
    b = [None] + a[:-1]
    return list(zip(a, b))


def _boundary_sites(part: Partition) -> np.ndarray:
    t = part.torus
    ids = part.ids.reshape(t.shape)
    diff = np.zeros(t.shape, dtype=bool)
    for ax in range(t.d):
        for step in (1, -1):
            diff |= ids != np.roll(ids, step, axis=ax)
    return diff.reshape(-1)


def run3d(
    config: Configuration,
    chain: PartitionChain | None = None,
    *,
    k: int | None = None,
    epsilon: float = 0.5,
    form: str = "power",
    c_sep: float = DEFAULT_C_SEP,
    stages=None,
    stage_budget: int | None = None,
    schedule: Schedule | None = None,
    keep_snapshots: bool = False,
    initial: str = "single",
    lift_rule: str = "lex",
    on_network=None,
) -> Result3d:
    """``on_network(stage, anchor, cell)`` is called with every contracted
    cell before its flow is solved (debugging hook)."""
    torus = config.torus
    d = torus.d
    lab = config.flat_labels
    if chain is None:
        chain = build_chain(config, schedule)
    if k is None:
        k = default_k(d)
    cap0, dprime = capacity_unit(k, d)
    f = SurplusFn(form, epsilon)
    cls = classify(config, chain, k, f)
    P = cls.P
    M = initial_matching(config, cls, initial)
    snapshots = [M.copy()] if keep_snapshots else []
    U = [M.partner < 0]
    plan = list(stages) if stages is not None else default_stages(chain, cls.basic)
    if stage_budget is not None:
        plan = plan[:stage_budget]
    events: list[StageEvent] = []
    viol = 0
    for i, (a_lvl, b_lvl) in enumerate(plan, start=1):
        if not (M.partner < 0).any():
            break
        Pa = cls.coarsening(a_lvl)
        Pb = P if b_lvl is None else cls.coarsening(b_lvl)
        pb_bnd = _boundary_sites(Pb)
        before = M.partner.copy()
        allowed = np.zeros(torus.n, dtype=bool)
        U_i = M.partner < 0
        level_of_cell = cls.ripe_level[np.unique(Pa.ids, return_index=True)[1]]
        cubic = (Pa.kinds == CUBE) & (level_of_cell <= a_lvl) & (Pa.cell_sizes == chain.sizes[a_lvl] ** d)
        order = np.argsort(torus.flat(Pa.anchors), kind="stable")
        site_lists = np.split(np.argsort(Pa.ids, kind="stable"), np.cumsum(Pa.cell_sizes)[:-1])
        for c in order.tolist():
            anchor = tuple(int(x) for x in Pa.anchors[c])
            ks = site_lists[c]
            if not cubic[c]:
                events.append(StageEvent(i, anchor, int(ks.size), "non_cubic"))
                continue
            ev, Ucur, touched = _process_cell(config, M, ks, Pa.anchors[c], P, Pb, pb_bnd, cap0, epsilon, c_sep, i, lift_rule, on_network)
            events.append(ev)
            if Ucur is not None:
                U_i[ks] = False
                U_i[Ucur] = True
            allowed[touched] = True
        changed = np.flatnonzero(before != M.partner)
        viol += int((~allowed[changed]).sum())
        U.append(U_i)
        if keep_snapshots:
            snapshots.append(M.copy())
    res = Result3d(M, events, chain, cls, plan, U, snapshots, k, cap0, dprime, viol)
    res.flags["global_surplus"] = config.surplus
    return res


def _process_cell(config, M: Matching, ks, anchor, P, Pb, pb_bnd, cap0, epsilon, c_sep, stage, lift_rule="lex", on_network=None):
    torus = config.torus
    lab = config.flat_labels
    anc = tuple(int(x) for x in anchor)
    size = int(ks.size)
    blue = int(lab[ks].sum())
    sur = abs(2 * blue - size)
    color = 1 if 2 * blue > size else 0
    sep = separation(size, torus.d, epsilon, c_sep)
    U_prev = ks[M.partner[ks] < 0]
    U_cur = select_U(torus, lab, ks, anchor, sur, color, sep)
    none = np.empty(0, dtype=np.int64)
    if U_cur is None:
        return StageEvent(stage, anc, size, "sparse_abort", separation=sep), None, none
    try:
        cc = build_network(torus, lab, ks, anchor, P, Pb, pb_bnd, U_prev, U_cur, cap0)
    except LookupError:
        return StageEvent(stage, anc, size, "no_boundary_node", separation=sep), None, none
    if on_network is not None:
        on_network(stage, anc, cc)
    # sites that may legitimately change: boundary-node preimages, leftovers and partners of U_cur
    touched = np.concatenate([cc.sites[cc.node_boundary[cc.site_node]], U_prev, U_cur, M.partner[U_cur][M.partner[U_cur] >= 0]])
    if cc.sigma == 0:
        return StageEvent(stage, anc, size, "ok", separation=sep), U_cur, touched
    res = max_flow(cc.network)
    if res.value < cc.sigma:
        side = res.source_side
        witness = {
            "source_side": np.flatnonzero(side[: cc.n_nodes]).tolist(),
            "cut_capacity": cut_capacity(cc.network, side),
        }
        return StageEvent(stage, anc, size, "shortfall", cc.sigma, res.value, witness, separation=sep), None, none
    paths = decompose_paths(cc.network, res.flow, res.value)
    reserved = set(U_cur.tolist()) | set(int(M.partner[x]) for x in U_cur.tolist() if M.partner[x] >= 0)
    try:
        new, removed, site_paths = lift_paths(cc, paths, config, M, P, reserved, lift_rule)
    except LiftError as exc:
        return StageEvent(stage, anc, size, "lift_failure", cc.sigma, res.value, {"error": str(exc)}, separation=sep), None, none
    flat = [s for p in site_paths for s in p]
    if len(flat) != len(set(flat)):
        return StageEvent(stage, anc, size, "lift_failure", cc.sigma, res.value, {"error": "paths not disjoint"}, separation=sep), None, none
    old = M.partner.copy()
    old_tag = M.tag.copy()
    for a, b in removed:
        M.partner[a] = M.partner[b] = -1
        M.tag[a] = M.tag[b] = -1
    na = np.asarray([p[0] for p in new], dtype=np.int64)
    nb = np.asarray([p[1] for p in new], dtype=np.int64)
    M.add_pairs(na, nb, stage)
    free = np.sort(ks[M.partner[ks] < 0])
    ok = np.array_equal(free, np.sort(U_cur)) and np.all(lab[na] != lab[nb])
    if not ok:
        M.partner[:] = old
        M.tag[:] = old_tag
        return StageEvent(stage, anc, size, "verify_failure", cc.sigma, res.value, separation=sep), None, none
    rem = int((old[ks] != M.partner[ks]).sum())
    longest = int(torus.distance(na, nb).max()) if na.size else 0
    return StageEvent(stage, anc, size, "ok", cc.sigma, res.value, None, rem, longest, len(paths), sep), U_cur, touched


def chernoff_bound(k: int, d: int, i: int, f: SurplusFn) -> float:
    """``exp(-f((k 2^(i-1))^d)^2 / (2 (k 2^(i+1))^d))``."""
    lo = float(k * 2.0 ** (i - 1)) ** d
    hi = float(k * 2.0 ** (i + 1)) ** d
    return math.exp(-float(f(lo, d)) ** 2 / (2 * hi))


def check_schedule(k: int, d: int, epsilon: float, a, b, c: float = 4.0, C: float = 4.0) -> list[dict]:
    """Evaluate the growth constraints and the cut inequality per stage.

    ``a`` and ``b`` are stage indices (base-2 logarithms of cell sides);
    ``a(0) = log2 k`` is prepended internally.  A stage counts as covered
    when both growth constraints hold and the cut inequality fails.
    """
    a = [int(x) for x in a]
    b = [int(x) for x in b]
    if len(a) != len(b):
        raise ValueError("a and b must have equal length")
    a_full = [int(round(math.log2(k)))] + a
    out = []
    for i in range(1, len(a_full)):
        ai, bi, aprev = a_full[i], b[i - 1], a_full[i - 1]
        growth = ai > bi ** (2 * d / epsilon)
        # exp(exp(x)) overflows quickly; compare in log space
        inner = float(i ** (d - 2))
        tower = inner < 6.5 and ai > math.exp(math.exp(inner))
        lhs = k ** (d / (d - 1)) * float(bi) ** (-d)
        lo = math.ceil(aprev / d)
        tail = sum((k * 2.0**ell) ** (-epsilon / 2) for ell in range(lo, ai + 1))
        rhs = c + C * 2.0 ** ((-1 + 1 / d) * aprev * (1 + epsilon / 2)) + tail
        cut_ok = lhs <= rhs
        out.append(
            {
                "stage": i,
                "a": ai,
                "b": bi,
                "growth_ok": bool(growth),
                "tower_ok": bool(tower),
                "lhs": lhs,
                "rhs": rhs,
                "cut_inequality_holds": bool(cut_ok),
                "covered": bool(growth and tower and not cut_ok),
                "mode": "asymptotic" if growth and tower and not cut_ok else "desk",
            }
        )
    return out
