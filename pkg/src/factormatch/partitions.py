"""Partitions of the torus and the dyadic partition chain.

A :class:`Partition` stores one integer cell id per site together with an
anchor (a reference site) and a kind code per cell.  Cell ids are only
labels; comparisons across translations go through :meth:`Partition.canonical`.

The chain is built level by level from a :class:`Schedule`:

1. centers for level ``i`` and their discrete sup-norm Voronoi tessellation;
2. each Voronoi cell cut along the grid ``v + b_i Z^d`` of its center ``v``;
3. ``R'_j`` = common refinement of the grids of levels ``>= j``;
4. every site lying in a non-cubic ``R'_j`` cell for some ``j`` becomes a
   singleton at all levels up to the largest such ``j``, giving ``R_j``;
5. between ``R_i`` and ``R_{i+1}`` the intermediate levels group the ``R_i``
   cells of each cubic ``R_{i+1}`` cell by which dyadic sub-cube holds their
   minimum corner.

Sizes therefore double from one chain level to the next.  The top level is
always the full window, anchored at a hashed global center.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .centers import CenterSet, bulb_centers, hash_centers, window_center
from .lattice import Configuration, SiteSet, Torus

__all__ = [
    "CUBE",
    "PSEUDOCUBE",
    "CHUNK",
    "IRREGULAR",
    "KIND_NAMES",
    "Partition",
    "LevelSpec",
    "Schedule",
    "PartitionChain",
    "PseudocubeReport",
    "iso_constant",
    "voronoi",
    "basic_cube_split",
    "common_refinement",
    "repair_irregulars",
    "theta",
    "pseudocube_report",
    "is_pseudocube",
    "build_chain",
    "export_chain",
    "load_chain_export",
]

CUBE, PSEUDOCUBE, CHUNK, IRREGULAR = 0, 1, 2, 3
KIND_NAMES = ("cube", "pseudocube", "chunk", "irregular")


def _compact(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense ids for arbitrary integer keys plus one representative site per id."""
    _, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    return inv.astype(np.int64).reshape(-1), first


@dataclass(eq=False)
class Partition:
    torus: Torus
    ids: np.ndarray
    anchors: np.ndarray
    kinds: np.ndarray
    size: int = 0
    name: str = ""

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        self.anchors = np.asarray(self.anchors, dtype=np.int64).reshape(-1, self.torus.d)
        self.kinds = np.asarray(self.kinds, dtype=np.uint8).reshape(-1)
        if self.ids.size != self.torus.n:
            raise ValueError("ids must cover every site")
        if self.anchors.shape[0] != self.kinds.size:
            raise ValueError("one anchor and one kind per cell")

    @property
    def n_cells(self) -> int:
        return int(self.kinds.size)

    @cached_property
    def cell_sizes(self) -> np.ndarray:
        return np.bincount(self.ids, minlength=self.n_cells)

    def site_sizes(self) -> np.ndarray:
        return self.cell_sizes[self.ids]

    def cell(self, c: int) -> SiteSet:
        return SiteSet(self.torus, self.ids == c)

    def cell_of(self, site) -> SiteSet:
        return self.cell(int(self.ids[int(self.torus.flat(np.asarray(site)))]))

    def site_anchors(self) -> np.ndarray:
        return self.anchors[self.ids]

    def canonical(self) -> np.ndarray:
        """Ids renumbered by first occurrence in flat order."""
        _, first = np.unique(self.ids, return_index=True)
        order = np.argsort(first, kind="stable")
        relabel = np.empty(self.n_cells, dtype=np.int64)
        relabel[np.unique(self.ids)[order]] = np.arange(order.size)
        return relabel[self.ids]

    def same_cells(self, other: "Partition") -> bool:
        return np.array_equal(self.canonical(), other.canonical())

    def refines(self, other: "Partition") -> bool:
        """Every cell of ``self`` lies inside one cell of ``other``."""
        pairs = np.unique(self.ids * other.n_cells + other.ids)
        return pairs.size == self.n_cells

    def translate(self, v) -> "Partition":
        ids = np.roll(self.ids.reshape(self.torus.shape), tuple(int(x) for x in v), axis=tuple(range(self.torus.d)))
        anchors = (self.anchors + np.asarray(v, dtype=np.int64)) % self.torus.L
        return Partition(self.torus, ids.reshape(-1), anchors, self.kinds.copy(), self.size, self.name)

    def relabel_from_keys(self, keys) -> "Partition":
        ids, first = _compact(keys)
        return Partition(self.torus, ids, self.anchors[self.ids[first]], self.kinds[self.ids[first]], self.size, self.name)


@dataclass(frozen=True)
class LevelSpec:
    """One level of the center schedule: grid side ``b``, separation radius
    ``a`` and the center source (``hash``, ``bulb`` or ``window``)."""

    b: int
    a: int = 0
    source: str = "hash"
    density: float | None = None

    def to_str(self) -> str:
        if self.source == "window":
            return f"{self.b}:window"
        s = f"{self.b}:{self.a}:{self.source}"
        return s if self.density is None else f"{s}:{self.density!r}"


@dataclass(frozen=True)
class Schedule:
    levels: tuple[LevelSpec, ...]

    @classmethod
    def default(cls, d: int, L: int) -> "Schedule":
        """One hash level (side 4, or 2 on small windows, separation ``2b``),
        a window-anchored grid four times coarser, then the full window.
        Windows too small for a hash level (``L <= 16``) get a window grid
        of side 2 in its place.

        Extra hash levels are allowed but their grids are anchored at
        unrelated centers, so most of their cubes get cut into irregular
        pieces; pass them explicitly through :meth:`parse` if wanted."""
        b = 4 if 8 < L / 4 else 2
        levels = [LevelSpec(b, 2 * b, "hash") if 2 * b < L / 4 else LevelSpec(b, 0, "window")]
        if 4 * b < L:
            levels.append(LevelSpec(4 * b, 0, "window"))
        levels.append(LevelSpec(L, 0, "window"))
        return cls(tuple(levels))

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        out = []
        for item in text.replace(";", ",").split(","):
            item = item.strip()
            if not item:
                continue
            parts = item.split(":")
            b = int(parts[0])
            if len(parts) == 2 and parts[1] == "window":
                out.append(LevelSpec(b, 0, "window"))
            elif len(parts) in (3, 4):
                dens = float(parts[3]) if len(parts) == 4 else None
                out.append(LevelSpec(b, int(parts[1]), parts[2], dens))
            else:
                raise ValueError(f"cannot parse schedule item {item!r}")
        return cls(tuple(out))

    def to_str(self) -> str:
        return ",".join(lv.to_str() for lv in self.levels)

    def closed(self, L: int) -> "Schedule":
        if self.levels and self.levels[-1].b == L:
            return self
        return Schedule(self.levels + (LevelSpec(L, 0, "window"),))

    def validate(self, d: int, L: int) -> None:
        prev = 0
        if not self.levels:
            raise ValueError("empty schedule")
        for lv in self.levels:
            if lv.b < 1 or lv.b & (lv.b - 1):
                raise ValueError(f"grid side {lv.b} is not a power of two")
            if lv.b > L or L % lv.b:
                raise ValueError(f"grid side {lv.b} does not divide the window side {L}")
            if prev and (lv.b <= prev or lv.b % prev):
                raise ValueError("grid sides must increase and divide each other")
            if lv.source == "hash":
                if not (lv.a >= 2 * lv.b and lv.a < L / 4):
                    raise ValueError(f"hash level needs 2b <= a < L/4, got b={lv.b} a={lv.a}")
            elif lv.source == "bulb":
                if lv.a < 1 or 2 * lv.a + 1 > L:
                    raise ValueError("bulb radius must satisfy 1 <= a and 2a+1 <= L")
            elif lv.source != "window":
                raise ValueError(f"unknown center source {lv.source!r}")
            prev = lv.b

    @property
    def sides(self) -> tuple[int, ...]:
        return tuple(lv.b for lv in self.levels)


def voronoi(centers: CenterSet) -> Partition:
    """Discrete sup-norm Voronoi cells on the torus.  A site equidistant from
    several centers joins the one at the lexicographically smallest
    displacement (center minus site, wrapped)."""
    torus = centers.torus
    pts = centers.coords()
    nc = pts.shape[0]
    if nc == 0:
        raise ValueError("empty center set")
    sites = torus.coords
    kq = min(nc, 2**torus.d + 1)
    tree = cKDTree(pts, boxsize=torus.L)
    dist, idx = tree.query(sites, k=kq, p=np.inf)
    dist = dist.reshape(torus.n, kq)
    idx = idx.reshape(torus.n, kq)
    owner = idx[:, 0].copy()
    if kq > 1:
        tie = dist[:, 1] == dist[:, 0]
        full = tie & (dist[:, -1] == dist[:, 0]) & (kq < nc)
        t = np.flatnonzero(tie & ~full)
        if t.size:
            owner[t] = _lex_tiebreak(torus, sites[t], pts, idx[t], dist[t] == dist[t, :1])
        f = np.flatnonzero(full)
        if f.size:
            allidx = np.broadcast_to(np.arange(nc), (f.size, nc))
            dd = np.abs(torus.wrap(pts[None, :, :] - sites[f][:, None, :])).max(axis=2)
            owner[f] = _lex_tiebreak(torus, sites[f], pts, allidx, dd == dd.min(axis=1, keepdims=True))
    kinds = np.full(nc, IRREGULAR, dtype=np.uint8)
    sizes = np.bincount(owner, minlength=nc)
    kinds[sizes == torus.n] = CUBE
    return Partition(torus, owner, pts, kinds, torus.L if nc == 1 else 0, "voronoi")


def _lex_tiebreak(torus: Torus, sites, pts, cand, valid) -> np.ndarray:
    off = torus.wrap(pts[cand] - sites[:, None, :]) + torus.L // 2
    key = off @ torus.strides
    key = np.where(valid, key, np.iinfo(np.int64).max)
    return cand[np.arange(cand.shape[0]), np.argmin(key, axis=1)]


def basic_cube_split(vor: Partition, b: int) -> Partition:
    """Intersect every Voronoi cell with the grid ``v + b Z^d`` of its center."""
    torus = vor.torus
    if torus.L % b:
        raise ValueError("grid side must divide the window side")
    g = torus.L // b
    v = vor.anchors[vor.ids]
    box = ((torus.coords - v) % torus.L) // b
    key = vor.ids * g**torus.d + box @ (g ** np.arange(torus.d - 1, -1, -1, dtype=np.int64))
    ids, first = _compact(key)
    anchors = (v[first] + b * box[first]) % torus.L
    sizes = np.bincount(ids)
    kinds = np.where(sizes == b**torus.d, CUBE, IRREGULAR).astype(np.uint8)
    return Partition(torus, ids, anchors, kinds, b, f"grid{b}")


def common_refinement(*parts: Partition) -> Partition:
    """Common refinement; anchors and size come from the first argument."""
    base = parts[0]
    key = base.ids.copy()
    for p in parts[1:]:
        key, _ = _compact(key * p.n_cells + p.ids)
    ids, first = _compact(key)
    return Partition(base.torus, ids, base.anchors[base.ids[first]], base.kinds[base.ids[first]], base.size, base.name)


def repair_irregulars(rprime: list[Partition], sides) -> tuple[list[Partition], np.ndarray]:
    """Turn every site of a non-cubic ``R'_j`` cell into a singleton at all
    levels ``<= j``.  Returns the repaired levels and ``J`` (largest such level
    per site, -1 if none)."""
    torus = rprime[0].torus
    J = np.full(torus.n, -1, dtype=np.int64)
    for j, (p, b) in enumerate(zip(rprime, sides)):
        irregular = p.cell_sizes[p.ids] != b**torus.d
        J[irregular] = j
    sites = np.arange(torus.n, dtype=np.int64)
    out = []
    for j, (p, b) in enumerate(zip(rprime, sides)):
        single = J >= j
        key = np.where(single, p.n_cells + sites, p.ids)
        ids, first = _compact(key)
        rep = first
        anchors = np.where(single[rep, None], torus.coords[rep], p.anchors[p.ids[rep]])
        kinds = np.where(single[rep], CHUNK, CUBE).astype(np.uint8)
        out.append(Partition(torus, ids, anchors, kinds, b, f"R{j + 1}"))
    return out, J


def theta(partition: Partition, corner, side: int) -> SiteSet:
    """Union of the cells that meet the cube ``corner + [0, side)^d`` and have
    no site at a negative offset (in any coordinate) from its corner."""
    torus = partition.torus
    # offsets are wrapped around the cube centre, so the window splits evenly
    # between the two sides of the cube
    h = side // 2
    off = torus.wrap(torus.coords - np.asarray(corner, dtype=np.int64) - h) + h
    inside = (off >= 0).all(axis=1) & (off < side).all(axis=1)
    neg = (off < 0).any(axis=1)
    meets = np.zeros(partition.n_cells, dtype=bool)
    meets[partition.ids[inside]] = True
    bad = np.zeros(partition.n_cells, dtype=bool)
    bad[partition.ids[neg]] = True
    keep = meets & ~bad
    return SiteSet(torus, keep[partition.ids])


def _intermediate(torus: Torus, Ri: Partition, Rn: Partition, bi: int, bn: int, ell: int) -> tuple[Partition, np.ndarray]:
    s = bi << ell
    g = bn // s
    good = Rn.kinds[Rn.ids] == CUBE
    corner = Rn.anchors[Rn.ids]
    single_i = Ri.kinds[Ri.ids] == CHUNK
    mincorner = np.where(single_i[:, None], torus.coords, Ri.anchors[Ri.ids])
    rel = (mincorner - corner) % torus.L
    dy = rel // s
    sites = np.arange(torus.n, dtype=np.int64)
    key = np.where(good, Rn.ids * g**torus.d + dy @ (g ** np.arange(torus.d - 1, -1, -1, dtype=np.int64)), Rn.n_cells * g**torus.d + sites)
    ids, first = _compact(key)
    anchors = np.where(good[first, None], (corner[first] + dy[first] * s) % torus.L, torus.coords[first])
    # a theta cell is a genuine cube exactly when it fills its dyadic cube
    own = ((torus.coords - anchors[ids]) % torus.L < s).all(axis=1)
    full = np.bincount(ids, weights=own, minlength=first.size) == s**torus.d
    sizes = np.bincount(ids, minlength=first.size)
    kinds = np.where(good[first], np.where(full & (sizes == s**torus.d), CUBE, PSEUDOCUBE), CHUNK).astype(np.uint8)
    part = Partition(torus, ids, anchors, kinds, s, "")
    flag = good.copy()
    if ell == 1:
        # sites within b_i of the right faces of their R_{i+1} cube
        flag &= ~(((torus.coords - corner) % torus.L) >= bn - bi).any(axis=1)
    return part, flag


@dataclass(eq=False)
class PartitionChain:
    """The nested chain together with the data it was built from."""

    torus: Torus
    schedule: Schedule
    levels: list[Partition]
    sizes: list[int]
    alpha: list[int]
    good: list[np.ndarray]
    centers: list[CenterSet]
    grids: list[Partition]
    rprime: list[Partition]
    R: list[Partition]
    J: np.ndarray
    flags: dict = field(default_factory=dict)

    def level_index(self, size: int) -> int:
        try:
            return self.sizes.index(size)
        except ValueError:
            raise ValueError(f"no chain level of size {size}; sizes are {self.sizes}") from None

    def territory(self, j: int) -> SiteSet:
        """Sites that are singletons of ``R_j`` because of irregular cells."""
        return SiteSet(self.torus, self.J >= j)

    def translate(self, v) -> "PartitionChain":
        roll = lambda a: np.roll(a.reshape(self.torus.shape), tuple(int(x) for x in v), axis=tuple(range(self.torus.d))).reshape(-1)
        return PartitionChain(
            self.torus,
            self.schedule,
            [p.translate(v) for p in self.levels],
            list(self.sizes),
            list(self.alpha),
            [roll(g) for g in self.good],
            [c.translate(v) for c in self.centers],
            [p.translate(v) for p in self.grids],
            [p.translate(v) for p in self.rprime],
            [p.translate(v) for p in self.R],
            roll(self.J),
            dict(self.flags),
        )


def _centers_for(config: Configuration, lv: LevelSpec, level: int) -> CenterSet:
    if lv.source == "hash":
        c = hash_centers(config, lv.a, lv.density, level=level)
    elif lv.source == "bulb":
        c = bulb_centers(config, lv.a, level=level)
    else:
        c = window_center(config, level=level)
    if len(c) == 0:
        w = window_center(config, level=level)
        c = CenterSet(w.torus, level, w.source, w.sites, w.params, dict(w.flags, empty_fallback=True))
    return c


def build_chain(config: Configuration, schedule: Schedule | None = None) -> PartitionChain:
    torus = config.torus
    sched = (schedule or Schedule.default(torus.d, torus.L)).closed(torus.L)
    sched.validate(torus.d, torus.L)
    sides = sched.sides
    centers = [_centers_for(config, lv, i) for i, lv in enumerate(sched.levels)]
    grids = [basic_cube_split(voronoi(c), b) for c, b in zip(centers, sides)]
    rprime: list[Partition] = [None] * len(grids)
    acc = None
    for j in range(len(grids) - 1, -1, -1):
        acc = grids[j] if acc is None else common_refinement(grids[j], acc)
        rprime[j] = acc
    for j, p in enumerate(rprime):
        p.size = sides[j]
        p.kinds = np.where(p.cell_sizes == sides[j] ** torus.d, CUBE, IRREGULAR).astype(np.uint8)
    R, J = repair_irregulars(rprime, sides)
    levels, sizes, alpha, good = [], [], [], []
    for i, (Ri, bi) in enumerate(zip(R, sides)):
        Ri.name = f"R{i + 1}"
        levels.append(Ri)
        sizes.append(bi)
        alpha.append(i)
        good.append(Ri.kinds[Ri.ids] == CUBE)
        if i + 1 < len(R):
            bn = sides[i + 1]
            for ell in range(1, (bn // bi).bit_length() - 1):
                q, flag = _intermediate(torus, Ri, R[i + 1], bi, bn, ell)
                q.name = f"Q{i + 1}.{ell}"
                levels.append(q)
                sizes.append(bi << ell)
                alpha.append(-1)
                good.append(flag)
    flags = {"center_flags": [c.flags for c in centers]}
    return PartitionChain(torus, sched, levels, sizes, alpha, good, centers, grids, rprime, R, J, flags)


def iso_constant(d: int) -> int:
    return 2 ** (2 * d) + 2**d * d


def _window_and(g: np.ndarray, h: int, axis: int) -> np.ndarray:
    """``out[x] = all(g[x + j e_axis] for j < h)`` on the torus."""
    res = np.ones_like(g, dtype=bool)
    cur = g.astype(bool)
    span, shift = 1, 0
    while h:
        if h & 1:
            res &= np.roll(cur, -shift, axis=axis)
            shift += span
        h >>= 1
        if h:
            cur = cur & np.roll(cur, -span, axis=axis)
            span *= 2
    return res


def cube_starts(ids_shaped: np.ndarray, h: int) -> np.ndarray:
    """Sites ``x`` such that the cube ``x + [0, h)^d`` lies in one cell."""
    F = np.ones(ids_shaped.shape, dtype=bool)
    if h <= 1:
        return F
    for ax in range(ids_shaped.ndim):
        same = ids_shaped == np.roll(ids_shaped, -1, axis=ax)
        F = _window_and(F, h, ax) & _window_and(same, h - 1, ax)
    return F


def cell_extents(p: Partition) -> np.ndarray:
    """Length of the shortest cyclic interval covering each cell's projection,
    per axis."""
    torus = p.torus
    out = np.empty((p.n_cells, torus.d), dtype=np.int64)
    for ax in range(torus.d):
        key = np.unique(p.ids * torus.L + torus.coords[:, ax])
        cell = key // torus.L
        x = key % torus.L
        start = np.flatnonzero(np.r_[True, cell[1:] != cell[:-1]])
        nxt = np.r_[x[1:], 0]
        gap = np.where(np.r_[cell[1:] == cell[:-1], False], nxt - x, 0)
        # wrap-around gap from the last coordinate back to the first
        last = np.r_[start[1:], key.size] - 1
        gap[last] = x[start] + torus.L - x[last]
        out[:, ax] = torus.L - np.maximum.reduceat(gap, start) + 1
    return out


@dataclass(eq=False)
class PseudocubeReport:
    """Per-cell checks for a partition against pseudocube size ``k``."""

    k: int
    sizes: np.ndarray
    boundary: np.ndarray
    volume_lower: np.ndarray
    volume_upper: np.ndarray
    isoperimetry: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.volume_lower & self.volume_upper & self.isoperimetry

    def ratio(self, d: int) -> np.ndarray:
        return self.boundary / np.maximum(self.sizes, 1) ** ((d - 1) / d)


def pseudocube_report(p: Partition, k: int) -> PseudocubeReport:
    torus = p.torus
    d = torus.d
    ids = p.ids.reshape(torus.shape)
    starts = cube_starts(ids, k // 2).reshape(-1)
    lower = np.bincount(p.ids, weights=starts, minlength=p.n_cells) > 0
    upper = (cell_extents(p) <= 2 * k).all(axis=1)
    diff = np.zeros(torus.shape, dtype=bool)
    for ax in range(d):
        for step in (1, -1):
            diff |= ids != np.roll(ids, step, axis=ax)
    bnd = np.bincount(p.ids, weights=diff.reshape(-1), minlength=p.n_cells).astype(np.int64)
    sizes = p.cell_sizes
    iso = bnd <= iso_constant(d) * sizes.astype(float) ** ((d - 1) / d) * (1 + 1e-12)
    return PseudocubeReport(k, sizes, bnd, lower, upper, iso)


def is_pseudocube(cell: SiteSet, k: int) -> dict:
    """Check the three pseudocube conditions for a single site set."""
    if cell.size == 0:
        raise ValueError("empty set")
    t = cell.torus
    p = Partition(t, cell.mask.astype(np.int64), np.zeros((2, t.d)), np.zeros(2), k)
    if cell.size == t.n:
        p = Partition(t, np.zeros(t.n), np.zeros((1, t.d)), np.zeros(1), k)
    r = pseudocube_report(p, k)
    c = p.n_cells - 1
    return {
        "volume_lower": bool(r.volume_lower[c]),
        "volume_upper": bool(r.volume_upper[c]),
        "isoperimetry": bool(r.isoperimetry[c]),
        "boundary": int(r.boundary[c]),
        "size": int(r.sizes[c]),
        "ok": bool(r.ok[c]),
    }


def export_chain(chain: PartitionChain, prefix, seed: int | None = None) -> tuple[Path, Path]:
    """Write ``prefix.json`` (header) and ``prefix.bin`` (int32 little-endian
    row-major cell ids, one block per level)."""
    prefix = Path(prefix)
    header = {
        "format": "factormatch-partition/1",
        "d": chain.torus.d,
        "L": chain.torus.L,
        "seed": seed,
        "schedule": chain.schedule.to_str(),
        "levels": [
            {
                "index": i,
                "name": p.name,
                "size": s,
                "alpha": a >= 0,
                "n_cells": p.n_cells,
                "kinds": {KIND_NAMES[k]: int((p.kinds == k).sum()) for k in range(4)},
            }
            for i, (p, s, a) in enumerate(zip(chain.levels, chain.sizes, chain.alpha))
        ],
    }
    jpath = prefix.with_suffix(".json")
    bpath = prefix.with_suffix(".bin")
    jpath.write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")
    with open(bpath, "wb") as fh:
        for p in chain.levels:
            fh.write(p.canonical().astype("<i4").tobytes())
    return jpath, bpath


def load_chain_export(prefix) -> tuple[dict, list[np.ndarray]]:
    prefix = Path(prefix)
    header = json.loads(prefix.with_suffix(".json").read_text())
    n = header["L"] ** header["d"]
    raw = np.fromfile(prefix.with_suffix(".bin"), dtype="<i4")
    blocks = [raw[i * n : (i + 1) * n].astype(np.int64) for i in range(len(header["levels"]))]
    return header, blocks
