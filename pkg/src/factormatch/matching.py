"""Matchings and the greedy multiscale matcher.

The greedy stage pairs, inside every cell of a partition, the still
unmatched blue and yellow sites by rank: both colours are ordered by their
lexicographic offset from the cell anchor and the r-th blue site is paired
with the r-th yellow site.  Because the ordering is taken relative to the
anchor, the result commutes with translations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .lattice import Configuration, Torus
from .partitions import Partition, PartitionChain, Schedule, build_chain

__all__ = ["Matching", "greedy_stage", "run2d", "MatchingError"]

_MAGIC = b"FMMAT1"
_HEAD = struct.Struct("<6sBBQ")
_REC = np.dtype([("a", "<u4"), ("b", "<u4"), ("tag", "<i4")])


class MatchingError(ValueError):
    pass


@dataclass(eq=False)
class Matching:
    """A partial perfect matching stored as a partner array (-1: unmatched)
    plus a per-site tag recording the level or stage that created the pair."""

    torus: Torus
    partner: np.ndarray
    tag: np.ndarray

    @classmethod
    def empty(cls, torus: Torus) -> "Matching":
        return cls(torus, np.full(torus.n, -1, dtype=np.int64), np.full(torus.n, -1, dtype=np.int32))

    def copy(self) -> "Matching":
        return Matching(self.torus, self.partner.copy(), self.tag.copy())

    @property
    def matched(self) -> np.ndarray:
        return self.partner >= 0

    def unmatched(self) -> np.ndarray:
        return np.flatnonzero(self.partner < 0)

    @property
    def n_pairs(self) -> int:
        return int(self.matched.sum()) // 2

    def pairs(self) -> np.ndarray:
        """(n_pairs, 3) array of (site, partner, tag) with site < partner."""
        a = np.flatnonzero(self.partner > np.arange(self.torus.n))
        return np.stack([a, self.partner[a], self.tag[a].astype(np.int64)], axis=1)

    def add_pairs(self, a, b, tag: int) -> None:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        self.partner[a] = b
        self.partner[b] = a
        self.tag[a] = tag
        self.tag[b] = tag

    def lengths(self, norm: str = "inf") -> np.ndarray:
        """Partner distance for every matched site (flat order)."""
        m = np.flatnonzero(self.matched)
        disp = self.torus.displacement(m, self.partner[m])
        if norm == "inf":
            return np.abs(disp).max(axis=1)
        return np.sqrt((disp.astype(float) ** 2).sum(axis=1))

    def validate(self, config: Configuration) -> None:
        p = self.partner
        m = np.flatnonzero(p >= 0)
        if np.any(p[m] == m):
            raise MatchingError("site matched to itself")
        if np.any(p[p[m]] != m):
            raise MatchingError("partner map is not an involution")
        lab = config.flat_labels
        if np.any(lab[m] == lab[p[m]]):
            raise MatchingError("pair with equal colours")
        if np.any(self.tag[m] != self.tag[p[m]]):
            raise MatchingError("pair tags disagree")

    def translate(self, v) -> "Matching":
        t = self.torus
        idx = np.arange(t.n)
        new = t.shift(idx, v)
        partner = np.full(t.n, -1, dtype=np.int64)
        tag = np.full(t.n, -1, dtype=np.int32)
        m = self.partner >= 0
        partner[new[m]] = new[self.partner[m]]
        tag[new] = self.tag
        return Matching(t, partner, tag)

    def __eq__(self, other):
        return (
            isinstance(other, Matching)
            and self.torus == other.torus
            and np.array_equal(self.partner, other.partner)
            and np.array_equal(self.tag, other.tag)
        )

    __hash__ = None

    def to_bytes(self) -> bytes:
        pr = self.pairs()
        rec = np.empty(pr.shape[0], dtype=_REC)
        rec["a"], rec["b"], rec["tag"] = pr[:, 0], pr[:, 1], pr[:, 2]
        return _HEAD.pack(_MAGIC, self.torus.d, self.torus.log2L, pr.shape[0]) + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Matching":
        magic, d, lg, count = _HEAD.unpack_from(data)
        if magic != _MAGIC:
            raise ValueError("bad magic")
        m = cls.empty(Torus(d, 1 << lg))
        rec = np.frombuffer(data, dtype=_REC, count=count, offset=_HEAD.size)
        for tag in np.unique(rec["tag"]):
            r = rec[rec["tag"] == tag]
            m.add_pairs(r["a"].astype(np.int64), r["b"].astype(np.int64), int(tag))
        return m


def greedy_stage(config: Configuration, partition: Partition, matching: Matching, tag: int) -> int:
    """Match unmatched sites in place, cell by cell, rank against rank.
    Returns the number of new pairs."""
    torus = config.torus
    free = matching.unmatched()
    if free.size == 0:
        return 0
    cell = partition.ids[free]
    color = config.flat_labels[free].astype(np.int64)
    key = torus.offset_key(free, partition.anchors[cell])
    order = np.lexsort((key, color, cell))
    cell, color, sites = cell[order], color[order], free[order]
    grp = cell * 2 + color
    start = np.r_[True, grp[1:] != grp[:-1]]
    gstart = np.maximum.accumulate(np.where(start, np.arange(grp.size), 0))
    rank = np.arange(grp.size) - gstart
    blue = color == 1
    ykey = cell[~blue] * torus.n + rank[~blue]
    bkey = cell[blue] * torus.n + rank[blue]
    pos = np.searchsorted(ykey, bkey)
    pos_c = np.minimum(pos, max(ykey.size - 1, 0))
    hit = (pos < ykey.size) & (ykey[pos_c] == bkey) if ykey.size else np.zeros(bkey.size, dtype=bool)
    a = sites[blue][hit]
    b = sites[~blue][pos_c[hit]]
    matching.add_pairs(a, b, tag)
    return int(a.size)


def run2d(config: Configuration, chain: PartitionChain | None = None, schedule: Schedule | None = None) -> tuple[Matching, PartitionChain, list[dict]]:
    """Greedy matching through every level of the chain, finest first.
    Level ``j`` pairs carry tag ``j``.  Leftover sites equal the global surplus."""
    if chain is None:
        chain = build_chain(config, schedule)
    m = Matching.empty(config.torus)
    stats = []
    for j, (p, s) in enumerate(zip(chain.levels, chain.sizes)):
        new = greedy_stage(config, p, m, j)
        stats.append({"level": j, "size": s, "new_pairs": new, "unmatched": int((m.partner < 0).sum())})
    return m, chain, stats
