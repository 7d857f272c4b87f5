"""Torus geometry, random two-colourings and site sets.

Sites of the window ``Z_L^d`` are addressed either by integer coordinate
vectors or by their row-major flat index (axis 0 most significant).
Distances are sup-norm distances on the torus.  Label 1 is blue, 0 is yellow.

Random labels come from a counter-based generator: the seed is hashed
into a key with the splitmix64 finaliser and word ``j`` of the stream is
``mix64(key + (j + 1) * GOLDEN)``.  Site ``idx`` reads bit ``idx & 63`` of
word ``idx >> 6``, so any single label can be recomputed without
generating the rest of the window (:func:`label_at`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_array
from scipy.sparse.csgraph import connected_components as _cc

__all__ = [
    "GOLDEN",
    "mix64",
    "stream_words",
    "Torus",
    "Configuration",
    "SiteSet",
    "generate",
    "label_at",
    "window_popcounts",
    "balanced_seeds",
    "ball",
    "inner_boundary",
    "component_labels",
    "connected_components",
    "MAGIC",
]

GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
MAGIC = b"FMCFG1"
_HEADER = struct.Struct("<6sBBQ")


def mix64(z) -> np.ndarray:
    """splitmix64 finaliser, elementwise on uint64 (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64).copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def _key(seed: int) -> np.uint64:
    return mix64(np.array([seed & (2**64 - 1)], dtype=np.uint64))[0]


def stream_words(seed: int, n_words: int, start: int = 0) -> np.ndarray:
    """Words ``start .. start + n_words - 1`` of the label stream for ``seed``."""
    j = np.arange(start + 1, start + n_words + 1, dtype=np.uint64)
    return mix64(_key(seed) + j * np.uint64(GOLDEN))


def label_at(seed: int, d: int, L: int, site) -> int:
    """Label of a single site, recomputed from the counter stream."""
    idx = Torus(d, L).flat(np.asarray(site))
    word = stream_words(seed, 1, start=int(idx) >> 6)[0]
    return int((int(word) >> (int(idx) & 63)) & 1)


@dataclass(frozen=True)
class Torus:
    """The discrete torus ``Z_L^d``; ``L`` must be a power of two, at least 4."""

    d: int
    L: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.L < 4 or self.L & (self.L - 1):
            raise ValueError(f"side must be a power of two >= 4, got {self.L}")

    @property
    def n(self) -> int:
        return self.L**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    @cached_property
    def strides(self) -> np.ndarray:
        return self.L ** np.arange(self.d - 1, -1, -1, dtype=np.int64)

    @cached_property
    def coords(self) -> np.ndarray:
        """(n, d) coordinates of all sites in flat order (read-only)."""
        c = np.indices(self.shape, dtype=np.int64).reshape(self.d, -1).T.copy()
        c.setflags(write=False)
        return c

    def flat(self, coords) -> np.ndarray:
        c = np.asarray(coords, dtype=np.int64) % self.L
        return c @ self.strides

    def unflat(self, idx) -> np.ndarray:
        return self.coords[np.asarray(idx, dtype=np.int64)]

    def wrap(self, delta) -> np.ndarray:
        """Representative of a displacement in ``[-L/2, L/2)``."""
        h = self.L // 2
        return (np.asarray(delta, dtype=np.int64) + h) % self.L - h

    def displacement(self, a, b) -> np.ndarray:
        """Shortest displacement from flat sites ``a`` to ``b``."""
        return self.wrap(self.unflat(b) - self.unflat(a))

    def distance(self, a, b) -> np.ndarray:
        return np.abs(self.displacement(a, b)).max(axis=-1)

    def offset_key(self, idx, anchor) -> np.ndarray:
        """Row-major rank of ``(site - anchor) mod L``; orders sites by
        lexicographic offset from the anchor."""
        off = (self.unflat(idx) - np.asarray(anchor, dtype=np.int64)) % self.L
        return off @ self.strides

    def shift(self, idx, v) -> np.ndarray:
        return self.flat(self.unflat(idx) + np.asarray(v, dtype=np.int64))

    @property
    def log2L(self) -> int:
        return self.L.bit_length() - 1


@dataclass(frozen=True, eq=False)
class Configuration:
    """A two-colouring of the torus.  ``offset`` records the translation
    applied since generation (for bookkeeping only)."""

    torus: Torus
    labels: np.ndarray
    seed: int | None = None
    offset: tuple[int, ...] = field(default=())

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.uint8).reshape(self.torus.shape)
        if lab.size and lab.max() > 1:
            raise ValueError("labels must be 0/1")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        if not self.offset:
            object.__setattr__(self, "offset", (0,) * self.torus.d)

    @property
    def d(self) -> int:
        return self.torus.d

    @property
    def L(self) -> int:
        return self.torus.L

    @property
    def flat_labels(self) -> np.ndarray:
        return self.labels.reshape(-1)

    @property
    def n_blue(self) -> int:
        return int(self.labels.sum(dtype=np.int64))

    @property
    def surplus(self) -> int:
        return abs(2 * self.n_blue - self.torus.n)

    @property
    def balanced(self) -> bool:
        return 2 * self.n_blue == self.torus.n

    def translate(self, v) -> "Configuration":
        """The configuration ``x -> omega(x - v)``."""
        v = tuple(int(x) for x in v)
        lab = np.roll(self.labels, v, axis=tuple(range(self.d)))
        off = tuple((a + b) % self.L for a, b in zip(self.offset, v))
        return Configuration(self.torus, lab, self.seed, off)

    def __eq__(self, other):
        return (
            isinstance(other, Configuration)
            and self.torus == other.torus
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None

    def to_bytes(self) -> bytes:
        seed = 2**64 - 1 if self.seed is None else self.seed
        head = _HEADER.pack(MAGIC, self.d, self.torus.log2L, seed)
        return head + np.packbits(self.flat_labels, bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Configuration":
        if len(data) < _HEADER.size:
            raise ValueError("truncated configuration header")
        magic, d, lg, seed = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError("bad magic")
        torus = Torus(d, 1 << lg)
        nbytes = (torus.n + 7) // 8
        body = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=_HEADER.size)
        if body.size != nbytes:
            raise ValueError("truncated configuration body")
        bits = np.unpackbits(body, bitorder="little")[: torus.n]
        return cls(torus, bits, None if seed == 2**64 - 1 else seed)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Configuration":
        return cls.from_bytes(Path(path).read_bytes())


def generate(d: int, L: int, seed: int) -> Configuration:
    """i.i.d. fair labels on ``Z_L^d`` from the counter stream."""
    torus = Torus(d, L)
    words = stream_words(seed, (torus.n + 63) // 64)
    bits = np.unpackbits(words.astype("<u8").view(np.uint8), bitorder="little")
    return Configuration(torus, bits[: torus.n], seed)


def window_popcounts(d: int, L: int, seeds) -> np.ndarray:
    """Number of blue sites of ``generate(d, L, s)`` for each seed, without
    materialising the labels."""
    n = L**d
    nw, rem = divmod(n, 64)
    seeds = np.asarray(seeds, dtype=np.uint64)
    keys = mix64(seeds)
    out = np.zeros(seeds.size, dtype=np.int64)
    block = max(1, (1 << 22) // max(nw, 1))
    j = (np.arange(1, nw + 1, dtype=np.uint64) * np.uint64(GOLDEN))[None, :]
    for lo in range(0, seeds.size, block):
        w = mix64(keys[lo : lo + block, None] + j)
        out[lo : lo + block] = np.bitwise_count(w).sum(axis=1, dtype=np.int64)
    if rem:
        last = mix64(keys + np.uint64(nw + 1) * np.uint64(GOLDEN))
        out += np.bitwise_count(last & np.uint64((1 << rem) - 1)).astype(np.int64)
    return out


def balanced_seeds(d: int, L: int, count: int, start: int = 0, batch: int = 4096) -> list[int]:
    """The first ``count`` seeds ``>= start`` whose window is exactly balanced."""
    found: list[int] = []
    s = start
    half = L**d // 2
    while len(found) < count:
        cand = np.arange(s, s + batch, dtype=np.uint64)
        hits = cand[window_popcounts(d, L, cand) == half]
        found.extend(int(x) for x in hits[: count - len(found)])
        s += batch
    return found


class SiteSet:
    """A subset of the torus, backed by a flat boolean mask."""

    __slots__ = ("torus", "mask")

    def __init__(self, torus: Torus, mask):
        m = np.asarray(mask, dtype=bool).reshape(-1)
        if m.size != torus.n:
            raise ValueError("mask size does not match torus")
        self.torus = torus
        self.mask = m

    @classmethod
    def from_indices(cls, torus: Torus, idx) -> "SiteSet":
        m = np.zeros(torus.n, dtype=bool)
        m[np.asarray(idx, dtype=np.int64)] = True
        return cls(torus, m)

    @classmethod
    def from_coords(cls, torus: Torus, coords) -> "SiteSet":
        return cls.from_indices(torus, torus.flat(np.asarray(coords).reshape(-1, torus.d)))

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def __len__(self):
        return self.size

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def coords(self) -> np.ndarray:
        return self.torus.unflat(self.indices())

    def __contains__(self, site) -> bool:
        return bool(self.mask[int(self.torus.flat(np.asarray(site)))])

    def _check(self, other: "SiteSet"):
        if self.torus != other.torus:
            raise ValueError("site sets live on different tori")

    def __and__(self, other):
        self._check(other)
        return SiteSet(self.torus, self.mask & other.mask)

    def __or__(self, other):
        self._check(other)
        return SiteSet(self.torus, self.mask | other.mask)

    def __sub__(self, other):
        self._check(other)
        return SiteSet(self.torus, self.mask & ~other.mask)

    def __invert__(self):
        return SiteSet(self.torus, ~self.mask)

    def __eq__(self, other):
        return isinstance(other, SiteSet) and self.torus == other.torus and np.array_equal(self.mask, other.mask)

    __hash__ = None

    def __repr__(self):
        return f"SiteSet(d={self.torus.d}, L={self.torus.L}, size={self.size})"

    def translate(self, v) -> "SiteSet":
        m = np.roll(self.mask.reshape(self.torus.shape), tuple(int(x) for x in v), axis=tuple(range(self.torus.d)))
        return SiteSet(self.torus, m)

    def inner_boundary(self) -> "SiteSet":
        return SiteSet(self.torus, inner_boundary(self.mask.reshape(self.torus.shape)))

    def components(self) -> list["SiteSet"]:
        return connected_components(self)

    def surplus(self, config: Configuration) -> int:
        blue = int(config.flat_labels[self.mask].sum(dtype=np.int64))
        return abs(2 * blue - self.size)


def ball(torus: Torus, center, r: int) -> SiteSet:
    """Closed sup-norm ball of radius ``r`` around ``center``."""
    if not 0 <= r < torus.L / 2:
        raise ValueError(f"radius {r} must lie in [0, L/2) to avoid wrap-around overlap")
    disp = torus.wrap(torus.coords - np.asarray(center, dtype=np.int64))
    return SiteSet(torus, np.abs(disp).max(axis=1) <= r)


def inner_boundary(mask: np.ndarray) -> np.ndarray:
    """Sites of ``mask`` with at least one nearest neighbour (torus) outside it."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    for ax in range(mask.ndim):
        for step in (1, -1):
            out |= ~np.roll(mask, step, axis=ax)
    return out & mask


def component_labels(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Nearest-neighbour connected components on the torus.

    Returns an int array (0 outside the set) with components numbered
    1..m in order of their smallest flat index.
    """
    mask = np.asarray(mask, dtype=bool)
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    lab, m = ndimage.label(mask, structure=structure)
    if m == 0:
        return lab, 0
    a, b = [], []
    for ax in range(mask.ndim):
        first = np.take(lab, 0, axis=ax).ravel()
        last = np.take(lab, -1, axis=ax).ravel()
        both = (first > 0) & (last > 0)
        a.append(first[both] - 1)
        b.append(last[both] - 1)
    a = np.concatenate(a)
    b = np.concatenate(b)
    g = coo_array((np.ones(a.size, dtype=np.int8), (a, b)), shape=(m, m)).tocsr()
    _, merged = _cc(g, directed=False)
    flat = lab.ravel()
    comp = np.where(flat > 0, merged[np.maximum(flat, 1) - 1] + 1, 0)
    _, first_idx = np.unique(comp, return_index=True)
    order = comp[np.sort(first_idx)]
    order = order[order > 0]
    relabel = np.zeros(comp.max() + 1, dtype=np.int64)
    relabel[order] = np.arange(1, order.size + 1)
    return relabel[comp].reshape(mask.shape), int(order.size)


def connected_components(s: SiteSet) -> list[SiteSet]:
    lab, m = component_labels(s.mask.reshape(s.torus.shape))
    flat = lab.ravel()
    return [SiteSet(s.torus, flat == c) for c in range(1, m + 1)]
