"""Translation-equivariant center sets.

Three sources are provided:

* ``bulb``: the exact k-bulb pattern (shell ``i`` around ``x`` coloured blue
  for even ``i``, yellow for odd ``i``); density ``2^-(2k+1)^d``.
* ``hash``: a denser surrogate.  Each site gets a 64-bit hash of its radius-m
  patch; sites whose hash falls below a density threshold are candidates and a
  candidate survives unless a competitor within distance ``< 2m`` beats it.
* ``window``: the single site minimising a patch hash over the whole window.
  Its Voronoi cell is the full torus, which closes the hierarchy at the top.

All three depend only on the labels seen from each site, so translating the
configuration translates the centers.  The one exception is a tie for the
window minimum (identical patches), resolved by the smallest absolute index
and reported in ``CenterSet.flags``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .lattice import GOLDEN, Configuration, Torus, mix64

__all__ = [
    "CenterSet",
    "shell_offsets",
    "bulb_density",
    "bulb_mask",
    "bulb_centers",
    "giant_mask",
    "patch_hash",
    "hash_centers",
    "window_center",
]


@dataclass(frozen=True, eq=False)
class CenterSet:
    torus: Torus
    level: int
    source: str
    sites: np.ndarray
    params: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.unique(np.asarray(self.sites, dtype=np.int64))
        s.setflags(write=False)
        object.__setattr__(self, "sites", s)

    def __len__(self):
        return int(self.sites.size)

    def coords(self) -> np.ndarray:
        return self.torus.unflat(self.sites)

    def translate(self, v) -> "CenterSet":
        return CenterSet(self.torus, self.level, self.source, self.torus.shift(self.sites, v), dict(self.params), dict(self.flags))

    def __eq__(self, other):
        return (
            isinstance(other, CenterSet)
            and self.torus == other.torus
            and self.level == other.level
            and self.source == other.source
            and np.array_equal(self.sites, other.sites)
        )

    __hash__ = None

    def to_json(self) -> str:
        coords = sorted(tuple(int(x) for x in c) for c in self.coords())
        doc = {
            "d": self.torus.d,
            "L": self.torus.L,
            "level": self.level,
            "source": self.source,
            "params": self.params,
            "flags": self.flags,
            "centers": [list(c) for c in coords],
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CenterSet":
        doc = json.loads(text)
        torus = Torus(doc["d"], doc["L"])
        c = np.asarray(doc["centers"], dtype=np.int64).reshape(-1, torus.d)
        return cls(torus, doc["level"], doc["source"], torus.flat(c), doc.get("params", {}), doc.get("flags", {}))


@lru_cache(maxsize=None)
def shell_offsets(d: int, i: int) -> np.ndarray:
    """Offsets at sup-norm distance exactly ``i``, in lexicographic order."""
    rng = np.arange(-i, i + 1)
    grid = np.stack(np.meshgrid(*([rng] * d), indexing="ij"), axis=-1).reshape(-1, d)
    out = grid[np.abs(grid).max(axis=1) == i]
    out.setflags(write=False)
    return out


def bulb_density(k: int, d: int) -> float:
    return 2.0 ** (-((2 * k + 1) ** d))


def _shell_test(config: Configuration, cand: np.ndarray, radius: np.ndarray, exempt=None) -> np.ndarray:
    """For each candidate ``x`` check that every site ``y`` with
    ``|y - x| <= radius[x]`` (outside ``exempt``) carries label
    ``1 - (|y - x| mod 2)``."""
    torus = config.torus
    lab = config.flat_labels
    alive = np.ones(cand.size, dtype=bool)
    base = torus.unflat(cand)
    rmax = int(radius.max()) if radius.size else -1
    for i in range(rmax + 1):
        sel = np.flatnonzero(alive & (radius >= i))
        if sel.size == 0:
            break
        want = 1 - (i & 1)
        ok = np.ones(sel.size, dtype=bool)
        b = base[sel]
        for o in shell_offsets(torus.d, i):
            live = np.flatnonzero(ok)
            if live.size == 0:
                break
            y = torus.flat(b[live] + o)
            good = lab[y] == want
            if exempt is not None:
                good |= exempt[y]
            ok[live[~good]] = False
        alive[sel] = ok
    return alive


def bulb_mask(config: Configuration, k: int) -> np.ndarray:
    """Flat indicator of the k-bulb set ``S_k``."""
    torus = config.torus
    if 2 * k + 1 > torus.L:
        raise ValueError("bulb does not fit in the window")
    cand = np.arange(torus.n, dtype=np.int64)
    radius = np.full(torus.n, k, dtype=np.int64)
    return _shell_test(config, cand, radius)


def bulb_centers(config: Configuration, k: int, level: int = 0) -> CenterSet:
    sites = np.flatnonzero(bulb_mask(config, k))
    return CenterSet(config.torus, level, "bulb", sites, {"k": k})


def giant_mask(config: Configuration, t: int, origin=None) -> tuple[np.ndarray, int]:
    """Sites ``x`` whose labels on ``ball(x, r) minus B(o, t)`` are consistent
    with an r-bulb, ``r = max(2t, dist(x, o))``.

    Sites whose test ball does not fit in the window are skipped (reported
    as not giant); their number is returned alongside the mask.
    """
    torus = config.torus
    o = np.zeros(torus.d, dtype=np.int64) if origin is None else np.asarray(origin, dtype=np.int64)
    disp = torus.wrap(torus.coords - o)
    dist = np.abs(disp).max(axis=1)
    exempt = dist <= t
    r = np.maximum(2 * t, dist)
    fits = 2 * r + 1 <= torus.L
    cand = np.flatnonzero(fits)
    out = np.zeros(torus.n, dtype=bool)
    out[cand] = _shell_test(config, cand, r[cand], exempt)
    return out, int((~fits).sum())


def _axis_weights(d: int, radius: int, salt: int) -> np.ndarray:
    j = np.arange(1, d * (2 * radius + 1) + 1, dtype=np.uint64)
    key = mix64(np.array([salt], dtype=np.uint64))[0]
    return (mix64(key + j * np.uint64(GOLDEN)) | np.uint64(1)).reshape(d, 2 * radius + 1)


def patch_hash(config: Configuration, radius: int, salt: int = 0) -> np.ndarray:
    """64-bit hash of the labels on ``ball(x, radius)`` for every site ``x``.

    The patch is folded with a separable product of odd per-axis weights
    (wrapping uint64 arithmetic) and then finalised with splitmix64.
    """
    torus = config.torus
    if 2 * radius + 1 > torus.L:
        raise ValueError("patch does not fit in the window")
    w = _axis_weights(torus.d, radius, salt)
    h = config.labels.astype(np.uint64)
    for ax in range(torus.d):
        acc = np.zeros_like(h)
        for j in range(-radius, radius + 1):
            acc += np.roll(h, -j, axis=ax) * w[ax, j + radius]
        h = acc
    return mix64(h.reshape(-1) ^ np.uint64(salt & (2**64 - 1)))


def _lex_positive(v: np.ndarray) -> np.ndarray:
    nz = v != 0
    first = np.argmax(nz, axis=1)
    return v[np.arange(v.shape[0]), first] > 0


def hash_centers(config: Configuration, m: int, density: float | None = None, level: int = 0, salt: int = 0) -> CenterSet:
    """Hash-bulb surrogate centers with pairwise distance at least ``2m``.

    ``density`` is the candidate probability per site (default ``(2m)^-d``).
    """
    torus = config.torus
    if not 0 < m < torus.L / 4:
        raise ValueError(f"separation radius must lie in (0, L/4), got {m}")
    if density is None:
        density = float((2 * m) ** -torus.d)
    h = patch_hash(config, m, salt=salt + 1 + level)
    thr = np.uint64(min(int(density * 2.0**64), 2**64 - 1))
    cand = np.flatnonzero(h < thr)
    params = {"m": m, "density": density, "salt": salt}
    if cand.size == 0:
        return CenterSet(torus, level, "hash", cand, params, {"empty": True})
    pts = torus.unflat(cand)
    tree = cKDTree(pts, boxsize=torus.L)
    pairs = tree.query_pairs(r=2 * m - 1, p=np.inf, output_type="ndarray")
    loser = np.zeros(cand.size, dtype=bool)
    if pairs.size:
        i, j = pairs[:, 0], pairs[:, 1]
        hi, hj = h[cand[i]], h[cand[j]]
        # i wins on a strictly smaller hash, or on a tie when j sits at a
        # lexicographically positive offset from i
        i_wins = (hi < hj) | ((hi == hj) & _lex_positive(torus.wrap(pts[j] - pts[i])))
        loser[j[i_wins]] = True
        loser[i[~i_wins]] = True
    return CenterSet(torus, level, "hash", cand[~loser], params, {"candidates": int(cand.size)})


def default_window_radius(d: int, L: int) -> int:
    r = math.ceil((96 ** (1.0 / d) - 1) / 2)
    return max(0, min(r, L // 2 - 1))


def window_center(config: Configuration, level: int = 0, radius: int | None = None, salt: int = 0) -> CenterSet:
    """The site with the smallest patch hash in the window."""
    torus = config.torus
    if radius is None:
        radius = default_window_radius(torus.d, torus.L)
    h = patch_hash(config, radius, salt=salt + 0x5EED)
    best = np.flatnonzero(h == h.min())
    flags = {"ties": int(best.size)}
    if best.size > 1:
        flags["non_equivariant_fallback"] = True
    return CenterSet(torus, level, "window", best[:1], {"radius": radius, "salt": salt}, flags)
