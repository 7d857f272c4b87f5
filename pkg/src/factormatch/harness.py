"""Monte Carlo driver, tail estimation and structural checkers.

Tail statistics pool all matched sites of a window (every site of the torus
plays the role of the origin) and use seeds as the replication unit.
Confidence intervals are Wilson score intervals.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_array
from scipy.sparse.csgraph import connected_components as _cc

from .centers import CenterSet, bulb_density, bulb_mask
from .lattice import Configuration, Torus, generate, inner_boundary, window_popcounts
from .matcher3d import SurplusFn, chernoff_bound, default_k, run3d
from .matching import Matching, run2d
from .partitions import Partition, PartitionChain, Schedule, build_chain, pseudocube_report, theta

__all__ = [
    "HistogramMergeError",
    "TailHistogram",
    "wilson_interval",
    "estimate_tail",
    "fit_slope",
    "EquivarianceReport",
    "pipeline_objects",
    "equivariance_suite",
    "nearest_opposite_distances",
    "nearest_opposite_tail",
    "sampled_frequency",
    "LemmaResult",
    "LemmaReport",
    "surface_check",
    "bound_check",
    "boundary_check",
    "staircase_check",
    "chernoff_check",
    "pseudocube_check",
    "lemma_suite",
]


class HistogramMergeError(ValueError):
    pass


def wilson_interval(k, n, z: float = 1.96):
    """Wilson score interval for ``k`` successes out of ``n`` (elementwise)."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(n > 0, k / n, 0.0)
        den = 1 + z * z / n
        mid = (p + z * z / (2 * n)) / den
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = np.where(n > 0, np.clip(mid - half, 0, 1), 0.0)
    hi = np.where(n > 0, np.clip(mid + half, 0, 1), 1.0)
    return lo, hi


@dataclass(eq=False)
class TailHistogram:
    """``exceed[r]`` = number of matched sites whose partner lies at distance
    ``> r``, for ``r = 0 .. L/2``."""

    d: int
    L: int
    exceed: np.ndarray
    total: int = 0
    unmatched: int = 0
    replicas: int = 0
    seeds: list = field(default_factory=list)
    norm: str = "inf"

    @classmethod
    def empty(cls, d: int, L: int, norm: str = "inf") -> "TailHistogram":
        return cls(d, L, np.zeros(L // 2 + 1, dtype=np.int64), norm=norm)

    @property
    def radii(self) -> np.ndarray:
        return np.arange(self.exceed.size)

    @property
    def p_hat(self) -> np.ndarray:
        return self.exceed / max(self.total, 1)

    def wilson(self, z: float = 1.96):
        return wilson_interval(self.exceed, self.total, z)

    def merge(self, other: "TailHistogram") -> "TailHistogram":
        if (self.d, self.L, self.norm) != (other.d, other.L, other.norm):
            raise HistogramMergeError(f"cannot merge histograms of (d={self.d}, L={self.L}, {self.norm}) and (d={other.d}, L={other.L}, {other.norm})")
        return TailHistogram(
            self.d,
            self.L,
            self.exceed + other.exceed,
            self.total + other.total,
            self.unmatched + other.unmatched,
            self.replicas + other.replicas,
            list(self.seeds) + list(other.seeds),
            self.norm,
        )

    def __add__(self, other):
        return self.merge(other)

    def __eq__(self, other):
        return (
            isinstance(other, TailHistogram)
            and (self.d, self.L, self.norm, self.total, self.unmatched, self.replicas) == (other.d, other.L, other.norm, other.total, other.unmatched, other.replicas)
            and list(self.seeds) == list(other.seeds)
            and np.array_equal(self.exceed, other.exceed)
        )

    __hash__ = None

    def to_csv(self) -> str:
        lo, hi = self.wilson()
        buf = io.StringIO()
        seeds = ";".join(str(s) for s in self.seeds)
        buf.write(f"# d={self.d} L={self.L} norm={self.norm} total={self.total} unmatched={self.unmatched} replicas={self.replicas} seeds={seeds}\n")
        buf.write("r,exceed,total,p_hat,wilson_lo,wilson_hi\n")
        for r, e, p, a, b in zip(self.radii, self.exceed, self.p_hat, lo, hi):
            buf.write(f"{r},{e},{self.total},{p:.10g},{a:.10g},{b:.10g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TailHistogram":
        lines = text.splitlines()
        meta = dict(tok.split("=", 1) for tok in lines[0].lstrip("# ").split())
        rows = [ln.split(",") for ln in lines[2:] if ln.strip()]
        exceed = np.array([int(r[1]) for r in rows], dtype=np.int64)
        seeds = [int(s) for s in meta["seeds"].split(";") if s]
        return cls(int(meta["d"]), int(meta["L"]), exceed, int(meta["total"]), int(meta["unmatched"]), int(meta["replicas"]), seeds, meta["norm"])

    def to_json(self) -> str:
        doc = {
            "d": self.d,
            "L": self.L,
            "norm": self.norm,
            "total": self.total,
            "unmatched": self.unmatched,
            "replicas": self.replicas,
            "seeds": list(self.seeds),
            "exceed": self.exceed.tolist(),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TailHistogram":
        doc = json.loads(text)
        return cls(doc["d"], doc["L"], np.asarray(doc["exceed"], dtype=np.int64), doc["total"], doc["unmatched"], doc["replicas"], doc["seeds"], doc["norm"])

    def slope(self, r_min: int = 4, r_max: int = 64, min_events: int = 100) -> dict:
        return fit_slope(self, r_min, r_max, min_events)


def estimate_tail(matchings, seeds=None, norm: str = "inf") -> TailHistogram:
    """Pool per-site partner distances of one or several matchings."""
    if isinstance(matchings, Matching):
        matchings = [matchings]
    matchings = list(matchings)
    if seeds is None:
        seeds = [None] * len(matchings)
    hist = None
    for m, s in zip(matchings, seeds):
        t = m.torus
        h = TailHistogram.empty(t.d, t.L, norm)
        lens = np.sort(m.lengths(norm))
        h.exceed = lens.size - np.searchsorted(lens, h.radii, side="right").astype(np.int64)
        h.total = int(lens.size)
        h.unmatched = int(t.n - lens.size)
        h.replicas = 1
        h.seeds = [] if s is None else [int(s)]
        hist = h if hist is None else hist.merge(h)
    if hist is None:
        raise ValueError("no matchings given")
    return hist


def fit_slope(hist: TailHistogram, r_min: int = 4, r_max: int = 64, min_events: int = 100) -> dict:
    """Least-squares slope of ``log F(r)`` against ``log r`` over the radii
    in ``[r_min, r_max]`` that have at least ``min_events`` exceedances."""
    r = hist.radii
    sel = (r >= r_min) & (r <= r_max) & (hist.exceed >= min_events)
    used = r[sel]
    if used.size < 2:
        return {"slope": float("nan"), "intercept": float("nan"), "radii": used.tolist(), "n_radii": int(used.size)}
    x = np.log(used)
    y = np.log(hist.p_hat[sel])
    slope, intercept = np.polyfit(x, y, 1)
    return {"slope": float(slope), "intercept": float(intercept), "radii": used.tolist(), "n_radii": int(used.size)}


# ---------------------------------------------------------------- equivariance


def pipeline_objects(config: Configuration, schedule: Schedule | None = None, *, k: int | None = None, epsilon: float = 0.5, matchers=("2d", "3d")) -> list[tuple[str, object]]:
    """Every intermediate object of the pipeline, in construction order."""
    chain = build_chain(config, schedule)
    objs: list[tuple[str, object]] = []
    for i, c in enumerate(chain.centers):
        objs.append((f"centers[{i}]", c))
    for j, p in enumerate(chain.levels):
        objs.append((f"level[{j}]:{p.name}", p))
        objs.append((f"good[{j}]", chain.good[j]))
    if "2d" in matchers:
        objs.append(("M2d", run2d(config, chain)[0]))
    if "3d" in matchers:
        res = run3d(config, chain, k=k, epsilon=epsilon, keep_snapshots=True)
        objs.append(("P", res.classification.P))
        for i, u in enumerate(res.U):
            objs.append((f"U[{i}]", u))
        for i, m in enumerate(res.snapshots):
            objs.append((f"M[{i}]", m))
    return objs


def _roll(torus: Torus, a: np.ndarray, v) -> np.ndarray:
    return np.roll(a.reshape(torus.shape), tuple(int(x) for x in v), axis=tuple(range(torus.d))).reshape(-1)


def _translated_equal(torus: Torus, base, moved, v) -> bool:
    if isinstance(base, CenterSet):
        return base.translate(v) == moved
    if isinstance(base, Partition):
        t = base.translate(v)
        return (
            t.same_cells(moved)
            and np.array_equal(t.site_anchors(), moved.site_anchors())
            and np.array_equal(t.kinds[t.ids], moved.kinds[moved.ids])
        )
    if isinstance(base, Matching):
        return base.translate(v) == moved
    if isinstance(base, np.ndarray):
        return np.array_equal(_roll(torus, base, v), moved)
    raise TypeError(f"cannot compare objects of type {type(base).__name__}")


@dataclass
class EquivarianceReport:
    d: int
    L: int
    n_translations: int
    n_objects: int
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json(self) -> str:
        return json.dumps(
            {"d": self.d, "L": self.L, "n_translations": self.n_translations, "n_objects": self.n_objects, "passed": self.passed, "failures": self.failures},
            sort_keys=True,
        )


def equivariance_suite(
    config: Configuration,
    n_translations: int = 100,
    *,
    schedule: Schedule | None = None,
    k: int | None = None,
    epsilon: float = 0.5,
    rng_seed: int = 0,
    shifts=None,
    matchers=("2d", "3d"),
) -> EquivarianceReport:
    """Compare the pipeline on translated configurations with the translated
    pipeline output.  Each failure records the shift and the first object
    that differs."""
    torus = config.torus
    base = pipeline_objects(config, schedule, k=k, epsilon=epsilon, matchers=matchers)
    if shifts is None:
        rng = np.random.default_rng(rng_seed)
        shifts = rng.integers(0, torus.L, size=(n_translations, torus.d))
    shifts = np.asarray(shifts, dtype=np.int64).reshape(-1, torus.d)
    rep = EquivarianceReport(torus.d, torus.L, int(shifts.shape[0]), len(base))
    for v in shifts:
        moved = pipeline_objects(config.translate(v), schedule, k=k, epsilon=epsilon, matchers=matchers)
        names = [n for n, _ in moved]
        if names != [n for n, _ in base]:
            rep.failures.append({"shift": v.tolist(), "object": "structure", "detail": "different object lists"})
            continue
        for (name, b), (_, m) in zip(base, moved):
            if not _translated_equal(torus, b, m, v):
                rep.failures.append({"shift": v.tolist(), "object": name})
                break
    return rep


# ------------------------------------------------------------ analytic sanity


def nearest_opposite_distances(config: Configuration) -> tuple[np.ndarray, dict]:
    """Sup-norm distance from every site to the nearest site of the other
    colour (``-1`` if the window is monochromatic)."""
    torus = config.torus
    lab = config.labels.astype(bool)
    if lab.all() or not lab.any():
        return np.full(torus.n, -1, dtype=np.int64), {"monochromatic": True}
    dist = np.zeros(torus.shape, dtype=np.int64)
    reach_b, reach_y = lab.copy(), ~lab
    todo = np.ones(torus.shape, dtype=bool)
    r = 0
    while todo.any():
        r += 1
        reach_b = ndimage.maximum_filter(reach_b, size=3, mode="wrap")
        reach_y = ndimage.maximum_filter(reach_y, size=3, mode="wrap")
        hit = todo & np.where(lab, reach_y, reach_b)
        dist[hit] = r
        todo &= ~hit
    return dist.reshape(-1), {"monochromatic": False}


def nearest_opposite_tail(config: Configuration) -> dict:
    """Per-radius frequency of nearest-opposite distance ``> r``.

    ``exact`` is ``2^-(|ball(o, r)| - 1)``: every site of the ball other than
    ``o`` must share the colour of ``o``.  ``ball_power`` is
    ``2^-|ball(o, r)|`` and is reported alongside for comparison."""
    torus = config.torus
    dist, flags = nearest_opposite_distances(config)
    if flags["monochromatic"]:
        return {"flags": flags, "radii": [], "frequency": [], "exact": [], "ball_power": []}
    rmax = int(dist.max())
    radii = np.arange(0, rmax + 1)
    freq = [(dist > r).mean() for r in radii]
    vol = (2 * radii + 1) ** torus.d
    return {
        "flags": flags,
        "radii": radii.tolist(),
        "frequency": [float(x) for x in freq],
        "exact": [float(2.0 ** -(v - 1)) for v in vol],
        "ball_power": [float(2.0**-v) for v in vol],
    }


def sampled_frequency(event: str, d: int, L: int, n_obs: int, *, stride: int = 4, seed0: int = 0, k: int = 1) -> dict:
    """Frequency of a local event over ``n_obs`` site observations taken on
    the sublattice ``stride * Z^d`` of successive windows.

    ``event`` is ``"bulb"`` (site is a k-bulb center), ``"isolated"``
    (nearest opposite colour farther than ``k``) or ``"isolated_blue"``
    (blue site with no yellow site within ``k``).  With ``stride > 2k`` the
    observed balls are disjoint, so observations are independent."""
    if stride <= 2 * k:
        raise ValueError("stride must exceed 2k for independent observations")
    hits = 0
    obs = 0
    seed = seed0
    sub = tuple(slice(None, None, stride) for _ in range(d))
    while obs < n_obs:
        c = generate(d, L, seed)
        if event == "bulb":
            ev = bulb_mask(c, k).reshape(c.torus.shape)
        elif event in ("isolated", "isolated_blue"):
            ev = (nearest_opposite_distances(c)[0] > k).reshape(c.torus.shape)
            if event == "isolated_blue":
                ev &= c.labels == 1
        else:
            raise ValueError(f"unknown event {event!r}")
        s = ev[sub].reshape(-1)[: n_obs - obs]
        hits += int(s.sum())
        obs += s.size
        seed += 1
    vol = (2 * k + 1) ** d
    exact = {"bulb": bulb_density(k, d), "isolated": 2.0 ** -(vol - 1), "isolated_blue": 2.0**-vol}[event]
    return {"event": event, "hits": hits, "n": obs, "frequency": hits / obs, "exact": exact, "ball_power": 2.0**-vol, "windows": seed - seed0}


def binomial_z(hits: int, n: int, p: float) -> float:
    return (hits - n * p) / math.sqrt(n * p * (1 - p))


# ------------------------------------------------------------------ lemmas


@dataclass
class LemmaResult:
    name: str
    passed: bool
    checked: int
    violations: int
    measured: dict = field(default_factory=dict)

    def line(self) -> str:
        m = " ".join(f"{k}={_fmt(v)}" for k, v in sorted(self.measured.items()))
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: checked={self.checked} violations={self.violations} {m}".rstrip()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


@dataclass
class LemmaReport:
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        return [r.line() for r in self.results]

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "results": [r.__dict__ for r in self.results]}, sort_keys=True, default=float)


def _grid_edges(m: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Edges of the (non-periodic) grid graph on ``[0, m)^d``."""
    idx = np.arange(m**d).reshape((m,) * d)
    us, vs = [], []
    for ax in range(d):
        a = np.take(idx, np.arange(m - 1), axis=ax).reshape(-1)
        b = np.take(idx, np.arange(1, m), axis=ax).reshape(-1)
        us.append(a)
        vs.append(b)
    return np.concatenate(us), np.concatenate(vs)


def _random_cut(rng: np.random.Generator, m: int, d: int, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """A random edge set mixing three shapes: i.i.d. edges, the edge
    boundary of random boxes, and random axis hyperplanes."""
    coords = np.stack(np.unravel_index(np.arange(m**d), (m,) * d), axis=1)
    cu, cv = coords[us], coords[vs]
    kind = rng.integers(0, 3)
    gamma = np.zeros(us.size, dtype=bool)
    if kind == 0:
        gamma |= rng.random(us.size) < rng.uniform(0.02, 0.6)
    else:
        for _ in range(rng.integers(1, 5)):
            if kind == 1:
                lo = rng.integers(0, m - 1, d)
                hi = np.minimum(lo + rng.integers(1, m // 2 + 1, d), m)
                inu = ((cu >= lo) & (cu < hi)).all(axis=1)
                inv = ((cv >= lo) & (cv < hi)).all(axis=1)
                gamma |= inu != inv
            else:
                ax = rng.integers(0, d)
                at = rng.integers(1, m)
                gamma |= (cu[:, ax] < at) & (cv[:, ax] >= at)
        gamma |= rng.random(us.size) < rng.uniform(0, 0.05)
    return gamma


def surface_check(d: int, m: int = 16, n_instances: int = 500, seed: int = 0) -> LemmaResult:
    """Components of a cube minus a random edge set: all but one satisfy
    ``|bd D_j| <= c_d |Gamma incident to bd D_j|`` and, for the exception
    ``i``, ``sum_{j != i} |bd D_j| <= 2 c_d |Gamma|``; ``c_d = 2^(d+2)``.

    ``bd`` is the set of sites with fewer than ``2d`` lattice neighbours in
    the component (sites on the cube's faces always count)."""
    cd = 2 ** (d + 2)
    rng = np.random.default_rng(seed)
    us, vs = _grid_edges(m, d)
    n = m**d
    viol = 0
    worst = 0.0
    for _ in range(n_instances):
        gamma = _random_cut(rng, m, d, us, vs)
        keep = ~gamma
        g = coo_array((np.ones(int(keep.sum()), dtype=np.int8), (us[keep], vs[keep])), shape=(n, n))
        ncomp, comp = _cc(g, directed=False)
        # lattice degree inside the own component
        deg = np.zeros(n, dtype=np.int64)
        same = comp[us] == comp[vs]
        np.add.at(deg, us[same], 1)
        np.add.at(deg, vs[same], 1)
        bnd = deg < 2 * d
        bsize = np.bincount(comp, weights=bnd, minlength=ncomp)
        # Gamma edges incident to a boundary site of component j
        inc = np.zeros(ncomp)
        gu, gv = us[gamma], vs[gamma]
        for a, b in ((gu, gv), (gv, gu)):
            hit = bnd[a]
            np.add.at(inc, comp[a[hit]], 1)
        # an edge with both ends on boundaries of the same component counts once
        dup = bnd[gu] & bnd[gv] & (comp[gu] == comp[gv])
        np.add.at(inc, comp[gu[dup]], -1)
        bad_j = bsize > cd * inc
        total = bsize.sum()
        best = total - bsize.max()
        ok = bad_j.sum() <= 1 and best <= 2 * cd * gamma.sum()
        if not ok:
            viol += 1
        if gamma.sum():
            worst = max(worst, best / (2 * cd * gamma.sum()))
    return LemmaResult(f"surface.d{d}", viol == 0, n_instances, viol, {"c_d": cd, "max_ratio": worst, "cube_side": m})


def _eden_blob(rng: np.random.Generator, torus: Torus, start: int, size: int, allowed: np.ndarray) -> np.ndarray:
    """Random connected set grown from ``start`` inside ``allowed``."""
    mask = np.zeros(torus.n, dtype=bool)
    mask[start] = True
    members = [start]
    steps = np.concatenate([np.eye(torus.d, dtype=np.int64), -np.eye(torus.d, dtype=np.int64)])
    for _ in range(50 * size):
        if len(members) >= size:
            break
        x = members[rng.integers(0, len(members))]
        nb = int(torus.flat(torus.coords[x] + steps[rng.integers(0, 2 * torus.d)]))
        if allowed[nb] and not mask[nb]:
            mask[nb] = True
            members.append(nb)
    return mask


def bound_check(results, n_blobs: int = 20, c: float = 4.0, seed: int = 0, max_blob: int = 1500) -> LemmaResult:
    """For random connected ``D`` inside cubic stage cells and the leftover
    set ``U`` chosen there: ``|D & U| <= 1`` when ``diam D < s``, otherwise
    ``|D & U| <= c |bd D| diam(D) s^-d`` with ``s`` the realised separation."""
    rng = np.random.default_rng(seed)
    checked = viol = 0
    worst = 0.0
    for res in results:
        torus = res.matching.torus
        cls = res.classification
        for i, (a_lvl, _) in enumerate(res.stages, start=1):
            if i >= len(res.U):
                break
            Pa = cls.coarsening(a_lvl)
            U = res.U[i]
            for ev in res.events:
                if ev.stage != i or ev.status != "ok" or ev.cell_size == 0:
                    continue
                cell = Pa.ids == Pa.ids[int(torus.flat(np.asarray(ev.cell_anchor)))]
                u = np.flatnonzero(U & cell)
                if u.size >= 2:
                    dmat = np.abs(torus.wrap(torus.coords[u][:, None] - torus.coords[u][None])).max(axis=2)
                    s = int(dmat[~np.eye(u.size, dtype=bool)].min())
                else:
                    s = max(ev.separation, 1)
                sites = np.flatnonzero(cell)
                for _ in range(n_blobs):
                    start = int(u[rng.integers(0, u.size)]) if u.size and rng.random() < 0.5 else int(sites[rng.integers(0, sites.size)])
                    size = int(rng.integers(1, max(2, min(sites.size // 2, max_blob))))
                    blob = _eden_blob(rng, torus, start, size, cell)
                    pts = torus.coords[blob]
                    rel = torus.wrap(pts - pts[0])
                    diam = int((rel.max(axis=0) - rel.min(axis=0)).max())
                    hit = int((blob & U).sum())
                    bd = sum(b for _, b in _embedded_parts(torus, blob, ev.cell_anchor))
                    checked += 1
                    if diam < s:
                        ok = hit <= 1
                    else:
                        rhs = c * bd * diam * float(s) ** (-torus.d)
                        ok = hit <= rhs
                        worst = max(worst, hit / rhs if rhs else 0.0)
                    viol += not ok
    return LemmaResult("bound", viol == 0, checked, viol, {"c": c, "max_ratio": worst})


def _dyadic_D(chain: PartitionChain, k: int, A: np.ndarray, pcs: dict) -> dict:
    """Per level ``l``: cells of size ``k 2^l`` that are pseudocubes, lie in
    ``A`` and have no pseudocube ancestor inside ``A``.  ``pcs[j]`` is the
    per-cell pseudocube flag of chain level ``j``."""
    j0 = chain.level_index(k)
    inside = {}
    for j in range(j0, len(chain.levels)):
        p = chain.levels[j]
        pc = pcs[j]
        out_cnt = np.bincount(p.ids, weights=~A, minlength=p.n_cells)
        inside[j] = pc & (out_cnt == 0)
    out = {}
    for j in range(j0, len(chain.levels)):
        p = chain.levels[j]
        covered = np.zeros(chain.torus.n, dtype=bool)
        for jj in range(j + 1, len(chain.levels)):
            q = chain.levels[jj]
            covered |= inside[jj][q.ids]
        cells = np.unique(p.ids[A & inside[j][p.ids] & ~covered])
        out[j - j0] = int(cells.size)
    return out


def _embedded_parts(torus: Torus, A: np.ndarray, anchor) -> list[tuple[np.ndarray, int]]:
    """Connected parts of ``A`` and their inner boundaries, with the cubic
    cell holding ``A`` placed in ``Z^d`` (anchor at the origin, no wrap).

    For cells smaller than the window this agrees with the torus; a cell
    equal to the whole window keeps its faces as boundary instead of
    closing up on itself."""
    shift = tuple(-int(x) for x in anchor)
    axes = tuple(range(torus.d))
    flat = np.roll(A.reshape(torus.shape), shift, axis=axes)
    lab, m = ndimage.label(flat, structure=ndimage.generate_binary_structure(torus.d, 1))
    out = []
    for i in range(1, m + 1):
        comp = lab == i
        bd = int(inner_boundary(np.pad(comp, 1)).sum())
        back = np.roll(comp, tuple(-x for x in shift), axis=axes).reshape(-1)
        out.append((back, bd))
    return out


def boundary_check(results, n_random: int = 10, seed: int = 0) -> LemmaResult:
    """``|D_l(A)| <= 2 |bd A| sqrt(d) (k 2^l)^(1-d)`` for unions ``A`` of
    contracted nodes: min-cut witnesses of logged shortfalls plus random
    connected node sets of cubic stage cells.  Boundaries are measured with
    the cell embedded in ``Z^d``."""
    rng = np.random.default_rng(seed)
    checked = viol = 0
    worst = 0.0
    n_witness = 0
    for res in results:
        torus = res.matching.torus
        d = torus.d
        cls = res.classification
        P = cls.P
        chain = res.chain
        pcs = {j: pseudocube_report(p, s).ok for j, (p, s) in enumerate(zip(chain.levels, chain.sizes))}
        sets = []
        for i, (a_lvl, _) in enumerate(res.stages, start=1):
            Pa = cls.coarsening(a_lvl)
            for ev in res.events:
                if ev.stage != i or ev.status not in ("ok", "shortfall"):
                    continue
                cell = Pa.ids == Pa.ids[int(torus.flat(np.asarray(ev.cell_anchor)))]
                ks = np.flatnonzero(cell)
                ks = ks[np.argsort(torus.offset_key(ks, np.asarray(ev.cell_anchor)), kind="stable")]
                pid = P.ids[ks]
                uniq, first = np.unique(pid, return_index=True)
                node_cells = uniq[np.argsort(first, kind="stable")]
                if ev.status == "shortfall" and ev.witness:
                    n_witness += 1
                    chosen = node_cells[np.asarray(ev.witness["source_side"], dtype=np.int64)]
                    sets.append((np.isin(P.ids, chosen) & cell, ev.cell_anchor))
                for _ in range(n_random):
                    pick = rng.random(node_cells.size) < rng.uniform(0.1, 0.9)
                    sets.append((np.isin(P.ids, node_cells[pick]) & cell, ev.cell_anchor))
        for A, anchor in sets:
            if not A.any():
                continue
            for a, bd in _embedded_parts(torus, A, anchor):
                for ell, cnt in _dyadic_D(chain, res.k, a, pcs).items():
                    rhs = 2 * bd * math.sqrt(d) * float(res.k * 2**ell) ** (1 - d)
                    checked += 1
                    if cnt > rhs:
                        viol += 1
                    if rhs:
                        worst = max(worst, cnt / rhs)
    return LemmaResult("boundary", viol == 0, checked, viol, {"max_ratio": worst, "witnesses": n_witness})


def staircase_check(d: int, n_instances: int = 200, seed: int = 0, L: int | None = None) -> LemmaResult:
    """``|bd theta(H)| / |bd H|`` for dyadic cubes ``H`` and partitions into
    aligned ``2^i'``-cubes, part of which are broken into single sites.

    The measured constant is reported per side of ``H``.  Grids are at most
    half as fine as ``H`` is wide, so ``theta(H)`` sits inside the cube of
    side ``1.5 * side``; the check passes if every per-side constant stays
    below the fixed bound ``1.5^(d-1)``."""
    L = L or (128 if d == 2 else 64)
    torus = Torus(d, L)
    rng = np.random.default_rng(seed)
    by_side: dict[int, float] = {}
    sides = [s for s in (4, 8, 16, 32) if s <= L // 4]
    for _ in range(n_instances):
        side = int(rng.choice(sides))
        sub = int(2 ** rng.integers(0, int(math.log2(side))))
        off = rng.integers(0, sub, d)
        box = ((torus.coords - off) % L) // sub
        bid = torus.flat(box)
        chunk_cells = rng.random(torus.n) < rng.uniform(0, 0.5)
        chunked = chunk_cells[bid]
        ids = np.where(chunked, torus.n + np.arange(torus.n), bid)
        ids = np.unique(ids, return_inverse=True)[1]
        nc = int(ids.max()) + 1
        part = Partition(torus, ids, np.zeros((nc, d), dtype=np.int64), np.zeros(nc, dtype=np.uint8), sub)
        corner = rng.integers(0, L, d)
        th = theta(part, corner, side)
        H = ((torus.wrap(torus.coords - corner) >= 0) & (torus.wrap(torus.coords - corner) < side)).all(axis=1)
        bth = int(inner_boundary(th.mask.reshape(torus.shape)).sum())
        bH = int(inner_boundary(H.reshape(torus.shape)).sum())
        by_side[side] = max(by_side.get(side, 0.0), bth / bH)
    cap = 1.5 ** (d - 1)
    ok = max(by_side.values()) <= cap
    measured = {f"c_side{s}": v for s, v in sorted(by_side.items())}
    measured["cap"] = cap
    return LemmaResult(f"staircase.d{d}", ok, n_instances, int(not ok), measured)


def chernoff_check(d: int = 3, k: int | None = None, n_samples: int = 10_000, epsilon: float = 0.5, form: str = "power", seed0: int = 0, factor: float = 2.0) -> LemmaResult:
    """Frequency of ``sur(K) >= f(|K|)`` over independent cubes of side
    ``k 2^i`` (i = 0, 1, 2) against ``factor`` times the bound."""
    k = k or default_k(d)
    f = SurplusFn(form, epsilon)
    measured = {}
    viol = 0
    for i in range(3):
        side = k * 2**i
        seeds = np.arange(n_samples, dtype=np.uint64) + np.uint64(seed0 + i * n_samples)
        blue = window_popcounts(d, side, seeds)
        sur = np.abs(2 * blue - side**d)
        freq = float((sur >= float(f(side**d, d))).mean())
        bound = chernoff_bound(k, d, i, f)
        measured[f"freq_i{i}"] = freq
        measured[f"bound_i{i}"] = bound
        viol += freq > factor * bound
    return LemmaResult(f"chernoff.d{d}.k{k}", viol == 0, 3 * n_samples, int(viol), measured)


def pseudocube_check(chains) -> LemmaResult:
    """Every cell holding a good-flagged site passes the pseudocube test at
    its level's size."""
    checked = viol = 0
    for chain in chains:
        for p, s, g in zip(chain.levels, chain.sizes, chain.good):
            cells = np.unique(p.ids[g])
            if cells.size == 0:
                continue
            ok = pseudocube_report(p, s).ok
            checked += int(cells.size)
            viol += int((~ok[cells]).sum())
    return LemmaResult("pseudocube", viol == 0, checked, viol)


def lemma_suite(configs, *, schedule: Schedule | None = None, k: int | None = None, epsilon: float = 0.5, surface_instances: int = 500, staircase_instances: int = 200, chernoff_samples: int = 10_000, seed: int = 0) -> LemmaReport:
    """Run the structural checks on a set of configurations.

    The purely geometric checks (surface, theta staircase, surplus
    concentration) are run for the dimensions present in ``configs``."""
    configs = list(configs)
    rep = LemmaReport()
    if not configs:
        return rep
    dims = sorted({c.d for c in configs})
    for d in dims:
        rep.results.append(surface_check(d, n_instances=surface_instances, seed=seed))
        rep.results.append(staircase_check(d, n_instances=staircase_instances, seed=seed))
    results = []
    for c in configs:
        ck = k or default_k(c.d)
        chain = build_chain(c, schedule)
        if ck in chain.sizes:
            results.append(run3d(c, chain, k=ck, epsilon=epsilon))
    rep.results.append(pseudocube_check([r.chain for r in results] or [build_chain(c, schedule) for c in configs]))
    if results:
        rep.results.append(boundary_check(results, seed=seed))
        rep.results.append(bound_check(results, seed=seed))
        stab = sum(r.stabilization_violations for r in results)
        rep.results.append(LemmaResult("stabilization", stab == 0, len(results), stab))
    if 3 in dims and chernoff_samples:
        rep.results.append(chernoff_check(3, k if k else None, chernoff_samples, epsilon))
    return rep
