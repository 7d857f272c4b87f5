import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factormatch.centers import CenterSet
from factormatch.lattice import SiteSet, Torus, generate, inner_boundary
from factormatch.partitions import (
    CHUNK,
    CUBE,
    Partition,
    Schedule,
    basic_cube_split,
    build_chain,
    common_refinement,
    export_chain,
    is_pseudocube,
    iso_constant,
    load_chain_export,
    pseudocube_report,
    repair_irregulars,
    theta,
    voronoi,
)


def _centers(t, coords):
    return CenterSet(t, 0, "test", t.flat(np.asarray(coords).reshape(-1, t.d)))


def test_voronoi_single_center():
    t = Torus(2, 16)
    p = voronoi(_centers(t, [(3, 5)]))
    assert p.n_cells == 1 and p.cell_sizes[0] == t.n


def test_voronoi_two_antipodal_centers_split_evenly():
    t = Torus(2, 16)
    p = voronoi(_centers(t, [(0, 0), (0, 8)]))
    assert p.n_cells == 2
    assert p.cell_sizes.tolist() == [128, 128]


def test_voronoi_empty_raises():
    t = Torus(2, 8)
    with pytest.raises(ValueError):
        voronoi(CenterSet(t, 0, "test", np.empty(0, dtype=np.int64)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 12))
def test_voronoi_nearest_center_brute_force(seed, nc):
    t = Torus(2, 16)
    rng = np.random.default_rng(seed)
    sites = rng.choice(t.n, nc, replace=False)
    cs = _centers(t, t.unflat(sites))
    p = voronoi(cs)
    own = t.flat(p.anchors[p.ids])
    dist_own = t.distance(np.arange(t.n), own)
    dmin = t.distance(np.arange(t.n)[:, None], cs.sites[None, :]).min(axis=1)
    assert np.array_equal(dist_own, dmin)
    # every cell contains its center (ties can disconnect a sup-norm cell)
    for c in range(p.n_cells):
        assert p.ids[t.flat(p.anchors[c])] == c


def test_basic_cube_split_single_center():
    t = Torus(2, 16)
    p = basic_cube_split(voronoi(_centers(t, [(1, 2)])), 4)
    assert p.n_cells == 16 and set(p.cell_sizes.tolist()) == {16}


def test_basic_cube_split_keeps_small_cells():
    t = Torus(2, 16)
    vor = voronoi(_centers(t, [(0, 0), (0, 8), (8, 0), (8, 8)]))
    assert basic_cube_split(vor, 16).same_cells(vor)


def _brute_refinement_cells(parts):
    n = parts[0].torus.n
    keys = np.stack([p.ids for p in parts], axis=1)
    return len({tuple(k) for k in keys.tolist()})


def test_common_refinement_identities():
    t = Torus(2, 16)
    p = voronoi(_centers(t, [(0, 0), (5, 9)]))
    assert common_refinement(p).same_cells(p)
    whole = Partition(t, np.zeros(t.n), np.zeros((1, 2)), np.zeros(1))
    assert common_refinement(p, whole).same_cells(p)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_common_refinement_matches_pair_oracle(seed):
    t = Torus(2, 16)
    rng = np.random.default_rng(seed)
    parts = [basic_cube_split(voronoi(_centers(t, t.unflat(rng.choice(t.n, 3, replace=False)))), 4) for _ in range(2)]
    r = common_refinement(*parts)
    assert r.n_cells == _brute_refinement_cells(parts)
    for a, b in itertools.combinations(range(0, t.n, 7), 2):
        same = all(p.ids[a] == p.ids[b] for p in parts)
        assert same == (r.ids[a] == r.ids[b])


def test_repair_all_cubes_unchanged():
    t = Torus(2, 16)
    g = [basic_cube_split(voronoi(_centers(t, [(0, 0)])), b) for b in (4, 8, 16)]
    R, J = repair_irregulars(g, (4, 8, 16))
    assert (J < 0).all()
    for a, b in zip(R, g):
        assert a.same_cells(b)


def test_repair_one_irregular_cell_becomes_chunks():
    t = Torus(2, 16)
    fine = basic_cube_split(voronoi(_centers(t, [(0, 0)])), 4)
    coarse = basic_cube_split(voronoi(_centers(t, [(0, 0)])), 8)
    ids = coarse.ids.copy()
    # split one 8-cube of the coarse level into two rectangles
    box = (t.coords[:, 0] < 8) & (t.coords[:, 1] < 4)
    ids[box] = ids.max() + 1
    coarse2 = Partition(t, ids, np.zeros((ids.max() + 1, 2)), np.zeros(ids.max() + 1))
    rp = [common_refinement(fine, coarse2), coarse2]
    R, J = repair_irregulars(rp, (4, 8))
    terr = J >= 0
    assert terr.any()
    for p in R[: int(J.max()) + 1]:
        assert (p.cell_sizes[p.ids[terr]] == 1).all()
        assert (p.kinds[p.ids[terr]] == CHUNK).all()


def test_theta_examples():
    t = Torus(2, 16)
    grid = basic_cube_split(voronoi(_centers(t, [(0, 0)])), 4)
    th = theta(grid, (4, 4), 8)
    H = ((t.coords >= 4) & (t.coords < 12)).all(axis=1)
    assert np.array_equal(th.mask, H)
    # a cell straddling the left face is excluded, one straddling the right face is included
    shifted = basic_cube_split(voronoi(_centers(t, [(2, 2)])), 4)
    th2 = theta(shifted, (4, 4), 8)
    assert not th2.mask[t.flat(np.array([4, 4]))]
    assert th2.mask[t.flat(np.array([13, 13]))]


def test_theta_boundary_bounded_across_sizes():
    rng = np.random.default_rng(3)
    t = Torus(2, 64)
    ratios = {}
    for _ in range(200):
        side = int(rng.choice([4, 8, 16]))
        sub = int(2 ** rng.integers(0, int(np.log2(side))))
        grid = basic_cube_split(voronoi(_centers(t, [tuple(rng.integers(0, 64, 2))])), sub)
        corner = rng.integers(0, 64, 2)
        th = theta(grid, corner, side)
        bH = 4 * side - 4
        ratios[side] = max(ratios.get(side, 0), inner_boundary(th.mask.reshape(t.shape)).sum() / bH)
    # theta(H) lies inside the cube of side 1.5 * side
    assert max(ratios.values()) <= 1.5


def test_is_pseudocube_examples():
    t = Torus(2, 32)
    cube = np.zeros((32, 32), bool)
    cube[3:11, 5:13] = True
    r = is_pseudocube(SiteSet(t, cube), 8)
    assert r["ok"] and r["boundary"] == 28
    assert 28 <= iso_constant(2) * 8
    strip = np.zeros((32, 32), bool)
    strip[4, 0:8] = True
    r = is_pseudocube(SiteSet(t, strip), 8)
    assert not r["volume_lower"] and not r["ok"]
    with pytest.raises(ValueError):
        is_pseudocube(SiteSet(t, np.zeros(t.n, bool)), 4)


def _brute_pseudocube(mask2d, k):
    L = mask2d.shape[0]
    h = k // 2
    pts = np.argwhere(mask2d)
    lower = any(mask2d[np.ix_([(i + a) % L for a in range(h)], [(j + b) % L for b in range(h)])].all() for i in range(L) for j in range(L))
    upper = True
    for ax in range(2):
        xs = sorted(set(pts[:, ax].tolist()))
        gaps = [(xs[(i + 1) % len(xs)] - xs[i]) % L or L for i in range(len(xs))]
        upper &= L - max(gaps) + 1 <= 2 * k
    bnd = inner_boundary(mask2d).sum()
    iso = bnd <= iso_constant(2) * mask2d.sum() ** 0.5
    return lower, upper, iso


def test_pseudocube_predicate_matches_brute_force_on_chain_cells():
    c = generate(2, 32, 8)
    chain = build_chain(c, Schedule.parse("2:4:hash,8:window,32:window"))
    checked = 0
    for p, s in zip(chain.levels, chain.sizes):
        rep = pseudocube_report(p, s)
        for cell in range(0, p.n_cells, max(1, p.n_cells // 6)):
            m = (p.ids == cell).reshape(32, 32)
            lo, up, iso = _brute_pseudocube(m, s)
            assert (rep.volume_lower[cell], rep.volume_upper[cell], rep.isoperimetry[cell]) == (lo, up, iso)
            checked += 1
    assert checked > 10


def test_chain_single_level_is_trivial():
    c = generate(2, 16, 1)
    chain = build_chain(c, Schedule.parse("16:window"))
    assert len(chain.levels) == 1 and chain.levels[0].n_cells == 1


@pytest.mark.parametrize("d,L", [(2, 256), (3, 32)])
def test_chain_nesting_alpha_and_good_flags(d, L):
    for seed in range(3):
        chain = build_chain(generate(d, L, seed))
        for a, b in zip(chain.levels, chain.levels[1:]):
            assert a.refines(b)
        for p, al in zip(chain.levels, chain.alpha):
            if al >= 0:
                assert set(np.unique(p.kinds).tolist()) <= {CUBE, CHUNK}
                cube = p.kinds == CUBE
                assert (p.cell_sizes[cube] == p.size**d).all()
                assert (p.cell_sizes[p.kinds == CHUNK] == 1).all()
        for p, s, g in zip(chain.levels, chain.sizes, chain.good):
            cells = np.unique(p.ids[g])
            assert pseudocube_report(p, s).ok[cells].all()


def test_good_fraction_does_not_decrease_at_r_levels():
    c = generate(2, 1024, 2)
    chain = build_chain(c, Schedule.parse("4:16:hash,16:64:hash,1024:window"))
    fr = [g.mean() for g, a in zip(chain.good, chain.alpha) if a >= 0]
    assert fr == sorted(fr)


def test_chain_equivariance():
    c = generate(2, 64, 6)
    chain = build_chain(c)
    rng = np.random.default_rng(0)
    for v in rng.integers(0, 64, (5, 2)):
        moved = build_chain(c.translate(v))
        expect = chain.translate(v)
        for a, b in zip(expect.levels, moved.levels):
            assert a.same_cells(b)
            assert np.array_equal(a.site_anchors(), b.site_anchors())


def test_schedule_parse_and_validate():
    s = Schedule.parse("4:8:hash,16:window,64:window")
    assert s.to_str() == "4:8:hash,16:window,64:window"
    s.validate(2, 64)
    with pytest.raises(ValueError):
        Schedule.parse("4:8:hash,12:window").validate(2, 64)
    with pytest.raises(ValueError):
        Schedule.parse("4:4:hash").validate(2, 64)
    with pytest.raises(ValueError):
        Schedule.parse("4:x").validate(2, 64)
    assert Schedule.default(3, 64).to_str() == "4:8:hash,16:window,64:window"
    assert Schedule.default(3, 32).to_str() == "2:4:hash,8:window,32:window"


def test_export_round_trip(tmp_path):
    c = generate(2, 32, 3)
    chain = build_chain(c)
    export_chain(chain, tmp_path / "p", seed=3)
    header, blocks = load_chain_export(tmp_path / "p")
    assert header["L"] == 32 and len(blocks) == len(chain.levels)
    for b, p in zip(blocks, chain.levels):
        assert np.array_equal(b, p.canonical())
