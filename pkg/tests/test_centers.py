import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factormatch.centers import (
    CenterSet,
    bulb_centers,
    bulb_density,
    bulb_mask,
    giant_mask,
    hash_centers,
    patch_hash,
    window_center,
)
from factormatch.lattice import Configuration, Torus, generate


def _const(d, L, v):
    t = Torus(d, L)
    return Configuration(t, np.full(t.shape, v, dtype=np.uint8))


def _bulb_config(d, L, center, k):
    t = Torus(d, L)
    dist = np.abs(t.wrap(t.coords - np.asarray(center))).max(axis=1)
    lab = np.where(dist <= k, 1 - dist % 2, 1).astype(np.uint8)
    return Configuration(t, lab.reshape(t.shape))


def test_bulb_example_ring():
    t = Torus(2, 8)
    lab = np.ones(t.shape, dtype=np.uint8)
    lab[2:5, 2:5] = 0
    lab[3, 3] = 1
    c = Configuration(t, lab)
    s = bulb_centers(c, 1)
    assert (3, 3) in {tuple(x) for x in s.coords()}


def test_all_ones_has_no_bulbs():
    assert len(bulb_centers(_const(2, 16, 1), 1)) == 0


def test_bulb_too_large_for_window():
    with pytest.raises(ValueError):
        bulb_mask(_const(2, 4, 1), 2)


def _brute_bulb(c, k):
    t = c.torus
    out = []
    for x in range(t.n):
        dist = t.distance(np.full(t.n, x), np.arange(t.n))
        sel = dist <= k
        if np.all(c.flat_labels[sel] == 1 - dist[sel] % 2):
            out.append(x)
    return out


def test_bulb_matches_brute_force():
    for seed in range(20):
        c = generate(2, 8, seed)
        assert np.flatnonzero(bulb_mask(c, 1)).tolist() == _brute_bulb(c, 1)


def test_bulb_density_in_big_window():
    c = generate(2, 4096, 1)
    n = c.torus.n
    p = bulb_density(1, 2)
    hits = int(bulb_mask(c, 1).sum())
    # neighbouring memberships are dependent but mutually exclusive within
    # distance 2, which only lowers the variance
    assert abs(hits - n * p) <= 3 * np.sqrt(n * p * (1 - p))


def test_bulb_separation():
    for seed in range(10):
        c = generate(2, 64, seed)
        for k in (1, 2):
            s = bulb_centers(c, k).sites
            if s.size > 1:
                dist = c.torus.distance(s[:, None], s[None, :])
                np.fill_diagonal(dist, 99)
                assert dist.min() >= 2 * k


def test_giant_exact_bulb_is_giant():
    t = 2
    x = (1, 1)
    c = _bulb_config(2, 32, x, 2 * t)
    mask, skipped = giant_mask(c, t, origin=(0, 0))
    assert mask[Torus(2, 32).flat(np.array(x))]
    assert skipped > 0


def test_giant_all_ones_only_origin():
    # at the origin the tested shell sits at even distance, hence all blue
    mask, _ = giant_mask(_const(2, 32, 1), 1, origin=(5, 7))
    assert np.flatnonzero(mask).tolist() == [5 * 32 + 7]


def test_giant_frequency_against_exact_sum():
    d, L, t = 2, 16, 1
    torus = Torus(d, L)
    disp = np.abs(torus.wrap(torus.coords)).max(axis=1)
    r = np.maximum(2 * t, disp)
    fits = 2 * r + 1 <= L
    exact = 0.0
    for x in np.flatnonzero(fits):
        dist = torus.distance(np.full(torus.n, x), np.arange(torus.n))
        forced = (dist <= r[x]) & (disp > t)
        exact += 2.0 ** -int(forced.sum())
    seeds = 4000
    hits = sum(int(giant_mask(generate(d, L, s), t)[0].sum()) for s in range(seeds))
    mean = exact * seeds
    # Poisson-type bound on a rare count
    assert abs(hits - mean) <= 4 * np.sqrt(mean) + 2


def test_hash_centers_equivariant():
    c = generate(2, 64, 3)
    base = hash_centers(c, 4)
    rng = np.random.default_rng(1)
    for v in rng.integers(0, 64, (20, 2)):
        assert hash_centers(c.translate(v), 4) == base.translate(v)


def test_hash_zero_density_is_empty():
    assert len(hash_centers(generate(2, 64, 0), 4, density=0.0)) == 0


def test_hash_density_within_factor_two():
    c = generate(2, 1024, 5)
    target = 2.0**-8
    s = hash_centers(c, 4, density=target)
    got = len(s) / c.torus.n
    assert target / 2 <= got <= 2 * target


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 6))
def test_hash_centers_hardcore(seed, m):
    c = generate(2, 32, seed)
    s = hash_centers(c, m).sites
    if s.size > 1:
        dist = c.torus.distance(s[:, None], s[None, :])
        np.fill_diagonal(dist, 99)
        assert dist.min() >= 2 * m


def test_patch_hash_depends_only_on_patch():
    c = generate(2, 32, 9)
    h = patch_hash(c, 2)
    lab = c.labels.copy()
    lab[20, 20] ^= 1
    h2 = patch_hash(Configuration(c.torus, lab), 2)
    dist = c.torus.distance(np.full(c.torus.n, c.torus.flat(np.array([20, 20]))), np.arange(c.torus.n))
    assert np.array_equal(h[dist > 2], h2[dist > 2])
    assert not np.array_equal(h[dist <= 2], h2[dist <= 2])


def test_scramble_far_from_centers_keeps_them():
    c = generate(2, 64, 4)
    k = 1
    base = bulb_mask(c, k)
    o, radius = np.array([30, 30]), 4
    t = c.torus
    near = np.abs(t.wrap(t.coords - o)).max(axis=1) <= radius
    lab = c.flat_labels.copy()
    lab[near] = np.random.default_rng(0).integers(0, 2, near.sum())
    after = bulb_mask(Configuration(t, lab.reshape(t.shape)), k)
    far = np.abs(t.wrap(t.coords - o)).max(axis=1) > radius + k
    assert np.array_equal(base[far], after[far])


def test_window_center_and_json_round_trip():
    c = generate(3, 16, 2)
    w = window_center(c)
    assert len(w) == 1
    assert CenterSet.from_json(w.to_json()) == w
    h = hash_centers(c, 2)
    assert CenterSet.from_json(h.to_json()) == h
