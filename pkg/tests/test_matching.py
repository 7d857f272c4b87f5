import numpy as np
import pytest

from factormatch.lattice import Configuration, Torus, balanced_seeds, generate
from factormatch.matching import Matching, MatchingError, greedy_stage, run2d
from factormatch.partitions import Partition, Schedule, build_chain


def _whole(t):
    return Partition(t, np.zeros(t.n, dtype=np.int64), np.zeros((1, t.d), dtype=np.int64), np.zeros(1, dtype=np.uint8))


def test_greedy_one_dimensional_example():
    t = Torus(1, 8)
    c = Configuration(t, np.array([1, 1, 0, 1, 0, 0, 0, 1], dtype=np.uint8))
    m = Matching.empty(t)
    assert greedy_stage(c, _whole(t), m, 0) == 4
    # blues 0,1,3,7 pair with yellows 2,4,5,6 in order of offset from 0
    assert m.partner.tolist() == [2, 4, 0, 5, 1, 3, 7, 6]
    m.validate(c)


def test_greedy_skips_matched_sites():
    t = Torus(1, 4)
    c = Configuration(t, np.array([1, 0, 1, 0], dtype=np.uint8))
    m = Matching.empty(t)
    m.add_pairs([0], [3], 7)
    assert greedy_stage(c, _whole(t), m, 1) == 1
    assert m.partner.tolist() == [3, 2, 1, 0]
    assert m.tag.tolist() == [7, 1, 1, 7]


def test_greedy_leftover_per_cell_is_surplus():
    c = generate(2, 64, 11)
    chain = build_chain(c, Schedule.parse("4:8:hash,16:window,64:window"))
    m = Matching.empty(c.torus)
    for j, p in enumerate(chain.levels):
        greedy_stage(c, p, m, j)
        lab = c.flat_labels.astype(np.int64) * 2 - 1
        sur = np.bincount(p.ids, lab, p.n_cells)
        left = np.bincount(p.ids, m.partner < 0, p.n_cells)
        assert np.array_equal(left, np.abs(sur))


@pytest.mark.parametrize("d,L", [(2, 128), (3, 16)])
def test_run2d_unmatched_equals_global_surplus(d, L):
    for seed in range(3):
        c = generate(d, L, seed)
        m, chain, stats = run2d(c)
        m.validate(c)
        sur = int(c.flat_labels.sum()) * 2 - c.torus.n
        assert stats[-1]["unmatched"] == abs(sur) == int((m.partner < 0).sum())
        un = [s["unmatched"] for s in stats]
        assert un == sorted(un, reverse=True)
        assert set(np.unique(m.tag[m.matched]).tolist()) <= set(range(len(chain.levels)))


def test_run2d_balanced_is_perfect():
    s = balanced_seeds(2, 64, 1)[0]
    c = generate(2, 64, s)
    m, _, _ = run2d(c)
    assert m.matched.all()


def test_run2d_equivariant():
    c = generate(2, 64, 5)
    m, _, _ = run2d(c)
    for v in np.random.default_rng(2).integers(0, 64, (8, 2)):
        assert run2d(c.translate(v))[0] == m.translate(v)


def test_matching_bytes_round_trip():
    c = generate(2, 32, 1)
    m, _, _ = run2d(c)
    data = m.to_bytes()
    assert data[:6] == b"FMMAT1"
    assert Matching.from_bytes(data) == m
    assert len(data) == 16 + 12 * m.n_pairs
    with pytest.raises(ValueError):
        Matching.from_bytes(b"XXXXXX" + data[6:])


def test_validate_catches_bad_matchings():
    t = Torus(1, 4)
    c = Configuration(t, np.array([1, 1, 0, 0], dtype=np.uint8))
    m = Matching.empty(t)
    m.add_pairs([0], [1], 0)
    with pytest.raises(MatchingError):
        m.validate(c)
    m = Matching.empty(t)
    m.partner[0] = 2
    with pytest.raises(MatchingError):
        m.validate(c)


def test_lengths_norms():
    t = Torus(2, 8)
    m = Matching.empty(t)
    m.add_pairs([t.flat(np.array([0, 0]))], [t.flat(np.array([7, 2]))], 0)
    assert m.lengths("inf").tolist() == [2, 2]
    assert np.allclose(m.lengths("l2"), np.sqrt(5))
