import json

import numpy as np
import pytest
from sklearn.base import clone

from factormatch.cli import main
from factormatch.config import ConfigError, RunConfig, parse_seeds
from factormatch.estimators import GreedyMultiscaleMatcher, PartitionHierarchy, StagedFlowMatcher, check_configuration
from factormatch.harness import (
    HistogramMergeError,
    TailHistogram,
    equivariance_suite,
    estimate_tail,
    fit_slope,
    lemma_suite,
    nearest_opposite_distances,
    nearest_opposite_tail,
    sampled_frequency,
    surface_check,
    wilson_interval,
)
from factormatch.lattice import Configuration, Torus, generate
from factormatch.matching import Matching, run2d
from factormatch.partitions import build_chain
from factormatch.render import render_svg


def _pair_matching():
    t = Torus(2, 8)
    m = Matching.empty(t)
    m.add_pairs([0, 2], [1, 2 + 3 * 8], 0)
    return m


def test_histogram_counts():
    h = estimate_tail(_pair_matching(), seeds=[5])
    assert h.total == 4 and h.unmatched == 60 and h.replicas == 1 and h.seeds == [5]
    assert h.exceed.tolist() == [4, 2, 2, 0, 0]
    assert np.allclose(h.p_hat, [1, 0.5, 0.5, 0, 0])


def test_histogram_merge_and_errors():
    a = estimate_tail(_pair_matching(), seeds=[1])
    b = estimate_tail(_pair_matching(), seeds=[2])
    c = a + b
    assert c.total == 8 and c.seeds == [1, 2] and c.exceed.tolist() == [8, 4, 4, 0, 0]
    assert a.merge(TailHistogram.empty(2, 8)) == a
    with pytest.raises(HistogramMergeError):
        a + TailHistogram.empty(2, 16)
    with pytest.raises(HistogramMergeError):
        a + TailHistogram.empty(2, 8, norm="l2")
    with pytest.raises(ValueError):
        estimate_tail([])


def test_histogram_round_trips():
    m, _, _ = run2d(generate(2, 64, 0))
    h = estimate_tail([m, m], seeds=[0, 0])
    assert TailHistogram.from_csv(h.to_csv()) == h
    assert TailHistogram.from_json(h.to_json()) == h
    assert h.to_csv().splitlines()[1] == "r,exceed,total,p_hat,wilson_lo,wilson_hi"


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0 and 0.03 < hi < 0.04
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and np.isclose(0.5 - lo, hi - 0.5)
    lo, hi = wilson_interval(0, 0)
    assert (lo, hi) == (0, 1)


def test_fit_slope_on_power_law():
    h = TailHistogram.empty(2, 256)
    h.total = 10**9
    r = np.maximum(h.radii, 1)
    h.exceed = (h.total * r.astype(float) ** -2.0).astype(np.int64)
    fit = fit_slope(h, 4, 64, 100)
    assert fit["slope"] == pytest.approx(-2.0, abs=1e-3)
    assert np.isnan(fit_slope(TailHistogram.empty(2, 16))["slope"])


def test_equivariance_zero_shift_and_axis_period():
    c = generate(2, 32, 4)
    rep = equivariance_suite(c, shifts=[[0, 0], [32, 0], [0, 32]], matchers=("2d",))
    assert rep.passed and rep.n_translations == 3 and rep.n_objects > 3
    assert json.loads(rep.to_json())["passed"]


def test_equivariance_random_shifts_3d():
    rep = equivariance_suite(generate(3, 32, 1), 4)
    assert rep.passed, rep.failures


def test_nearest_opposite_examples():
    t = Torus(2, 8)
    checker = Configuration(t, (np.indices(t.shape).sum(axis=0) % 2).astype(np.uint8))
    dist, flags = nearest_opposite_distances(checker)
    assert not flags["monochromatic"] and (dist == 1).all()
    blue = Configuration(t, np.ones(t.shape, dtype=np.uint8))
    dist, flags = nearest_opposite_distances(blue)
    assert flags["monochromatic"] and (dist == -1).all()
    assert nearest_opposite_tail(blue)["radii"] == []
    lab = np.ones(t.shape, dtype=np.uint8)
    lab[0, 0] = 0
    dist, _ = nearest_opposite_distances(Configuration(t, lab))
    assert dist.reshape(t.shape)[4, 4] == 4 and dist[0] == 1


def test_nearest_opposite_tail_exact_values():
    tail = nearest_opposite_tail(generate(2, 64, 0))
    assert tail["radii"][0] == 0 and tail["frequency"][0] == 1.0
    assert tail["exact"][1] == 2.0**-8 and tail["ball_power"][1] == 2.0**-9


def test_sampled_frequency_rejects_overlap():
    with pytest.raises(ValueError):
        sampled_frequency("bulb", 2, 64, 10, stride=2, k=1)
    with pytest.raises(ValueError):
        sampled_frequency("other", 2, 64, 10)
    s = sampled_frequency("isolated", 2, 64, 1000)
    assert s["n"] == 1000 and s["exact"] == 2.0**-8


def test_surface_check_small():
    r = surface_check(2, m=8, n_instances=20, seed=1)
    assert r.passed and r.checked == 20
    assert r.line().startswith("PASS surface")


def test_empty_lemma_suite():
    rep = lemma_suite([])
    assert rep.passed and rep.results == []


def test_render_examples_and_determinism():
    c = generate(2, 16, 2)
    m, chain, _ = run2d(c)
    svg = render_svg(chain.levels[0], m, c, title="t")
    assert svg.startswith("<?xml") and svg.rstrip().endswith("</svg>")
    assert svg.count("<line ") == m.n_pairs
    assert svg == render_svg(chain.levels[0], m, c, title="t")
    whole = render_svg(chain.levels[-1])
    assert "<polyline" not in whole
    with pytest.raises(ValueError):
        render_svg()
    with pytest.raises(ValueError):
        render_svg(config=generate(3, 8, 0))


def test_parse_seeds_and_config_text():
    assert parse_seeds("0-3,10") == [0, 1, 2, 3, 10]
    rc = RunConfig.from_text("dim = 3  # comment\nside = 32\nseed = 1-2\nbalanced = yes\nmatcher = 3d\n")
    assert (rc.dim, rc.side, rc.seeds, rc.balanced) == (3, 32, [1, 2], True)
    assert RunConfig.from_text(rc.to_text()) == rc
    rc.validate()
    with pytest.raises(ConfigError):
        RunConfig.from_text("colour = red")
    with pytest.raises(ConfigError):
        RunConfig.from_text("dim 3")
    with pytest.raises(ConfigError):
        RunConfig(dim=3, side=32, matcher="3d", k=8).validate()
    with pytest.raises(ConfigError):
        RunConfig(side=48).validate()
    with pytest.raises(ConfigError):
        RunConfig(epsilon=5).validate()


def test_bulb_center_source_schedule():
    rc = RunConfig(dim=2, side=256, center_source="bulb")
    assert rc.schedule_obj().to_str() == "4:1:bulb,16:window,256:window"


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["gen", "--dim", "2", "--side", "16", "--seed", "3", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "config-3.fmcfg").exists()
    assert main(["gen", "--dim", "2", "--side", "12", "--out", str(tmp_path)]) == 2
    assert main(["match3d", "--dim", "3", "--side", "32", "--k", "4", "--out", str(tmp_path)]) == 2
    assert main(["match2d", "--dim", "2", "--side", "32", "--seeds", "0-1", "--out", str(tmp_path)]) == 0
    assert Matching.from_bytes((tmp_path / "matching2d-1.fmm").read_bytes()).torus.L == 32
    with pytest.raises(SystemExit):
        main(["no-such-command"])


def test_estimators_api():
    c = generate(2, 32, 0)
    ph = PartitionHierarchy().fit(c)
    ids = ph.transform(c)
    assert ids.shape == (ph.n_levels_, 32 * 32)
    g = GreedyMultiscaleMatcher()
    partner = g.fit_transform(c.labels)
    assert partner.shape == (1024,) and g.n_unmatched_ == abs(c.surplus)
    assert np.array_equal(g.transform(c), partner)
    sf = StagedFlowMatcher(k=16, epsilon=0.25)
    assert sf.get_params()["epsilon"] == 0.25
    assert clone(sf).get_params() == sf.get_params()
    sf.fit(generate(3, 32, 0))
    assert sf.shortfall_residue_ >= 0
    with pytest.raises(ValueError):
        check_configuration(np.zeros((4, 8)))
    with pytest.raises(ValueError):
        check_configuration(np.full((4, 4), 2))
    assert build_chain(c).sizes == ph.sizes_


def test_embedded_boundary_of_whole_window_cell():
    from factormatch.harness import _embedded_parts
    from factormatch.lattice import inner_boundary

    t = Torus(2, 16)
    full = np.ones(t.n, dtype=bool)
    (part, bd), = _embedded_parts(t, full, (3, 5))
    assert part.all() and bd == 16 * 16 - 14 * 14
    # a set strictly inside a smaller cell keeps its torus boundary
    box = ((t.coords >= 2) & (t.coords < 6)).all(axis=1)
    (part, bd), = _embedded_parts(t, box, (0, 0))
    assert np.array_equal(part, box) and bd == int(inner_boundary(box.reshape(t.shape)).sum())
    # a band wrapping around the window splits into two parts at the anchor
    band = (t.coords[:, 0] < 2) | (t.coords[:, 0] >= 14)
    assert len(_embedded_parts(t, band, (8, 0))) == 1
    assert len(_embedded_parts(t, band, (0, 0))) == 2
