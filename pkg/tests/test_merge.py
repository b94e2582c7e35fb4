import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from segcrit.core import CriterionKind, ObservedImage, Segmentation, build_ledger, canonicalize
from segcrit.criteria import score
from segcrit.merge import (
    DisjointSet, MergeConfig, auto_inits, format_init, initial_segmentation, parse_init, segment,
    segment_best_of, segment_criteria,
)
from segcrit.synth import TestImageSpec, generate, NoiseSpec, add_noise
from conftest import random_connected_labels


def test_initial_segmentation_shapes():
    img = ObservedImage(np.zeros((4, 4)))
    assert initial_segmentation(img, "per-pixel").m == 16
    assert initial_segmentation(img, "block:2").m == 4
    five = initial_segmentation(ObservedImage(np.zeros((5, 5))), "block:2")
    assert five.m == 9
    assert np.bincount(five.labels.ravel()).tolist() == [4, 4, 2, 4, 4, 2, 2, 2, 1]


def test_init_parsing():
    assert parse_init("block:4") == ("block", 4)
    assert parse_init("block(3)") == ("block", 3)
    assert parse_init("block:1") == ("per-pixel", 1)
    assert format_init(8) == "block:8"
    assert format_init("AUTO") == "auto"
    for bad in ("block:0", "block:x", "tiles"):
        with pytest.raises(ValueError):
            parse_init(bad)


def test_config_validation():
    with pytest.raises(ValueError):
        MergeConfig(max_regions=0)
    assert MergeConfig(order="self").order is None
    assert MergeConfig("bic", order="self").merge_order is CriterionKind.BIC
    assert MergeConfig("bic").merge_order is CriterionKind.MDL
    assert MergeConfig("aic").merge_order is CriterionKind.AIC
    assert MergeConfig("aic", order="mdl").merge_order is CriterionKind.MDL


def test_disjoint_set():
    ds = DisjointSet(6)
    ds.union(1, 0)
    ds.union(2, 1)
    ds.union(5, 4)
    assert ds.find(2) == 0
    assert ds.roots().tolist() == [0, 0, 0, 3, 4, 4]


def test_two_halves_exact_recovery():
    y = np.zeros((6, 8))
    y[:, 4:] = 1.0
    for init in ("per-pixel", "block:2", "auto"):
        seg, trace = segment(ObservedImage(y), MergeConfig("mdl", init=init))
        assert seg.labels.tolist() == (y > 0).astype(int).tolist()
        assert trace.best_m == 2
        assert score("mdl", build_ledger(seg, ObservedImage(y))).rss == 0.0


@pytest.mark.parametrize("kind", list(CriterionKind))
def test_constant_image_gives_one_region(kind):
    seg, trace = segment(ObservedImage(np.full((5, 6), 3.25)), MergeConfig(kind, init="per-pixel"))
    assert seg.m == 1 and trace.best_m == 1


def test_shrunk_seven_region_image_bic():
    lab = np.array([[0, 0, 1, 2], [3, 0, 4, 2], [3, 5, 4, 6], [5, 5, 6, 6]])
    means = np.array([0.0, 2.0, 4.0, 1.0, 3.0, 5.0, 6.0])
    y = means[lab]
    for kind in ("bic", "mdl"):
        seg, _ = segment(ObservedImage(y), MergeConfig(kind, init="per-pixel"))
        assert seg.m == 7
        assert seg == canonicalize(Segmentation(lab))


def _random_image(seed, h=5, w=6):
    rng = np.random.default_rng(seed)
    return ObservedImage(rng.normal(size=(h, w)))


@given(st.integers(0, 2**32 - 1), st.sampled_from(list(CriterionKind)), st.sampled_from(["mdl", "self"]))
def test_trace_bookkeeping(seed, kind, order):
    img = _random_image(seed)
    seg, trace = segment(img, MergeConfig(kind, init="per-pixel", order=order))
    scores = trace.scores()
    # score_t+1 = score_t + delta_t
    acc = trace.initial_score + np.cumsum([s.delta for s in trace.steps])
    assert np.allclose(acc, scores[1:], rtol=1e-6, atol=1e-6)
    ms = [trace.initial_m] + [s.m for s in trace.steps]
    assert all(a - b == 1 for a, b in zip(ms, ms[1:])) and ms[-1] == 1
    rss = [trace.initial_rss] + [s.rss for s in trace.steps]
    assert all(b >= a - 1e-12 for a, b in zip(rss, rss[1:]))
    assert trace.best_score == scores.min()
    assert seg.m == trace.best_m
    # the returned partition really has the reported score
    assert score(kind, build_ledger(seg, img)).value == pytest.approx(trace.best_score, rel=1e-9, abs=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_max_regions_bound(seed, bound):
    img = _random_image(seed)
    seg, trace = segment(img, MergeConfig("aic", max_regions=bound, init="per-pixel"))
    assert seg.m <= bound
    scores = trace.scores()
    ms = np.array([trace.initial_m] + [s.m for s in trace.steps])
    assert trace.best_score == scores[ms <= bound].min()


def test_determinism():
    img = _random_image(3, 12, 12)
    a = segment(img, MergeConfig("mdl"))
    b = segment(img, MergeConfig("mdl"))
    assert a[0] == b[0] and a[1].to_csv() == b[1].to_csv()


def test_tie_break_prefers_smallest_pair():
    # all four pixels equal: every merge has the same delta, so the (0, 1) pair goes first
    seg, trace = segment(ObservedImage(np.ones((1, 4))), MergeConfig("bic", init="per-pixel"))
    assert (trace.steps[0].region_a, trace.steps[0].region_b) == (0, 1)


def test_trace_csv_header():
    _, trace = segment(_random_image(1, 3, 3), MergeConfig("bic", init="per-pixel"))
    lines = trace.to_csv().splitlines()
    assert lines[0] == "step,region_a,region_b,delta,score,m"
    assert len(lines) == 1 + len(trace.steps)


def test_best_of_single_init_equals_segment():
    img = _random_image(5, 8, 8)
    cfg = MergeConfig("mdl", init="block:2")
    a = segment(img, cfg)
    b = segment_best_of(img, cfg, ["block:2"])
    assert a[0] == b[0] and a[1].best_score == b[1].best_score


def test_best_of_noiseless_prefers_first_listed():
    y = np.zeros((8, 8))
    y[:, 4:] = 2.0
    img = ObservedImage(y)
    seg, trace = segment_best_of(img, MergeConfig("mdl"), ["per-pixel", "block:2"])
    assert seg.m == 2 and trace.init == "per-pixel"


def test_best_of_checkerboard_blocks():
    # 2x2 checkerboard blocks: block:4 tiles cannot separate them, per-pixel can
    y = ((np.arange(8)[:, None] // 2 + np.arange(8)[None, :] // 2) % 2).astype(float)
    img = ObservedImage(y)
    cfg = MergeConfig("mdl")
    pp = segment(img, MergeConfig("mdl", init="per-pixel"))[1].best_score
    b4 = segment(img, MergeConfig("mdl", init="block:4"))[1].best_score
    assert pp <= b4
    assert segment_best_of(img, cfg, ["block:4", "per-pixel"])[1].init == "per-pixel"


def test_auto_inits():
    assert auto_inits(ObservedImage(np.random.default_rng(0).normal(size=(6, 6)))) == ["per-pixel"]
    noisy = ObservedImage(np.random.default_rng(0).normal(size=(64, 64)))
    assert auto_inits(noisy) == ["block:2", "block:4"]
    big = ObservedImage(np.random.default_rng(0).normal(size=(256, 200)))
    assert auto_inits(big) == ["block:2", "block:4", "block:8"]
    flat = ObservedImage(np.zeros((64, 64)))
    assert auto_inits(flat)[0] == "per-pixel"


def test_default_orders_share_the_mdl_path():
    gt = generate(TestImageSpec("squares7", 32, 32))
    img = add_noise(gt, NoiseSpec(4.0, 1))
    res = segment_criteria(img, list(CriterionKind))
    steps = {k: [(s.region_a, s.region_b) for s in res[k][1].steps] for k in CriterionKind}
    assert steps[CriterionKind.BIC] == steps[CriterionKind.MDL]
    assert res[CriterionKind.AIC][1].order is CriterionKind.AIC
    assert res[CriterionKind.BIC][1].order is CriterionKind.MDL
    for kind, (seg, trace) in res.items():
        assert segment(img, MergeConfig(kind))[0] == seg
    fixed = segment_criteria(img, list(CriterionKind), order="mdl")
    assert len({tuple((s.region_a, s.region_b) for s in fixed[k][1].steps) for k in CriterionKind}) == 1


def test_coarsest_init_wins_exact_ties():
    # edges on multiples of 4: block:2 and block:4 reach the same partition
    y = np.zeros((16, 16))
    y[:, 8:] = 1.0
    y[8:, :4] = 2.0
    img = ObservedImage(y + 0.01 * np.random.default_rng(0).normal(size=y.shape))
    seg, trace = segment(img, MergeConfig("mdl", init="auto"))
    assert auto_inits(img) == ["block:2"] and trace.init == "block:2"
    big = np.kron(y, np.ones((4, 4)))
    img = ObservedImage(big + 0.01 * np.random.default_rng(0).normal(size=big.shape))
    seg, trace = segment(img, MergeConfig("mdl", init="auto"))
    assert seg.m == 3 and trace.init == auto_inits(img)[-1]


def test_own_order_uses_rss_ordering_for_aic_and_bic():
    img = _random_image(9, 6, 6)
    a = segment(img, MergeConfig("aic", init="per-pixel", order="self"))[1]
    b = segment(img, MergeConfig("bic", init="per-pixel", order="self"))[1]
    assert [s[:2] for s in a.steps] == [s[:2] for s in b.steps]
    # increasing merge cost when the path is ordered by RSS increase
    drss = np.diff([a.initial_rss] + [s.rss for s in a.steps])
    assert drss[0] == pytest.approx(drss.min())


def test_refine_option_reports_final_score():
    gt = generate(TestImageSpec("freeform4", 48, 48))
    img = add_noise(gt, NoiseSpec(4.0, 0))
    seg, trace = segment(img, MergeConfig("mdl", refine=True))
    assert trace.final_score <= trace.best_score
    assert score("mdl", build_ledger(seg, img)).value == pytest.approx(trace.final_score, rel=1e-9)
