import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from segcrit.core import SegmentationError, count_components
from segcrit.rng import derive_seed, mix64, standard_normal, uint64_stream, uniform53
from segcrit.synth import (
    DEFAULT_MEANS, MIN_SIDE, NoiseSpec, TestImageSpec, add_noise, generate, resample_nearest, signal_variance,
)


def test_splitmix_reference_values():
    # SplitMix64 with state 0: first outputs of the reference generator
    assert int(uint64_stream(0, 1)[0]) == 0xE220A8397B1DCDAF
    assert int(uint64_stream(0, 3)[2]) == 0x06C45D188009454F
    assert mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF


def test_stream_offsets_and_determinism():
    full = uint64_stream(42, 10)
    assert np.array_equal(full[4:], uint64_stream(42, 6, start=4))
    assert np.array_equal(standard_normal(7, 101), standard_normal(7, 101))
    assert np.array_equal(standard_normal(7, 100), standard_normal(7, 101)[:100])
    u = uniform53(full)
    assert np.all((u >= 0) & (u < 1))


def test_normal_moments():
    z = standard_normal(123, 200_000)
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 0.02


def test_derive_seed_is_injective_on_a_grid():
    seeds = {derive_seed(20240601, c, r) for c in range(30) for r in range(200)}
    assert len(seeds) == 30 * 200
    assert derive_seed(1, 2) != derive_seed(2, 1)


@pytest.mark.parametrize("template", ["squares7", "rects8", "freeform4"])
@pytest.mark.parametrize("side", [MIN_SIDE, 33, 64, 128])
def test_templates_are_connected_with_expected_means(template, side):
    gt = generate(TestImageSpec(template, side, side))
    assert gt.m == len(DEFAULT_MEANS[template])
    assert count_components(gt.labels) == gt.m
    # every region is constant in the signal
    for k in range(gt.m):
        assert np.unique(gt.signal[gt.labels == k]).size == 1
    assert sorted(gt.means.tolist()) == sorted(DEFAULT_MEANS[template])


def test_squares7_adjacent_means_differ():
    gt = generate(TestImageSpec("squares7", 64, 64))
    ledger_pairs = set()
    lab = gt.labels
    for a, b in ((lab[:, 1:], lab[:, :-1]), (lab[1:, :], lab[:-1, :])):
        d = a != b
        ledger_pairs |= {tuple(sorted(p)) for p in zip(a[d].tolist(), b[d].tolist())}
    gaps = sorted(abs(gt.means[i] - gt.means[j]) for i, j in ledger_pairs)
    assert gaps[0] == pytest.approx(0.7) and gaps[2] >= 1.0 - 1e-12


def test_template_too_small():
    with pytest.raises(SegmentationError):
        generate(TestImageSpec("squares7", MIN_SIDE - 1, MIN_SIDE - 1))


def test_custom_template_and_resample():
    lab = np.array([[0, 0, 1], [2, 2, 1]])
    spec = TestImageSpec("custom", 6, 4, [0.0, 5.0, 9.0], lab)
    gt = generate(spec)
    assert gt.labels.shape == (4, 6) and gt.m == 3
    assert np.array_equal(resample_nearest(lab, 4, 6)[::2, ::2], lab)
    with pytest.raises(ValueError):
        TestImageSpec("custom", 3, 2, [0.0, 1.0], lab)
    with pytest.raises(ValueError):
        TestImageSpec("blobs", 16, 16)


def test_noise_sigma_and_mean():
    gt = generate(TestImageSpec("squares7", 128, 128))
    img = add_noise(gt, NoiseSpec(2.0, 11))
    assert img.noise_sigma == pytest.approx(math.sqrt(signal_variance(gt)) / 2.0)
    resid = img.values - gt.signal
    assert abs(resid.mean()) < 4 * img.noise_sigma / 128
    assert resid.std() == pytest.approx(img.noise_sigma, rel=0.03)
    again = add_noise(gt, NoiseSpec(2.0, 11))
    assert np.array_equal(img.values, again.values)
    assert not np.array_equal(img.values, add_noise(gt, NoiseSpec(2.0, 12)).values)


@given(st.integers(16, 48), st.sampled_from(["squares7", "rects8", "freeform4"]))
def test_signal_variance_grouping_identity(side, template):
    gt = generate(TestImageSpec(template, side, side))
    area = np.bincount(gt.labels.ravel())
    mean = (area * gt.means).sum() / gt.n
    grouped = (area * (gt.means - mean) ** 2).sum() / gt.n
    assert signal_variance(gt) == pytest.approx(grouped, rel=1e-12, abs=1e-15)


def test_noise_spec_validation():
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(ValueError):
            NoiseSpec(bad, 0)
    flat = TestImageSpec("rects8", 16, 16, [1.0] * 8)
    with pytest.raises(ValueError):
        add_noise(generate(flat), NoiseSpec(1.0, 0))
