import numpy as np
import pytest

from fufi.grid import coarsen, verify_structural
from fufi.synthetic import (SyntheticSpec, generate_synthetic, ha_rmse_floor, random_regimes, regime_frequencies,
                            uniform_pattern)
from fufi.ops import distribution_violation


def test_generation_is_bitwise_reproducible():
    spec = SyntheticSpec(16, 16, 4, 30, random_regimes(16, 16, 4, weather_ids=(0, 3), seed=1), noise_level=0.2)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert np.array_equal(a.flows, b.flows) and a.externals == b.externals


def test_noise_free_flows_follow_regime_patterns():
    regimes = random_regimes(8, 8, 4, weather_ids=(0, 1), seed=2)
    ds = generate_synthetic(SyntheticSpec(8, 8, 4, 20, regimes))
    for flow, rec in zip(ds.flows, ds.externals):
        coarse = coarsen(flow, 4)
        up = np.repeat(np.repeat(coarse, 4, 0), 4, 1)
        np.testing.assert_allclose(flow / up, regimes[(0, rec.weather_id)], rtol=1e-12)


def test_regime_patterns_are_distributions():
    for pattern in random_regimes(16, 16, 4, hour_buckets=2, weather_ids=(0, 1, 2), seed=4).values():
        assert distribution_violation(pattern, 4) < 1e-12
    assert distribution_violation(uniform_pattern(8, 8, 2), 2) < 1e-15


def test_volumes_inside_range():
    ds = generate_synthetic(SyntheticSpec(8, 8, 2, 50, {(0, 0): uniform_pattern(8, 8, 2)}, volume_range=(10, 20)))
    coarse = coarsen(np.asarray(ds.flows), 2)
    assert coarse.min() >= 10 and coarse.max() <= 20


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(8, 8, 3, 5, {(0, 0): uniform_pattern(8, 8, 2)}).validate()
    with pytest.raises(ValueError):
        SyntheticSpec(8, 8, 2, 5, {(0, 0): uniform_pattern(8, 8, 2)}, hour_buckets=2).validate()


def test_from_dict_variants():
    base = {"fine_height": 8, "fine_width": 8, "upscale_n": 2, "num_samples": 4}
    assert SyntheticSpec.from_dict({**base, "regimes": "uniform"}).regimes[(0, 0)][0, 0] == 0.25
    spec = SyntheticSpec.from_dict({**base, "regimes": {"random": {"weather_ids": [0, 2]}}})
    assert set(spec.regimes) == {(0, 0), (0, 2)}


def test_floor_is_zero_for_single_regime_and_positive_otherwise():
    spec = SyntheticSpec(8, 8, 2, 10, {(0, 0): uniform_pattern(8, 8, 2)})
    ds = generate_synthetic(spec)
    assert ha_rmse_floor(spec, ds.timestamps) == 0.0
    spec = SyntheticSpec(8, 8, 2, 10, random_regimes(8, 8, 2, weather_ids=(0, 1)))
    ds = generate_synthetic(spec)
    assert ha_rmse_floor(spec, ds.timestamps) > 0
    assert sum(regime_frequencies(spec, ds.timestamps).values()) == pytest.approx(1.0)
