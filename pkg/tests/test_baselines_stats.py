import itertools

import numpy as np
import pytest
from scipy.stats import wilcoxon

from fufi.baselines import baseline_mean, fit_ha, predict_ha
from fufi.grid import coarsen, verify_structural
from fufi.ops import DistributionMap, distributional_upsample, distribution_violation
from fufi.stats import wilcoxon_signed_rank
from fufi.synthetic import SyntheticSpec, generate_synthetic, ha_rmse_floor, random_regimes
from fufi.grid import split
from fufi.metrics import rmse


def test_mean_hand_and_definition(rng):
    assert np.all(baseline_mean(np.array([[10.0]]), 2) == 2.5)
    coarse = rng.random((3, 3))
    uniform = DistributionMap(np.full((12, 12), 1 / 16), 4)
    np.testing.assert_allclose(baseline_mean(coarse, 4), distributional_upsample(coarse, uniform), rtol=1e-15)
    assert verify_structural(coarse, baseline_mean(coarse, 4), 4, rel_tol=1e-12).passed


def test_ha_fallback_and_structure(rng):
    train = rng.random((5, 8, 8))
    train[:, :4, :4] = 0
    ha = fit_ha(train, 4)
    assert ha.fallback_blocks == 1
    assert np.all(ha.fractions.values[:4, :4] == 1 / 16)
    assert distribution_violation(ha.fractions.values, 4) <= 1e-5
    coarse = rng.random((4, 2, 2)) * 50
    assert verify_structural(coarse, predict_ha(ha, coarse), 4, rel_tol=1e-8).passed
    with pytest.raises(ValueError):
        fit_ha(np.empty((0, 8, 8)), 4)


def test_ha_exact_on_stationary_data():
    regimes = random_regimes(16, 16, 4, seed=2)
    ds = generate_synthetic(SyntheticSpec(16, 16, 4, 40, regimes, seed=2))
    sp = split(ds)
    flows = np.asarray(ds.flows)
    ha = fit_ha(flows[list(sp.train)], 4)
    test = flows[list(sp.test)]
    assert rmse(ha.predict(coarsen(test, 4)), test) < 1e-6 * flows.max()


def test_ha_rmse_respects_between_regime_floor():
    regimes = random_regimes(16, 16, 4, weather_ids=(0, 1, 2), seed=5, sharpness=2.0)
    spec = SyntheticSpec(16, 16, 4, 600, regimes, seed=5)
    ds = generate_synthetic(spec)
    sp = split(ds)
    flows = np.asarray(ds.flows)
    ha = fit_ha(flows[list(sp.train)], 4)
    test = flows[list(sp.test)]
    floor = ha_rmse_floor(spec, ds.timestamps[list(sp.test)])
    assert rmse(ha.predict(coarsen(test, 4)), test) >= 0.9 * floor


def brute_force_p(a, b):
    d = np.asarray(a) - np.asarray(b)
    d = d[d != 0]
    from scipy.stats import rankdata
    r = rankdata(np.abs(d))
    obs = r[d > 0].sum()
    hits = total = 0
    for signs in itertools.product([0, 1], repeat=len(d)):
        total += 1
        hits += np.dot(signs, r) <= obs + 1e-9
    return hits / total


def test_wilcoxon_dominance_fixture():
    b = np.arange(1, 17, dtype=float)
    a = b - 0.5
    assert wilcoxon_signed_rank(a, b) == pytest.approx(2.0 ** -16, rel=1e-12)


def test_wilcoxon_matches_brute_force_with_ties(rng):
    for _ in range(5):
        a = rng.integers(0, 6, 12).astype(float)
        b = rng.integers(0, 6, 12).astype(float)
        if np.all(a == b):
            continue
        assert wilcoxon_signed_rank(a, b) == pytest.approx(brute_force_p(a, b), rel=1e-12)


def test_wilcoxon_matches_scipy(rng):
    a, b = rng.random(15), rng.random(15)
    ref = wilcoxon(a, b, alternative="less", method="exact").pvalue
    assert wilcoxon_signed_rank(a, b) == pytest.approx(ref, rel=1e-10)
    a, b = rng.random(60), rng.random(60) + 0.05
    ref = wilcoxon(a, b, alternative="less", method="approx", correction=True).pvalue
    assert wilcoxon_signed_rank(a, b) == pytest.approx(ref, rel=1e-6)


def test_wilcoxon_symmetric_noise_is_uninformative():
    rng = np.random.default_rng(9)
    ps = []
    for _ in range(200):
        b = rng.random(30)
        ps.append(wilcoxon_signed_rank(b + rng.normal(0, 1e-3, 30), b))
    assert abs(np.mean(ps) - 0.5) <= 0.2


def test_wilcoxon_errors():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank(np.ones(8), np.ones(7))
    with pytest.raises(ValueError):
        wilcoxon_signed_rank(np.ones(8), np.ones(8))
    with pytest.raises(ValueError):
        wilcoxon_signed_rank(np.ones(4), np.zeros(4))
