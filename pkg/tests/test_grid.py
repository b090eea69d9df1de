import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fufi.errors import ShapeError
from fufi.grid import (DatasetSplit, ExternalRecord, FlowDataset, FlowMap, GeoFeatureStack, coarsen, split,
                       verify_structural)


def test_coarsen_hand_example():
    fine = np.arange(16, dtype=float).reshape(4, 4)
    assert np.array_equal(coarsen(fine, 2), [[10, 18], [42, 50]])


def test_coarsen_n1_is_identity(rng):
    fine = rng.random((5, 7))
    assert np.array_equal(coarsen(fine, 1), fine)


def test_coarsen_matches_loop_oracle(rng):
    fine = rng.random((3, 12, 8))
    n = 4
    expected = np.zeros((3, 3, 2))
    for t in range(3):
        for i in range(3):
            for j in range(2):
                expected[t, i, j] = sum(fine[t, i * n + a, j * n + b] for a in range(n) for b in range(n))
    np.testing.assert_allclose(coarsen(fine, n), expected, rtol=1e-12)


def test_coarsen_rejects_indivisible_and_names_axis():
    with pytest.raises(ShapeError, match="width"):
        coarsen(np.ones((4, 6)), 4)
    with pytest.raises(ShapeError, match="height"):
        coarsen(np.ones((6, 4)), 4)


def test_coarsen_keeps_flowmap_type():
    out = coarsen(FlowMap(np.ones((4, 4))), 2)
    assert isinstance(out, FlowMap) and np.all(out.values == 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_coarsen_is_composable(i, j, k, seed):
    fine = np.random.default_rng(seed).random((i * 4, j * 4))
    np.testing.assert_allclose(coarsen(coarsen(fine, 2), 2), coarsen(fine, 4), rtol=1e-12)
    assert verify_structural(coarsen(fine, 4), fine, 4).passed


def test_flowmap_is_readonly_and_non_negative():
    fm = FlowMap(np.ones((2, 2)))
    with pytest.raises(ValueError):
        fm.values[0, 0] = 3
    with pytest.raises(ValueError):
        FlowMap(-np.ones((2, 2)))


def test_verify_structural_reports_worst_block():
    fine = np.ones((4, 4))
    coarse = coarsen(fine, 2)
    coarse[1, 0] += 0.5
    rep = verify_structural(coarse, fine, 2)
    assert not rep.passed and rep.worst_block == (1, 0)
    assert rep.max_rel_error == pytest.approx(0.5 / 4.5)


def test_split_default_ratios():
    sp = split(100)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (50, 25, 25)
    sp = split(10)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (6, 2, 2)


def test_split_errors():
    with pytest.raises(ValueError):
        split(2)
    with pytest.raises(ValueError):
        split(10, (1, 0, 1))
    with pytest.raises(ValueError):
        DatasetSplit(range(0, 5), range(6, 8), range(8, 10))


def test_dataset_alignment_checks():
    ts = np.arange(3).astype("datetime64[h]")
    with pytest.raises(ShapeError):
        FlowDataset(np.ones((3, 4, 4)), ts[:2])
    rec = ExternalRecord(0, 0, 0, 1.0, 1.0, 0)
    with pytest.raises(ShapeError):
        FlowDataset(np.ones((3, 4, 4)), ts, externals=[rec])
    with pytest.raises(ValueError):
        FlowDataset(np.ones((3, 4, 4)), ts, externals=[rec] * 3, has_ticket_price=True)


def test_external_record_validation():
    with pytest.raises(ValueError):
        ExternalRecord(7, 0, 0, 1.0, 1.0, 0).validate(16)
    with pytest.raises(ValueError):
        ExternalRecord(0, 0, 16, 1.0, 1.0, 0).validate(16)
    with pytest.warns(UserWarning):
        ExternalRecord(0, 0, 0, 99.0, 1.0, 0).validate(16, {"temperature_c": (-10, 40)})


def test_geo_pooling_is_block_mean(rng):
    geo = GeoFeatureStack(rng.random((2, 8, 8)), rng.random((3, 8, 8)))
    pooled = geo.pooled(4)
    assert pooled.shape == (2, 2) and pooled.raw.shape == (5, 2, 2)
    np.testing.assert_allclose(pooled.raw[:, 0, 0], geo.raw[:, :4, :4].mean(axis=(1, 2)))
