import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fufi.errors import ShapeError
from fufi.grid import verify_structural
from fufi.ops import (DistributionMap, distribution_violation, distributional_upsample, n2_normalize,
                      n2_normalize_grad_check, nn_upsample, structural_loss, sum_pool)


def block_division_oracle(x, s, eps):
    out = np.empty_like(x)
    for i in range(0, x.shape[0], s):
        for j in range(0, x.shape[1], s):
            block = x[i:i + s, j:j + s]
            out[i:i + s, j:j + s] = block / (block.sum() + eps)
    return out


def test_sum_pool_and_upsample_hand():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert sum_pool(x, 2).tolist() == [[10.0]]
    assert nn_upsample(np.array([[5.0]]), 2).tolist() == [[5.0, 5.0], [5.0, 5.0]]


def test_numpy_and_torch_paths_agree(rng):
    x = rng.random((2, 8, 8))
    t = torch.tensor(x)
    np.testing.assert_allclose(sum_pool(x, 4), sum_pool(t, 4).numpy(), rtol=1e-12)
    np.testing.assert_allclose(n2_normalize(x, 4), n2_normalize(t, 4).numpy(), rtol=1e-12)


def test_n2_normalize_hand_example():
    out = n2_normalize(np.array([[1.0, 1.0], [1.0, 1.0]]), 2, 0.0)
    assert np.all(out == 0.25)
    out = n2_normalize(np.array([[1.0, 3.0], [0.0, 0.0]]), 2, 0.0)
    assert out.tolist() == [[0.25, 0.75], [0.0, 0.0]]


def test_n2_normalize_zero_block_stays_zero():
    out = n2_normalize(np.zeros((4, 4)), 2)
    assert np.all(out == 0)


def test_n2_normalize_rejects_negative_and_indivisible():
    with pytest.raises(ValueError):
        n2_normalize(-np.ones((2, 2)), 2)
    with pytest.raises(ShapeError):
        n2_normalize(np.ones((3, 4)), 2)


def test_n2_normalize_matches_division_oracle_1000_grids():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s = int(rng.choice([1, 2, 4]))
        h, w = s * rng.integers(1, 5), s * rng.integers(1, 5)
        x = rng.random((h, w)) * 10 ** rng.uniform(-3, 3)
        eps = 1e-9
        np.testing.assert_allclose(n2_normalize(x, s, eps), block_division_oracle(x, s, eps), rtol=0, atol=1e-7)


@pytest.mark.parametrize("seed", range(20))
def test_n2_normalize_gradient_random_functional(seed):
    assert n2_normalize_grad_check((4, 4), 2, 1e-9, seed) <= 1e-3


def test_gradient_through_block_sum_is_order_eps():
    x = torch.rand(4, 4, dtype=torch.float64, requires_grad=True)
    (g,) = torch.autograd.grad(sum_pool(n2_normalize(x, 2, 1e-9), 2).pow(2).sum(), x)
    assert float(g.abs().max()) < 1e-7


def test_distributional_upsample_preserves_constraint(rng):
    coarse = rng.random((3, 3)) * 100
    dist = DistributionMap.from_features(rng.random((12, 12)), 4)
    fine = distributional_upsample(coarse, dist)
    assert verify_structural(coarse, fine, 4, rel_tol=1e-6).passed


def test_distributional_upsample_shape_error(rng):
    with pytest.raises(ShapeError):
        distributional_upsample(np.ones((2, 2)), np.ones((6, 6)) / 9, 4)


def test_structural_loss_zero_iff_consistent(rng):
    fine = rng.random((8, 8))
    coarse = sum_pool(fine, 4)
    assert structural_loss(coarse, fine, 4) == pytest.approx(0.0, abs=1e-12)
    assert structural_loss(coarse + 1.0, fine, 4) == pytest.approx(4.0)


def test_distribution_map_rejects_bad_blocks():
    with pytest.raises(ValueError):
        DistributionMap(np.full((2, 2), 0.3), 2)
    with pytest.raises(ValueError):
        DistributionMap(np.array([[1.5, -0.5], [0, 0]]), 2)
    assert DistributionMap(np.zeros((2, 2)), 2).values.sum() == 0


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.floats(0, 1e6)), st.sampled_from([1, 2, 4, 8]))
def test_n2_normalize_outputs_are_distributions(x, s):
    out = n2_normalize(x, s)
    assert np.all(out >= 0)
    sums = sum_pool(out, s)
    raw = sum_pool(x, s)
    # block sums are raw / (raw + eps); the deficit is bounded by eps / raw
    expected_dev = np.where(raw > 0, 1e-9 / np.maximum(raw, 1e-300), 0.0)
    live = raw > 0
    assert np.all(sums[~live] == 0)
    assert np.all(np.abs(sums[live] - 1) <= expected_dev[live] + 1e-12)


def test_violation_helper():
    assert distribution_violation(np.full((2, 2), 0.25), 2) == pytest.approx(0.0, abs=1e-15)
    assert distribution_violation(-np.ones((2, 2)), 2) == float("inf")
