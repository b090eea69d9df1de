import numpy as np
import pytest

from fufi import kernels

BACKENDS = sorted(kernels.BACKENDS)


def test_compiled_backend_is_built():
    assert "compiled" in kernels.BACKENDS, "the Cython extension failed to build"


@pytest.mark.parametrize("backend", BACKENDS)
def test_block_sum(backend, rng):
    x = rng.random((3, 8, 12))
    out = kernels.block_sum(x, 4, backend)
    np.testing.assert_allclose(out, x.reshape(3, 2, 4, 3, 4).sum(axis=(2, 4)), rtol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_block_normalize(backend, rng):
    x = rng.random((2, 4, 4))
    x[0, :2, :2] = 0
    out = kernels.block_normalize(x, 2, 1e-9, backend)
    assert np.all(out[0, :2, :2] == 0)
    np.testing.assert_allclose(kernels.block_sum(out, 2)[1], 1.0, atol=1e-8)


@pytest.mark.parametrize("backend", BACKENDS)
def test_block_kl_hand_example(backend):
    pred = np.array([[[0.5, 0.5], [0.0, 0.0]]])
    truth = np.array([[[0.25, 0.75], [0.0, 0.0]]])
    expected = 0.5 * np.log(2) + 0.5 * np.log(2 / 3)
    assert kernels.block_kl(pred, truth, 2, 1e-8, backend) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_null_counts_small(backend):
    # ranks 1, 2, 3 doubled; subset sums of {2, 4, 6}
    counts = kernels.wilcoxon_null_counts(np.array([2, 4, 6], np.int64), backend)
    assert counts.sum() == 8
    assert counts[0] == 1 and counts[6] == 2 and counts[12] == 1


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend unavailable")
    x = rng.random((4, 16, 16))
    y = kernels.block_normalize(rng.random((4, 16, 16)), 4, 1e-9, "python")
    p = kernels.block_normalize(x, 4, 1e-9, "python")
    ranks = rng.integers(1, 40, size=18).astype(np.int64)
    np.testing.assert_allclose(kernels.block_sum(x, 4, "python"), kernels.block_sum(x, 4, "compiled"), rtol=1e-12)
    np.testing.assert_allclose(p, kernels.block_normalize(x, 4, 1e-9, "compiled"), rtol=1e-12)
    assert kernels.block_kl(p, y, 4, 1e-8, "python") == pytest.approx(kernels.block_kl(p, y, 4, 1e-8, "compiled"), rel=1e-10)
    np.testing.assert_array_equal(kernels.wilcoxon_null_counts(ranks, "python"),
                                  kernels.wilcoxon_null_counts(ranks, "compiled"))


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
