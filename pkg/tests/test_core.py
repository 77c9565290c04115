import numpy as np
import pytest

from smoothot.core import (
    Coupling,
    CostMatrix,
    FeasibilityError,
    GibbsKernel,
    GridCost2D,
    Histogram,
    Potentials,
    entropy,
    grid_points_2d,
    kl_divergence,
    max_threads,
    rescale_median,
    softmin,
)

# frozen 50-digit evaluations of the defining formulas (mpmath)
SOFTMIN_01_EPS1 = -0.3132616875182228
ENTROPY_HALF_HALF = 1.6931471805599453
LOG2 = 0.6931471805599453


class TestSoftmin:
    def test_eps_zero_is_min(self):
        assert softmin([3.0, 1.0, 2.0], 0.0) == 1.0

    def test_constant_vector_identity(self):
        n, c, eps = 7, 2.5, 0.3
        assert softmin(np.full(n, c), eps) == pytest.approx(c - eps * np.log(n), abs=1e-14)

    def test_frozen_value(self):
        assert softmin([0.0, 1.0], 1.0) == pytest.approx(SOFTMIN_01_EPS1, abs=1e-15)

    def test_monotone_in_eps_and_bracketing(self):
        rng = np.random.default_rng(0)
        for _ in range(120):
            u = rng.normal(scale=3.0, size=rng.integers(1, 12))
            e1, e2 = sorted(rng.uniform(0.01, 2.0, size=2))
            lo, hi = softmin(u, e2), softmin(u, e1)
            assert lo <= hi <= u.min() + 1e-15
            assert lo >= u.min() - e2 * np.log(u.size) - 1e-12

    def test_shift_equivariance(self):
        rng = np.random.default_rng(1)
        for _ in range(120):
            u = rng.normal(size=rng.integers(1, 10))
            c = rng.normal(scale=5.0)
            eps = rng.uniform(0.0, 1.5)
            assert softmin(u + c, eps) == pytest.approx(softmin(u, eps) + c, abs=1e-10)

    def test_no_overflow_at_tiny_eps(self):
        u = np.array([0.0, 1.0, 2.0])
        assert softmin(u, 1e-9) == pytest.approx(0.0, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            softmin([], 1.0)
        with pytest.raises(ValueError):
            softmin([np.inf, 1.0], 1.0)
        with pytest.raises(ValueError):
            softmin([1.0], -0.1)


class TestEntropy:
    def test_single_cell(self):
        assert entropy([[1.0]]) == pytest.approx(1.0, abs=1e-15)

    def test_zero_matrix(self):
        assert entropy(np.zeros((2, 3))) == 0.0

    def test_half_half(self):
        assert entropy([[0.5, 0.5]]) == pytest.approx(ENTROPY_HALF_HALF, abs=1e-14)

    def test_negative_entry_sentinel(self):
        assert entropy([[0.5, -0.1]]) == -np.inf

    def test_strict_concavity_midpoint(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            p = rng.uniform(0.05, 1.0, size=(3, 4))
            q = rng.uniform(0.05, 1.0, size=(3, 4))
            mid = entropy(0.5 * (p + q))
            avg = 0.5 * (entropy(p) + entropy(q))
            assert mid >= avg
            if np.abs(p - q).max() > 1e-3:
                assert mid > avg


class TestKLDivergence:
    def test_equal_arguments(self):
        p = np.array([[0.3, 0.7]])
        assert kl_divergence(p, p) == 0.0

    def test_frozen_value(self):
        assert kl_divergence([[1.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(LOG2, abs=1e-14)

    def test_mass_only(self):
        assert kl_divergence([[0.0, 0.0]], [[0.5, 0.5]]) == 1.0

    def test_infinite_sentinel(self):
        assert kl_divergence([[0.5, 0.5]], [[1.0, 0.0]]) == np.inf

    def test_nonnegative_zero_iff_equal(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            p = rng.uniform(0.01, 1.0, size=(2, 3))
            q = rng.uniform(0.01, 1.0, size=(2, 3))
            assert kl_divergence(p, q) >= 0.0
            assert kl_divergence(p, p) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            kl_divergence(np.ones((2, 2)), np.ones((2, 3)))


class TestHistogram:
    def test_strict_mode_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            Histogram([0.5, 0.6])

    def test_normalize_on_load(self):
        h = Histogram([2.0, 6.0], normalize=True)
        assert np.allclose(h.weights, [0.25, 0.75])
        assert abs(h.weights.sum() - 1.0) <= 1e-10

    def test_rejects_negative_and_zero_mass(self):
        with pytest.raises(ValueError):
            Histogram([-0.1, 1.1])
        with pytest.raises(ValueError):
            Histogram([0.0, 0.0], normalize=True)

    def test_weights_are_read_only(self):
        h = Histogram([0.5, 0.5])
        with pytest.raises(ValueError):
            h.weights[0] = 1.0


class TestCostMatrix:
    def test_squared_euclidean_symmetric_zero_diag(self):
        pts = np.array([[0.0], [1.0], [3.0]])
        c = CostMatrix.squared_euclidean(pts)
        assert np.allclose(c.entries, c.entries.T)
        assert np.all(np.diag(c.entries) == 0.0)
        assert c.entries[0, 2] == pytest.approx(9.0)

    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(ValueError):
            CostMatrix([[-1.0]])
        with pytest.raises(ValueError):
            CostMatrix([[np.nan]])

    def test_rescale_median(self):
        c = rescale_median([[2.0, 4.0], [8.0, 4.0]])
        assert np.median(c) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            rescale_median(np.zeros((2, 2)))


class TestGridCost2D:
    def test_matches_dense_construction(self):
        gc = GridCost2D(3, 5)
        dense = CostMatrix.squared_euclidean(grid_points_2d(3, 5))
        assert np.allclose(gc.entries, dense.entries, atol=1e-15)

    def test_median_rescaled(self):
        gc = GridCost2D(4, 4).median_rescaled()
        assert np.median(gc.entries) == pytest.approx(1.0)
        assert gc.grid_shape == (4, 4)


class TestGibbsKernel:
    def test_entries_in_unit_interval(self):
        k = GibbsKernel([[0.0, 1.0], [2.0, 0.5]], 0.7)
        assert np.all(k.kernel > 0) and np.all(k.kernel <= 1.0)
        assert np.allclose(np.log(k.kernel), k.logkernel)

    def test_requires_positive_epsilon(self):
        with pytest.raises(ValueError):
            GibbsKernel([[1.0]], 0.0)


class TestCoupling:
    def test_residuals(self):
        p = np.array([[0.5, 0.0], [0.0, 0.5]])
        c = Coupling(p, [0.5, 0.5], [0.5, 0.5])
        assert c.row_residual == 0.0 and c.col_residual == 0.0

    def test_mass_and_sign_checks(self):
        with pytest.raises(FeasibilityError):
            Coupling([[0.5, 0.1]], [1.0], [0.5, 0.5])
        with pytest.raises(FeasibilityError):
            Coupling([[1.5, -0.5]], [1.0], [0.5, 0.5])


class TestPotentials:
    def test_requires_finite(self):
        with pytest.raises(ValueError):
            Potentials([np.inf], [0.0])
        p = Potentials([1.0, -2.0], [0.5])
        assert p.f.size == 2 and p.g.size == 1


def test_max_threads_env(monkeypatch):
    monkeypatch.delenv("OT_THREADS", raising=False)
    assert max_threads() == 1
    monkeypatch.setenv("OT_THREADS", "4")
    assert max_threads() == 4
    monkeypatch.setenv("OT_THREADS", "junk")
    assert max_threads() == 1
