import numpy as np
import pytest

from smoothot.core import GridCost2D
from smoothot.entropic import ctransform_of_f, sinkhorn
from smoothot.legendre import (
    joint_conjugate,
    semidual_conjugate,
    semidual_conjugate_batch,
)

from oracles import finite_diff_gradient, random_histogram, rel_err


class TestSemidualConjugate:
    def test_single_cell(self):
        ev = semidual_conjugate([0.0], [1.0], [[0.0]], 1.0)
        assert ev.value == pytest.approx(1.0, abs=1e-15)
        assert np.allclose(ev.gradient, [1.0])

    def test_gradient_on_simplex(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            n, m = rng.integers(2, 9, size=2)
            ev = semidual_conjugate(
                rng.normal(size=n), random_histogram(rng, m), rng.uniform(size=(n, m)), 0.4
            )
            assert ev.gradient.min() >= 0
            assert ev.gradient.sum() == pytest.approx(1.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        n, eps = 3, 0.3
        f = rng.normal(size=n)
        b = random_histogram(rng, n)
        c = rng.uniform(size=(n, n))
        ev = semidual_conjugate(f, b, c, eps)
        num = finite_diff_gradient(lambda x: semidual_conjugate(x, b, c, eps).value, f)
        assert rel_err(num, ev.gradient) <= 1e-6

    def test_value_matches_ctransform_formula(self):
        # eps*(H(b) + <b, log K^T u>) and -<f^{c,eps}, b> + eps agree
        rng = np.random.default_rng(22)
        for _ in range(10):
            n, m = rng.integers(2, 7, size=2)
            f = rng.normal(size=n)
            b = random_histogram(rng, m)
            c = rng.uniform(size=(n, m))
            ev = semidual_conjugate(f, b, c, 0.6)
            alt = -float(np.dot(ctransform_of_f(f, b, c, 0.6), b)) + 0.6
            assert abs(ev.value - alt) <= 1e-9 * (1 + abs(ev.value))

    def test_hessian_structure_and_bound(self):
        rng = np.random.default_rng(23)
        for eps in (0.2, 0.7):
            n = 5
            ev = semidual_conjugate(
                rng.normal(size=n), random_histogram(rng, n), rng.uniform(size=(n, n)),
                eps, want_hessian=True,
            )
            h = ev.hessian
            assert np.allclose(h, h.T, atol=1e-12)
            assert np.abs(h.sum(axis=1)).max() <= 1e-8
            eigs = np.linalg.eigvalsh(h)
            assert eigs.min() >= -1e-10
            assert eigs.max() <= (1.0 / eps) * (1 + 1e-6)

    def test_rejects_zero_mass_and_bad_epsilon(self):
        with pytest.raises(ValueError):
            semidual_conjugate([0.0, 0.0], [1.0, 0.0], np.zeros((2, 2)), 0.5)
        with pytest.raises(ValueError):
            semidual_conjugate([0.0], [1.0], [[0.0]], 0.0)

    def test_grid_cost_matches_dense(self):
        rng = np.random.default_rng(24)
        gc = GridCost2D(3, 4)
        f = rng.normal(size=12)
        b = random_histogram(rng, 12)
        e1 = semidual_conjugate(f, b, gc, 0.05)
        e2 = semidual_conjugate(f, b, gc.entries, 0.05)
        assert e1.value == pytest.approx(e2.value, abs=1e-12)
        assert np.allclose(e1.gradient, e2.gradient, atol=1e-13)


class TestSemidualBatch:
    def test_batch_of_one_matches_scalar(self):
        rng = np.random.default_rng(25)
        f = rng.normal(size=6)
        b = random_histogram(rng, 6)
        c = rng.uniform(size=(6, 6))
        values, grads = semidual_conjugate_batch(f[:, None], b[:, None], c, 0.3)
        scalar = semidual_conjugate(f, b, c, 0.3)
        assert values[0] == pytest.approx(scalar.value, abs=1e-12)
        assert np.allclose(grads[:, 0], scalar.gradient, atol=1e-12)

    def test_identical_columns_give_identical_outputs(self):
        rng = np.random.default_rng(26)
        b = random_histogram(rng, 5)
        c = rng.uniform(size=(5, 5))
        values, grads = semidual_conjugate_batch(
            np.zeros((5, 3)), np.column_stack([b, b, b]), c, 0.4
        )
        assert np.ptp(values) == 0.0
        assert np.abs(grads - grads[:, [0]]).max() == 0.0

    def test_gradient_columns_on_simplex(self):
        rng = np.random.default_rng(27)
        F = rng.normal(size=(5, 3))
        B = np.column_stack([random_histogram(rng, 5) for _ in range(3)])
        _, grads = semidual_conjugate_batch(F, B, rng.uniform(size=(5, 5)), 0.5)
        assert np.abs(grads.sum(axis=0) - 1.0).max() <= 1e-10

    def test_thread_cap_changes_nothing(self, monkeypatch):
        rng = np.random.default_rng(28)
        F = rng.normal(size=(6, 4))
        B = np.column_stack([random_histogram(rng, 6) for _ in range(4)])
        c = rng.uniform(size=(6, 6))
        v1, g1 = semidual_conjugate_batch(F, B, c, 0.3)
        monkeypatch.setenv("OT_THREADS", "3")
        v2, g2 = semidual_conjugate_batch(F, B, c, 0.3)
        assert np.array_equal(v1, v2) and np.array_equal(g1, g2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            semidual_conjugate_batch(np.zeros((3, 2)), np.ones((4, 2)) / 4, np.zeros((3, 3)), 0.5)


class TestJointConjugate:
    def test_single_cell(self):
        for eps in (0.0, 0.5, 2.0):
            ev = joint_conjugate([0.0], [0.0], [[0.0]], eps)
            assert ev.value == pytest.approx(0.0, abs=1e-15)
            if eps > 0:
                assert np.allclose(ev.grad_f, [1.0]) and np.allclose(ev.grad_g, [1.0])

    def test_translation_identity(self):
        rng = np.random.default_rng(29)
        f = rng.normal(size=4)
        g = rng.normal(size=3)
        c = rng.uniform(size=(4, 3))
        base = joint_conjugate(f, g, c, 0.5)
        shifted = joint_conjugate(f + 1.7, g, c, 0.5)
        assert shifted.value == pytest.approx(base.value + 1.7, abs=1e-12)
        assert np.allclose(shifted.grad_f, base.grad_f, atol=1e-12)
        assert np.allclose(shifted.grad_g, base.grad_g, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(30)
        n, m, eps = 4, 3, 0.5
        f = rng.normal(size=n)
        g = rng.normal(size=m)
        c = rng.uniform(size=(n, m))
        ev = joint_conjugate(f, g, c, eps)
        full = np.concatenate([f, g])
        num = finite_diff_gradient(
            lambda x: joint_conjugate(x[:n], x[n:], c, eps).value, full
        )
        assert rel_err(num, np.concatenate([ev.grad_f, ev.grad_g])) <= 1e-6

    def test_gradients_on_simplices(self):
        rng = np.random.default_rng(31)
        ev = joint_conjugate(rng.normal(size=5), rng.normal(size=7),
                             rng.uniform(size=(5, 7)), 0.3)
        assert ev.grad_f.sum() == pytest.approx(1.0, abs=1e-12)
        assert ev.grad_g.sum() == pytest.approx(1.0, abs=1e-12)
        assert ev.grad_f.min() >= 0 and ev.grad_g.min() >= 0

    def test_hessian_psd_and_lipschitz_bound(self):
        rng = np.random.default_rng(32)
        eps = 0.5
        ev = joint_conjugate(rng.normal(size=4), rng.normal(size=3),
                             rng.uniform(size=(4, 3)), eps, want_hessian=True)
        h = ev.hessian()
        assert np.allclose(h, h.T, atol=1e-12)
        eigs = np.linalg.eigvalsh(h)
        assert eigs.min() >= -1e-10
        assert eigs.max() <= (2.0 / eps) * (1 + 1e-6)
        assert np.abs(h.sum(axis=1)).max() <= 1e-10

    def test_eps_zero_value_and_no_hessian(self):
        rng = np.random.default_rng(33)
        f = rng.normal(size=3)
        g = rng.normal(size=4)
        c = rng.uniform(size=(3, 4))
        ev = joint_conjugate(f, g, c, 0.0)
        assert ev.value == pytest.approx(-(c - f[:, None] - g[None, :]).min())
        assert ev.grad_f is None and ev.grad_g is None
        with pytest.raises(ValueError):
            joint_conjugate(f, g, c, 0.0, want_hessian=True)


class TestDualityRelations:
    def test_fenchel_young(self):
        # <f,a> <= W_eps(a,b) + H*_b(f), equality at a = grad H*_b(f)
        rng = np.random.default_rng(34)
        tol = 1e-10
        for _ in range(5):
            n = 5
            f = rng.normal(scale=0.2, size=n)
            b = random_histogram(rng, n, floor=1e-3)
            c = rng.uniform(size=(n, n))
            ev = semidual_conjugate(f, b, c, 0.4)
            a_star = ev.gradient
            w = sinkhorn(a_star, b, c, 0.4, tol=tol).value
            lhs = float(np.dot(f, a_star))
            assert lhs <= w + ev.value + 2 * tol + 1e-9
            assert abs(lhs - (w + ev.value)) <= 1e-6

            a_other = random_histogram(rng, n)
            w_other = sinkhorn(a_other, b, c, 0.4, tol=tol).value
            assert float(np.dot(f, a_other)) <= w_other + ev.value + 1e-8

    def test_joint_maximized_over_g_reproduces_semidual(self):
        # max_g [<f,a> + <g,b> - W*(f,g)] equals the semi-dual value
        # <f,a> + <f^{c,eps},b> - eps once the documented +eps constant in
        # the adopted W* convention is accounted for.
        rng = np.random.default_rng(35)
        n, m, eps = 5, 4, 0.5
        f = rng.normal(size=n)
        a = random_histogram(rng, n)
        b = random_histogram(rng, m)
        c = rng.uniform(size=(n, m))
        g = np.zeros(m)
        for _ in range(400):  # fixed-point ascent on the concave g-problem
            ev = joint_conjugate(f, g, c, eps)
            g = g + eps * (np.log(b) - np.log(ev.grad_g))
        ev = joint_conjugate(f, g, c, eps)
        maximized = float(np.dot(f, a) + np.dot(g, b)) - ev.value
        semidual = float(np.dot(f, a) + np.dot(ctransform_of_f(f, b, c, eps), b)) - eps
        assert maximized - eps == pytest.approx(semidual, abs=1e-8)
