import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvsculpt.linalg import RidgeProblem, ridge_solve, softmax_lse_rows


class TestSoftmaxLse:
    def test_symmetric_row(self):
        probs, lse = softmax_lse_rows(np.array([[0.0, 0.0]]))
        np.testing.assert_allclose(probs, [[0.5, 0.5]], atol=1e-15)
        assert lse[0] == pytest.approx(math.log(2), abs=1e-15)

    def test_single_column(self):
        probs, lse = softmax_lse_rows(np.array([[3.7]]))
        assert probs[0, 0] == 1.0
        assert lse[0] == 3.7

    def test_large_magnitude_no_overflow(self):
        # frozen from an arbitrary-precision evaluation of log(2 * exp(1000))
        probs, lse = softmax_lse_rows(np.array([[1000.0, 1000.0]]))
        np.testing.assert_allclose(probs, [[0.5, 0.5]], atol=1e-15)
        assert lse[0] == pytest.approx(1000.6931471805599, abs=1e-10)
        assert np.all(np.isfinite(probs))

    def test_empty_row_rejected(self):
        with pytest.raises(ValueError, match="empty score row"):
            softmax_lse_rows(np.zeros((2, 0)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            softmax_lse_rows(np.array([[1.0, np.inf]]))

    def test_probs_consistent_with_lse(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=(5, 7)) * 50
        probs, lse = softmax_lse_rows(s)
        np.testing.assert_array_equal(probs, np.exp(s - lse[:, None]))

    @given(st.integers(0, 2**31 - 1), st.floats(1.0, 1e3))
    @settings(max_examples=40, deadline=None)
    def test_rows_sum_to_one(self, seed, scale):
        rng = np.random.default_rng(seed)
        s = rng.normal(size=(4, 9)) * scale
        probs, _ = softmax_lse_rows(s)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    @given(st.integers(0, 2**31 - 1), st.floats(-100.0, 100.0))
    @settings(max_examples=40, deadline=None)
    def test_translation_equivariance(self, seed, shift):
        rng = np.random.default_rng(seed)
        s = rng.normal(size=(3, 6))
        p0, l0 = softmax_lse_rows(s)
        p1, l1 = softmax_lse_rows(s + shift)
        np.testing.assert_allclose(l1, l0 + shift, atol=1e-10)
        np.testing.assert_allclose(p1, p0, atol=1e-12)


def explicit_normal_equation_solve(a, b, offset, lam):
    """Independent oracle: assemble and solve the normal equations directly."""
    p = a.shape[1]
    return np.linalg.solve(a.T @ a + lam * np.eye(p), a.T @ (b - offset))


class TestRidgeSolve:
    def test_identity_design(self):
        b = np.arange(6.0).reshape(3, 2)
        prob = RidgeProblem(design=np.eye(3), targets=b,
                            offset=np.zeros((3, 2)), lambda_r=0.0)
        np.testing.assert_allclose(ridge_solve(prob), b, atol=1e-12)

    def test_huge_lambda_shrinks_to_zero(self):
        rng = np.random.default_rng(1)
        prob = RidgeProblem(design=rng.normal(size=(8, 3)),
                            targets=rng.normal(size=(8, 2)),
                            offset=np.zeros((8, 2)), lambda_r=1e12)
        x = ridge_solve(prob)
        assert np.all(np.abs(x) < 1e-6)

    def test_matches_normal_equation_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(8, 3))
        b = rng.normal(size=(8, 2))
        o = np.zeros((8, 2))
        x = ridge_solve(RidgeProblem(design=a, targets=b, offset=o, lambda_r=1e-3))
        np.testing.assert_allclose(x, explicit_normal_equation_solve(a, b, o, 1e-3),
                                   atol=1e-10)

    def test_singular_unregularized_rejected(self):
        a = np.ones((4, 2))  # rank 1
        with pytest.raises(ValueError, match="singular system"):
            ridge_solve(RidgeProblem(design=a, targets=np.ones((4, 1)),
                                     offset=np.zeros((4, 1)), lambda_r=0.0))

    def test_normal_equation_residual_bound(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.normal(size=(10, 4))
            b = rng.normal(size=(10, 3))
            o = rng.normal(size=(10, 3))
            lam = 1e-3
            x = ridge_solve(RidgeProblem(design=a, targets=b, offset=o, lambda_r=lam))
            res = np.linalg.norm((a.T @ a + lam * np.eye(4)) @ x - a.T @ (b - o))
            assert res <= 1e-8 * (1 + np.linalg.norm(a.T @ b))

    def test_local_optimality(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(9, 4))
        b = rng.normal(size=(9, 2))
        o = rng.normal(size=(9, 2))
        lam = 1e-3
        x = ridge_solve(RidgeProblem(design=a, targets=b, offset=o, lambda_r=lam))

        def objective(xx):
            r = a @ xx - (b - o)
            return np.sum(r * r) + lam * np.sum(xx * xx)

        base = objective(x)
        for _ in range(100):
            delta = rng.normal(size=x.shape)
            delta /= np.linalg.norm(delta)
            assert objective(x + 1e-4 * delta) >= base - 1e-12

    def test_offset_equivalence_exact(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(7, 3))
        b = rng.normal(size=(7, 2))
        o = rng.normal(size=(7, 2))
        x1 = ridge_solve(RidgeProblem(design=a, targets=b, offset=o, lambda_r=0.5))
        x2 = ridge_solve(RidgeProblem(design=a, targets=b - o,
                                      offset=np.zeros_like(o), lambda_r=0.5))
        np.testing.assert_array_equal(x1, x2)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            RidgeProblem(design=np.eye(3), targets=np.ones((4, 1)),
                         offset=np.zeros((4, 1)), lambda_r=0.1)
        with pytest.raises(ValueError):
            RidgeProblem(design=np.eye(3), targets=np.ones((3, 1)),
                         offset=np.zeros((3, 1)), lambda_r=-1.0)
