import numpy as np
import pytest

from lsbl.baselines import GreedyConfig, IstaConfig, cosamp, ista, lasso_objective, omp, soft_threshold


def normalized(gen, m, n):
    a = gen.standard_normal((m, n))
    return a / np.linalg.norm(a, axis=0)


def sparse(gen, n, k):
    x = np.zeros(n)
    x[gen.choice(n, k, replace=False)] = gen.choice([-1, 1], k) * gen.uniform(0.75, 1, k)
    return x


class TestOmp:
    def test_single_atom(self):
        gen = np.random.default_rng(0)
        a = gen.standard_normal((10, 20))
        x = omp(a, 2 * a[:, 3], GreedyConfig(1))
        expect = np.zeros(20)
        expect[3] = 2.0
        assert np.allclose(x, expect, atol=1e-14)

    def test_zero_measurement(self):
        a = np.random.default_rng(1).standard_normal((5, 8))
        assert np.array_equal(omp(a, np.zeros(5), GreedyConfig(3)), np.zeros(8))

    def test_recovery_rate(self):
        gen = np.random.default_rng(2)
        ok = 0
        for _ in range(1000):
            a = normalized(gen, 30, 50)
            x = sparse(gen, 50, 3)
            xe = omp(a, a @ x, GreedyConfig(3))
            ok += set(np.flatnonzero(xe)) == set(np.flatnonzero(x))
        assert ok >= 950

    def test_residual_orthogonal_and_distinct(self):
        gen = np.random.default_rng(3)
        a, y = gen.standard_normal((12, 30)), gen.standard_normal(12)
        x = omp(a, y, GreedyConfig(6))
        s = np.flatnonzero(x)
        assert s.size == 6
        assert np.max(np.abs(a[:, s].T @ (y - a @ x))) <= 1e-9

    def test_errors(self):
        with pytest.raises(ValueError):
            omp(np.ones((2, 3)), np.ones(2), GreedyConfig(3))
        a = np.ones((2, 3))
        a[:, 1] = 0
        with pytest.raises(ValueError):
            omp(a, np.ones(2), GreedyConfig(1))


class TestCosamp:
    def test_two_atom(self):
        gen = np.random.default_rng(4)
        a = gen.standard_normal((20, 40))
        x = cosamp(a, a[:, 1] - a[:, 2], 2)
        expect = np.zeros(40)
        expect[[1, 2]] = [1.0, -1.0]
        assert np.allclose(x, expect, atol=1e-10)

    def test_k_zero(self):
        assert np.array_equal(cosamp(np.eye(3), np.ones(3), 0), np.zeros(3))

    def test_recovery_rate(self):
        gen = np.random.default_rng(5)
        ok = 0
        for _ in range(1000):
            a = normalized(gen, 30, 50)
            x = sparse(gen, 50, 3)
            xe = cosamp(a, a @ x, 3)
            ok += set(np.flatnonzero(np.abs(xe) > 1e-8)) == set(np.flatnonzero(x))
        assert ok >= 950


class TestIsta:
    def test_full_shrinkage(self):
        gen = np.random.default_rng(6)
        a, y = gen.standard_normal((8, 15)), gen.standard_normal(8)
        lam = 1.01 * np.max(np.abs(a.T @ y))
        assert np.array_equal(ista(a, y, IstaConfig(lam)), np.zeros(15))

    def test_identity_small_lambda(self):
        y = np.array([0.3, -1.2, 2.0])
        assert np.allclose(ista(np.eye(3), y, IstaConfig(1e-9, iterations=5)), y, atol=1e-8)

    def test_objective_monotone(self):
        gen = np.random.default_rng(7)
        a, y = gen.standard_normal((20, 40)), gen.standard_normal(20)
        x, hist = ista(a, y, IstaConfig(0.1, iterations=500), return_objective=True)
        assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1]))
        assert hist[-1] == pytest.approx(lasso_objective(a, y, x, 0.1))

    def test_multi_column_matches_single(self):
        gen = np.random.default_rng(8)
        a, y = gen.standard_normal((6, 10)), gen.standard_normal((6, 2))
        both = ista(a, y, IstaConfig(0.05, iterations=50))
        assert np.allclose(both[:, 1], ista(a, y[:, 1], IstaConfig(0.05, iterations=50)))

    def test_validation(self):
        with pytest.raises(ValueError):
            IstaConfig(0.0)
        with pytest.raises(ValueError):
            ista(np.eye(2) * 2, np.ones(2), IstaConfig(0.1, step_size=1.0))

    def test_soft_threshold(self):
        assert np.array_equal(soft_threshold(np.array([-2.0, 0.5, 3.0]), 1.0), [-1.0, 0.0, 2.0])


def test_outputs_finite_and_length_n():
    gen = np.random.default_rng(9)
    a, y = gen.standard_normal((10, 25)), gen.standard_normal(10)
    for x in (omp(a, y, GreedyConfig(4)), cosamp(a, y, 4), ista(a, y, IstaConfig(0.1))):
        assert x.shape == (25,) and np.all(np.isfinite(x))
