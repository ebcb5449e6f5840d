from __future__ import annotations

import math

import numpy as np
import pytest

from steinnet import Cluster, NetworkSpec
from steinnet.errors import OutOfRange
from steinnet.model import LimitParams, cholesky_factor, limit_params
from steinnet.ou_sim import fluid_solution, ou_step_law, read_grid, simulate_ou, write_grid
from steinnet.rng import stream


def lp_from(gamma, psi):
    psi = np.asarray(psi, dtype=float)
    return LimitParams(gamma=np.asarray(gamma, dtype=float), psi=psi, chol=cholesky_factor(psi))


def em_variance(psi, theta, h, steps):
    """Variance after ``steps`` Euler-Maruyama steps from a point: v <- (1-h/theta)^2 v + psi h."""
    v = np.zeros_like(psi)
    for _ in range(steps):
        v = (1 - h / theta) ** 2 * v + psi * h
    return v


class TestStepLaw:
    def test_small_step_limit(self, cluster_spec):
        lp = limit_params(cluster_spec)
        y = np.array([0.3, -0.4])
        mean, cov = ou_step_law(lp, 1.0, y, 1e-12)
        np.testing.assert_allclose(mean, y, atol=1e-11)
        assert np.abs(cov).max() < 1e-11

    def test_zero_drift_covariance_matches_fine_euler(self, cluster_spec):
        lp = limit_params(cluster_spec)
        lp0 = LimitParams(gamma=np.zeros(2), psi=lp.psi, chol=lp.chol)
        theta, h = 0.7, 0.5
        mean, cov = ou_step_law(lp0, theta, np.zeros(2), h)
        np.testing.assert_array_equal(mean, 0.0)
        np.testing.assert_allclose(cov, lp.psi * theta / 2 * (1 - math.exp(-2 * h / theta)), rtol=1e-14)
        fine = em_variance(lp.psi, theta, h / 20_000, 20_000)
        np.testing.assert_allclose(cov, fine, rtol=1e-3)

    def test_stationary_limit(self, cluster_spec):
        lp = limit_params(cluster_spec)
        mean, cov = ou_step_law(lp, 2.0, np.array([5.0, -5.0]), 200.0)
        np.testing.assert_allclose(mean, lp.gamma * 2.0, rtol=1e-12)
        np.testing.assert_allclose(cov, lp.psi, rtol=1e-12)

    def test_long_run_empirical_moments(self, cluster_spec):
        lp = limit_params(cluster_spec)
        path = simulate_ou(lp, 1.0, lp.gamma, 20_000.0, 1.0, stream(21))
        y = path.states[100:]
        # successive grid values have correlation e^{-1}; inflate the SE accordingly
        inflate = math.sqrt((1 + math.exp(-1)) / (1 - math.exp(-1)))
        se = y.std(axis=0) / math.sqrt(len(y)) * inflate
        assert np.all(np.abs(y.mean(axis=0) - lp.gamma) <= 4 * se)
        np.testing.assert_allclose(np.cov(y.T), lp.psi / 2, rtol=0.05)

    def test_bad_step(self, cluster_spec):
        with pytest.raises(OutOfRange):
            ou_step_law(limit_params(cluster_spec), 1.0, np.zeros(2), 0.0)


class TestSimulate:
    def test_noiseless_matches_ode(self):
        lp = lp_from([1.5, -0.5], np.zeros((2, 2)))
        y0 = np.array([0.2, 1.0])
        path = simulate_ou(lp, 0.8, y0, 3.0, 0.01, stream(22))
        np.testing.assert_array_equal(path.states[0], y0)
        np.testing.assert_allclose(path.states, fluid_solution(lp.gamma, 0.8, y0, path.times),
                                   rtol=0, atol=1e-12)

    def test_scalar_variance(self):
        lp = lp_from([0.0], [[1.0]])
        y1 = np.array([simulate_ou(lp, 1.0, [0.0], 1.0, 0.25, stream(23, r)).states[-1, 0]
                       for r in range(100_000)])
        target = 0.5 * (1 - math.exp(-2))
        se = target * math.sqrt(2 / (len(y1) - 1))
        assert abs(y1.var(ddof=1) - target) <= 4 * se

    def test_cluster_correlation(self, cluster_spec):
        lp = limit_params(cluster_spec)
        y0 = np.array([0.0, 0.0])
        t = 1.5
        ys = np.array([simulate_ou(lp, 1.0, y0, t, 0.5, stream(24, r)).states[-1]
                       for r in range(20_000)])
        # covariance recursion of the exact step law gives Psi (theta/2)(1 - e^{-2t/theta})
        cov = lp.psi * 0.5 * (1 - math.exp(-2 * t))
        rho = cov[0, 1] / math.sqrt(cov[0, 0] * cov[1, 1])
        r_hat = np.corrcoef(ys.T)[0, 1]
        se = (1 - rho ** 2) / math.sqrt(len(ys) - 3)
        assert abs(r_hat - rho) <= 4 * se

    def test_refinement_invariance(self, cluster_spec):
        lp = limit_params(cluster_spec)
        y0 = np.array([0.5, -0.5])
        a = np.array([simulate_ou(lp, 1.0, y0, 1.0, 0.25, stream(25, r)).states[-1] for r in range(20_000)])
        b = np.array([simulate_ou(lp, 1.0, y0, 1.0, 0.125, stream(26, r)).states[-1] for r in range(20_000)])
        se_mean = np.sqrt(a.var(axis=0) / len(a) + b.var(axis=0) / len(b))
        assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 4 * se_mean)
        va, vb = a.var(axis=0, ddof=1), b.var(axis=0, ddof=1)
        se_var = np.sqrt(2 * va ** 2 / len(a) + 2 * vb ** 2 / len(b))
        assert np.all(np.abs(va - vb) <= 4 * se_var)

    def test_standardized_increments_are_normal(self, cluster_spec):
        lp = limit_params(cluster_spec)
        h = 0.1
        path = simulate_ou(lp, 1.0, np.zeros(2), 10_000.0, h, stream(27))
        mean, cov = ou_step_law(lp, 1.0, path.states[:-1], h)
        inv = np.linalg.inv(np.linalg.cholesky(cov))
        z = (path.states[1:] - mean) @ inv.T
        m = len(z)
        assert np.all(np.abs((z ** 3).mean(axis=0)) <= 4 * math.sqrt(15 / m))
        assert np.all(np.abs((z ** 4).mean(axis=0) - 3) <= 4 * math.sqrt(96 / m))
        assert abs(np.mean(z[:, 0] * z[:, 1])) <= 4 / math.sqrt(m)

    def test_euler_converges_to_exact(self):
        lp = lp_from([1.0], [[0.0]])
        exact = simulate_ou(lp, 1.0, [0.0], 2.0, 0.1, stream(28))
        errs = []
        for h in (0.1, 0.01, 0.001):
            euler = simulate_ou(lp, 1.0, [0.0], 2.0, h, stream(28), scheme="euler")
            errs.append(abs(euler.states[-1, 0] - exact.states[-1, 0]))
        assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-3

    def test_horizon_covered(self):
        lp = lp_from([0.0], [[1.0]])
        path = simulate_ou(lp, 1.0, [0.0], 1.05, 0.1, stream(29))
        assert path.states.shape == (12, 1)
        assert path.times[-1] >= 1.05 - 1e-12 and path.times[-1] - 1.05 < 0.1

    def test_determinism(self, cluster_spec):
        lp = limit_params(cluster_spec)
        a = simulate_ou(lp, 1.0, np.zeros(2), 2.0, 0.01, stream(30))
        b = simulate_ou(lp, 1.0, np.zeros(2), 2.0, 0.01, stream(30))
        np.testing.assert_array_equal(a.states, b.states)

    @pytest.mark.parametrize("h, horizon", [(0.0, 1.0), (0.5, 0.2)])
    def test_bad_arguments(self, h, horizon):
        with pytest.raises(OutOfRange):
            simulate_ou(lp_from([0.0], [[1.0]]), 1.0, [0.0], horizon, h, stream(31))

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            simulate_ou(lp_from([0.0], [[1.0]]), 1.0, [0.0], 1.0, 0.1, stream(32), scheme="rk4")


@pytest.mark.parametrize("fmt", ["csv", "ndjson"])
def test_grid_round_trip_with_fluid(tmp_path, fmt):
    spec = NetworkSpec(k=2, theta=1.0, mu=[1.0, 0.5], sigma2=[0.1, 0.2], boundary=[3, 3],
                       reset=[0, 0], clusters=[Cluster({1, 2}, 0.2, 0.1)])
    lp = limit_params(spec)
    path = simulate_ou(lp, 1.0, spec.y0, 1.0, 0.1, stream(33), seed=33, params_hash=spec.hash())
    fluid = fluid_solution(lp.gamma, 1.0, spec.y0, path.times)
    write_grid(path, tmp_path / "g", fmt, fluid=fluid)
    back, cols = read_grid(tmp_path / "g")
    np.testing.assert_array_equal(back.states, path.states)
    np.testing.assert_array_equal(cols["fluid2"], fluid[:, 1])
    assert back.seed == 33 and back.params_hash == spec.hash() and back.h == 0.1
