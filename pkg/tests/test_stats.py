from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from steinnet import Cluster, NetworkSpec
from steinnet.errors import EmptySample, InsufficientReplications
from steinnet.model import limit_covariance, scale_params, second_moment_matrix
from steinnet.rng import stream
from steinnet.stats import (
    ConvergenceReport,
    Sample,
    covariance_rate,
    ecf_check,
    fpt_convergence_report,
    ks_distance,
    mark_frequencies,
    mark_law_comparison,
    total_variation_marks,
    wasserstein1,
)
from steinnet.stein_sim import sample_martingale

samples = st.lists(st.integers(-20, 20).map(lambda v: v / 4), min_size=1, max_size=40)


class TestKS:
    def test_identical(self):
        assert ks_distance([3, 1, 2, 2], [2, 1, 2, 3]) == 0

    def test_disjoint(self):
        assert ks_distance([0, 0], [1, 1]) == 1

    def test_hand_example(self):
        assert ks_distance([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3)

    def test_empty(self):
        with pytest.raises(EmptySample):
            ks_distance([], [1.0])

    def test_sample_type(self):
        assert ks_distance(Sample([1.0, 2.0]), Sample([1.0, 2.0], meta={"n": 3})) == 0
        with pytest.raises(EmptySample):
            Sample([])
        with pytest.raises(ValueError):
            Sample([1.0, math.nan])

    # only the statistic is compared; scipy warns about its p-value on tiny samples
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    @settings(max_examples=200, deadline=None)
    @given(samples, samples)
    def test_matches_scipy(self, a, b):
        assert ks_distance(a, b) == pytest.approx(sps.ks_2samp(a, b).statistic, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(samples, samples, samples)
    def test_pseudometric(self, a, b, c):
        assert ks_distance(a, b) == ks_distance(b, a)
        assert ks_distance(a, a) == 0
        assert ks_distance(a, c) <= ks_distance(a, b) + ks_distance(b, c) + 1e-12
        assert 0 <= ks_distance(a, b) <= 1


def test_wasserstein_is_sorted_l1():
    a = np.array([0.0, 1.0, 3.0])
    b = np.array([1.0, 2.0, 5.0])
    assert wasserstein1(a, b) == pytest.approx(np.mean(np.abs(np.sort(a) - np.sort(b))))


class TestMarks:
    def test_identical(self):
        assert total_variation_marks({1: 0.3, 2: 0.7}, {1: 0.3, 2: 0.7}) == 0

    def test_disjoint(self):
        assert total_variation_marks({1: 1.0}, {2: 1.0}) == 1

    def test_formula(self):
        assert total_variation_marks({1: 0.5, 2: 0.5}, {1: 0.75, 2: 0.25}) == pytest.approx(0.25)

    def test_set_keys_and_int_keys_agree(self):
        assert total_variation_marks({frozenset({1}): 0.5, (2,): 0.5}, {1: 0.5, 2: 0.5}) == 0

    def test_frequencies(self):
        freq = mark_frequencies([frozenset({1}), frozenset({1, 2}), frozenset({1}), frozenset({2})])
        assert freq == {frozenset({1}): 0.5, frozenset({1, 2}): 0.25, frozenset({2}): 0.25}

    def test_collapse_below_threshold(self):
        stein = {1: 0.6 - 5e-4, 2: 0.4, frozenset({1, 2}): 5e-4}
        cmp = mark_law_comparison(stein, {1: 0.6, 2: 0.4})
        assert cmp.collapsed and not cmp.residual_simultaneity
        assert cmp.tv < 1e-3 and cmp.non_singleton == pytest.approx(5e-4)

    def test_residual_simultaneity(self):
        stein = {1: 0.5, 2: 0.4, frozenset({1, 2}): 0.1}
        cmp = mark_law_comparison(stein, {1: 0.5, 2: 0.5})
        assert cmp.residual_simultaneity and cmp.tv == pytest.approx(0.1)


class TestCovarianceRate:
    def test_constant_paths(self):
        out = covariance_rate(np.ones((50, 3)), t=2.0)
        np.testing.assert_array_equal(out.matrix, 0)
        np.testing.assert_array_equal(out.se, 0)

    def test_insufficient(self):
        with pytest.raises(InsufficientReplications):
            covariance_rate(np.ones((1, 2)))
        assert np.all(np.isnan(covariance_rate(np.array([[0.0], [1.0]])).se))

    def test_jackknife_matches_brute_force(self):
        z = np.random.default_rng(0).normal(size=(40, 3)) @ np.array([[1, 0, 0], [0.5, 1, 0], [0.2, 0.3, 1]])
        out = covariance_rate(z, t=1.0)
        m = len(z)
        loo = np.array([np.cov(np.delete(z, i, axis=0).T) for i in range(m)])
        se = np.sqrt((m - 1) / m * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
        np.testing.assert_allclose(out.matrix, np.cov(z.T), rtol=1e-12)
        np.testing.assert_allclose(out.se, se, rtol=1e-9)

    def test_scalar_scheme(self):
        spec = NetworkSpec(k=1, theta=1.0, mu=[1.0], sigma2=[1.0], boundary=[5.0], reset=[0.0])
        p = scale_params(spec, 1000)
        out = covariance_rate(sample_martingale(p, 1.0, 10_000, stream(41)), t=1.0)
        assert abs(out.matrix[0, 0] - 1.0) <= 4 * out.se[0, 0]
        assert second_moment_matrix(p)[0, 0] == pytest.approx(1.0 + 1.0 / 1000)

    def test_cluster_off_diagonal(self):
        spec = NetworkSpec(k=2, theta=1.0, mu=[0.5, 0.5], sigma2=[1.0, 2.0], boundary=[5, 5],
                           reset=[0, 0], clusters=[Cluster({1, 2}, 1.0, 0.5)])
        p = scale_params(spec, 1000)
        out = covariance_rate(sample_martingale(p, 2.0, 10_000, stream(42)), t=2.0)
        assert abs(out.matrix[0, 1] - 0.5) <= 4 * out.se[0, 1]
        np.testing.assert_array_equal(out.matrix, out.matrix.T)
        assert np.linalg.eigvalsh(out.matrix).min() >= -4 * out.se.max()


class TestEcf:
    def test_zero_frequency_exact(self, cluster_spec):
        p = scale_params(cluster_spec, 10)
        z = sample_martingale(p, 1.0, 100, stream(43))
        res = ecf_check(z, p, 1.0, np.zeros((1, 2)), psi=limit_covariance(cluster_spec))
        assert res.deviation == 0.0 and res.gaussian_deviation == 0.0

    def test_within_standard_error(self, cluster_spec):
        p = scale_params(cluster_spec, 100)
        reps = 20_000
        z = sample_martingale(p, 1.0, reps, stream(44))
        u = np.linspace(-2, 2, 21)[:, None] * np.array([[0.8, 0.6]])
        assert ecf_check(z, p, 1.0, u).deviation <= 4 / math.sqrt(reps)

    def test_gaussian_deviation_shrinks(self, cluster_spec):
        psi = limit_covariance(cluster_spec)
        u = np.linspace(-2, 2, 21)[:, None] * np.array([[0.8, 0.6]])
        devs = []
        for n in (1, 10, 100):
            p = scale_params(cluster_spec, n)
            devs.append(ecf_check(sample_martingale(p, 1.0, 20_000, stream(45, n)), p, 1.0, u, psi=psi)
                        .gaussian_deviation)
        assert devs[0] > devs[1] > devs[2]

    def test_scalar_grid(self):
        spec = NetworkSpec(k=1, theta=1.0, mu=[1.0], sigma2=[1.0], boundary=[5.0], reset=[0.0])
        p = scale_params(spec, 20)
        res = ecf_check(sample_martingale(p, 1.0, 1000, stream(46)), p, 1.0, [0.0, 0.5, 1.0])
        assert res.u.shape == (3, 1) and res.empirical[0] == 1.0


class TestConvergenceReport:
    def spec(self):
        return NetworkSpec(k=2, theta=1.0, mu=[1.5, 1.3], sigma2=[0.05, 0.05], boundary=[2, 2],
                           reset=[0, 0], clusters=[Cluster({1, 2}, 1.0, 0.05)])

    def test_same_n_twice_is_indistinguishable(self):
        rep = fpt_convergence_report(self.spec(), [60, 60], ref_h=1e-2, reps=1000, depth=2, seed=1,
                                     floor_pairs=3)
        for name in ("ks_tau_1", "ks_tau_2", "ks_cum_2"):
            a, b = rep.metrics[name]
            # two independent rows differ by at most two reference-noise levels
            assert abs(a - b) <= 2 * max(rep.floor_samples[name])

    def test_no_events(self):
        spec = NetworkSpec(k=1, theta=1.0, mu=[1.0], sigma2=[0.1], boundary=[12.0], reset=[0.0])
        rep = fpt_convergence_report(spec, [10, 20], ref_h=1e-2, reps=1000, depth=2, horizon=3.0)
        assert "NoEvents" in rep.flags
        assert all(math.isnan(v) for v in rep.metrics["ks_tau_1"])
        assert rep.empty_trains == [1000, 1000]

    def test_preconditions(self):
        with pytest.raises(InsufficientReplications):
            fpt_convergence_report(self.spec(), [10], reps=999)
        with pytest.raises(ValueError):
            fpt_convergence_report(self.spec(), [50, 10], reps=1000)
        with pytest.raises(ValueError):
            fpt_convergence_report(self.spec(), [10], reps=1000, depth=0)

    def test_single_row_and_serialization(self):
        rep = fpt_convergence_report(self.spec(), [30], ref_h=1e-2, reps=1000, depth=1, seed=2)
        assert rep.axis == [30] and len(rep.metrics["ks_tau_1"]) == 1
        again = ConvergenceReport.from_json(rep.to_json())
        assert again.to_json() == rep.to_json()
        table = rep.to_table()
        assert "ks_tau_1" in table and "floor" in table
        assert all(v >= 0 for vals in rep.metrics.values() for v in vals if not math.isnan(v))

    def test_deterministic(self):
        a = fpt_convergence_report(self.spec(), [20], ref_h=1e-2, reps=1000, depth=1, seed=3)
        b = fpt_convergence_report(self.spec(), [20], ref_h=1e-2, reps=1000, depth=1, seed=3,
                                   threads=2)
        assert a.to_json() == b.to_json()
