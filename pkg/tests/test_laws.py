import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degsde import exprlang as ex
from degsde.errors import ConfigError, EmptyLaw
from degsde.families import family_spec
from degsde.laws import (
    EmpiricalLaw,
    energy_distance_test,
    gaussian_expectation,
    gaussian_moments,
    kolmogorov_consistency,
    ks_two_sample,
    marginal,
)
from degsde.simulate import SimConfig, euler_maruyama


def law(samples, t=1.0):
    return EmpiricalLaw(t, np.asarray(samples, dtype=float))


def ensemble(name, n, seed, y=(0.0, 0.0), dt=1e-2, **params):
    cfg = SimConfig(dt=dt, T=1.0, y=y, n_paths=n, seed=seed, marginal_times=(1.0,), store="marginals")
    return euler_maruyama(family_spec(name, **params), cfg)


class TestMarginal:
    def test_frozen_ensemble(self):
        ens = ensemble("girsanov", 50, 0, alpha=1.0)
        m = marginal(ens, 1.0)
        assert np.all(m.samples == 0.0) and m.n == 50 and m.excluded == 0

    def test_brownian_mean(self):
        m = marginal(ensemble("brownian", 10_000, 1), 1.0)
        assert np.all(np.abs(m.samples.mean(axis=0)) < 3 / math.sqrt(10_000))

    def test_ou_mean(self):
        m = marginal(ensemble("ou", 10_000, 2, y=(1.0, 0.0)), 1.0)
        se = m.samples.std(axis=0, ddof=1) / math.sqrt(m.n)
        assert np.all(np.abs(m.samples.mean(axis=0) - [math.exp(-1), 0]) < 3 * se + 2e-2)

    def test_snapping_records_offset(self):
        m = marginal(ensemble("brownian", 10, 0), 1.0 + 1e-4)
        assert m.t == 1.0 and m.t_offset == pytest.approx(1e-4)

    def test_all_exploded(self):
        cfg = SimConfig(dt=0.01, T=1.0, y=(3.0, 0.0), n_paths=20, seed=0, R_explode=5.0,
                        marginal_times=(1.0,), store="marginals")
        with pytest.raises(EmptyLaw):
            marginal(euler_maruyama(family_spec("quartic"), cfg), 1.0)

    def test_exploded_paths_excluded(self):
        cfg = SimConfig(dt=0.01, T=1.0, y=(1.0, 0.0), n_paths=400, seed=0, R_explode=3.0,
                        marginal_times=(1.0,), store="marginals")
        ens = euler_maruyama(family_spec("brownian"), cfg)
        m = marginal(ens, 1.0)
        assert m.excluded == int(ens.exploded.sum()) > 0
        assert m.n + m.excluded == 400


class TestKS:
    def test_identical_lists(self, rng):
        a = law(rng.standard_normal((200, 2)))
        r = ks_two_sample(a, a, 0)
        assert r.statistic == 0.0 and r.p_value == 1.0

    def test_minimum_size(self, rng):
        with pytest.raises(ValueError):
            ks_two_sample(law(rng.standard_normal((99, 2))), law(rng.standard_normal((200, 2))))

    def test_brownian_vs_ou_is_detected(self):
        bm = marginal(ensemble("brownian", 20_000, 3), 1.0)
        ou = marginal(ensemble("ou", 20_000, 4, theta=1.0, noise=2.0), 1.0)
        assert ks_two_sample(bm, ou, "radial").p_value < 1e-6

    @settings(max_examples=25)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1, "radial"]))
    def test_exactly_symmetric(self, seed, proj):
        g = np.random.default_rng(seed)
        a, b = law(g.standard_normal((150, 2))), law(g.standard_normal((170, 2)) + 0.1)
        r1, r2 = ks_two_sample(a, b, proj), ks_two_sample(b, a, proj)
        assert (r1.statistic, r1.p_value) == (r2.statistic, r2.p_value)


class TestEnergy:
    def test_identical_lists(self, rng):
        a = law(rng.standard_normal((300, 2)))
        r = energy_distance_test(a, a, n_perm=200)
        assert r.statistic == 0.0 and r.p_value == 1.0

    def test_shifted_gaussians(self, rng):
        a = law(rng.standard_normal((2000, 2)))
        b = law(rng.standard_normal((2000, 2)) + [1.0, 0.0])
        assert energy_distance_test(a, b, n_perm=200).p_value < 0.005

    def test_needs_200_permutations(self, rng):
        a = law(rng.standard_normal((100, 2)))
        with pytest.raises(ValueError):
            energy_distance_test(a, a, n_perm=100)

    def test_subsample_cap(self, rng):
        with pytest.raises(ValueError):
            energy_distance_test(law(np.zeros((10, 2))), law(np.zeros((10, 2))), max_per_side=5000)
        r = energy_distance_test(law(rng.standard_normal((3000, 2))), law(rng.standard_normal((2500, 2))),
                                 max_per_side=500)
        assert (r.n1, r.n2) == (500, 500)

    def test_deterministic_in_seed(self, rng):
        a, b = law(rng.standard_normal((300, 2))), law(rng.standard_normal((300, 2)))
        assert energy_distance_test(a, b, seed=5).p_value == energy_distance_test(a, b, seed=5).p_value

    def test_statistic_matches_direct_formula(self, rng):
        x, y = rng.standard_normal((40, 2)), rng.standard_normal((30, 2)) + 0.5
        d = lambda u, v: np.linalg.norm(u[:, None] - v[None], axis=-1).mean()
        want = 2 * d(x, y) - d(x, x) - d(y, y)
        assert energy_distance_test(law(x), law(y)).statistic == pytest.approx(want, rel=1e-12)

    @settings(max_examples=15)
    @given(st.integers(0, 2**32 - 1))
    def test_nonnegative_and_symmetric(self, seed):
        g = np.random.default_rng(seed)
        a, b = law(g.standard_normal((120, 2))), law(g.standard_normal((110, 2)))
        r1, r2 = energy_distance_test(a, b), energy_distance_test(b, a)
        assert r1.statistic >= 0.0
        assert r1.statistic == pytest.approx(r2.statistic, rel=1e-12, abs=1e-15)
        assert 0.0 < r1.p_value <= 1.0
        assert abs(r1.p_value - r2.p_value) < 0.25  # permutation noise only

    def test_trivial_vs_diffusing_girsanov(self):
        trivial = marginal(ensemble("girsanov", 2000, 0, alpha=1.0), 1.0)
        moving = marginal(ensemble("girsanov", 2000, 1, y=(0.5, 0.0), alpha=1.0), 1.0)
        assert energy_distance_test(trivial, moving).p_value < 0.005


class TestGaussianOracle:
    def test_ou_moments(self):
        mean, cov = gaussian_moments(family_spec("ou"), (1.0, 0.0), 1.0)
        np.testing.assert_allclose(mean, [math.exp(-1), 0.0], rtol=1e-12)
        np.testing.assert_allclose(cov, (1 - math.exp(-2)) * np.eye(2), rtol=1e-12)

    def test_brownian_gaussian_integral(self):
        f = ex.field("exp(-norm(x)^2)", 2)
        for t in (0.5, 1.0, 2.0):
            mean, cov = gaussian_moments(family_spec("brownian"), (0.0, 0.0), t)
            assert gaussian_expectation(f, mean, cov) == pytest.approx(1 / (1 + 2 * t), rel=1e-6)

    def test_constant_gaussian_covariance(self):
        _, cov = gaussian_moments(family_spec("constant_gaussian"), (0.0, 0.0), 0.7)
        np.testing.assert_allclose(cov, 0.7 * np.array([[2.0, 1.0], [1.0, 2.0]]), rtol=1e-12)


class TestKolmogorov:
    def test_unit_function(self):
        cfg = SimConfig(dt=0.01, T=1.0, y=(0.0, 0.0), n_paths=500, seed=0)
        r = kolmogorov_consistency(family_spec("brownian"), ex.field("1", 2), (0.0, 0.0), 1.0, cfg)
        assert r["mc"] == 1.0 and r["reference"] == pytest.approx(1.0, rel=1e-12)

    def test_initial_condition(self):
        cfg = SimConfig(dt=0.01, T=1.0, y=(0.0, 0.0), n_paths=10, seed=0)
        r = kolmogorov_consistency(family_spec("brownian"), ex.field("exp(-norm(x)^2)", 2), (0.0, 0.0), 0.0, cfg)
        assert r["mc"] == 1.0 and r["reference"] == 1.0

    def test_non_oracle_spec_has_no_reference(self):
        cfg = SimConfig(dt=0.01, T=1.0, y=(1.0, 0.0), n_paths=200, seed=0)
        r = kolmogorov_consistency(family_spec("girsanov"), ex.field("1", 2), (1.0, 0.0), 1.0, cfg)
        assert r["reference"] is None


def test_nonuniqueness_demo_requires_origin():
    from degsde.laws import nonuniqueness_demo

    with pytest.raises(ConfigError):
        nonuniqueness_demo(1.0, SimConfig(dt=0.01, T=1.0, y=(1.0, 0.0), n_paths=10, seed=0))
