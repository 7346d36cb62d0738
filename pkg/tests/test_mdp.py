import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from oir.envs import build_simple_env
from oir.errors import DegenerateDenominator, EmptyTrajectory, NonUniqueStationary, ZeroOccupancy
from oir.mdp import (
    SoftmaxPolicy,
    TabularMDP,
    chain_stationary,
    cross_entropy,
    empirical_density,
    entropy,
    exact_oir_gradient,
    occupancy_stats,
    oir_value,
    policy_gradient,
    random_mdp,
    relative_values,
    shadow_mdp,
    stationary_distribution,
    stationary_jacobian,
)

seeds = st.integers(0, 2**32 - 1)
sizes = st.integers(2, 5)


def _eig_stationary(P):
    """Left Perron eigenvector, an oracle independent of the linear solve."""
    w, v = np.linalg.eig(P.T)
    x = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return x / x.sum()


class TestConstruction:
    def test_rejects_bad_rows(self):
        p = np.full((2, 1, 2), 0.6)
        with pytest.raises(ValueError, match="sum to 1"):
            TabularMDP(p, np.ones((2, 1)))

    def test_rejects_nonpositive_cost(self):
        p = np.full((2, 1, 2), 0.5)
        with pytest.raises(ValueError, match="positive"):
            TabularMDP(p, np.array([[1.0], [0.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            TabularMDP(np.full((2, 2, 2), 0.5), np.ones((2, 3)))

    def test_arrays_are_read_only(self, small_mdp):
        with pytest.raises(ValueError):
            small_mdp.cost[0, 0] = 5.0

    def test_policy_probs_normalised_for_extreme_logits(self):
        pol = SoftmaxPolicy(np.array([[800.0, 0.0, -800.0]]))
        assert np.allclose(pol.probs.sum(axis=1), 1.0)
        assert np.isfinite(pol.log_probs[0, 0])


class TestStationary:
    @given(seeds, sizes, sizes)
    def test_matches_eigenvector(self, seed, S, A):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(S, A, rng)
        pol = SoftmaxPolicy(rng.normal(size=(S, A)))
        d = stationary_distribution(mdp, pol)
        assert d.sum() == pytest.approx(1.0)
        assert np.all(d >= 0)
        np.testing.assert_allclose(d, _eig_stationary(mdp.chain(pol)), atol=1e-10)
        np.testing.assert_allclose(d @ mdp.chain(pol), d, atol=1e-12)

    def test_reducible_chain_raises(self):
        with pytest.raises(NonUniqueStationary) as info:
            chain_stationary(np.eye(3))
        assert info.value.chain.shape == (3, 3)

    def test_periodic_chain_has_unique_answer(self):
        P = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(chain_stationary(P), [0.5, 0.5])

    def test_transient_state_gets_zero_mass(self):
        P = np.array([[0.0, 1.0, 0.0], [0.0, 0.5, 0.5], [0.0, 0.5, 0.5]])
        np.testing.assert_allclose(chain_stationary(P), [0.0, 0.5, 0.5], atol=1e-12)

    def test_simple_env_is_policy_mixture(self):
        mdp = build_simple_env()
        pol = SoftmaxPolicy(np.tile([2.0, 0.0, 0.0, 0.0, 0.0], (5, 1)))
        np.testing.assert_allclose(stationary_distribution(mdp, pol), pol.probs[0], atol=1e-12)

    def test_matches_long_run_frequency(self, small_mdp, random_policy):
        rng = np.random.default_rng(1)
        P = small_mdp.chain(random_policy)
        s, counts = 0, np.zeros(small_mdp.n_states)
        for u in rng.random(200_000):
            counts[s] += 1
            s = min(np.searchsorted(np.cumsum(P[s]), u, side="right"), small_mdp.n_states - 1)
        d = stationary_distribution(small_mdp, random_policy)
        np.testing.assert_allclose(counts / counts.sum(), d, atol=5e-3)


class TestEntropyAndStats:
    def test_entropy_conventions(self):
        assert entropy([1.0, 0.0]) == 0.0
        assert entropy(np.full(4, 0.25)) == pytest.approx(np.log(4))

    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
    def test_cross_entropy_at_least_entropy(self, w):
        p = np.array(w) / np.sum(w)
        q = np.roll(p, 1)
        assert cross_entropy(p, q) >= entropy(p) - 1e-12
        assert cross_entropy(p, p) == pytest.approx(entropy(p))

    def test_uniform_policy_on_simple_env(self):
        stats = occupancy_stats(build_simple_env(), SoftmaxPolicy.uniform(5, 5), 1.0)
        assert stats.avg_cost == pytest.approx(1.8)
        assert stats.entropy_d == pytest.approx(np.log(5))
        assert stats.entropy_lambda == pytest.approx(np.log(25))
        assert stats.oir == pytest.approx(1.8 / (1 + np.log(5)))

    @given(seeds, st.floats(0.0, 10.0))
    def test_stats_invariants(self, seed, kappa):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(3, 3, rng)
        stats = occupancy_stats(mdp, SoftmaxPolicy(rng.normal(size=(3, 3))), kappa)
        assert stats.lam.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(stats.lam.sum(axis=1), stats.d)
        assert stats.entropy_d <= stats.entropy_lambda + 1e-12
        assert mdp.cost.min() <= stats.avg_cost <= mdp.cost.max()

    def test_degenerate_denominator(self):
        p = np.zeros((2, 1, 2))
        p[:, 0, 0] = 1.0
        mdp = TabularMDP(p, np.ones((2, 1)))
        with pytest.raises(DegenerateDenominator):
            oir_value(mdp, SoftmaxPolicy.uniform(2, 1), 0.0)

    def test_negative_kappa(self, small_mdp, random_policy):
        with pytest.raises(ValueError):
            occupancy_stats(small_mdp, random_policy, -1.0)

    def test_empirical_density(self):
        np.testing.assert_allclose(empirical_density([0, 0, 2, 1], 4), [0.5, 0.25, 0.25, 0.0])
        with pytest.raises(EmptyTrajectory):
            empirical_density([], 3)


class TestGradients:
    def test_relative_values_solve_poisson_equation(self, small_mdp, random_policy):
        rv = relative_values(small_mdp, random_policy, small_mdp.cost)
        P = small_mdp.chain(random_policy)
        sbar = np.sum(random_policy.probs * small_mdp.cost, axis=1)
        np.testing.assert_allclose(rv.state_values, sbar - rv.gain + P @ rv.state_values, atol=1e-12)
        d = stationary_distribution(small_mdp, random_policy)
        assert d @ rv.state_values == pytest.approx(0.0, abs=1e-12)

    def test_shadow_mdp_rejects_zero_reference(self, small_mdp):
        with pytest.raises(ZeroOccupancy):
            shadow_mdp(small_mdp, np.array([0.5, 0.5, 0.0, 0.0]))

    def test_jacobian_columns_sum_to_zero(self, small_mdp, random_policy):
        jac = stationary_jacobian(small_mdp, random_policy)
        np.testing.assert_allclose(jac.sum(axis=0), 0.0, atol=1e-12)

    def test_jacobian_matches_differences(self, small_mdp, random_policy):
        S, A = small_mdp.n_states, small_mdp.n_actions
        jac = stationary_jacobian(small_mdp, random_policy)
        theta, h = random_policy.theta, 1e-6
        for i in (0, 5, S * A - 1):
            e = np.zeros_like(theta)
            e[i] = h
            up = stationary_distribution(small_mdp, SoftmaxPolicy.from_theta(theta + e, S, A))
            dn = stationary_distribution(small_mdp, SoftmaxPolicy.from_theta(theta - e, S, A))
            np.testing.assert_allclose(jac[:, i], (up - dn) / (2 * h), atol=1e-8)

    def test_gradient_of_constant_signal_vanishes(self, small_mdp, random_policy):
        g = policy_gradient(small_mdp, random_policy, np.full(small_mdp.cost.shape, 3.0))
        np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_oir_gradient_zero_at_simple_env_optimum(self):
        mdp = build_simple_env()
        # Optimal mass on state 0 for kappa = 1 from the one-variable reduction.
        res = minimize_scalar(
            lambda q: (2 - q) / (1 + entropy([q] + [(1 - q) / 4] * 4)),
            bounds=(0, 1), method="bounded", options={"xatol": 1e-12},
        )
        q = res.x
        logits = np.log(np.array([q] + [(1 - q) / 4] * 4))
        g = exact_oir_gradient(mdp, SoftmaxPolicy(np.tile(logits, (5, 1))), 1.0)
        assert np.abs(g).max() < 1e-6
