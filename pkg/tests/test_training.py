import math

import numpy as np
import pytest

from conftest import random_distribution
from rbmlab.geometry import normalized_jacobian, numerical_rank
from rbmlab.model import ProbabilityTensor, RbmParams, visible_marginal
from rbmlab.sampling import make_rng
from rbmlab.training import (
    MStepError,
    SingularFisherError,
    TrainConfig,
    cd_gradient,
    cd_k_update,
    data_distribution,
    e_step,
    em_step,
    entropy,
    exact_gradient,
    expected_statistics,
    fisher_matrix,
    joint_divergence,
    kl_divergence,
    log_likelihood,
    m_step,
    model_expectations_table,
    natural_gradient_direction,
    natural_gradient_step,
    numerical_gradient,
    pcd_update,
    train,
)
from rbmlab.statespace import all_states


def _angle(a, b):
    cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.degrees(math.acos(np.clip(cos, -1, 1)))


class TestLikelihood:
    def test_uniform_model(self, rng):
        data = random_distribution(rng, 3)
        assert log_likelihood(RbmParams.zeros(3, 2), data) == pytest.approx(-3 * math.log(2))

    def test_divergence_identity(self, rng):
        p = RbmParams.random(3, 2, rng)
        data = random_distribution(rng, 3)
        q = visible_marginal(p).values
        assert log_likelihood(p, data) == pytest.approx(-kl_divergence(data, q) - entropy(data),
                                                        abs=1e-12)

    def test_point_data_near_zero(self):
        data = np.zeros(8)
        data[5] = 1.0
        x = all_states(3)[5]
        p = RbmParams(np.zeros((1, 3)), np.where(x == 1, 30.0, -30.0), [0.0])
        ll = log_likelihood(p, data)
        assert -1e-10 < ll < 0

    def test_states_as_data(self):
        X = np.array([[0, 1], [0, 1], [1, 1], [0, 0]])
        np.testing.assert_allclose(data_distribution(X, 2), [0.25, 0.5, 0, 0.25])

    def test_permutation_invariance(self, rng):
        p = RbmParams.random(3, 3, rng)
        data = random_distribution(rng, 3)
        assert log_likelihood(p, data) == pytest.approx(
            log_likelihood(p.permute_hidden([1, 2, 0]), data), abs=1e-13)


class TestDivergence:
    def test_self(self, rng):
        p = random_distribution(rng, 3)
        assert kl_divergence(p, p) == 0.0

    def test_point_to_uniform(self):
        p = np.zeros(8)
        p[0] = 1
        assert kl_divergence(p, np.full(8, 1 / 8)) == pytest.approx(3 * math.log(2))

    def test_support_conflict(self):
        assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_nonnegative(self, rng):
        for _ in range(1000):
            p = random_distribution(rng, 2, 0.5)
            q = random_distribution(rng, 2, 0.5)
            assert kl_divergence(p, q) >= 0


class TestGradient:
    def test_symmetric_point(self):
        g = exact_gradient(RbmParams.zeros(3, 2), np.full(8, 1 / 8))
        assert np.abs(g).max() < 1e-15

    def test_finite_differences(self, rng):
        p = RbmParams.random(3, 2, rng)
        data = random_distribution(rng, 3)
        assert np.abs(exact_gradient(p, data) - numerical_gradient(p, data)).max() < 1e-6

    def test_data_side_single_sample(self):
        x = np.array([1, 0, 1])
        data = np.zeros(8)
        data[5] = 1.0
        s = expected_statistics(RbmParams.zeros(3, 2), data)
        np.testing.assert_allclose(s[:6], 0.5 * np.outer(np.ones(2), x).ravel())
        np.testing.assert_allclose(s[6:9], x)
        np.testing.assert_allclose(s[9:], 0.5)

    def test_model_side_matches_table(self, rng):
        for m in (1, 3, 6):
            p = RbmParams.random(3, m, rng)
            model_side = expected_statistics(p, visible_marginal(p).values)
            assert np.abs(model_side - model_expectations_table(p)).max() < 1e-13


class TestContrastiveDivergence:
    def test_long_chains_align_with_exact_gradient(self, rng):
        p = RbmParams.random(2, 2, rng)
        data = random_distribution(rng, 2)
        states = all_states(2)
        local = make_rng(7)
        grads = []
        for _ in range(100):
            batch = states[local.choice(4, size=200, p=data)]
            g, _ = cd_gradient(p, batch, 100, local)
            grads.append(g)
        exact = exact_gradient(p, data)
        assert _angle(np.mean(grads, axis=0), exact) < 15

    def test_positive_phase_is_exact(self, rng):
        p = RbmParams.random(3, 2, rng)
        batch = all_states(3)[[1, 4, 4, 7]]
        from rbmlab.training import visible_statistics
        pos = visible_statistics(p, batch).mean(axis=0)
        data = data_distribution(batch, 3)
        np.testing.assert_allclose(pos, expected_statistics(p, data), atol=1e-15)

    def test_deterministic(self, rng):
        p = RbmParams.random(3, 2, rng)
        batch = all_states(3)
        a = cd_k_update(p, batch, 2, 0.1, make_rng(3))
        b = cd_k_update(p, batch, 2, 0.1, make_rng(3))
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())

    def test_cd1_is_biased(self):
        # strongly coupled model: one reconstruction step cannot mix
        p = RbmParams([[6.0, 6.0, 6.0]], [-3.0, -3.0, -3.0], [-4.5])
        data = np.zeros(8)
        data[[0, 7]] = 0.5
        batch = np.repeat(all_states(3)[[0, 7]], 2000, axis=0)
        local = make_rng(12)
        g = np.mean([cd_gradient(p, batch, 1, local)[0] for _ in range(20)], axis=0)
        exact = exact_gradient(p, data)
        assert np.linalg.norm(g - exact) > 0.05

    def test_pcd_keeps_chains(self, rng):
        p = RbmParams.random(3, 2, rng)
        batch = all_states(3)
        chains = np.zeros((8, 3), dtype=np.int8)
        q, new_chains = pcd_update(p, batch, chains, 1, 0.1, make_rng(1))
        assert new_chains.shape == (8, 3)
        assert q.n == 3


class TestFisher:
    def test_single_visible_variance(self):
        G = fisher_matrix(RbmParams.zeros(1, 0))
        assert G.shape == (1, 1)
        assert G[0, 0] == pytest.approx(0.25)

    def test_psd(self, rng):
        for _ in range(10):
            G = fisher_matrix(RbmParams.random(3, 2, rng))
            assert np.linalg.eigvalsh(G).min() >= -1e-10
            np.testing.assert_array_equal(G, G.T)

    def test_rank_matches_jacobian(self, rng):
        for _ in range(50):
            p = RbmParams.random(3, 2, rng)
            assert numerical_rank(fisher_matrix(p)) == numerical_rank(normalized_jacobian(p))


class TestNaturalGradient:
    def test_near_identity_regime(self, rng):
        # no hidden units and tiny theta: G = I / 4, so the direction is the gradient
        p = RbmParams.random(4, 0, rng, scale=1e-4)
        data = random_distribution(rng, 4)
        d = natural_gradient_direction(p, data, 1e-8)
        assert _angle(d, exact_gradient(p, data)) < 5

    def test_damped_step_finite(self, rng):
        for _ in range(10):
            p = RbmParams.random(3, 3, rng, scale=3)
            q = natural_gradient_step(p, random_distribution(rng, 3), 1.0, 1e-4)
            assert np.all(np.isfinite(q.to_vector()))

    def test_small_step_increases_likelihood(self, rng):
        for _ in range(20):
            p = RbmParams.random(3, 2, rng)
            data = random_distribution(rng, 3)
            q = natural_gradient_step(p, data, 1e-3, 1e-4)
            assert log_likelihood(q, data) > log_likelihood(p, data)

    def test_singular_undamped(self, rng):
        p = RbmParams.random(2, 3, rng)
        with pytest.raises(SingularFisherError, match="damping"):
            natural_gradient_step(p, random_distribution(rng, 2), 0.1, 0.0)


class TestEM:
    def test_estep_identity(self, rng):
        p = RbmParams.random(3, 2, rng)
        data = random_distribution(rng, 3)
        d_joint = joint_divergence(e_step(p, data), p)
        assert abs(d_joint - kl_divergence(data, visible_marginal(p).values)) < 1e-12

    def test_monotone(self, rng):
        p = RbmParams.random(3, 2, rng)
        data = random_distribution(rng, 3)
        ds = []
        for _ in range(50):
            ds.append(joint_divergence(e_step(p, data), p))
            p = em_step(p, data)
        diffs = np.diff(ds)
        assert np.all(diffs <= 1e-12)

    def test_fixed_point(self, rng):
        p = RbmParams.random(3, 2, rng)
        data = visible_marginal(p).values
        q = em_step(p, data)
        assert kl_divergence(data, visible_marginal(q).values) < 1e-12

    def test_moments_matched(self, rng):
        from rbmlab.training import joint_statistics
        from rbmlab.model import joint_distribution
        p = RbmParams.random(2, 2, rng)
        P = e_step(p, random_distribution(rng, 2))
        q = m_step(P, p)
        F = joint_statistics(2, 2)
        res = P.ravel() @ F - joint_distribution(q).values @ F
        assert np.abs(res).max() <= 1e-8

    def test_nonconvergence_reported(self, rng):
        p = RbmParams.random(2, 1, rng)
        P = np.zeros((4, 2))
        P[0, 0] = 1.0  # moments on the boundary: no finite solution
        with pytest.raises(MStepError) as err:
            m_step(P, p, max_iter=5)
        assert err.value.residual > 0


class TestTrain:
    def test_zero_iterations(self, rng):
        p = RbmParams.random(3, 2, rng)
        traj = train(p, random_distribution(rng, 3), TrainConfig(max_iter=0))
        assert len(traj) == 1 and traj.final.params is p

    def test_exact_recovery(self):
        rng = make_rng(5)
        target = visible_marginal(RbmParams.random(3, 2, rng, scale=1.5))
        from rbmlab.training import default_init
        traj = train(default_init(3, 2, rng), target,
                     TrainConfig(method="exact", lr=1.0, max_iter=8000, tol=1e-9))
        assert traj.final.divergence < 1e-4
        lls = [r.loglik for r in traj]
        assert lls[-1] > lls[0]

    @pytest.mark.parametrize("method", ["natgrad", "em"])
    def test_other_methods_improve(self, method, rng):
        data = random_distribution(rng, 3)
        p = RbmParams.random(3, 2, rng, scale=0.1)
        traj = train(p, data, TrainConfig(method=method, lr=0.5, max_iter=30))
        assert traj.final.loglik > traj.records[0].loglik

    @pytest.mark.parametrize("method", ["cd", "pcd"])
    def test_stochastic_methods(self, method, rng):
        data = random_distribution(rng, 3)
        p = RbmParams.random(3, 2, rng, scale=0.1)
        cfg = TrainConfig(method=method, lr=0.1, max_iter=200, k=1, seed=4)
        a = train(p, data, cfg)
        b = train(p, data, cfg)
        assert a.final.loglik == b.final.loglik
        assert a.final.divergence < a.records[0].divergence

    def test_stochastic_needs_seed(self, rng):
        with pytest.raises(ValueError):
            train(RbmParams.zeros(2, 1), np.full(4, 0.25), TrainConfig(method="cd"))

    def test_local_optima(self):
        # a bimodal target with one hidden unit: restarts settle at different values
        target = np.zeros(8)
        target[[0, 3, 5, 6]] = [0.4, 0.3, 0.2, 0.1]
        target = 0.98 * target + 0.02 / 8
        finals = set()
        for seed in range(12):
            rng = make_rng(seed)
            p = RbmParams.random(3, 1, rng, scale=2.0)
            traj = train(p, target, TrainConfig(method="natgrad", lr=0.5, max_iter=300))
            finals.add(round(traj.final.loglik, 5))
        assert len(finals) >= 2

    def test_csv_log(self, rng, tmp_path):
        traj = train(RbmParams.random(2, 1, rng), random_distribution(rng, 2),
                     TrainConfig(max_iter=3))
        traj.write_csv(tmp_path / "log.csv")
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "iter,loglik,gradnorm,divergence,wall_time"
        assert len(lines) == 5

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(method="sgd")
        with pytest.raises(ValueError):
            TrainConfig(lr=0)
        with pytest.raises(ValueError):
            TrainConfig(k=0)
        with pytest.raises(ValueError):
            TrainConfig(damping=-1)
