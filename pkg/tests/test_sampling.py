import csv

import numpy as np
import pytest

from rbmlab.model import RbmParams, joint_distribution, sigmoid, visible_marginal
from rbmlab.sampling import (
    ChainState,
    TransitionKernel,
    block_update,
    empirical_distribution,
    exact_kernel,
    gibbs_update_unit,
    make_rng,
    run_chain,
    run_chains,
    single_site_kernels,
    total_variation,
    write_samples_csv,
)
from rbmlab.statespace import popcount


class FrozenRng:
    """Replays the same uniform draw forever."""

    def __init__(self, value=0.0):
        self.value = value

    def random(self, size=None):
        return np.full(size if size is not None else (), self.value)


def _binomial_ok(hits, trials, p):
    sd = np.sqrt(trials * p * (1 - p))
    return abs(hits - trials * p) <= 3 * sd + 1e-9


class TestUnitUpdate:
    def test_zero_params_half(self):
        p = RbmParams.zeros(2, 2)
        state = ChainState.initial(p, make_rng(1), x=[0, 0], y=[0, 0])
        hits = 0
        for _ in range(10_000):
            state = gibbs_update_unit(p, state, 0)
            hits += int(state.x[0])
        assert _binomial_ok(hits, 10_000, 0.5)

    def test_saturated_field(self):
        p = RbmParams([[0.0]], [50.0], [0.0])
        state = ChainState.initial(p, make_rng(2), x=[0], y=[0])
        vals = []
        for _ in range(10_000):
            state = gibbs_update_unit(p, state, 0)
            vals.append(state.x[0])
        assert np.mean(vals) == 1.0

    def test_frequency_matches_sigmoid(self, rng):
        p = RbmParams.random(2, 2, rng)
        x = np.array([1, 0], dtype=np.int8)
        state = ChainState.initial(p, make_rng(3), x=x, y=[0, 0])
        hits = 0
        for _ in range(100_000):
            state = gibbs_update_unit(p, state, 3)  # second hidden unit
            hits += int(state.y[1])
        assert _binomial_ok(hits, 100_000, sigmoid(p.W[1] @ x + p.c[1]))

    def test_only_selected_unit_changes(self, rng):
        p = RbmParams.random(3, 2, rng)
        s0 = ChainState.initial(p, make_rng(4))
        for unit in range(5):
            s1 = gibbs_update_unit(p, s0, unit)
            changed = np.flatnonzero(s0.joint != s1.joint)
            assert set(changed) <= {unit}

    def test_out_of_range(self):
        p = RbmParams.zeros(2, 1)
        with pytest.raises(IndexError):
            gibbs_update_unit(p, ChainState.initial(p, make_rng(0)), 3)


class TestBlockUpdate:
    def test_zero_params_half(self):
        p = RbmParams.zeros(3, 4)
        state = ChainState.initial(p, make_rng(5))
        ys = []
        for _ in range(5000):
            state = block_update(p, state, "hidden")
            ys.append(state.y)
        ys = np.array(ys)
        assert all(_binomial_ok(ys[:, j].sum(), 5000, 0.5) for j in range(4))
        corr = np.corrcoef(ys.T)[np.triu_indices(4, 1)]
        assert np.abs(corr).max() < 0.06

    def test_deterministic(self, rng):
        p = RbmParams.random(3, 2, rng)
        a = run_chain(p, ChainState.initial(p, make_rng(9), x=[0, 1, 0], y=[0, 0]), 200)
        b = run_chain(p, ChainState.initial(p, make_rng(9), x=[0, 1, 0], y=[0, 0]), 200)
        assert a.tobytes() == b.tobytes()

    def test_bad_side(self):
        p = RbmParams.zeros(1, 1)
        with pytest.raises(ValueError):
            block_update(p, ChainState.initial(p, make_rng(0)), "both")

    def test_long_run_matches_joint(self, rng):
        p = RbmParams.random(2, 2, rng)
        samples = run_chains(p, make_rng(11), 100_000, chains=1, burn_in=100)
        emp = empirical_distribution(samples, 4)
        assert total_variation(emp.values, joint_distribution(p).values) < 0.02


class TestKernel:
    @pytest.mark.parametrize("n,m", [(2, 2), (3, 3), (4, 4), (5, 3), (1, 7)])
    def test_stationary(self, rng, n, m):
        p = RbmParams.random(n, m, rng)
        pj = joint_distribution(p).values
        r = rng.dirichlet(np.ones(n + m))
        T = exact_kernel(p, r)
        assert np.abs(T.step(pj) - pj).max() < 1e-12

    def test_rows_stochastic(self, rng):
        T = exact_kernel(RbmParams.random(3, 2, rng))
        assert np.abs(T.matrix.sum(axis=1) - 1).max() < 1e-12
        assert T.matrix.min() >= 0

    def test_hamming_structure(self, rng):
        T = exact_kernel(RbmParams.random(2, 2, rng)).matrix
        idx = np.arange(16)
        dist = popcount(idx[:, None] ^ idx[None, :])
        assert np.all(T[dist > 1] == 0)

    def test_symmetric_case_uniform(self):
        T = exact_kernel(RbmParams.zeros(2, 2))
        np.testing.assert_allclose(T.stationary(), 1 / 16, atol=1e-12)

    @pytest.mark.parametrize("n,m", [(2, 2), (3, 2), (4, 4)])
    def test_detailed_balance(self, rng, n, m):
        p = RbmParams.random(n, m, rng)
        pj = joint_distribution(p).values
        for K in single_site_kernels(p):
            flow = pj[:, None] * K
            assert np.abs(flow - flow.T).max() < 1e-14

    @pytest.mark.parametrize("n,m", [(2, 2), (3, 3), (4, 4)])
    def test_primitive(self, rng, n, m):
        p = RbmParams.random(n, m, rng)
        T = exact_kernel(p, rng.dirichlet(np.ones(n + m)))
        assert T.power(n + m).min() > 0

    def test_cap(self):
        with pytest.raises(ValueError):
            exact_kernel(RbmParams.zeros(7, 6))

    def test_bad_r(self):
        with pytest.raises(ValueError):
            exact_kernel(RbmParams.zeros(2, 1), [0.5, 0.5, 0.5])

    def test_kernel_validation(self):
        with pytest.raises(ValueError):
            TransitionKernel(np.array([[0.5, 0.4], [0.0, 1.0]]))


class TestChains:
    def test_frozen_rng_point_mass(self, rng):
        p = RbmParams.random(2, 2, rng)
        init = ChainState(np.zeros(2, np.int8), np.zeros(2, np.int8), FrozenRng(0.0))
        emp = empirical_distribution(run_chain(p, init, 50), 2)
        np.testing.assert_array_equal(emp.values, [0, 0, 0, 1])

    def test_visible_limit(self, rng):
        p = RbmParams.random(2, 2, rng)
        exact = visible_marginal(p).values
        runs = []
        for seed in (1, 2):
            init = ChainState.initial(p, make_rng(seed))
            s = run_chain(p, init, 100_000)
            runs.append(s)
            assert total_variation(empirical_distribution(s, 2).values, exact) < 0.02
        assert not np.array_equal(runs[0], runs[1])

    def test_sweeps_validated(self):
        p = RbmParams.zeros(1, 1)
        with pytest.raises(ValueError):
            run_chain(p, ChainState.initial(p, make_rng(0)), 0)

    def test_csv_dump(self, rng, tmp_path):
        p = RbmParams.random(2, 3, rng)
        s = run_chains(p, make_rng(0), 10, chains=2)
        write_samples_csv(s, 2, 3, tmp_path / "s.csv")
        rows = list(csv.reader(open(tmp_path / "s.csv")))
        assert rows[0] == ["x1", "x2", "y1", "y2", "y3"]
        assert len(rows) == 21
