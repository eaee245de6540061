import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbmlab.statespace import (
    CoefficientVector,
    StateSpace,
    all_states,
    character_matrix,
    eval_polynomial,
    from_characters,
    from_monomials,
    hamming_neighbors,
    index_of,
    indices_of,
    monomial_matrix,
    neighbor_indices,
    state_of,
    subset_mask,
    to_characters,
    to_monomials,
)


class TestIndexing:
    def test_zero_state(self):
        assert index_of([0, 0, 0]) == 0

    def test_first_variable_is_high_bit(self):
        assert index_of([1, 0, 0], 3) == 4

    def test_all_ones(self):
        np.testing.assert_array_equal(state_of(7, 3), [1, 1, 1])

    @given(st.integers(min_value=1, max_value=12), st.data())
    def test_round_trip(self, n, data):
        i = data.draw(st.integers(min_value=0, max_value=(1 << n) - 1))
        assert index_of(state_of(i, n), n) == i

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            index_of([0, 1], 3)

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            state_of(8, 3)

    def test_non_binary(self):
        with pytest.raises(ValueError):
            index_of([0, 2])

    def test_all_states_order(self):
        S = all_states(4)
        assert S.shape == (16, 4)
        np.testing.assert_array_equal(indices_of(S), np.arange(16))

    def test_state_space(self):
        sp = StateSpace(3)
        assert sp.size == 8
        assert sp.index_of(sp.state_of(5)) == 5


class TestNeighbors:
    def test_two_bits(self):
        got = {tuple(v) for v in hamming_neighbors([0, 0])}
        assert got == {(1, 0), (0, 1)}

    def test_cardinality(self):
        assert len(hamming_neighbors([1, 0, 1, 1, 0])) == 5

    def test_all_ones(self):
        got = {tuple(v) for v in hamming_neighbors([1, 1, 1])}
        assert got == {(0, 1, 1), (1, 0, 1), (1, 1, 0)}

    def test_indices_match_states(self):
        for i in range(8):
            want = sorted(index_of(v) for v in hamming_neighbors(state_of(i, 3)))
            assert sorted(neighbor_indices(i, 3)) == want


class TestCharacters:
    def test_constant(self):
        J = to_characters(np.ones(8))
        assert J[()] == pytest.approx(1.0)
        assert np.allclose(J.values[1:], 0.0)

    def test_single_character(self):
        sigma = character_matrix(3, [subset_mask((0, 1), 3)])[0]
        J = to_characters(sigma)
        assert J[(0, 1)] == pytest.approx(1.0)
        others = np.delete(J.values, subset_mask((0, 1), 3))
        assert np.allclose(others, 0.0, atol=1e-15)

    def test_round_trip(self, rng):
        l = rng.standard_normal(16)
        assert np.abs(from_characters(to_characters(l)) - l).max() < 1e-12

    def test_matches_matrix_definition(self, rng):
        n = 4
        l = rng.standard_normal(1 << n)
        direct = character_matrix(n) @ l / (1 << n)
        np.testing.assert_allclose(to_characters(l).values, direct, atol=1e-13)

    @pytest.mark.parametrize("n", range(1, 7))
    def test_orthogonality(self, n):
        C = character_matrix(n)
        np.testing.assert_array_equal(C @ C.T, (1 << n) * np.eye(1 << n))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            to_characters(np.ones(6))
        with pytest.raises(ValueError):
            to_characters(np.ones(8), n=2)


class TestMonomials:
    def test_constant(self):
        K = to_monomials(np.full(8, 2.5))
        assert K[()] == pytest.approx(2.5)
        assert np.allclose(K.values[1:], 0.0)

    def test_product(self):
        X = all_states(2)
        K = to_monomials(X[:, 0] * X[:, 1])
        np.testing.assert_allclose(K.values, [0, 0, 0, 1])
        assert K[(0, 1)] == 1.0

    def test_exhaustive_evaluation(self, rng):
        l = rng.standard_normal(32)
        K = to_monomials(l)
        err = max(abs(eval_polynomial(K, x) - l[i]) for i, x in enumerate(all_states(5)))
        assert err < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2**32 - 1))
    def test_transforms_invert(self, n, seed):
        l = np.random.default_rng(seed).standard_normal(1 << n)
        assert np.abs(from_monomials(to_monomials(l)) - l).max() < 1e-12
        assert np.abs(from_characters(to_characters(l)) - l).max() < 1e-12

    def test_bad_basis(self):
        with pytest.raises(ValueError):
            CoefficientVector(2, "fourier", np.zeros(4))


def _closed_collections(n):
    yield [()]
    yield [(i,) for i in range(n)]
    yield [s for r in range(3) for s in itertools.combinations(range(n), r)]
    yield [(), (0,), (1,), (0, 1)]


@pytest.mark.parametrize("n", [3, 4])
def test_bases_span_same_hierarchical_subspace(n):
    for coll in _closed_collections(n):
        masks = sorted({subset_mask(s, n) for s in coll} | {0})
        P = monomial_matrix(n, masks)
        C = character_matrix(n, masks)
        both = np.vstack([P, C])
        r = np.linalg.matrix_rank(P)
        assert r == np.linalg.matrix_rank(C) == np.linalg.matrix_rank(both)


def test_large_n_transform_is_fast(rng):
    l = rng.standard_normal(1 << 20)
    assert np.abs(from_characters(to_characters(l)) - l).max() < 1e-9
