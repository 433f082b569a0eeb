"""Index priors: order statistics, empirical masses and conditional tables."""

import itertools
from fractions import Fraction
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gqsm.core import ActivationCodebook, ParameterError, build_codebook
from gqsm.priors import (batched_marginal_and_conditional, conditional_pmf_table,
                         empirical_pmf, enumerate_position_pmf, marginal_and_conditional,
                         order_statistic_matrix, order_statistic_pmf, prior_matrix)


def test_order_statistic_5_3_examples():
    np.testing.assert_allclose(order_statistic_pmf(5, 3, 1), [0.6, 0.3, 0.1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(order_statistic_pmf(5, 3, 2), [0, 0.3, 0.4, 0.3, 0], atol=1e-15)
    np.testing.assert_allclose(order_statistic_pmf(5, 3, 3), [0, 0, 0.1, 0.3, 0.6], atol=1e-15)


def test_order_statistic_single_active_is_uniform():
    np.testing.assert_allclose(order_statistic_pmf(7, 1, 1), np.full(7, 1 / 7))


@pytest.mark.parametrize("args", [(5, 3, 0), (5, 3, 4), (3, 4, 1)])
def test_order_statistic_rejects_bad_positions(args):
    with pytest.raises(ParameterError):
        order_statistic_pmf(*args)


@settings(max_examples=40, deadline=None)
@given(n_t=st.integers(2, 14), data=st.data())
def test_order_statistic_reflection_and_support(n_t, data):
    p_total = data.draw(st.integers(1, n_t))
    m = order_statistic_matrix(n_t, p_total).masses
    # k_p and n_t + 1 - k_{P+1-p} have the same law
    np.testing.assert_allclose(m, m[::-1, ::-1], atol=1e-12)
    for p in range(1, p_total + 1):
        t = np.arange(1, n_t + 1)
        outside = (t < p) | (t > n_t - (p_total - p))
        assert np.all(m[p - 1][outside] == 0)
    np.testing.assert_allclose(m.sum(axis=1), 1, atol=1e-12)


@pytest.mark.parametrize("n_t,p_total", [(5, 3), (8, 3), (12, 4), (16, 2), (9, 9)])
def test_order_statistic_matches_enumeration_exactly(n_t, p_total):
    counts, total = enumerate_position_pmf(n_t, p_total)
    for p in range(1, p_total + 1):
        for t in range(1, n_t + 1):
            exact = Fraction(math.comb(t - 1, p - 1) * math.comb(n_t - t, p_total - p),
                             math.comb(n_t, p_total))
            assert Fraction(int(counts[p - 1, t - 1]), total) == exact


def test_empirical_pmf_of_truncated_codebook():
    cb = build_codebook(5, 3)
    # first column of the 8 vectors: six 1s and two 2s
    np.testing.assert_allclose(empirical_pmf(cb, 1), [6 / 8, 2 / 8, 0, 0, 0])
    np.testing.assert_allclose(empirical_pmf(cb, 3), [0, 0, 1 / 8, 3 / 8, 4 / 8])
    with pytest.raises(ParameterError):
        empirical_pmf(cb, 4)


def test_empirical_equals_order_statistic_for_full_codebook():
    # C(4,2) = 6 is not a power of two, but C(4,1) and C(8,7) = 8 are.
    cb = build_codebook(8, 7)
    assert cb.q == math.comb(8, 7)
    np.testing.assert_allclose(prior_matrix(cb).masses,
                               prior_matrix(cb, "order_statistic").masses, atol=1e-15)


def test_prior_matrix_rejects_unknown_kind():
    with pytest.raises(ParameterError):
        prior_matrix(build_codebook(5, 3), "flat")


def test_conditional_examples():
    tab = conditional_pmf_table(build_codebook(5, 3))
    # vectors with k_2 = 3: (1,3,4), (1,3,5), (2,3,4), (2,3,5)
    np.testing.assert_allclose(tab.get(2, 3, 1), [0.5, 0.5, 0, 0, 0])
    np.testing.assert_allclose(tab.get(2, 3, 3), [0, 0, 0, 0.5, 0.5])
    # k_1 = 3 never occurs in the truncated codebook
    assert tab.get(1, 3, 2) is None
    assert not tab.valid[0, 2]


def test_conditional_rejects_single_position():
    with pytest.raises(ParameterError):
        conditional_pmf_table(build_codebook(8, 1))


@pytest.mark.parametrize("n_t,p", [(5, 3), (8, 3), (10, 2), (9, 4)])
def test_conditional_invariants(n_t, p):
    cb = build_codebook(n_t, p)
    tab = conditional_pmf_table(cb)
    emp = prior_matrix(cb).masses
    for pc in range(p):
        for tc in range(n_t):
            if not tab.valid[pc, tc]:
                continue
            rows = tab.table[pc, tc]
            np.testing.assert_allclose(rows.sum(axis=1), 1, atol=1e-12)
            for pp in range(p):
                if pp != pc:
                    # no antenna appears twice in one vector
                    assert rows[pp, tc] == 0
    # marginal consistency: sum_t' P(k_p | k_p' = t') P(k_p' = t') = P(k_p)
    for pc in range(p):
        for pp in range(p):
            mixed = np.einsum("t,tn->n", emp[pc], tab.table[pc, :, pp])
            np.testing.assert_allclose(mixed, emp[pp], atol=1e-12)


def test_conditional_matches_brute_force_counts():
    cb = build_codebook(7, 3)
    _, table, valid = marginal_and_conditional(cb.zero_based, cb.n_t)
    vec = cb.zero_based
    for pc, tc, pp in itertools.product(range(3), range(7), range(3)):
        sel = vec[vec[:, pc] == tc]
        if len(sel) == 0:
            assert not valid[pc, tc]
            continue
        expect = np.bincount(sel[:, pp], minlength=7) / len(sel)
        np.testing.assert_allclose(table[pc, tc, pp], expect, atol=1e-15)


def test_batched_weights_match_subset_tables():
    cb = build_codebook(8, 3)
    vec = cb.zero_based
    mask = np.stack([vec[:, 0] == 0, vec[:, 1] == 3])
    marg, table, valid = batched_marginal_and_conditional(vec, 8, mask.astype(float))
    for k in range(2):
        m1, t1, v1 = marginal_and_conditional(vec[mask[k]], 8)
        np.testing.assert_allclose(marg[k], m1)
        np.testing.assert_allclose(table[k], t1)
        np.testing.assert_array_equal(valid[k], v1)


def test_batched_rejects_empty_weights():
    cb = build_codebook(5, 3)
    with pytest.raises(ParameterError):
        batched_marginal_and_conditional(cb.zero_based, 5, np.zeros((1, 8)))


def test_explicit_codebook_fixture_prior():
    cb = ActivationCodebook.from_vectors(4, [[1, 2], [1, 3], [2, 4], [3, 4]])
    np.testing.assert_allclose(prior_matrix(cb).masses,
                               [[0.5, 0.25, 0.25, 0], [0, 0.25, 0.25, 0.5]])


def test_hand_picked_fixture_first_position():
    from gqsm.core import EXAMPLE_CODEBOOK_5_3
    cb = ActivationCodebook.from_vectors(5, EXAMPLE_CODEBOOK_5_3)
    row = prior_matrix(cb).masses[0]
    # k_1 favors 1, then 2, then 3, and never takes 4 or 5
    assert row[0] > row[1] > row[2] > 0
    assert row[3] == row[4] == 0
