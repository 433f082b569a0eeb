"""Prior probability models of the activation indices.

Position ``p`` of an index vector is 1-based in the public functions
(``p = 1 .. P``), matching how the order statistics are usually written.
Mass vectors have length ``n_t``; entry ``t - 1`` is the mass of antenna
``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ParameterError

__all__ = [
    "IndexPmf",
    "ConditionalPmfTable",
    "order_statistic_pmf",
    "order_statistic_matrix",
    "empirical_pmf",
    "prior_matrix",
    "enumerate_position_pmf",
    "conditional_pmf_table",
    "marginal_and_conditional",
    "batched_marginal_and_conditional",
]


@dataclass(frozen=True)
class IndexPmf:
    """``(P, n_t)`` matrix whose row ``p`` is the mass vector of ``k_{p+1}``."""

    masses: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if m.ndim != 2:
            raise ParameterError("masses must be a (P, n_t) matrix")
        if np.any(m < 0) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-12):
            raise ParameterError("each row must be a probability vector")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @property
    def p(self):
        return self.masses.shape[0]

    @property
    def n_t(self):
        return self.masses.shape[1]

    def row(self, p):
        return self.masses[p - 1]


def order_statistic_pmf(n_t, p_total, p):
    """Mass of the ``p``-th smallest entry of a uniform random ``p_total``-subset.

    ``P(k_p = t) = C(t-1, p-1) C(n_t-t, p_total-p) / C(n_t, p_total)``, with
    support ``p <= t <= n_t - (p_total - p)``. Binomials are exact integers;
    only the final ratio is rounded.
    """
    if not 1 <= p <= p_total <= n_t:
        raise ParameterError(f"need 1 <= p <= P <= n_t, got ({n_t}, {p_total}, {p})")
    total = math.comb(n_t, p_total)
    return np.array([math.comb(t - 1, p - 1) * math.comb(n_t - t, p_total - p) / total
                     for t in range(1, n_t + 1)])


def order_statistic_matrix(n_t, p_total):
    return IndexPmf(np.stack([order_statistic_pmf(n_t, p_total, p)
                              for p in range(1, p_total + 1)]))


def enumerate_position_pmf(n_t, p_total):
    """Brute-force position masses over all ``C(n_t, p_total)`` sorted subsets.

    Returned as exact integer counts with the common denominator, so callers
    can compare against closed forms in rational arithmetic.
    """
    import itertools

    counts = np.zeros((p_total, n_t), dtype=np.int64)
    for combo in itertools.combinations(range(n_t), p_total):
        counts[np.arange(p_total), combo] += 1
    return counts, math.comb(n_t, p_total)


def _position_counts(vectors0, n_t):
    q, p = vectors0.shape
    counts = np.zeros((p, n_t))
    for j in range(p):
        counts[j] = np.bincount(vectors0[:, j], minlength=n_t)
    return counts


def empirical_pmf(codebook, p):
    """Relative frequency of each antenna at position ``p`` of the codebook."""
    if not 1 <= p <= codebook.p:
        raise ParameterError(f"position {p} outside 1..{codebook.p}")
    col = codebook.zero_based[:, p - 1]
    return np.bincount(col, minlength=codebook.n_t) / codebook.q


def prior_matrix(codebook, kind="empirical"):
    """Row-stacked priors for all positions of ``codebook``.

    ``kind='empirical'`` is exact for the (possibly truncated) codebook;
    ``kind='order_statistic'`` uses the full-set closed form.
    """
    if kind == "empirical":
        return IndexPmf(_position_counts(codebook.zero_based, codebook.n_t) / codebook.q)
    if kind == "order_statistic":
        return order_statistic_matrix(codebook.n_t, codebook.p)
    raise ParameterError(f"unknown prior kind {kind!r}")


@dataclass(frozen=True)
class ConditionalPmfTable:
    """First-order conditional masses ``P(k_p = t | k_{p'} = t')``.

    ``table[p', t', p]`` (all 0-based) is a length-``n_t`` mass vector.
    ``valid[p', t']`` is False where the conditioning event has zero
    probability; those rows hold the unconditional marginal instead, which
    is the fallback the conditional denoiser uses.
    """

    table: np.ndarray
    valid: np.ndarray
    marginals: np.ndarray

    def get(self, p_cond, t_cond, p):
        """1-based accessor; returns ``None`` for a flagged-empty entry."""
        if not self.valid[p_cond - 1, t_cond - 1]:
            return None
        return self.table[p_cond - 1, t_cond - 1, p - 1]

    @property
    def p(self):
        return self.table.shape[0]

    @property
    def n_t(self):
        return self.table.shape[1]


def marginal_and_conditional(vectors0, n_t, weights=None):
    """Position marginals and first-order conditionals of a set of vectors.

    Parameters
    ----------
    vectors0 : (Q, P) int array, 0-based.
    weights : optional (Q,) nonnegative weights (e.g. a membership mask).

    Returns
    -------
    marginals : (P, n_t)
    table : (P, n_t, P, n_t), rows for zero-probability events replaced by
        the marginal of the target position.
    valid : (P, n_t) bool
    """
    vectors0 = np.asarray(vectors0, dtype=np.int64)
    w = np.ones(vectors0.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    marginals, table, valid = batched_marginal_and_conditional(vectors0, n_t, w[None])
    return marginals[0], table[0], valid[0]


def batched_marginal_and_conditional(vectors0, n_t, weights):
    """:func:`marginal_and_conditional` for a stack of weightings.

    ``weights`` is ``(K, Q)``; every output gains a leading axis of length
    ``K``. Only nonzero weights are visited, so sparse membership masks
    (codebook vectors consistent with a few fixed entries) stay cheap.
    """
    vectors0 = np.asarray(vectors0, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    q, p = vectors0.shape
    k = weights.shape[0]
    totals = weights.sum(axis=1)
    if np.any(totals <= 0):
        raise ParameterError("empty vector set")
    size = (p * n_t) ** 2
    # joint[k, p', t', p, t] = sum_q w[k, q] [v_q[p'] = t'] [v_q[p] = t]
    flat = (np.arange(p) * n_t)[None, :] + vectors0                       # (Q, P)
    codes = (flat[:, :, None] * (p * n_t) + flat[:, None, :]).reshape(q, -1)
    kk, qq = np.nonzero(weights)
    idx = (kk[:, None] * size + codes[qq]).ravel()
    joint = np.bincount(idx, weights=np.repeat(weights[kk, qq], p * p),
                        minlength=k * size).reshape(k, p, n_t, p, n_t)
    marg_counts = np.einsum("katat->kat", joint)
    marginals = marg_counts / totals[:, None, None]
    valid = marg_counts > 0
    denom = np.where(valid, marg_counts, 1.0)[..., None, None]
    table = np.where(valid[..., None, None], joint / denom,
                     marginals[:, None, None, :, :])
    return marginals, table, valid


def conditional_pmf_table(codebook):
    if codebook.p < 2:
        raise ParameterError("conditional priors need P >= 2")
    marginals, table, valid = marginal_and_conditional(codebook.zero_based, codebook.n_t)
    return ConditionalPmfTable(table=table, valid=valid, marginals=marginals)
