"""
Building a GQSM frame by hand
=============================

Walks through the transmitter: the activation codebook, the index priors
the receiver will use, the rotated constellation that supplies the pilots,
and the real-valued (IQ-decoupled) channel the detectors work on.
"""

# %%
# The codebook keeps the lexicographically first 2^floor(log2 C(N_T, P))
# sorted index vectors. With 5 antennas and 3 active ones there are 10
# subsets, of which 8 are kept, so each rail carries 3 bits.
import numpy as np

from gqsm.core import build_codebook, iq_decouple, modulate, rotated_constellation
from gqsm.priors import conditional_pmf_table, prior_matrix

cb = build_codebook(5, 3)
for rank, vec in enumerate(cb.index_vectors):
    print(rank, cb.rank_to_bits(rank), vec)

# %%
# Because the codebook is truncated, the empirical position masses differ
# from the closed-form order statistics of a uniform 3-subset.
print("empirical\n", prior_matrix(cb).masses)
print("order statistics\n", prior_matrix(cb, "order_statistic").masses)

# Conditioning on one position sharpens the others: if k_2 = 3, then k_1 is
# 1 or 2 with equal odds.
print("P(k_1 | k_2 = 3) =", conditional_pmf_table(cb).get(2, 3, 1))

# %%
# Pilots are the first P points of the QAM constellation rotated so that its
# real and imaginary projections are both well separated.
const = rotated_constellation(4)
print(f"theta = {const.theta:.4f} rad")
pilots = const.pilots(3)
print("pilots", np.round(pilots, 3))

# %%
# Six bits: the first three pick the real-rail vector, the last three the
# imaginary-rail vector. Pilot p puts its real part on antenna k_real[p] and
# its imaginary part on antenna k_imag[p].
frame = modulate(np.array([0, 1, 1, 1, 1, 0], dtype=np.uint8), cb, pilots)
print("k_real", frame.k_real, "k_imag", frame.k_imag)
print("x", np.round(frame.x, 3))

# %%
# The receiver stacks real and imaginary parts, giving two real "rails"
# that each see one real-valued sparse vector.
rng = np.random.default_rng(0)
h = (rng.standard_normal((4, 5)) + 1j * rng.standard_normal((4, 5))) / np.sqrt(2)
sys_ = iq_decouple(h, n0=0.0)
y = h @ frame.x
y_real = sys_.h_real_block @ frame.x.real + sys_.h_imag_block @ frame.x.imag
print("max |[Re y; Im y] - rails| =", np.max(np.abs(np.concatenate([y.real, y.imag]) - y_real)))
