"""
Detection cost
==============

Evaluates the closed-form FLOP models, compares them with the FLOPs the
detectors actually count, and filters systems of roughly equal cost.
"""

import numpy as np

from gqsm.baselines import ComplexityModel, complexity_eval
from gqsm.core import build_codebook, iq_decouple, rotated_constellation
from gqsm.priors import prior_matrix
from gqsm.sim import Candidate, equal_complexity_report
from gqsm.uvd import DetectorParams, detect_batch

# %%
# Exhaustive ML grows with C(N_T, P)^2; the message-passing models grow
# polynomially in the antenna counts.
print("n_t    ML(P=3)              UVD(P=3)          E_UVD(P=3)")
for n in (8, 16, 32, 64, 96):
    row = [complexity_eval(m, n, n, 3) for m in
           (ComplexityModel.ML, ComplexityModel.UVD, ComplexityModel.E_UVD)]
    print(f"{n:3d}  {row[0]:20,d} {row[1]:16,d} {row[2]:16,d}")

# %%
# The detector counts its own FLOPs. With the covariances materialized (the
# textbook form), cost per iteration grows about 4x when N_T doubles; the
# default factored evaluation needs only O(N_T) per message and grows about 2x.
rng = np.random.default_rng(0)
for mode in ("materialized", "factored"):
    per_iter = []
    for n_t in (16, 32):
        cb = build_codebook(n_t, 2)
        h = (rng.standard_normal((2, 16, n_t)) + 1j * rng.standard_normal((2, 16, n_t)))
        y = rng.standard_normal((2, 16)) + 1j * rng.standard_normal((2, 16))
        sys_ = iq_decouple(h, 0.1)
        args = (y, sys_, rotated_constellation(4).pilots(2), prior_matrix(cb), cb)
        p5 = DetectorParams(covariance=mode, tau_max=5, eps_th=1e-300)
        p2 = DetectorParams(covariance=mode, tau_max=2, eps_th=1e-300)
        per_iter.append((detect_batch(*args, p5).flops - detect_batch(*args, p2).flops).mean() / 3)
    print(f"{mode:12s} FLOPs/iteration {per_iter[0]:,.0f} -> {per_iter[1]:,.0f} "
          f"(x{per_iter[1] / per_iter[0]:.2f})")

# %%
# Systems of comparable cost: anything within a factor 5 of the budget.
for budget, cands in [
    (2e9, [("ML", 16, 16, 3), ("UVD", 32, 32, 2), ("E_UVD", 32, 32, 2)]),
    (3e10, [("ML", 16, 16, 4), ("E_UVD", 32, 32, 4), ("UVD", 64, 64, 4)]),
]:
    rep = equal_complexity_report(budget, [Candidate(ComplexityModel(m), *a) for m, *a in cands])
    print(f"budget {budget:.0e}:")
    for r in rep["rows"]:
        print(f"  {r['label']:16s} {r['flops']:16,d}  x{r['ratio']:.2f}  "
              f"{'qualifies' if r['qualifies'] else ''}")
