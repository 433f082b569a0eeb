"""Enhanced detector: conditional-PMF denoising and greedy successive IC.

The message passing of :mod:`gqsm.uvd` is reused unchanged except for the
denoiser. Inside every iteration each factor node greedily picks its most
confident ``(p, t)`` pair from the normalized posterior masses and
re-denoises the other positions of that rail with the first-order
conditional masses ``P(k_p = t | k_pick = t_pick)``.

With successive IC enabled, the detector runs ``P`` stages. Each stage
ends with a consensus pick per rail; the picked contribution
``s_pick * h_t`` is cancelled from the received vector and that position is
frozen. Priors and conditional tables of later stages are recomputed from
the codebook vectors that agree with every pick so far, so the final sorted
picks always form a duplicate-free codebook vector.

Positions stay in place while they are frozen: a frozen position keeps an
indicator prior at its picked antenna and a zero pilot, so it contributes
nothing to soft IC, variances or beliefs. This keeps every array at a fixed
shape across stages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ParameterError
from .priors import batched_marginal_and_conditional, prior_matrix
from .uvd import (BatchDetection, DetectorParams, _consensus_flops,
                  _iteration_flops, consensus_beliefs, decide_indices,
                  detect_batch, posterior_soft_replica, rail_inputs,
                  run_message_passing)

__all__ = [
    "EnhancedParams",
    "GreedyPick",
    "SicTrace",
    "greedy_index",
    "conditional_denoise",
    "sic_cancel",
    "detect_enhanced_batch",
    "detect_enhanced",
    "batch_traces",
    "write_traces",
]


@dataclass(frozen=True)
class EnhancedParams:
    """Switches of the enhanced detector on top of :class:`DetectorParams`.

    ``pick_scope='node'`` conditions each factor node on its own greedy
    pick; ``'majority'`` uses the most frequent pick over the nodes of the
    frame and rail. ``pick_basis='posterior'`` ranks ``(p, t)`` pairs by
    the prior-weighted normalized posterior; ``'likelihood'`` ranks them by
    the belief exponent ``eta - diag(Lambda)/2`` restricted to the prior
    support. The likelihood basis ignores the prior weights and can lock a
    wrong pick in at high SNR, so it is kept as an option only.
    ``stage_iterations=None`` gives each SIC stage ``ceil(tau_max / P)``
    iterations.
    """

    use_conditional: bool = True
    use_sic: bool = True
    pick_scope: str = "node"
    pick_basis: str = "posterior"
    stage_iterations: int | None = None

    def __post_init__(self):
        if self.pick_basis not in ("posterior", "likelihood"):
            raise ParameterError(f"unknown pick basis {self.pick_basis!r}")
        if self.pick_scope not in ("node", "majority"):
            raise ParameterError(f"unknown pick scope {self.pick_scope!r}")
        if self.stage_iterations is not None and self.stage_iterations < 1:
            raise ParameterError("stage_iterations must be >= 1")


@dataclass(frozen=True)
class GreedyPick:
    rail: int
    p_check: int        # 1-based position
    t_check: int        # 1-based antenna
    belief_mass: float


@dataclass
class SicTrace:
    """Per-frame record of the successive IC stages.

    ``picks[l, r]`` is the 1-based ``(p, t)`` picked on rail ``r`` at stage
    ``l``; ``masses`` the consensus mass of each pick; ``residual_norm[l]``
    the norm of the received vector before stage ``l`` (the last entry is
    after the final stage).
    """

    picks: np.ndarray            # (P, 2, 2)
    masses: np.ndarray           # (P, 2)
    residual_norm: np.ndarray    # (P + 1,)
    forced: np.ndarray           # (P, 2) duplicate fallback used
    k_real: np.ndarray
    k_imag: np.ndarray

    def to_json(self):
        return json.dumps({
            "stages": [
                {"stage": l + 1,
                 "picks": {rail: {"p": int(self.picks[l, r, 0]), "t": int(self.picks[l, r, 1]),
                                  "mass": float(self.masses[l, r]),
                                  "forced": bool(self.forced[l, r])}
                           for r, rail in enumerate(("real", "imag"))},
                 "residual_norm": float(self.residual_norm[l])}
                for l in range(self.picks.shape[0])],
            "final_residual_norm": float(self.residual_norm[-1]),
            "k_real": [int(v) for v in self.k_real],
            "k_imag": [int(v) for v in self.k_imag],
        })


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def _flat_argmax(masses, allowed=None):
    """Argmax over the last two axes ``(p, t)``, ties to smallest p then t."""
    m = np.asarray(masses, dtype=float)
    if allowed is not None:
        m = np.where(allowed, m, -np.inf)
    shape = m.shape
    flat = m.reshape(shape[:-2] + (-1,))
    code = np.argmax(flat, axis=-1)
    best = np.take_along_axis(flat, code[..., None], axis=-1)[..., 0]
    return code // shape[-1], code % shape[-1], best


def greedy_index(masses, rail=0):
    """Most confident ``(p, t)`` of a ``(P, N)`` mass array.

    Ties go to the smallest ``p`` and then the smallest ``t``. Raises
    ``FloatingPointError`` when no entry is positive.
    """
    m = np.asarray(masses, dtype=float)
    if m.ndim != 2:
        raise ParameterError("expected a (P, N) mass array")
    if not np.any(m > 0):
        raise FloatingPointError("greedy pick over all-zero belief masses")
    p, t, best = _flat_argmax(m)
    return GreedyPick(rail=rail, p_check=int(p) + 1, t_check=int(t) + 1,
                      belief_mass=float(best))


def conditional_denoise(eta, diag_lambda, cond_table, pick, p):
    """Posterior replica of position ``p`` (1-based) given a greedy pick.

    Uses ``P(k_p = t | k_pick = t_pick)`` from ``cond_table`` as the prior
    masses; an empty conditioning event falls back to the marginal. For the
    picked position itself the marginal is used.
    """
    if p == pick.p_check:
        masses = cond_table.marginals[p - 1]
    else:
        masses = cond_table.get(pick.p_check, pick.t_check, p)
        if masses is None:
            masses = cond_table.marginals[p - 1]
    out, _ = posterior_soft_replica(eta, diag_lambda, masses)
    return out


def sic_cancel(y, rows, pilot, t_check):
    """Remove ``pilot * h_t`` from ``y``.

    ``rows`` is the ``(..., Nn, N)`` channel of the picked rail, ``t_check``
    the 0-based antenna (scalar or one per leading index).
    """
    rows = np.asarray(rows, dtype=float)
    t = np.asarray(t_check)
    col = np.take_along_axis(rows, np.broadcast_to(t, rows.shape[:-2])[..., None, None],
                             axis=-1)[..., 0]
    return np.asarray(y, dtype=float) - np.asarray(pilot, dtype=float)[..., None] * col


# ---------------------------------------------------------------------------
# Batched detector
# ---------------------------------------------------------------------------

def _node_picks(post, active_pos, scope):
    """Per-node picks ``(p, t)``, each ``(B, 2, Nn)``, from ``(B, 2, P, Nn, N)`` masses."""
    m = np.moveaxis(post, 3, 2)                          # (B, 2, Nn, P, N)
    allowed = active_pos[:, :, None, :, None]
    p, t, _ = _flat_argmax(m, allowed)
    if scope == "node":
        return p, t
    B, _, Nn, P, N = m.shape
    code = (p * N + t).reshape(B * 2, Nn)
    offs = (np.arange(B * 2) * P * N)[:, None]
    counts = np.bincount((code + offs).ravel(), minlength=B * 2 * P * N).reshape(B * 2, P * N)
    best = np.argmax(counts, axis=1).reshape(B, 2, 1)
    best = np.broadcast_to(best, (B, 2, Nn))
    return best // N, best % N


def _likelihood_score(eta, lam, masses):
    score = np.where(masses > 0, eta - 0.5 * lam, -np.inf)
    return np.where(np.isnan(score), -np.inf, score)


class _ConditionalDenoiser:
    """Callback for :func:`run_message_passing` implementing the conditional denoiser."""

    def __init__(self, marginals, tables, active_pos, eparams):
        self.marginals = marginals          # (B, 2, P, N)
        self.tables = tables                # (B, 2, P, N, P, N) or None
        self.active_pos = active_pos        # (B, 2, P) bool
        self.scope = eparams.pick_scope
        self.basis = eparams.pick_basis
        self.use_conditional = eparams.use_conditional

    def __call__(self, eta, lam, prior, frames):
        marg = self.marginals[frames][:, :, :, None, :]
        plain, bad = posterior_soft_replica(eta, lam, marg)
        if not self.use_conditional:
            return plain, np.broadcast_to(marg, plain.shape), bad
        act = self.active_pos[frames]
        score = plain if self.basis == "posterior" else _likelihood_score(eta, lam, marg)
        p_chk, t_chk = _node_picks(score, act, self.scope)           # (b, 2, Nn)
        b = frames.size
        bi = np.arange(b)[:, None, None]
        ri = np.arange(2)[None, :, None]
        # cond[b, r, n, p, :] = table[b, r, p_chk, t_chk, p, :]
        cond = self.tables[frames][bi, ri, p_chk, t_chk]              # (b, 2, Nn, P, N)
        cond = np.moveaxis(cond, 3, 2)                                # (b, 2, P, Nn, N)
        own = np.arange(cond.shape[2])[None, None, :, None] == p_chk[:, :, None, :]
        masses = np.where(own[..., None], marg, cond)
        out, bad2 = posterior_soft_replica(eta, lam, masses)
        return out, masses, bad | bad2


def _restricted_priors(vec0, n_t, mask, need_tables):
    """Marginals and conditional tables of codebook subsets, per (frame, rail)."""
    B = mask.shape[0]
    marg, tab, _ = batched_marginal_and_conditional(vec0, n_t, mask.reshape(B * 2, -1))
    P = vec0.shape[1]
    marg = marg.reshape(B, 2, P, n_t)
    tab = tab.reshape(B, 2, P, n_t, P, n_t) if need_tables else None
    return marg, tab


def _enhanced_iteration_flops(P_act, Nn, N, params, eparams):
    f = _iteration_flops(P_act, Nn, N, params, True)
    if eparams.use_conditional and P_act > 1:
        rpn = 2 * P_act * Nn
        f += rpn * N              # greedy argmax over (p, t)
        f += rpn * N * 8          # second posterior with conditional masses
    return f


def detect_enhanced_batch(y, sys, pilots, codebook, params=DetectorParams(),
                          eparams=EnhancedParams(), n0=None, trace=False):
    """Run the enhanced detector on a batch of frames.

    Returns a :class:`BatchDetection`; with ``trace=True`` its ``extra``
    dict holds the stage picks, masses, residual norms and fallback flags
    (see :class:`SicTrace`, :func:`batch_traces`).
    """
    y = np.asarray(y)
    if np.iscomplexobj(y):
        y = np.concatenate([y.real, y.imag], axis=-1)
    H, s, y = rail_inputs(sys, pilots, y)
    B, Nn = y.shape
    N, P = codebook.n_t, codebook.p
    n0 = sys.n0 if n0 is None else n0
    vec0 = codebook.zero_based

    if P == 1:
        return detect_batch(y, sys, pilots, prior_matrix(codebook), codebook, params, n0=n0)

    use_cond = eparams.use_conditional
    full_marg, full_tab = _restricted_priors(vec0, N, np.ones((1, 2, codebook.q)), use_cond)
    marg = np.broadcast_to(full_marg, (B, 2, P, N))
    tab = np.broadcast_to(full_tab, (B, 2, P, N, P, N)) if use_cond else None

    if not eparams.use_sic:
        den = _ConditionalDenoiser(marg, tab, np.ones((B, 2, P), dtype=bool), eparams)
        prior5 = marg[:, :, :, None, :]
        mp = run_message_passing(y, H, s, prior5, n0, params, denoiser=den)
        _add_denoiser_flops(mp, P, Nn, N, params, eparams)
        eta, lam = consensus_beliefs(mp["ybar"], mp["nu"], H, s)
        cons, _ = posterior_soft_replica(eta, lam, marg)
        k_hat, ranks, dup = decide_indices(cons, codebook)
        bits = np.concatenate([codebook.rank_to_bits(ranks[:, 0]),
                               codebook.rank_to_bits(ranks[:, 1])], axis=-1)
        mp["tally"].add(_consensus_flops(P, Nn, N))
        return BatchDetection(k_hat=k_hat, bits_hat=bits, iterations=mp["iterations"],
                              flops=mp["tally"].counts.copy(), duplicate=dup,
                              converged=mp["converged"], failed=mp["failed"],
                              degenerate=mp["degenerate"])

    stage_iters = eparams.stage_iterations or math.ceil(params.tau_max / P)
    mask = np.ones((B, 2, codebook.q), dtype=bool)
    active_pos = np.ones((B, 2, P), dtype=bool)
    s_cur = s.copy()
    y_cur = y.copy()
    picks = np.zeros((B, P, 2, 2), dtype=np.int64)
    pick_mass = np.zeros((B, P, 2))
    forced = np.zeros((B, P, 2), dtype=bool)
    resid = np.zeros((B, P + 1))
    iters = np.zeros(B, dtype=np.int64)
    flops = np.zeros(B, dtype=np.int64)
    converged = np.ones(B, dtype=bool)
    failed = np.zeros(B, dtype=bool)
    degenerate = np.zeros(B, dtype=bool)
    bi = np.arange(B)

    for lam_stage in range(P):
        if lam_stage > 0:
            marg, tab = _restricted_priors(vec0, N, mask, use_cond)
        resid[:, lam_stage] = np.linalg.norm(y_cur, axis=1)
        den = _ConditionalDenoiser(marg, tab, active_pos, eparams)
        mp = run_message_passing(y_cur, H, s_cur, marg[:, :, :, None, :], n0, params,
                                 iterations=stage_iters, denoiser=den)
        P_act = P - lam_stage
        flops += mp["iterations"] * _enhanced_iteration_flops(P_act, Nn, N, params, eparams)
        flops += 2 * P_act * Nn * 4 * N + _consensus_flops(P_act, Nn, N)
        if lam_stage > 0:
            flops += int(np.count_nonzero(mask) // B) * P * P
        iters += mp["iterations"]
        converged &= mp["converged"]
        failed |= mp["failed"]
        degenerate |= mp["degenerate"]

        eta, lam = consensus_beliefs(mp["ybar"], mp["nu"], H, s_cur)
        cons, bad = posterior_soft_replica(eta, lam, marg)
        cons = np.where(np.isfinite(cons), cons, 0.0)
        degenerate |= np.any(bad.reshape(B, -1), axis=1)
        score = cons if eparams.pick_basis == "posterior" else _likelihood_score(eta, lam, marg)
        # duplicate guard: antennas already picked on a rail are barred
        taken = np.zeros((B, 2, N), dtype=bool)
        for l in range(lam_stage):
            taken[bi[:, None], np.arange(2)[None, :], picks[:, l, :, 1] - 1] = True
        allowed = active_pos[..., None] & ~taken[:, :, None, :]
        supported = allowed & (marg > 0)
        p_raw, t_raw, _ = _flat_argmax(np.where(marg > 0, score, -np.inf),
                                       active_pos[..., None])
        p_c, t_c, _ = _flat_argmax(score, supported)
        best = cons[bi[:, None], np.arange(2)[None, :], p_c, t_c]
        forced[:, lam_stage] = (p_c != p_raw) | (t_c != t_raw)

        picks[:, lam_stage, :, 0] = p_c + 1
        picks[:, lam_stage, :, 1] = t_c + 1
        pick_mass[:, lam_stage] = best
        for r in range(2):
            pil = s_cur[bi, r, p_c[:, r]]
            y_cur = sic_cancel(y_cur, H[:, r], pil, t_c[:, r])
            s_cur[bi, r, p_c[:, r]] = 0.0
            active_pos[bi, r, p_c[:, r]] = False
            mask[:, r] &= vec0[:, p_c[:, r]].T == t_c[:, r, None]
    resid[:, P] = np.linalg.norm(y_cur, axis=1)

    # every rail now has exactly one consistent codebook vector
    ranks = np.argmax(mask, axis=-1)
    k_hat = codebook.index_vectors[ranks]
    bits = np.concatenate([codebook.rank_to_bits(ranks[:, 0]),
                           codebook.rank_to_bits(ranks[:, 1])], axis=-1)
    extra = {}
    if trace:
        extra = {"picks": picks, "masses": pick_mass, "residual_norm": resid,
                 "forced": forced}
    return BatchDetection(k_hat=k_hat, bits_hat=bits, iterations=iters, flops=flops,
                          duplicate=np.zeros(B, dtype=bool), converged=converged,
                          failed=failed, degenerate=degenerate,
                          extra=extra | {"forced_any": np.any(forced, axis=(1, 2))})


def _add_denoiser_flops(mp, P, Nn, N, params, eparams):
    # run_message_passing counted plain iterations; add the denoiser extras
    extra = (_enhanced_iteration_flops(P, Nn, N, params, eparams)
             - _iteration_flops(P, Nn, N, params, True))
    mp["tally"].counts += mp["iterations"] * extra


def batch_traces(result):
    """Split the ``extra`` arrays of a traced batch into :class:`SicTrace` objects."""
    ex = result.extra
    if "picks" not in ex:
        raise ParameterError("detection was run without trace=True")
    return [SicTrace(picks=ex["picks"][i], masses=ex["masses"][i],
                     residual_norm=ex["residual_norm"][i], forced=ex["forced"][i],
                     k_real=result.k_hat[i, 0], k_imag=result.k_hat[i, 1])
            for i in range(len(result))]


def write_traces(result, path):
    """Write one JSON line per frame."""
    with open(path, "w", encoding="utf-8") as fh:
        for tr in batch_traces(result):
            fh.write(tr.to_json() + "\n")


def detect_enhanced(y, sys, pilots, codebook, params=DetectorParams(),
                    eparams=EnhancedParams()):
    """Single frame; returns ``(DetectionResult, SicTrace | None)``."""
    res = detect_enhanced_batch(np.asarray(y)[None], sys, pilots, codebook, params,
                                eparams, trace=eparams.use_sic and codebook.p > 1)
    tr = batch_traces(res)[0] if "picks" in res.extra else None
    return res.frame(0), tr
