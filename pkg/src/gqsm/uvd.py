"""Gaussian belief propagation over unit-vector-decomposed (UVD) indices.

Each active position of each rail is a one-hot vector over the ``N``
antennas. Messages carry soft replicas of these vectors, so the cost never
depends on the number of activation patterns.

Every array here is batch-first. With ``B`` frames, ``Nn = 2 N_R`` factor
nodes, ``P`` active positions per rail and ``N`` candidate indices:

=============  ==========================  ==================================
name           shape                       meaning
=============  ==========================  ==================================
``y``          ``(B, Nn)``                 IQ-decoupled received vector
``H``          ``(B, 2, Nn, N)``           rail channels ``[H^R, H^I]``
``s``          ``(B, 2, P)``               pilot values per rail
``prior``      ``(B, 2, P, 1|Nn, N)``      prior masses (per node allowed)
``E``          ``(B, 2, P, Nn, N)``        soft replicas of the unit vectors
=============  ==========================  ==================================

Rail 0 is the real (in-phase) rail, rail 1 the imaginary one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ParameterError

__all__ = [
    "DetectorParams",
    "DetectorState",
    "DetectionResult",
    "BatchDetection",
    "FlopTally",
    "covariance_closed_form",
    "covariance_quadratic",
    "init_state",
    "soft_ic",
    "conditional_variances",
    "variances_from_quadratic",
    "extrinsic_beliefs",
    "consensus_beliefs",
    "posterior_soft_replica",
    "damp",
    "decide_indices",
    "consensus_and_decide",
    "run_message_passing",
    "detect_batch",
    "detect",
    "rail_inputs",
]


@dataclass(frozen=True)
class DetectorParams:
    """Message-passing controls.

    ``covariance='materialized'`` builds each ``N x N`` error covariance and
    evaluates its quadratic form, at O(N^2) per (rail, p, n);
    ``'factored'`` (the default) evaluates the same quadratic form from the
    diagonal-plus-rank-two structure of the covariance in O(N). Both give the
    same numbers up to rounding; the FLOP tally reports whichever was run.

    ``covariance_masses`` selects the categorical masses the error
    covariance is taken over: ``'posterior'`` uses the current soft replica
    itself (the belief that produced it), ``'prior'`` keeps the static
    prior masses. They coincide at initialization.
    ``damp_covariance=True`` damps the covariances themselves instead of
    recomputing them from the damped replicas.
    """

    rho: float = 0.5
    tau_max: int = 100
    eps_th: float = 1e-4
    var_floor: float = 1e-12
    covariance: str = "factored"
    covariance_masses: str = "posterior"
    damp_covariance: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError("rho must lie in [0, 1]")
        if self.tau_max < 1:
            raise ParameterError("tau_max must be >= 1")
        if self.eps_th <= 0 or self.var_floor <= 0:
            raise ParameterError("eps_th and var_floor must be positive")
        if self.covariance not in ("materialized", "factored"):
            raise ParameterError(f"unknown covariance mode {self.covariance!r}")
        if self.covariance_masses not in ("posterior", "prior"):
            raise ParameterError(f"unknown covariance masses {self.covariance_masses!r}")


class FlopTally:
    """Per-frame FLOP accumulator; one FLOP per real add/mul/div/exp/compare."""

    def __init__(self, batch):
        self.counts = np.zeros(batch, dtype=np.int64)

    def add(self, count, frames=None):
        if frames is None:
            self.counts += int(count)
        else:
            self.counts[frames] += int(count)


@dataclass
class DetectorState:
    replicas: np.ndarray
    prior: np.ndarray
    cov: np.ndarray
    iteration: int = 0
    flops: FlopTally = None


@dataclass
class DetectionResult:
    k_real_hat: np.ndarray
    k_imag_hat: np.ndarray
    bits_hat: np.ndarray
    iterations_used: int
    flops: int
    duplicate: bool
    converged: bool
    failed: bool = False
    degenerate: bool = False


@dataclass
class BatchDetection:
    """Stacked per-frame outcomes; index vectors are 1-based and sorted."""

    k_hat: np.ndarray            # (B, 2, P)
    bits_hat: np.ndarray         # (B, 2 * bits_per_rail)
    iterations: np.ndarray       # (B,)
    flops: np.ndarray            # (B,)
    duplicate: np.ndarray        # (B,)
    converged: np.ndarray        # (B,)
    failed: np.ndarray           # (B,)
    degenerate: np.ndarray       # (B,)
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.k_hat.shape[0]

    def frame(self, i):
        return DetectionResult(
            k_real_hat=self.k_hat[i, 0], k_imag_hat=self.k_hat[i, 1],
            bits_hat=self.bits_hat[i], iterations_used=int(self.iterations[i]),
            flops=int(self.flops[i]), duplicate=bool(self.duplicate[i]),
            converged=bool(self.converged[i]), failed=bool(self.failed[i]),
            degenerate=bool(self.degenerate[i]))


# ---------------------------------------------------------------------------
# Message-passing building blocks
# ---------------------------------------------------------------------------

def covariance_closed_form(replica, r_p):
    """``diag(r) + e e^T - (e r^T + r e^T)``; broadcasts over leading axes."""
    e = np.asarray(replica, dtype=float)
    r = np.asarray(r_p, dtype=float)
    e, r = np.broadcast_arrays(e, r)
    er = e[..., :, None] * r[..., None, :]
    gamma = e[..., :, None] * e[..., None, :] - er - np.swapaxes(er, -1, -2)
    idx = np.arange(e.shape[-1])
    gamma[..., idx, idx] += r
    return gamma


def _quad_from_gamma(H, gamma):
    """``h_n^T Gamma_{p:n} h_n`` for every (rail, p, n)."""
    gh = np.matmul(gamma, H[:, :, None, :, :, None])[..., 0]
    return np.sum(gh * H[:, :, None], axis=-1)


def covariance_quadratic(H, E, masses, proj=None):
    """Quadratic forms ``h^T Gamma h`` without forming ``Gamma``.

    Uses ``h^T Gamma h = sum_t r_t h_t^2 + (h.e)^2 - 2 (h.e)(h.r)`` with
    ``r`` the covariance masses.
    """
    if proj is None:
        proj = np.sum(H[:, :, None] * E, axis=-1)
    hr2 = np.sum(masses * (H * H)[:, :, None], axis=-1)
    hr = np.sum(masses * H[:, :, None], axis=-1)
    return hr2 + proj * proj - 2.0 * proj * hr


def _projections(H, E):
    # h_n^T e_{p:n}
    return np.sum(H[:, :, None] * E, axis=-1)


def soft_ic(y, H, s, E, proj=None):
    """Soft interference cancellation: one scalar per (rail, p, n).

    For position ``p`` on a rail, subtract the soft contribution of every
    other position on that rail and of all positions on the other rail.
    """
    if proj is None:
        proj = _projections(H, E)
    contrib = s[..., None] * proj                      # (B, 2, P, Nn)
    total = contrib.sum(axis=(1, 2))                   # (B, Nn)
    return y[:, None, None, :] - total[:, None, None, :] + contrib


def variances_from_quadratic(s, quad, n0, var_floor=1e-12):
    weighted = (s * s)[..., None] * quad               # (B, 2, P, Nn)
    nu_total = weighted.sum(axis=(1, 2))
    n0 = np.asarray(n0, dtype=float).reshape(-1, 1, 1, 1)
    nu = nu_total[:, None, None, :] - weighted + n0 / 2.0
    return np.maximum(nu, var_floor)


def conditional_variances(H, s, gamma, n0, var_floor=1e-12):
    """Residual interference-plus-noise variance seen by each (rail, p, n).

    ``gamma`` holds the ``(B, 2, P, Nn, N, N)`` error covariances.
    """
    return variances_from_quadratic(s, _quad_from_gamma(H, gamma), n0, var_floor)


def extrinsic_beliefs(ybar, nu, H, s):
    """Information vectors and precision diagonals excluding the own node.

    Returns two ``(B, 2, P, Nn, N)`` arrays. The sum over ``n' != n`` is
    formed as the full sum minus the own term.
    """
    a = ybar / nu
    inv = 1.0 / nu
    H2 = H * H
    full_eta = np.matmul(a, H)                          # (B, 2, P, N)
    full_lam = np.matmul(inv, H2)
    eta = s[..., None, None] * (full_eta[:, :, :, None, :] - a[..., None] * H[:, :, None])
    lam = (s * s)[..., None, None] * (full_lam[:, :, :, None, :] - inv[..., None] * H2[:, :, None])
    return eta, lam


def consensus_beliefs(ybar, nu, H, s):
    """Information vectors and precision diagonals over all nodes."""
    eta = s[..., None] * np.matmul(ybar / nu, H)
    lam = (s * s)[..., None] * np.matmul(1.0 / nu, H * H)
    return eta, lam


def posterior_soft_replica(eta, diag_lambda, r_p):
    """Posterior mean of a unit-vector variable under a categorical prior.

    The exponent is shifted by its maximum over the prior's support before
    exponentiation; the shift cancels in the ratio. Returns the replica and
    a boolean mask marking entries where the prior had to be returned
    (no finite belief mass on the prior support).
    """
    eta, diag_lambda, r_p = np.broadcast_arrays(
        np.asarray(eta, dtype=float), np.asarray(diag_lambda, dtype=float),
        np.asarray(r_p, dtype=float))
    support = r_p > 0
    expo = eta - 0.5 * diag_lambda
    shift = np.max(np.where(support, expo, -np.inf), axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", over="ignore"):
        z = np.exp(np.where(support, expo - shift, -np.inf))
        num = r_p * z
        den = num.sum(axis=-1, keepdims=True)
        out = num / den
    bad = ~(np.isfinite(den[..., 0]) & (den[..., 0] > 0))
    if np.any(bad):
        out = np.where(bad[..., None], r_p, out)
    return out, bad


def damp(new, old, rho):
    return rho * old + (1.0 - rho) * new


# ---------------------------------------------------------------------------
# FLOP model of one iteration, per frame
# ---------------------------------------------------------------------------

def _iteration_flops(P, Nn, N, params, per_node_prior):
    rpn = 2 * P * Nn
    f = rpn * 2 * N                  # projections h.e
    f += rpn * 4                     # soft-IC: contrib, total, two subtractions
    if params.covariance == "materialized":
        f += rpn * (4 * N * N + N)   # Gamma via closed form
        f += rpn * (2 * N * N + 2 * N)   # h^T Gamma h
    else:
        varying = params.covariance_masses == "posterior" or per_node_prior
        f += rpn * (4 * N if varying else 0) + rpn * 5
    f += 2 * P + rpn * 4             # variances
    f += rpn * 2 + 2 * P * 2 * N * Nn + rpn * 3 * N     # eta
    f += rpn + 2 * Nn * N + 2 * P * 2 * N * Nn + rpn * 3 * N   # diag Lambda
    f += rpn * N * 8                 # exponent, shift, exp, weight, normalize
    f += rpn * N * 5                 # damping and convergence check
    return f


def _setup_flops(P, Nn, N, params, per_node_prior):
    rpn = 2 * P * Nn
    if params.covariance == "materialized":
        return rpn * (4 * N * N + N)
    return rpn * 4 * N


def _consensus_flops(P, Nn, N):
    return 2 * P * (2 * Nn + 2 * Nn * N) * 2 + 2 * P * N * 9


# ---------------------------------------------------------------------------
# Iteration driver
# ---------------------------------------------------------------------------

def _cov_masses(params, replicas, prior):
    return replicas if params.covariance_masses == "posterior" else prior


def init_state(prior, n_nodes, params=DetectorParams(), H=None, init_replicas=None):
    """Replicas start at the prior (or a supplied override), covariances follow.

    ``prior`` is ``(B, 2, P, 1|Nn, N)``. In factored mode the state keeps
    the quadratic forms ``h^T Gamma h`` instead of the matrices, which needs
    ``H``.
    """
    prior = np.asarray(prior, dtype=float)
    B, _, P, _, N = prior.shape
    if init_replicas is None:
        E = np.broadcast_to(prior, (B, 2, P, n_nodes, N)).copy()
    else:
        E = np.broadcast_to(init_replicas, (B, 2, P, n_nodes, N)).astype(float)
    masses = _cov_masses(params, E, prior)
    if params.covariance == "materialized":
        cov = covariance_closed_form(E, masses)
    elif H is not None:
        cov = covariance_quadratic(H, E, masses)
    else:
        cov = None
    return DetectorState(replicas=E, prior=prior, cov=cov, iteration=0,
                         flops=FlopTally(B))


def _take(a, idx):
    return a if idx is None else a[idx]


def run_message_passing(y, H, s, prior, n0, params, iterations=None,
                        init_replicas=None, denoiser=None):
    """Iterate soft-IC, variances, extrinsic beliefs, denoising and damping.

    ``denoiser(eta, lam, prior, frames)``, when given, replaces the plain
    posterior and must return ``(replicas, effective_prior, degenerate)``,
    where ``frames`` are the batch indices still iterating.

    Frames stop individually once their largest replica change drops below
    ``eps_th`` or a non-finite value appears. Returns a dict with the final
    replicas and priors, the soft-IC outputs and variances of each frame's
    last iteration (what the consensus needs), iteration counts, flags and
    the FLOP tally.
    """
    y = np.asarray(y, dtype=float)
    H = np.asarray(H, dtype=float)
    s = np.asarray(s, dtype=float)
    prior = np.asarray(prior, dtype=float)
    B, _, P, _, N = prior.shape
    Nn = y.shape[-1]
    n0 = np.broadcast_to(np.asarray(n0, dtype=float), (B,)).copy()
    tau_max = params.tau_max if iterations is None else iterations
    per_node = prior.shape[3] != 1 or denoiser is not None

    state = init_state(prior, Nn, params, H=H, init_replicas=init_replicas)
    tally = state.flops
    tally.add(_setup_flops(P, Nn, N, params, per_node))
    E, cov = state.replicas, state.cov
    cur_prior = np.broadcast_to(prior, (B, 2, P, Nn, N)).copy() if per_node else prior

    ybar_last = np.zeros((B, 2, P, Nn))
    nu_last = np.ones((B, 2, P, Nn))
    iters = np.zeros(B, dtype=np.int64)
    converged = np.zeros(B, dtype=bool)
    failed = np.zeros(B, dtype=bool)
    degenerate = np.zeros(B, dtype=bool)
    active = np.arange(B)
    it_cost = _iteration_flops(P, Nn, N, params, per_node)
    materialized = params.covariance == "materialized"

    for _ in range(tau_max):
        if active.size == 0:
            break
        idx = None if active.size == B else active
        Ea, Ha, sa, pa = _take(E, idx), _take(H, idx), _take(s, idx), _take(cur_prior, idx)
        cov_a = _take(cov, idx)

        proj = _projections(Ha, Ea)
        ybar = soft_ic(_take(y, idx), Ha, sa, Ea, proj=proj)
        quad = _quad_from_gamma(Ha, cov_a) if materialized else cov_a
        nu = variances_from_quadratic(sa, quad, _take(n0, idx), params.var_floor)
        eta, lam = extrinsic_beliefs(ybar, nu, Ha, sa)
        if denoiser is None:
            E_new, bad = posterior_soft_replica(eta, lam, pa)
            new_prior = pa
        else:
            E_new, new_prior, bad = denoiser(eta, lam, pa, active)
        E_damped = damp(E_new, Ea, params.rho)

        if params.damp_covariance:
            fresh = _cov_masses(params, E_new, new_prior)
            cov_new = (covariance_closed_form(E_new, fresh) if materialized
                       else covariance_quadratic(Ha, E_new, fresh))
            cov_new = damp(cov_new, cov_a, params.rho)
        else:
            masses = _cov_masses(params, E_damped, new_prior)
            cov_new = (covariance_closed_form(E_damped, masses) if materialized
                       else covariance_quadratic(Ha, E_damped, masses))

        finite = (np.all(np.isfinite(E_damped), axis=(1, 2, 3, 4))
                  & np.all(np.isfinite(nu), axis=(1, 2, 3))
                  & np.all(np.isfinite(ybar), axis=(1, 2, 3)))
        delta = np.max(np.abs(E_damped - Ea), axis=(1, 2, 3, 4))

        tally.add(it_cost, active)
        iters[active] += 1
        degenerate[active] |= np.any(bad.reshape(bad.shape[0], -1), axis=1)
        # a failing frame keeps the soft-IC outputs of its last finite iteration
        ybar_last[active[finite]] = ybar[finite]
        nu_last[active[finite]] = nu[finite]
        keep = finite[:, None, None, None, None]
        E[active] = np.where(keep, E_damped, Ea)
        cov[active] = np.where(finite.reshape((-1,) + (1,) * (cov_new.ndim - 1)),
                               cov_new, cov_a)
        if per_node:
            cur_prior[active] = new_prior

        failed[active[~finite]] = True
        done = (delta < params.eps_th) & finite
        converged[active[done]] = True
        active = active[finite & ~done]

    return {
        "replicas": E, "prior": cur_prior, "ybar": ybar_last, "nu": nu_last,
        "iterations": iters, "converged": converged, "failed": failed,
        "degenerate": degenerate, "tally": tally,
    }


# ---------------------------------------------------------------------------
# Decisions
# ---------------------------------------------------------------------------

def decide_indices(consensus, codebook):
    """Hard decisions from consensus replicas ``(B, 2, P, N)``.

    Each position takes its argmax (lowest index on ties). The decided
    indices of a rail are sorted and looked up in the codebook; a vector
    with repeats or outside the codebook is replaced by the codebook vector
    of largest summed consensus mass.

    Returns ``(k_hat (B,2,P) 1-based, ranks (B,2), duplicate (B,))``.
    """
    t_hat = np.argmax(consensus, axis=-1)                # (B, 2, P), 0-based
    srt = np.sort(t_hat, axis=-1)
    dup_rail = np.any(np.diff(srt, axis=-1) == 0, axis=-1) if srt.shape[-1] > 1 \
        else np.zeros(srt.shape[:2], dtype=bool)
    k_hat = srt + 1
    ranks = codebook.lookup(k_hat)
    missing = ranks < 0
    if np.any(missing):
        vec0 = codebook.zero_based                       # (Q, P)
        bi, ri = np.nonzero(missing)
        cons = consensus[bi, ri]                         # (M, P, N)
        P = vec0.shape[1]
        score = np.zeros((bi.size, codebook.q))
        for p in range(P):
            score += cons[:, p, :][:, vec0[:, p]]
        best = np.argmax(score, axis=1)
        ranks[bi, ri] = best
        k_hat[bi, ri] = codebook.index_vectors[best]
    return k_hat, ranks, np.any(dup_rail, axis=1)


def consensus_and_decide(mp, H, s, prior, codebook):
    """Belief consensus over all nodes followed by hard decisions."""
    eta, lam = consensus_beliefs(mp["ybar"], mp["nu"], H, s)
    r = prior[:, :, :, 0, :] if prior.ndim == 5 else prior
    cons, _ = posterior_soft_replica(eta, lam, r)
    k_hat, ranks, dup = decide_indices(cons, codebook)
    bits = np.concatenate([codebook.rank_to_bits(ranks[:, 0]),
                           codebook.rank_to_bits(ranks[:, 1])], axis=-1)
    return k_hat, bits, dup, cons


def rail_inputs(sys, pilots, y=None):
    """Batch-first rail arrays from a (possibly batched) ``RealSystem``."""
    H = sys.rails()
    if H.ndim == 3:
        H = H[None]
    pilots = np.asarray(pilots, dtype=complex)
    s = np.stack([pilots.real, pilots.imag], axis=-2)
    if s.ndim == 2:
        s = np.broadcast_to(s, (H.shape[0],) + s.shape)
    out = [H, np.ascontiguousarray(s)]
    if y is not None:
        y = np.asarray(y, dtype=float)
        out.append(y[None] if y.ndim == 1 else y)
    return out


def _prior_array(prior, B):
    m = prior.masses if hasattr(prior, "masses") else np.asarray(prior, dtype=float)
    if m.ndim == 2:                     # (P, N) shared by both rails
        m = np.broadcast_to(m, (B, 2) + m.shape)
    elif m.ndim == 3:                   # (2, P, N)
        m = np.broadcast_to(m, (B,) + m.shape)
    return m[:, :, :, None, :]


def detect_batch(y, sys, pilots, prior, codebook, params=DetectorParams(),
                 init_replicas=None, n0=None):
    """Run the baseline detector on a batch of frames.

    ``y`` is the IQ-decoupled ``(B, 2N_R)`` received array (or a complex
    ``(B, N_R)`` one), ``sys`` a batched ``RealSystem``.
    """
    y = np.asarray(y)
    if np.iscomplexobj(y):
        y = np.concatenate([y.real, y.imag], axis=-1)
    H, s, y = rail_inputs(sys, pilots, y)
    B = y.shape[0]
    pr = _prior_array(prior, B)
    n0 = sys.n0 if n0 is None else n0
    mp = run_message_passing(y, H, s, pr, n0, params, init_replicas=init_replicas)
    k_hat, bits, dup, _ = consensus_and_decide(mp, H, s, pr, codebook)
    P, Nn, N = pr.shape[2], y.shape[1], pr.shape[4]
    mp["tally"].add(_consensus_flops(P, Nn, N))
    return BatchDetection(
        k_hat=k_hat, bits_hat=bits, iterations=mp["iterations"],
        flops=mp["tally"].counts.copy(), duplicate=dup, converged=mp["converged"],
        failed=mp["failed"], degenerate=mp["degenerate"])


def detect(y, sys, pilots, prior, codebook, params=DetectorParams()):
    """Single-frame convenience wrapper around :func:`detect_batch`."""
    return detect_batch(np.asarray(y)[None], sys, pilots, prior, codebook, params).frame(0)
