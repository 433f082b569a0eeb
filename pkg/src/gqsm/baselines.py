"""Reference detectors and closed-form complexity models.

* :func:`ml_detect` exhaustively searches all ``Q^2`` index-vector pairs with
  known pilots.
* :func:`mfb_detect` is the genie-aided bound: the message-passing detector
  started from indicator replicas at the true indices.
* :func:`mux_linear_gabp_detect` detects a dense spatially multiplexed QAM
  vector with scalar Gaussian belief propagation; it is the rate- and
  power-matched conventional system used for comparison.
* :func:`complexity_eval` evaluates the FLOP formulas of the four decoders
  in exact integer arithmetic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import ParameterError, bits_per_channel_use, qam_points
from .uvd import BatchDetection, DetectorParams, detect_batch, rail_inputs

__all__ = [
    "ML_BUDGET",
    "ml_detect",
    "ml_detect_batch",
    "mfb_detect",
    "mfb_detect_batch",
    "MuxConfig",
    "MuxParams",
    "mux_modulate",
    "mux_bits",
    "mux_linear_gabp_detect",
    "ComplexityModel",
    "complexity_eval",
]

# Largest number of candidate pairs the exhaustive search accepts per frame.
ML_BUDGET = 10 ** 7


# ---------------------------------------------------------------------------
# Maximum likelihood
# ---------------------------------------------------------------------------

def _ml_chunk(y, H, s, vec0):
    # u[b, r, q, n]: noiseless contribution of codebook vector q on rail r
    u = np.einsum("brnqp,brp->brqn", H[:, :, :, vec0], s)
    d = y[:, None, :] - u[:, 0]                       # residual after the real rail
    metric = (np.sum(d * d, axis=-1)[:, :, None]
              + np.sum(u[:, 1] ** 2, axis=-1)[:, None, :]
              - 2.0 * np.matmul(d, np.swapaxes(u[:, 1], -1, -2)))
    flat = metric.reshape(len(y), -1).argmin(axis=1)
    q = vec0.shape[0]
    return flat // q, flat % q


def ml_detect_batch(y, sys, pilots, codebook, chunk_pairs=2 * 10 ** 7):
    """Exhaustive search over all codebook pairs for a batch of frames.

    Evaluates ``||y - H^R s^R e_{k^R} - H^I s^I e_{k^I}||^2`` for every pair
    through the expansion ``||d||^2 + ||u^I||^2 - 2 d.u^I`` with ``d`` the
    residual after the real rail. Ties resolve to the lexicographically
    smallest ``(k^R, k^I)``, i.e. the smallest ranks. FLOPs are reported per
    the brute-force formula; ``extra['evaluations']`` counts the metric
    evaluations (``Q**2`` per frame).
    """
    q = codebook.q
    if q * q > ML_BUDGET:
        raise ParameterError(
            f"ML search over {q * q} pairs exceeds the budget of {ML_BUDGET}; "
            "use the message-passing detector instead")
    y = np.asarray(y)
    if np.iscomplexobj(y):
        y = np.concatenate([y.real, y.imag], axis=-1)
    H, s, y = rail_inputs(sys, pilots, y)
    B = y.shape[0]
    step = max(1, chunk_pairs // (q * q))
    rr = np.empty(B, dtype=np.int64)
    ri = np.empty(B, dtype=np.int64)
    vec0 = codebook.zero_based
    for lo in range(0, B, step):
        hi = min(B, lo + step)
        rr[lo:hi], ri[lo:hi] = _ml_chunk(y[lo:hi], H[lo:hi], s[lo:hi], vec0)
    ranks = np.stack([rr, ri], axis=1)
    bits = np.concatenate([codebook.rank_to_bits(rr), codebook.rank_to_bits(ri)], axis=-1)
    n_r = y.shape[1] // 2
    flops = q * q * (8 * n_r * codebook.n_t + 4 * n_r)
    zeros = np.zeros(B, dtype=bool)
    return BatchDetection(
        k_hat=codebook.index_vectors[ranks], bits_hat=bits,
        iterations=np.zeros(B, dtype=np.int64), flops=np.full(B, flops, dtype=np.int64),
        duplicate=zeros, converged=~zeros, failed=zeros.copy(), degenerate=zeros.copy(),
        extra={"evaluations": np.full(B, q * q, dtype=np.int64)})


def ml_detect(y, sys, pilots, codebook):
    return ml_detect_batch(np.asarray(y)[None], sys, pilots, codebook).frame(0)


# ---------------------------------------------------------------------------
# Matched-filter bound
# ---------------------------------------------------------------------------

def _indicator_replicas(k_real, k_imag, n_t):
    k = np.stack([np.asarray(k_real), np.asarray(k_imag)], axis=-2)   # (B, 2, P)
    if k.ndim == 2:
        k = k[None]
    e = np.zeros(k.shape + (n_t,))
    np.put_along_axis(e, (k - 1)[..., None], 1.0, axis=-1)
    return e[:, :, :, None, :]


def mfb_detect_batch(y, sys, pilots, prior, codebook, k_real, k_imag,
                     params=DetectorParams()):
    """Message passing started from indicator replicas at the true indices."""
    init = _indicator_replicas(k_real, k_imag, codebook.n_t)
    return detect_batch(y, sys, pilots, prior, codebook, params, init_replicas=init)


def mfb_detect(y, sys, pilots, prior, codebook, truth, params=DetectorParams()):
    """Single frame; ``truth`` is the pair ``(k_real, k_imag)`` of 1-based vectors."""
    k_real, k_imag = truth
    return mfb_detect_batch(np.asarray(y)[None], sys, pilots, prior, codebook,
                            np.asarray(k_real)[None], np.asarray(k_imag)[None],
                            params).frame(0)


# ---------------------------------------------------------------------------
# Multiplexed MIMO with linear GaBP
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MuxConfig:
    """Rate and power matching of the multiplexed comparison system.

    The multiplexed transmitter carries the same ``B_Tr`` bits per channel
    use as GQSM with ``(n_t, p)``, using ``ceil(B_Tr / log2 M)`` fixed
    antennas (the first ones) with M-QAM, and spends the same total energy
    ``p`` per channel use.
    """

    n_t: int
    p: int
    m: int = 4

    @property
    def b_tr(self):
        return bits_per_channel_use(self.n_t, self.p)

    @property
    def bits_per_symbol(self):
        return int(math.log2(self.m))

    @property
    def n_active(self):
        n = math.ceil(self.b_tr / self.bits_per_symbol)
        if n > self.n_t:
            raise ParameterError(f"{n} multiplexed streams exceed n_t={self.n_t}")
        return n

    @property
    def n_bits(self):
        return self.n_active * self.bits_per_symbol

    @property
    def symbol_energy(self):
        return self.p / self.n_active

    def constellation(self):
        return qam_points(self.m) * math.sqrt(self.symbol_energy)

    def metadata(self):
        return {"mux_streams": self.n_active, "mux_qam": self.m,
                "mux_power": "total energy per channel use equal to GQSM (P)",
                "mux_bits_per_channel_use": self.n_bits}


def mux_modulate(bits, cfg):
    """Natural-binary M-QAM mapping of ``(..., n_bits)`` bits; returns ``(indices, x)``."""
    bits = np.asarray(bits, dtype=np.int64)
    k = cfg.bits_per_symbol
    if bits.shape[-1] != cfg.n_bits:
        raise ParameterError(f"expected {cfg.n_bits} bits, got {bits.shape[-1]}")
    groups = bits.reshape(bits.shape[:-1] + (cfg.n_active, k))
    idx = groups @ (1 << np.arange(k - 1, -1, -1))
    return idx, cfg.constellation()[idx]


def mux_bits(indices, cfg):
    k = cfg.bits_per_symbol
    idx = np.asarray(indices, dtype=np.int64)
    bits = (idx[..., None] >> np.arange(k - 1, -1, -1)) & 1
    return bits.reshape(idx.shape[:-1] + (-1,)).astype(np.uint8)


@dataclass(frozen=True)
class MuxParams:
    rho: float = 0.5
    tau_max: int = 50
    eps_th: float = 1e-4
    var_floor: float = 1e-12


def _pam_denoise(mean, var, levels):
    """Posterior mean and variance of a uniform PAM symbol given a Gaussian belief."""
    expo = -(mean[..., None] - levels) ** 2 / (2.0 * var[..., None])
    expo -= expo.max(axis=-1, keepdims=True)
    w = np.exp(expo)
    w /= w.sum(axis=-1, keepdims=True)
    m = w @ levels
    v = np.maximum(w @ (levels * levels) - m * m, 0.0)
    return m, v


def mux_linear_gabp_detect(y, h, qam, n0, params=MuxParams()):
    """Scalar GaBP detection of dense QAM vectors.

    Parameters
    ----------
    y : complex array (B, N_R) or (N_R,)
    h : complex array (B, N_R, K) or (N_R, K), the active-antenna channel
    qam : complex constellation (already power-scaled); its in-phase and
        quadrature levels must form the same PAM set in both dimensions
    n0 : complex noise power

    Returns
    -------
    indices : int array (B, K) of decided constellation points
    info : dict with ``iterations``, ``flops`` and ``failed`` per frame
    """
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h, dtype=complex)
    single = y.ndim == 1
    if single:
        y, h = y[None], h[None]
    qam = np.asarray(qam, dtype=complex)
    levels = np.unique(np.round(qam.real, 12))
    # real-valued model: [Re y; Im y] = [[Re H, -Im H], [Im H, Re H]] [Re x; Im x]
    Hr = np.concatenate([np.concatenate([h.real, -h.imag], axis=-1),
                         np.concatenate([h.imag, h.real], axis=-1)], axis=-2)
    yr = np.concatenate([y.real, y.imag], axis=-1)
    B, Nn, K2 = Hr.shape
    H2 = Hr * Hr
    e_sym = np.mean(levels * levels)
    xh = np.zeros((B, Nn, K2))                      # per-node soft symbols
    vh = np.full((B, Nn, K2), e_sym)
    half_n0 = n0 / 2.0
    iters = np.zeros(B, dtype=np.int64)
    failed = np.zeros(B, dtype=bool)
    active = np.ones(B, dtype=bool)
    for _ in range(params.tau_max):
        if not active.any():
            break
        contrib = Hr * xh                            # (B, Nn, K2)
        yt = yr[:, :, None] - contrib.sum(-1, keepdims=True) + contrib
        psi = np.maximum((H2 * vh).sum(-1, keepdims=True) - H2 * vh + half_n0,
                         params.var_floor)
        a = Hr * yt / psi
        c = H2 / psi
        prec = c.sum(1, keepdims=True) - c           # extrinsic over nodes
        prec = np.maximum(prec, params.var_floor)
        mean = (a.sum(1, keepdims=True) - a) / prec
        m, v = _pam_denoise(mean, 1.0 / prec, levels)
        new_x = params.rho * xh + (1 - params.rho) * m
        new_v = params.rho * vh + (1 - params.rho) * v
        finite = np.all(np.isfinite(new_x), axis=(1, 2))
        delta = np.max(np.abs(new_x - xh), axis=(1, 2))
        upd = active & finite
        xh[upd], vh[upd] = new_x[upd], new_v[upd]
        iters[active] += 1
        failed |= active & ~finite
        active &= finite & (delta >= params.eps_th)
    # consensus over all nodes
    contrib = Hr * xh
    yt = yr[:, :, None] - contrib.sum(-1, keepdims=True) + contrib
    psi = np.maximum((H2 * vh).sum(-1, keepdims=True) - H2 * vh + half_n0, params.var_floor)
    prec = np.maximum((H2 / psi).sum(1), params.var_floor)
    mean = (Hr * yt / psi).sum(1) / prec
    K = K2 // 2
    xhat = mean[:, :K] + 1j * mean[:, K:]
    idx = np.argmin(np.abs(xhat[..., None] - qam) ** 2, axis=-1)
    L = levels.size
    per_iter = Nn * K2 * (12 + 6 * L) + Nn * K2
    info = {"iterations": iters, "failed": failed,
            "flops": iters * per_iter + Nn * K2 * 8 + 2 * K * qam.size * 3}
    if single:
        return idx[0], {k: v[0] for k, v in info.items()}
    return idx, info


# ---------------------------------------------------------------------------
# Complexity formulas
# ---------------------------------------------------------------------------

class ComplexityModel(enum.Enum):
    ML = "ML"
    IQ_VGABP = "IQ_VGABP"
    UVD = "UVD"
    E_UVD = "E_UVD"


def _c_ml(n_t, n_r, p, tau):
    return math.comb(n_t, p) ** 2 * (8 * n_r * n_t + 4 * n_r)


def _c_iq(n_t, n_r, p, tau):
    c = math.comb(n_t, p)
    return (tau * (2 * n_r * (c * (15 * n_t ** 2 + 15 * n_t + 4) + 3 * n_t ** 2 - 2)
                   + 4 * n_t ** 2)
            + 2 * n_r * (n_t ** 2 + 2 * n_t + 1) + c * (6 * n_t ** 2 + 9 * n_t + 2)
            + 5 * n_t ** 2)


def _c_uvd(n_t, n_r, p, tau):
    inner = (2 * p * (6 * n_t ** 2 + 3 * n_t - 1) + 6 * n_t ** 2
             + 8 * n_t * n_r + 4 * n_t + 4 * n_r + 1)
    return tau * 4 * n_r * p * inner + (8 * n_t * n_r * p + 4 * n_r * p + 10 * n_t * p + 4 * p)


def _c_euvd(n_t, n_r, p, tau):
    inner = (2 * p * (6 * n_t ** 2 + 3 * n_t + 2 * n_t * n_r - 1) + 6 * n_t ** 2
             + 8 * n_t * n_r + 4 * n_t + 4 * n_r + 1)
    return (tau * 4 * n_r * p ** 2 * inner
            + p * (12 * n_t * n_r * p + 4 * n_r * p + 10 * n_t * p + 4 * p))


_FORMULAS = {
    ComplexityModel.ML: _c_ml,
    ComplexityModel.IQ_VGABP: _c_iq,
    ComplexityModel.UVD: _c_uvd,
    ComplexityModel.E_UVD: _c_euvd,
}


def complexity_eval(model, n_t, n_r, p, tau=100):
    """FLOP count of one detection as an exact Python integer.

    ``model`` is a :class:`ComplexityModel` or its name. ``tau`` is ignored
    by the ML model.
    """
    model = ComplexityModel(model) if not isinstance(model, ComplexityModel) else model
    for name, v in (("n_t", n_t), ("n_r", n_r), ("p", p), ("tau", tau)):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be a positive integer, got {v}")
    if p > n_t:
        raise ParameterError("p cannot exceed n_t")
    return int(_FORMULAS[model](int(n_t), int(n_r), int(p), int(tau)))
