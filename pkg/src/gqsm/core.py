"""Transmit-side model for piloted GQSM.

Constellations, activation codebooks, modulation, the IQ-decoupled real
channel, dispersion-codebook effective channels, constellation rotation and
Eb/N0 bookkeeping.

Index vectors are 1-based (antenna ``t`` lives in ``1..n_t``) to match the
usual notation; arrays handed to the detectors are 0-based.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "ParameterError",
    "Constellation",
    "ActivationCodebook",
    "GqsmFrame",
    "RealSystem",
    "DispersionCodebook",
    "qam_points",
    "build_codebook",
    "modulate",
    "demodulate_bits",
    "iq_decouple",
    "apply_channel",
    "build_effective_channel",
    "rotation_objective",
    "optimize_rotation",
    "rotated_constellation",
    "bits_per_channel_use",
    "ebn0_to_n0",
    "load_codebook",
    "save_codebook",
    "save_constellation",
    "load_constellation",
    "EXAMPLE_CODEBOOK_5_3",
]


class ParameterError(ValueError):
    """Raised on invalid system parameters or mismatched shapes."""


# A hand-picked N_T = 5, P = 3 codebook (not the lexicographic one); it
# drops (1, 2, 4) and keeps (3, 4, 5). Handy as an injected fixture.
EXAMPLE_CODEBOOK_5_3 = (
    (1, 2, 3), (1, 2, 5), (1, 3, 4), (1, 3, 5),
    (1, 4, 5), (2, 3, 4), (2, 3, 5), (3, 4, 5),
)


# ---------------------------------------------------------------------------
# Constellations
# ---------------------------------------------------------------------------

def qam_points(m):
    """Unit-energy M-QAM points (square for even log2 M, cross otherwise).

    Point ``i`` of a square constellation has in-phase level index
    ``i // sqrt(M)`` and quadrature level index ``i % sqrt(M)``.
    """
    if m < 2 or m & (m - 1):
        raise ParameterError(f"M must be a power of two, got {m}")
    bits = int(math.log2(m))
    if m == 2:
        pts = np.array([-1.0, 1.0], dtype=complex)
    elif bits % 2 == 0:
        side = int(math.isqrt(m))
        levels = np.arange(-(side - 1), side, 2, dtype=float)
        ii, qq = np.meshgrid(levels, levels, indexing="ij")
        pts = (ii + 1j * qq).ravel()
    else:
        # Cross QAM: square grid of side 3*2^(k-1) with corner blocks removed.
        k = (bits - 1) // 2
        side = 3 * 2 ** (k - 1)
        if k == 1:
            raise ParameterError("8-QAM cross constellation is not supported")
        corner = side // 6
        levels = np.arange(-(side - 1), side, 2, dtype=float)
        keep = []
        for a, la in enumerate(levels):
            for b, lb in enumerate(levels):
                in_row_edge = a < corner or a >= side - corner
                in_col_edge = b < corner or b >= side - corner
                if not (in_row_edge and in_col_edge):
                    keep.append(la + 1j * lb)
        pts = np.array(keep)
        if pts.size != m:
            raise ParameterError(f"cross construction failed for M={m}")
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


@dataclass(frozen=True)
class Constellation:
    """Complex symbol set with unit average energy."""

    points: np.ndarray
    theta: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size == 0:
            raise ParameterError("constellation must be a non-empty 1-D array")
        if np.unique(pts).size != pts.size:
            raise ParameterError("constellation points must be distinct")

    @classmethod
    def qam(cls, m, theta=0.0):
        return cls(qam_points(m) * np.exp(1j * theta), theta=float(theta))

    @property
    def M(self):
        return self.points.size

    @property
    def real_alphabet(self):
        return np.unique(self.points.real)

    @property
    def imag_alphabet(self):
        return np.unique(self.points.imag)

    def pilots(self, p):
        """The first ``p`` points, in order: the fixed pilot assignment."""
        if p > self.M:
            raise ParameterError(f"need {p} distinct pilots but M={self.M}")
        return self.points[:p].copy()


# ---------------------------------------------------------------------------
# Activation codebook
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationCodebook:
    """Set of Q index vectors with natural-binary labels of their rank.

    ``index_vectors`` is a ``(Q, P)`` int array of 1-based, strictly
    increasing antenna indices. Row ``q`` carries the label ``q`` written on
    ``bits_per_rail`` bits (MSB first).
    """

    n_t: int
    index_vectors: np.ndarray
    _codes: np.ndarray = field(init=False, repr=False, compare=False)
    _order: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vec = np.array(self.index_vectors, dtype=np.int64)
        if vec.ndim != 2 or vec.shape[0] == 0:
            raise ParameterError("index_vectors must be a non-empty (Q, P) array")
        q = vec.shape[0]
        if q & (q - 1):
            raise ParameterError(f"codebook size must be a power of two, got {q}")
        if vec.min() < 1 or vec.max() > self.n_t:
            raise ParameterError("index entries must lie in [1, n_t]")
        if vec.shape[1] > 1 and np.any(np.diff(vec, axis=1) <= 0):
            raise ParameterError("index vectors must be strictly increasing")
        vec.setflags(write=False)
        object.__setattr__(self, "index_vectors", vec)
        codes = self.encode(vec)
        if np.unique(codes).size != q:
            raise ParameterError("index vectors must be distinct")
        order = np.argsort(codes, kind="stable")
        object.__setattr__(self, "_codes", codes[order])
        object.__setattr__(self, "_order", order)

    @property
    def p(self):
        return self.index_vectors.shape[1]

    @property
    def q(self):
        return self.index_vectors.shape[0]

    @property
    def bits_per_rail(self):
        return int(math.log2(self.q))

    @property
    def zero_based(self):
        return self.index_vectors - 1

    def encode(self, vectors):
        """Mixed-radix integer code of 1-based index vectors (lex-monotone)."""
        vectors = np.asarray(vectors, dtype=np.int64)
        weights = self.n_t ** np.arange(vectors.shape[-1] - 1, -1, -1, dtype=np.int64)
        return (vectors - 1) @ weights

    def lookup(self, vectors):
        """Rank of each index vector, or -1 where it is not in the codebook."""
        vectors = np.asarray(vectors, dtype=np.int64)
        codes = self.encode(vectors)
        pos = np.searchsorted(self._codes, codes)
        pos = np.clip(pos, 0, self.q - 1)
        hit = self._codes[pos] == codes
        return np.where(hit, self._order[pos], -1)

    def rank_to_bits(self, ranks):
        ranks = np.asarray(ranks, dtype=np.int64)
        shifts = np.arange(self.bits_per_rail - 1, -1, -1)
        return ((ranks[..., None] >> shifts) & 1).astype(np.uint8)

    def bits_to_rank(self, bits):
        bits = np.asarray(bits, dtype=np.int64)
        if bits.shape[-1] != self.bits_per_rail:
            raise ParameterError(
                f"expected {self.bits_per_rail} bits per rail, got {bits.shape[-1]}")
        weights = 1 << np.arange(self.bits_per_rail - 1, -1, -1)
        return bits @ weights

    @classmethod
    def from_vectors(cls, n_t, vectors):
        """Inject an explicit codebook (e.g. a fixture); labels follow list order."""
        return cls(n_t=n_t, index_vectors=np.asarray(vectors, dtype=np.int64))


def build_codebook(n_t, p):
    """Lexicographically first ``2**floor(log2 C(n_t, p))`` sorted p-subsets."""
    if not (isinstance(n_t, (int, np.integer)) and isinstance(p, (int, np.integer))):
        raise ParameterError("n_t and p must be integers")
    if p < 1 or n_t < p:
        raise ParameterError(f"need 1 <= p <= n_t, got n_t={n_t}, p={p}")
    total = math.comb(n_t, p)
    if total < 2:
        raise ParameterError(f"C({n_t},{p}) = {total} cannot encode any bit")
    q = 1 << (total.bit_length() - 1)
    combos = itertools.islice(itertools.combinations(range(1, n_t + 1), p), q)
    vec = np.fromiter(itertools.chain.from_iterable(combos), dtype=np.int64,
                      count=q * p).reshape(q, p)
    return ActivationCodebook(n_t=n_t, index_vectors=vec)


def load_codebook(path):
    """Read a codebook fixture: header ``n_t,p`` then one vector per line."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    n_t, p = (int(v) for v in lines[0].split(","))
    vectors = [[int(v) for v in ln.split(",")] for ln in lines[1:]]
    if any(len(v) != p for v in vectors):
        raise ParameterError(f"every index vector in {path} must have {p} entries")
    return ActivationCodebook.from_vectors(n_t, vectors)


def save_codebook(codebook, path):
    rows = [f"{codebook.n_t},{codebook.p}"]
    rows += [",".join(str(int(v)) for v in vec) for vec in codebook.index_vectors]
    Path(path).write_text("\n".join(rows) + "\n")


def save_constellation(const, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re", "im"])
        for z in const.points:
            writer.writerow([f"{z.real:.17g}", f"{z.imag:.17g}"])


def load_constellation(path, theta=0.0):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
    return Constellation(pts, theta=theta)


# ---------------------------------------------------------------------------
# Modulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GqsmFrame:
    bits: np.ndarray
    k_real: np.ndarray
    k_imag: np.ndarray
    pilots_real: np.ndarray
    pilots_imag: np.ndarray
    x: np.ndarray


def _place(k_real, k_imag, pilots, n_t):
    """Build transmit vectors from 1-based index arrays of shape (..., P)."""
    k_real = np.asarray(k_real)
    lead = k_real.shape[:-1]
    x = np.zeros(lead + (n_t,), dtype=complex)
    re = np.zeros(lead + (n_t,))
    im = np.zeros(lead + (n_t,))
    np.put_along_axis(re, k_real - 1, np.broadcast_to(pilots.real, k_real.shape), axis=-1)
    np.put_along_axis(im, np.asarray(k_imag) - 1,
                      np.broadcast_to(pilots.imag, k_real.shape), axis=-1)
    x.real, x.imag = re, im
    return x


def modulate(bits, codebook, pilots):
    """Map ``2B`` bits to a GQSM transmit vector.

    The first ``B`` bits pick the real-rail index vector, the last ``B`` the
    imaginary-rail one. Pilot ``p`` places its real part at ``k_real[p]`` and
    its imaginary part at ``k_imag[p]``.

    ``bits`` may carry leading batch axes, in which case the returned frame
    holds stacked arrays.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    b = codebook.bits_per_rail
    if bits.shape[-1] != 2 * b:
        raise ParameterError(f"expected {2 * b} bits, got {bits.shape[-1]}")
    pilots = np.asarray(pilots, dtype=complex)
    if pilots.shape != (codebook.p,):
        raise ParameterError(f"expected {codebook.p} pilots, got shape {pilots.shape}")
    k_real = codebook.index_vectors[codebook.bits_to_rank(bits[..., :b])]
    k_imag = codebook.index_vectors[codebook.bits_to_rank(bits[..., b:])]
    x = _place(k_real, k_imag, pilots, codebook.n_t)
    return GqsmFrame(bits=bits, k_real=k_real, k_imag=k_imag,
                     pilots_real=pilots.real.copy(), pilots_imag=pilots.imag.copy(), x=x)


def demodulate_bits(k_real, k_imag, codebook):
    """Inverse of the labeling: index vectors back to ``2B`` bits."""
    ranks = np.stack([codebook.lookup(k_real), codebook.lookup(k_imag)])
    if np.any(ranks < 0):
        raise ParameterError("index vector not in codebook")
    return np.concatenate([codebook.rank_to_bits(ranks[0]),
                           codebook.rank_to_bits(ranks[1])], axis=-1)


# ---------------------------------------------------------------------------
# Channel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RealSystem:
    """IQ-decoupled channel ``[H^R  H^I]`` with shape ``2N_R x N_T`` per block.

    Leading batch axes are allowed on both blocks.
    """

    h_real_block: np.ndarray
    h_imag_block: np.ndarray
    n0: float

    @property
    def n_t(self):
        return self.h_real_block.shape[-1]

    @property
    def n_nodes(self):
        return self.h_real_block.shape[-2]

    @property
    def matrix(self):
        return np.concatenate([self.h_real_block, self.h_imag_block], axis=-1)

    def rails(self):
        """Blocks stacked on a new rail axis: ``(..., 2, 2N_R, N_T)``."""
        return np.stack([self.h_real_block, self.h_imag_block], axis=-3)


def iq_decouple(h, n0):
    h = np.asarray(h, dtype=complex)
    if h.ndim < 2:
        raise ParameterError("channel must be at least 2-D")
    if not np.all(np.isfinite(h)):
        raise ParameterError("channel has non-finite entries")
    hr = np.concatenate([h.real, h.imag], axis=-2)
    hi = np.concatenate([-h.imag, h.real], axis=-2)
    return RealSystem(hr, hi, float(n0))


def apply_channel(x, h, n0, rng):
    """``y = Hx + w`` with ``w ~ CN(0, n0 I)``; supports leading batch axes."""
    if n0 < 0:
        raise ParameterError("n0 must be non-negative")
    h = np.asarray(h, dtype=complex)
    x = np.asarray(x, dtype=complex)
    clean = (h @ x[..., None])[..., 0]
    w = (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))
    return clean + np.sqrt(n0 / 2) * w


@dataclass(frozen=True)
class DispersionCodebook:
    xi_real: np.ndarray
    xi_imag: np.ndarray

    def __post_init__(self):
        if np.shape(self.xi_real) != np.shape(self.xi_imag):
            raise ParameterError("real and imaginary dispersion codebooks differ in shape")

    @property
    def q(self):
        return np.shape(self.xi_real)[1]

    def stacked(self):
        xr = np.asarray(self.xi_real, dtype=complex)
        xi = np.asarray(self.xi_imag, dtype=complex)
        return np.block([[xr.real, -xi.imag], [xr.imag, xi.real]])


def build_effective_channel(sys, disp):
    """Effective real system ``H @ Xi`` for dispersion-coded IM (dimension Q)."""
    if np.shape(disp.xi_real)[0] != sys.n_t:
        raise ParameterError(
            f"dispersion rows ({np.shape(disp.xi_real)[0]}) must equal n_t ({sys.n_t})")
    h_eff = sys.matrix @ disp.stacked()
    q = disp.q
    return RealSystem(h_eff[..., :q], h_eff[..., q:], sys.n0)


# ---------------------------------------------------------------------------
# Constellation rotation
# ---------------------------------------------------------------------------

_ROTATION_SIZES = (4, 16, 32, 64, 128, 256)


def _dmin_sorted(values):
    s = np.sort(values, axis=-1)
    return np.min(np.diff(s, axis=-1), axis=-1)


def rotation_objective(points, thetas):
    """Sum of minimum distances of the real and imaginary projections."""
    rot = np.exp(1j * np.atleast_1d(thetas))[:, None] * np.asarray(points)[None, :]
    return _dmin_sorted(rot.real) + _dmin_sorted(rot.imag)


def optimize_rotation(m, grid_step=1e-4):
    """Grid-search the angle in (0, pi/2) maximizing IQ projection separation.

    Grid peaks that come within the grid's discretization error of the best
    value are polished with a bounded scalar search, so the two mirror
    optima (theta and pi/2 - theta) compare on equal terms. Ties (within
    1e-7) resolve to the smallest angle.
    """
    if m not in _ROTATION_SIZES:
        raise ParameterError(f"unsupported constellation size {m}")
    if not 0 < grid_step <= 1e-3:
        raise ParameterError("grid_step must lie in (0, 1e-3]")
    pts = qam_points(m)
    n = int(np.floor((np.pi / 2) / grid_step))
    thetas = grid_step * np.arange(1, n + 1)
    thetas = thetas[thetas < np.pi / 2]
    obj = np.concatenate([rotation_objective(pts, chunk)
                          for chunk in np.array_split(thetas, max(1, thetas.size // 2048))])
    # |d objective / d theta| <= 2 * (max pairwise distance of the points)
    slack = 4.0 * np.max(np.abs(pts)) * 2 * grid_step
    candidates = np.flatnonzero(obj >= obj.max() - slack)
    polished = []
    for i in candidates:
        if 0 < i < obj.size - 1 and (obj[i] < obj[i - 1] or obj[i] < obj[i + 1]):
            continue
        lo, hi = thetas[max(i - 1, 0)], thetas[min(i + 1, obj.size - 1)]
        res = minimize_scalar(lambda t: -rotation_objective(pts, t)[0],
                              bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        polished.append((-res.fun, res.x))
    best = max(v for v, _ in polished)
    return float(min(t for v, t in polished if v >= best - 1e-7))


def rotated_constellation(m, grid_step=1e-4):
    return Constellation.qam(m, optimize_rotation(m, grid_step))


# ---------------------------------------------------------------------------
# Energy bookkeeping
# ---------------------------------------------------------------------------

def bits_per_channel_use(n_t, p):
    return 2 * int(math.floor(math.log2(math.comb(n_t, p)))) if math.comb(n_t, p) else 0


def ebn0_to_n0(ebn0_db, n_t, p, codebook=None):
    """Noise power for a target Eb/N0, with P unit-energy pilots per frame."""
    b_tr = 2 * codebook.bits_per_rail if codebook is not None else bits_per_channel_use(n_t, p)
    if b_tr == 0:
        raise ParameterError("system carries no information bits")
    n0 = p / (b_tr * 10.0 ** (np.asarray(ebn0_db, dtype=float) / 10.0))
    return float(n0) if n0.ndim == 0 else n0
