"""Monte-Carlo BER experiments.

Every frame has its own random stream, seeded from ``(seed, frame index)``.
The stream draws the GQSM bits, the channel, a unit-power noise vector and
the bits of the multiplexed comparison system, in that order. Because the
noise is drawn at unit power and scaled per Eb/N0 point, all points of a
sweep see the same bits, channels and noise directions, and all detectors
at a point see the same frames (paired comparison). Frame streams do not
depend on chunking or on the number of worker processes.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (MuxConfig, ComplexityModel, complexity_eval,
                        ml_detect_batch, mfb_detect_batch, mux_bits,
                        mux_linear_gabp_detect, mux_modulate, ML_BUDGET)
from .core import (ParameterError, build_codebook, ebn0_to_n0, iq_decouple,
                   load_codebook, modulate, rotated_constellation)
from .enhanced import EnhancedParams, detect_enhanced_batch
from .priors import prior_matrix
from .uvd import DetectorParams, detect_batch

__all__ = [
    "DETECTORS",
    "ExperimentConfig",
    "BerRecord",
    "SweepResult",
    "draw_channel",
    "generate_frames",
    "run_ber_sweep",
    "write_csv",
    "records_to_csv",
    "monotonicity_flags",
    "equal_complexity_report",
    "CSV_HEADER",
]

# alg2_cond: conditional denoiser without SIC; alg2_sic: SIC without it.
DETECTORS = ("alg1", "alg2", "alg2_cond", "alg2_sic", "ml", "mfb", "mux")

CSV_HEADER = ("detector", "ebn0_db", "frames", "bit_errors", "ber", "mean_iters",
              "mean_flops", "dup_rate", "num_fail")

CONVENTIONS = {
    "channel": "i.i.d. Rayleigh, CN(0,1) entries",
    "noise": "CN(0, N0) per receive antenna",
    "energy": "P unit-energy complex pilots per channel use",
    "ebn0": "N0 = P / (B_Tr * 10^(EbN0/10)), B_Tr = 2 floor(log2 C(N_T, P))",
    "pilots": "first P points of the rotated QAM constellation",
    "labeling": "natural binary rank of the lexicographic codebook",
    "failed_frames": "counted as frame errors; bit errors counted from the decision",
}


@dataclass
class ExperimentConfig:
    n_t: int
    n_r: int
    p: int
    m: int = 4
    detectors: tuple = ("alg1",)
    ebn0_db: tuple = (10.0,)
    frames: int = 20000
    min_errors: int | None = 200
    chunk: int = 500
    seed: int = 0
    workers: int = 1
    paired: bool = True
    params: DetectorParams = field(default_factory=DetectorParams)
    eparams: EnhancedParams = field(default_factory=EnhancedParams)
    prior_kind: str = "empirical"
    codebook_path: str | None = None
    mux_m: int = 4

    def __post_init__(self):
        self.detectors = tuple(self.detectors)
        self.ebn0_db = tuple(float(e) for e in self.ebn0_db)
        if self.frames < 1:
            raise ParameterError("frames must be >= 1")
        if not self.ebn0_db:
            raise ParameterError("the Eb/N0 grid is empty")
        if not self.detectors:
            raise ParameterError("no detector selected")
        bad = [d for d in self.detectors if d not in DETECTORS]
        if bad:
            raise ParameterError(f"unknown detectors {bad}; choose from {DETECTORS}")
        if self.chunk < 1 or self.workers < 1:
            raise ParameterError("chunk and workers must be >= 1")
        if self.min_errors is not None and self.min_errors < 1:
            raise ParameterError("min_errors must be >= 1 or None")
        if not 1 <= self.p <= self.n_t:
            raise ParameterError("need 1 <= p <= n_t")

    def codebook(self):
        if self.codebook_path:
            cb = load_codebook(self.codebook_path)
            if (cb.n_t, cb.p) != (self.n_t, self.p):
                raise ParameterError("codebook fixture does not match n_t, p")
            return cb
        return build_codebook(self.n_t, self.p)

    def to_dict(self):
        d = dataclasses.asdict(self)
        # the worker count never changes results, so it is not part of the record
        d.pop("workers")
        d["detectors"] = list(self.detectors)
        d["ebn0_db"] = list(self.ebn0_db)
        return d


@dataclass
class BerRecord:
    detector: str
    ebn0_db: float
    frames: int
    bit_errors: int
    frame_errors: int
    bits_per_frame: int
    iterations: int
    flops: int
    duplicates: int
    num_fail: int

    @property
    def ber(self):
        return self.bit_errors / (self.frames * self.bits_per_frame)

    @property
    def mean_iters(self):
        return self.iterations / self.frames

    @property
    def mean_flops(self):
        return self.flops / self.frames

    @property
    def dup_rate(self):
        return self.duplicates / self.frames

    def row(self):
        return (self.detector, self.ebn0_db, self.frames, self.bit_errors, self.ber,
                self.mean_iters, self.mean_flops, self.dup_rate, self.num_fail)


@dataclass
class SweepResult:
    config: ExperimentConfig
    records: list
    flags: list

    def sidecar(self):
        return {
            "config": self.config.to_dict(),
            "conventions": CONVENTIONS | (MuxConfig(self.config.n_t, self.config.p,
                                                    self.config.mux_m).metadata()
                                          if "mux" in self.config.detectors else {}),
            "records": [{**dict(zip(CSV_HEADER, r.row())),
                         "frame_errors": r.frame_errors} for r in self.records],
            "monotonicity_flags": self.flags,
        }


# ---------------------------------------------------------------------------
# Frame generation
# ---------------------------------------------------------------------------

def draw_channel(n_r, n_t, rng, size=()):
    """I.i.d. ``CN(0, 1)`` channel matrix (or a stack of them)."""
    shape = tuple(np.atleast_1d(size)) + (n_r, n_t) if size != () else (n_r, n_t)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


@dataclass
class FrameBatch:
    bits: np.ndarray
    h: np.ndarray
    w: np.ndarray          # unit-power CN(0, 1) noise
    mux_bits: np.ndarray | None


def generate_frames(cfg, codebook, start, count, stream=0):
    """Frames ``start .. start+count-1``; ``stream`` separates unpaired detectors."""
    nb = 2 * codebook.bits_per_rail
    mux_n = MuxConfig(cfg.n_t, cfg.p, cfg.mux_m).n_bits if "mux" in cfg.detectors else 0
    bits = np.empty((count, nb), dtype=np.uint8)
    h = np.empty((count, cfg.n_r, cfg.n_t), dtype=complex)
    w = np.empty((count, cfg.n_r), dtype=complex)
    mb = np.empty((count, mux_n), dtype=np.uint8)
    for i in range(count):
        key = [cfg.seed, start + i] + ([stream] if stream else [])
        rng = np.random.default_rng(np.random.SeedSequence(key))
        bits[i] = rng.integers(0, 2, nb)
        h[i] = draw_channel(cfg.n_r, cfg.n_t, rng)
        w[i] = (rng.standard_normal(cfg.n_r) + 1j * rng.standard_normal(cfg.n_r)) / math.sqrt(2)
        if mux_n:
            mb[i] = rng.integers(0, 2, mux_n)
    return FrameBatch(bits, h, w, mb if mux_n else None)


# ---------------------------------------------------------------------------
# Detection of one chunk
# ---------------------------------------------------------------------------

class _Context:
    """Per-config objects that are expensive enough to build once."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.codebook = cfg.codebook()
        self.pilots = rotated_constellation(cfg.m).pilots(cfg.p)
        self.prior = prior_matrix(self.codebook, cfg.prior_kind)
        self.mux = MuxConfig(cfg.n_t, cfg.p, cfg.mux_m) if "mux" in cfg.detectors else None
        if "ml" in cfg.detectors and self.codebook.q ** 2 > ML_BUDGET:
            raise ParameterError(f"ML needs {self.codebook.q ** 2} pairs per frame, "
                                 f"over the budget of {ML_BUDGET}")


_CTX_CACHE = {}


def _context(cfg):
    key = json.dumps(dataclasses.asdict(cfg), sort_keys=True, default=str)
    if key not in _CTX_CACHE:
        _CTX_CACHE.clear()
        _CTX_CACHE[key] = _Context(cfg)
    return _CTX_CACHE[key]


def _run_detector(ctx, name, fb, n0):
    cfg, cb, pil = ctx.cfg, ctx.codebook, ctx.pilots
    if name == "mux":
        idx, x = mux_modulate(fb.mux_bits, ctx.mux)
        ha = fb.h[:, :, :ctx.mux.n_active]
        y = (ha @ x[..., None])[..., 0] + math.sqrt(n0) * fb.w
        dec, info = mux_linear_gabp_detect(y, ha, ctx.mux.constellation(), n0)
        errs = np.sum(mux_bits(dec, ctx.mux) != fb.mux_bits, axis=1)
        B = len(y)
        return dict(errs=errs, nbits=ctx.mux.n_bits, iters=info["iterations"],
                    flops=info["flops"], dup=np.zeros(B, dtype=bool),
                    fail=info["failed"])
    frame = modulate(fb.bits, cb, pil)
    y = (fb.h @ frame.x[..., None])[..., 0] + math.sqrt(n0) * fb.w
    sysm = iq_decouple(fb.h, n0)
    if name == "alg1":
        res = detect_batch(y, sysm, pil, ctx.prior, cb, cfg.params)
    elif name in ("alg2", "alg2_cond", "alg2_sic"):
        ep = cfg.eparams
        if name == "alg2_cond":
            ep = dataclasses.replace(ep, use_sic=False, use_conditional=True)
        elif name == "alg2_sic":
            ep = dataclasses.replace(ep, use_sic=True, use_conditional=False)
        res = detect_enhanced_batch(y, sysm, pil, cb, cfg.params, ep)
    elif name == "ml":
        res = ml_detect_batch(y, sysm, pil, cb)
    elif name == "mfb":
        res = mfb_detect_batch(y, sysm, pil, ctx.prior, cb, frame.k_real, frame.k_imag,
                               cfg.params)
    else:
        raise ParameterError(f"unknown detector {name!r}")
    errs = np.sum(res.bits_hat != fb.bits, axis=1)
    return dict(errs=errs, nbits=fb.bits.shape[1], iters=res.iterations, flops=res.flops,
                dup=res.duplicate, fail=res.failed)


def _chunk_task(cfg, ebn0, start, count, names):
    """Detect one chunk with every detector in ``names``; returns summed counters."""
    ctx = _context(cfg)
    n0 = ebn0_to_n0(ebn0, cfg.n_t, cfg.p, ctx.codebook)
    out = {}
    shared = generate_frames(cfg, ctx.codebook, start, count) if cfg.paired else None
    for name in names:
        fb = shared if cfg.paired else generate_frames(
            cfg, ctx.codebook, start, count, stream=DETECTORS.index(name) + 1)
        r = _run_detector(ctx, name, fb, n0)
        out[name] = dict(
            bit_errors=int(r["errs"].sum()),
            frame_errors=int(np.count_nonzero((r["errs"] > 0) | r["fail"])),
            nbits=int(r["nbits"]), iterations=int(r["iters"].sum()),
            flops=int(r["flops"].sum()), duplicates=int(r["dup"].sum()),
            num_fail=int(r["fail"].sum()), frames=count)
    return out


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _chunks(cfg):
    starts = range(0, cfg.frames, cfg.chunk)
    return [(s, min(cfg.chunk, cfg.frames - s)) for s in starts]


def _sweep_point(cfg, ebn0, pool):
    chunks = _chunks(cfg)
    totals = {d: None for d in cfg.detectors}
    running = list(cfg.detectors)
    pos = 0
    while running and pos < len(chunks):
        wave = chunks[pos:pos + cfg.workers]
        if pool is None:
            results = [_chunk_task(cfg, ebn0, s, c, tuple(running)) for s, c in wave]
        else:
            futs = [pool.submit(_chunk_task, cfg, ebn0, s, c, tuple(running)) for s, c in wave]
            results = [f.result() for f in futs]
        # fold in chunk order so the stopping point does not depend on workers
        for res in results:
            for name in list(running):
                acc = totals[name]
                r = res[name]
                totals[name] = r if acc is None else {k: (acc[k] + r[k] if k != "nbits" else r[k])
                                                      for k in r}
                if cfg.min_errors is not None and totals[name]["bit_errors"] >= cfg.min_errors:
                    running.remove(name)
        pos += len(wave)
    return [BerRecord(detector=d, ebn0_db=ebn0, frames=t["frames"], bit_errors=t["bit_errors"],
                      frame_errors=t["frame_errors"], bits_per_frame=t["nbits"],
                      iterations=t["iterations"], flops=t["flops"],
                      duplicates=t["duplicates"], num_fail=t["num_fail"])
            for d, t in totals.items()]


def run_ber_sweep(cfg, progress=None):
    """Run every detector at every Eb/N0 point.

    Each (point, detector) stops at ``cfg.frames`` frames or once
    ``cfg.min_errors`` bit errors have accumulated, checked after every
    chunk. ``progress``, if given, is called with each finished record.
    """
    records = []
    pool = (concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers)
            if cfg.workers > 1 else None)
    try:
        for ebn0 in cfg.ebn0_db:
            for rec in _sweep_point(cfg, ebn0, pool):
                records.append(rec)
                if progress:
                    progress(rec)
    finally:
        if pool is not None:
            pool.shutdown()
    return SweepResult(cfg, records, monotonicity_flags(records))


def monotonicity_flags(records, sigmas=3.0):
    """Detectors whose BER rises with Eb/N0 beyond binomial noise.

    Returns a list of dicts; an empty list means no violation was seen.
    """
    flags = []
    by_det = {}
    for r in records:
        by_det.setdefault(r.detector, []).append(r)
    for det, rs in by_det.items():
        rs = sorted(rs, key=lambda r: r.ebn0_db)
        for a, b in zip(rs, rs[1:]):
            na, nb = a.frames * a.bits_per_frame, b.frames * b.bits_per_frame
            pooled = (a.bit_errors + b.bit_errors) / (na + nb)
            sd = math.sqrt(max(pooled * (1 - pooled), 0.0) * (1 / na + 1 / nb))
            if b.ber - a.ber > sigmas * sd and sd > 0:
                flags.append({"detector": det, "from_db": a.ebn0_db, "to_db": b.ebn0_db,
                              "ber_from": a.ber, "ber_to": b.ber})
    return flags


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def format_rows(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def records_to_csv(records):
    return format_rows(CSV_HEADER, [r.row() for r in records])


def write_csv(result, path, sidecar=True):
    """Write the CSV and, next to it, a ``.json`` sidecar with config and conventions."""
    path = Path(path)
    path.write_text(records_to_csv(result.records), encoding="utf-8")
    if sidecar:
        path.with_suffix(".json").write_text(
            json.dumps(result.sidecar(), indent=2, sort_keys=True, default=str) + "\n",
            encoding="utf-8")


# ---------------------------------------------------------------------------
# Equal-complexity comparison
# ---------------------------------------------------------------------------

_MODEL_DETECTOR = {ComplexityModel.ML: "ml", ComplexityModel.UVD: "alg1",
                   ComplexityModel.E_UVD: "alg2", ComplexityModel.IQ_VGABP: None}


@dataclass(frozen=True)
class Candidate:
    model: ComplexityModel
    n_t: int
    n_r: int
    p: int
    tau: int = 100

    @property
    def label(self):
        return f"{self.model.value}({self.n_t},{self.n_r},{self.p})"


def equal_complexity_report(budget, candidates, spread=5.0, sweep=None):
    """Candidates whose predicted FLOPs lie within a factor ``spread`` of ``budget``.

    A candidate qualifies when ``budget / spread <= flops <= budget * spread``.
    With ``sweep`` (a dict of :class:`ExperimentConfig` overrides such as
    ``ebn0_db`` and ``frames``), the qualifying candidates that have a
    detector implementation are also simulated and their BER records
    attached.

    Returns a dict with ``rows`` (one per candidate, qualifying or not),
    ``qualified`` labels and ``records``. An empty ``qualified`` list is the
    explicit empty result.
    """
    if budget <= 0 or spread < 1:
        raise ParameterError("budget must be positive and spread >= 1")
    rows, qualified, records = [], [], []
    for c in candidates:
        c = c if isinstance(c, Candidate) else Candidate(ComplexityModel(c[0]), *c[1:])
        flops = complexity_eval(c.model, c.n_t, c.n_r, c.p, c.tau)
        ok = budget / spread <= flops <= budget * spread
        rows.append({"label": c.label, "model": c.model.value, "n_t": c.n_t, "n_r": c.n_r,
                     "p": c.p, "tau": c.tau, "flops": flops, "ratio": flops / budget,
                     "qualifies": ok})
        if ok:
            qualified.append(c.label)
            det = _MODEL_DETECTOR[c.model]
            if sweep is not None and det is not None:
                params = sweep.get("params", DetectorParams())
                params = dataclasses.replace(params, tau_max=c.tau)
                cfg = ExperimentConfig(n_t=c.n_t, n_r=c.n_r, p=c.p, detectors=(det,),
                                       **{k: v for k, v in sweep.items() if k != "params"},
                                       params=params)
                for r in run_ber_sweep(cfg).records:
                    records.append((c.label, r))
    return {"budget": budget, "spread": spread, "rows": rows, "qualified": qualified,
            "records": records}
