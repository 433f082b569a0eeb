"""Reference detectors and the closed-form complexity models."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gqsm.baselines import (ComplexityModel, MuxConfig, complexity_eval, mfb_detect,
                            mfb_detect_batch, ml_detect, ml_detect_batch, mux_bits,
                            mux_linear_gabp_detect, mux_modulate)
from gqsm.core import ParameterError, build_codebook, iq_decouple, qam_points
from gqsm.uvd import detect_batch


# ---------------------------------------------------------------------------
# ML

def test_ml_matches_brute_force_loop(make_frames):
    fr = make_frames(5, 4, 3, 2.0, 25, seed=1)
    res = ml_detect_batch(fr.y, fr.sys, fr.pilots, fr.codebook)
    vec = fr.codebook.index_vectors
    for b in range(25):
        best, arg = np.inf, None
        for qr, qi in itertools.product(range(fr.codebook.q), repeat=2):
            x = np.zeros(5, dtype=complex)
            x[vec[qr] - 1] += fr.pilots.real
            x[vec[qi] - 1] += 1j * fr.pilots.imag
            d = np.sum(np.abs(fr.y[b] - fr.h[b] @ x) ** 2)
            if d < best - 1e-12:
                best, arg = d, (qr, qi)
        np.testing.assert_array_equal(res.k_hat[b, 0], vec[arg[0]])
        np.testing.assert_array_equal(res.k_hat[b, 1], vec[arg[1]])


def test_ml_counts_q_squared_evaluations(make_frames):
    fr = make_frames(5, 5, 3, 10.0, 2, seed=2)
    res = ml_detect_batch(fr.y, fr.sys, fr.pilots, fr.codebook)
    np.testing.assert_array_equal(res.extra["evaluations"], [64, 64])
    assert res.flops[0] == complexity_eval("ML", 5, 5, 3) * 64 // math.comb(5, 3) ** 2


@pytest.mark.parametrize("n_t,p", [(5, 3), (8, 1), (6, 2)])
def test_ml_noiseless_recovery(make_frames, n_t, p):
    fr = make_frames(n_t, n_t, p, None, 40, seed=3)
    res = ml_detect_batch(fr.y, fr.sys, fr.pilots, fr.codebook)
    assert fr.bit_errors(res) == 0


def test_ml_single_frame_and_budget(make_frames):
    fr = make_frames(5, 5, 3, None, 1, seed=4)
    sys0 = type(fr.sys)(fr.sys.h_real_block[0], fr.sys.h_imag_block[0], 0.0)
    out = ml_detect(fr.y[0], sys0, fr.pilots, fr.codebook)
    np.testing.assert_array_equal(out.bits_hat, fr.bits[0])
    big = build_codebook(32, 3)                 # Q = 4096, Q^2 > 1e7
    h = np.ones((1, 4, 32))
    with pytest.raises(ParameterError):
        ml_detect_batch(np.ones((1, 4)), iq_decouple(h, 1.0), fr.pilots, big)


def test_ml_not_worse_than_message_passing(make_frames):
    fr = make_frames(8, 8, 1, 4.0, 1500, seed=5)
    ml = fr.bit_errors(ml_detect_batch(fr.y, fr.sys, fr.pilots, fr.codebook))
    mp = fr.bit_errors(detect_batch(fr.y, fr.sys, fr.pilots, fr.prior, fr.codebook))
    assert ml > 0
    assert ml <= mp


# ---------------------------------------------------------------------------
# matched-filter bound

def test_mfb_noiseless_is_exact(make_frames):
    fr = make_frames(8, 8, 2, None, 20, seed=6)
    res = mfb_detect_batch(fr.y, fr.sys, fr.pilots, fr.prior, fr.codebook,
                           fr.frame.k_real, fr.frame.k_imag)
    assert fr.bit_errors(res) == 0


def test_mfb_single_frame(make_frames):
    fr = make_frames(8, 8, 2, 20.0, 1, seed=7)
    sys0 = type(fr.sys)(fr.sys.h_real_block[0], fr.sys.h_imag_block[0], fr.n0)
    out = mfb_detect(fr.y[0], sys0, fr.pilots, fr.prior, fr.codebook,
                     (fr.frame.k_real[0], fr.frame.k_imag[0]))
    np.testing.assert_array_equal(out.bits_hat, fr.bits[0])


def test_mfb_not_worse_than_cold_start(make_frames):
    fr = make_frames(8, 8, 1, 4.0, 1500, seed=8)
    mfb = fr.bit_errors(mfb_detect_batch(fr.y, fr.sys, fr.pilots, fr.prior, fr.codebook,
                                         fr.frame.k_real, fr.frame.k_imag))
    mp = fr.bit_errors(detect_batch(fr.y, fr.sys, fr.pilots, fr.prior, fr.codebook))
    assert mfb <= mp


# ---------------------------------------------------------------------------
# multiplexed baseline

def test_mux_rate_matching():
    cfg = MuxConfig(16, 3)
    assert cfg.b_tr == 18 and cfg.n_active == 9 and cfg.n_bits == 18
    assert cfg.symbol_energy == pytest.approx(3 / 9)
    energy = np.sum(np.abs(cfg.constellation()) ** 2) / cfg.m * cfg.n_active
    assert energy == pytest.approx(3.0)
    assert MuxConfig(8, 1).n_active == 3
    assert MuxConfig(4, 2, m=2).n_active == 4        # 4 bits on 4 BPSK streams
    with pytest.raises(ParameterError):
        MuxConfig(5, 2, m=2).n_active                   # 6 bits need 6 streams


def test_mux_bit_roundtrip():
    cfg = MuxConfig(8, 2, m=16)
    bits = np.random.default_rng(0).integers(0, 2, (10, cfg.n_bits))
    idx, x = mux_modulate(bits, cfg)
    np.testing.assert_array_equal(mux_bits(idx, cfg), bits)
    with pytest.raises(ParameterError):
        mux_modulate(bits[:, :-1], cfg)


def test_mux_identity_channel_noiseless():
    qam = qam_points(16)
    idx = np.arange(16).reshape(4, 4)
    dec, info = mux_linear_gabp_detect(qam[idx], np.broadcast_to(np.eye(4), (4, 4, 4)), qam, 0.0)
    np.testing.assert_array_equal(dec, idx)
    assert not info["failed"].any()


def test_mux_rayleigh_ber_decreases():
    rng = np.random.default_rng(1)
    cfg = MuxConfig(8, 1)
    qam = cfg.constellation()
    bers = []
    for ebn0 in (-8.0, -2.0, 12.0):
        n0 = cfg.p / (cfg.b_tr * 10 ** (ebn0 / 10))
        bits = rng.integers(0, 2, (2000, cfg.n_bits))
        idx, x = mux_modulate(bits, cfg)
        h = (rng.normal(size=(2000, 8, cfg.n_active))
             + 1j * rng.normal(size=(2000, 8, cfg.n_active))) / math.sqrt(2)
        w = (rng.normal(size=(2000, 8)) + 1j * rng.normal(size=(2000, 8))) * math.sqrt(n0 / 2)
        dec, _ = mux_linear_gabp_detect((h @ x[..., None])[..., 0] + w, h, qam, n0)
        bers.append(np.mean(mux_bits(dec, cfg) != bits))
    assert bers[2] < 0.5
    assert bers[0] > bers[1] >= bers[2]


# ---------------------------------------------------------------------------
# complexity formulas

def test_ml_complexity_examples():
    assert complexity_eval(ComplexityModel.ML, 16, 16, 3) == 662_323_200
    assert complexity_eval("ML", 16, 16, 3) == math.comb(16, 3) ** 2 * (8 * 16 * 16 + 4 * 16)
    for n in (4, 8, 13):
        assert complexity_eval("ML", n, n + 1, 1) == n * n * (8 * n * (n + 1) + 4 * (n + 1))


def test_complexity_is_exact_for_huge_inputs():
    v = complexity_eval("ML", 96, 96, 3)
    assert isinstance(v, int) and v == math.comb(96, 3) ** 2 * (8 * 96 * 96 + 4 * 96)


@settings(max_examples=60, deadline=None)
@given(model=st.sampled_from(list(ComplexityModel)), n_t=st.integers(1, 60),
       n_r=st.integers(1, 60), data=st.data())
def test_complexity_monotone(model, n_t, n_r, data):
    p = data.draw(st.integers(1, n_t))
    tau = data.draw(st.integers(1, 200))
    base = complexity_eval(model, n_t, n_r, p, tau)
    assert base > 0
    assert complexity_eval(model, n_t + 1, n_r, p, tau) >= base
    assert complexity_eval(model, n_t, n_r + 1, p, tau) >= base
    assert complexity_eval(model, n_t, n_r, p, tau + 1) >= base
    # ML and IQ_VGABP scale with C(n_t, p), which is not monotone in p
    if p + 1 <= n_t and model in (ComplexityModel.UVD, ComplexityModel.E_UVD):
        assert complexity_eval(model, n_t, n_r, p + 1, tau) >= base


def test_uvd_quadratic_order_in_n_t():
    r = complexity_eval("UVD", 8192, 16, 2) / complexity_eval("UVD", 4096, 16, 2)
    assert r == pytest.approx(4.0, rel=1e-3)


def test_enhanced_over_baseline_grows_with_p():
    for n in (16, 32, 64):
        ratios = [complexity_eval("E_UVD", n, n, p) / complexity_eval("UVD", n, n, p) / p
                  for p in range(1, 6)]
        assert all(1.0 <= r < 1.5 for r in ratios)


@pytest.mark.parametrize("args", [(0, 4, 1, 10), (4, 4, 5, 10), (4, 4, 1, 0), (4.5, 4, 1, 10)])
def test_complexity_rejects_bad_arguments(args):
    with pytest.raises(ParameterError):
        complexity_eval("UVD", *args)
