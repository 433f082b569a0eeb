"""Monte-Carlo harness: frame streams, sweeps, output format and equal-complexity filtering."""

import dataclasses
import json

import numpy as np
import pytest

from gqsm.baselines import ComplexityModel
from gqsm.core import ParameterError
from gqsm.sim import (CSV_HEADER, BerRecord, Candidate, ExperimentConfig, draw_channel,
                      equal_complexity_report, generate_frames, monotonicity_flags,
                      records_to_csv, run_ber_sweep, write_csv)


def small_cfg(**kw):
    base = dict(n_t=6, n_r=6, p=1, detectors=("alg1", "ml"), ebn0_db=(2.0, 8.0),
                frames=300, min_errors=None, chunk=100, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def test_channel_statistics():
    rng = np.random.default_rng(0)
    h = draw_channel(4, 5, rng, size=5000)
    assert h.shape == (5000, 4, 5)
    assert abs(np.mean(np.abs(h) ** 2) - 1) < 0.02
    flat = h.reshape(5000, -1)
    c = np.abs(np.mean(flat[:, 0] * np.conj(flat[:, 1])))
    assert c < 0.05
    assert abs(np.mean(h.real ** 2) - 0.5) < 0.02
    a = draw_channel(3, 3, np.random.default_rng(9))
    b = draw_channel(3, 3, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_frame_streams_do_not_depend_on_chunking():
    cfg = small_cfg()
    cb = cfg.codebook()
    whole = generate_frames(cfg, cb, 0, 10)
    part = generate_frames(cfg, cb, 4, 6)
    np.testing.assert_array_equal(whole.h[4:], part.h)
    np.testing.assert_array_equal(whole.bits[4:], part.bits)
    other = generate_frames(cfg, cb, 0, 10, stream=2)
    assert not np.array_equal(whole.h, other.h)


@pytest.mark.parametrize("kw", [dict(frames=0), dict(ebn0_db=()), dict(detectors=()),
                                dict(detectors=("zf",)), dict(chunk=0), dict(min_errors=0),
                                dict(p=7)])
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        small_cfg(**kw)


def test_sweep_records_and_pairing():
    res = run_ber_sweep(small_cfg())
    assert [(r.detector, r.ebn0_db) for r in res.records] == [
        ("alg1", 2.0), ("ml", 2.0), ("alg1", 8.0), ("ml", 8.0)]
    by = {(r.detector, r.ebn0_db): r for r in res.records}
    for e in (2.0, 8.0):
        assert by[("ml", e)].bit_errors <= by[("alg1", e)].bit_errors
    for r in res.records:
        assert r.frames == 300 and r.bits_per_frame == 4
        assert 0 <= r.ber <= 1
        assert r.ber == r.bit_errors / (r.frames * r.bits_per_frame)
        assert r.frame_errors <= r.frames


def test_noiseless_point_has_no_errors():
    res = run_ber_sweep(small_cfg(detectors=("alg1", "alg2", "mfb", "ml"), ebn0_db=(80.0,),
                                  p=2, frames=100))
    assert all(r.bit_errors == 0 and r.num_fail == 0 for r in res.records)


def test_sweep_is_reproducible_and_worker_independent():
    a = run_ber_sweep(small_cfg(min_errors=20))
    b = run_ber_sweep(small_cfg(min_errors=20))
    c = run_ber_sweep(small_cfg(min_errors=20, workers=2))
    assert records_to_csv(a.records) == records_to_csv(b.records) == records_to_csv(c.records)
    assert a.sidecar() == c.sidecar()


def test_early_stopping_counts_whole_chunks():
    res = run_ber_sweep(small_cfg(detectors=("alg1",), ebn0_db=(-4.0,), min_errors=5,
                                  chunk=50))
    r = res.records[0]
    assert r.bit_errors >= 5 and r.frames == 50


def test_unpaired_mode_uses_other_frames():
    paired = run_ber_sweep(small_cfg(ebn0_db=(2.0,)))
    unpaired = run_ber_sweep(small_cfg(ebn0_db=(2.0,), paired=False))
    assert records_to_csv(paired.records) != records_to_csv(unpaired.records)


def test_mux_detector_runs():
    res = run_ber_sweep(small_cfg(n_t=8, n_r=8, detectors=("mux",), ebn0_db=(10.0,),
                                  frames=200))
    r = res.records[0]
    assert r.bits_per_frame == 6 and r.mean_flops > 0
    assert res.sidecar()["conventions"]["mux_streams"] == 3


def test_csv_format(tmp_path):
    res = run_ber_sweep(small_cfg(frames=100))
    text = records_to_csv(res.records)
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 5
    write_csv(res, tmp_path / "out.csv")
    assert (tmp_path / "out.csv").read_text() == text
    side = json.loads((tmp_path / "out.json").read_text())
    assert side["config"]["seed"] == 3 and "workers" not in side["config"]
    assert side["conventions"]["channel"].startswith("i.i.d. Rayleigh")


def test_twelve_significant_digits():
    r = BerRecord("alg1", 10.0, 3, 1, 1, 3, 7, 10, 0, 0)
    row = records_to_csv([r]).splitlines()[1].split(",")
    assert row[4] == "0.111111111111"
    assert row[5] == "2.33333333333"


def test_monotonicity_flags():
    mk = lambda e, err: BerRecord("alg1", e, 1000, err, 0, 10, 0, 0, 0, 0)
    assert monotonicity_flags([mk(0, 100), mk(2, 50), mk(4, 52)]) == []
    flags = monotonicity_flags([mk(0, 10), mk(2, 100)])
    assert flags and flags[0]["from_db"] == 0


# ---------------------------------------------------------------------------
# equal complexity

def cands(*specs):
    return [Candidate(ComplexityModel(m), *args) for m, *args in specs]


def test_equal_complexity_low_budget_examples():
    rep = equal_complexity_report(2e9, cands(("ML", 16, 16, 3), ("UVD", 32, 32, 2),
                                             ("ML", 32, 32, 3)))
    assert rep["qualified"] == ["ML(16,16,3)", "UVD(32,32,2)"]


def test_equal_complexity_high_budget_examples():
    rep = equal_complexity_report(3e10, cands(("ML", 16, 16, 4), ("E_UVD", 32, 32, 4),
                                              ("UVD", 8, 8, 1)))
    assert rep["qualified"] == ["ML(16,16,4)", "E_UVD(32,32,4)"]
    assert [r["qualifies"] for r in rep["rows"]] == [True, True, False]


def test_equal_complexity_empty_report():
    rep = equal_complexity_report(10.0, cands(("ML", 16, 16, 3), ("UVD", 8, 8, 1)))
    assert rep["qualified"] == [] and rep["records"] == []
    assert equal_complexity_report(1e9, [])["rows"] == []
    with pytest.raises(ParameterError):
        equal_complexity_report(1e9, [], spread=0.5)


def test_equal_complexity_runs_qualifying_systems():
    sweep = dict(ebn0_db=(20.0,), frames=20, min_errors=None, chunk=20, seed=1)
    rep = equal_complexity_report(3e6, cands(("UVD", 6, 6, 1, 20), ("IQ_VGABP", 6, 6, 1)),
                                  spread=100.0, sweep=sweep)
    labels = [label for label, _ in rep["records"]]
    assert labels == ["UVD(6,6,1)"]
    assert rep["records"][0][1].detector == "alg1"
