"""Command-line subcommands."""

import json
import math

import pytest

from gqsm.cli import load_config, main

CONFIG = """\
[system]
n_t = 6
n_r = 6
p = 1

[sweep]
detectors = alg1, ml
ebn0_db = 2, 6
frames = 200
min_errors = none
chunk = 100
seed = 5

[detector]
tau_max = 40
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(CONFIG)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_load_config(config):
    cfg = load_config(config, env={})
    assert (cfg.n_t, cfg.n_r, cfg.p, cfg.m) == (6, 6, 1, 4)
    assert cfg.detectors == ("alg1", "ml") and cfg.ebn0_db == (2.0, 6.0)
    assert cfg.min_errors is None and cfg.params.tau_max == 40
    cfg = load_config(config, env={"GQSM_SEED": "9", "GQSM_WORKERS": "2"})
    assert cfg.seed == 9 and cfg.workers == 2


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[system]\nn_t = 6\np = 1\n[detector]\nrhoo = 0.3\n")
    code, out = run(capsys, "ber", bad)
    assert code == 2 and "rhoo" in out.err
    code, out = run(capsys, "ber", tmp_path / "missing.ini")
    assert code == 2


def test_ber_writes_csv_and_sidecar(config, tmp_path, capsys):
    out = tmp_path / "ber.csv"
    code, _ = run(capsys, "ber", config, "--out", out, "--frames", "100")
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("detector,ebn0_db,frames")
    assert len(lines) == 5 and lines[1].split(",")[2] == "100"
    side = json.loads(out.with_suffix(".json").read_text())
    assert side["config"]["frames"] == 100


def test_pmf(capsys):
    code, out = run(capsys, "pmf", "--n-t", 5, "--p", 3, "--kind", "order_statistic")
    assert code == 0
    lines = out.out.splitlines()
    assert lines[0] == "p,t,mass" and lines[1] == "1,1,0.6"
    assert len(lines) == 16
    code, out = run(capsys, "pmf", "--kind", "both")
    assert out.out.splitlines()[0] == "kind,p,t,mass"


def test_rotate(capsys):
    code, out = run(capsys, "rotate", "--m", 4)
    assert code == 0
    header, row = out.out.splitlines()
    assert header == "m,theta" and row.startswith("4,")
    assert float(row.split(",")[1]) == pytest.approx(math.atan(0.5), abs=1e-6)


def test_complexity(capsys):
    code, out = run(capsys, "complexity", "--n-t", 16, "--p", 3, "--models", "ML")
    assert out.out.splitlines() == ["algorithm,n_t,n_r,p,tau,flops",
                                    "ML,16,16,3,100,662323200"]


def test_paircmp(capsys):
    code, out = run(capsys, "paircmp", "--budget", "2e9", "--candidate", "ML:16:16:3",
                    "UVD:32:32:2", "ML:32:32:3")
    rows = out.out.splitlines()
    assert rows[0] == "config,flops,budget_ratio,qualifies"
    assert [r.split(",")[-1] for r in rows[1:]] == ["1", "1", "0"]
    code, out = run(capsys, "paircmp", "--budget", "10", "--candidate", "ML:16:16:3")
    assert "no candidate" in out.out


def test_paircmp_rejects_bad_candidate(capsys):
    with pytest.raises(SystemExit):
        main(["paircmp", "--budget", "1e9", "--candidate", "ML:16:16"])


def test_subcommands_are_deterministic(config, capsys):
    for argv in (["ber", config], ["pmf"], ["rotate", "--m", "16"], ["complexity"],
                 ["paircmp", "--budget", "1e9", "--candidate", "UVD:32:32:2"]):
        _, first = run(capsys, *argv)
        _, second = run(capsys, *argv)
        assert first.out == second.out and first.out
