"""Command-line entry point: ``gqsm {ber,pmf,rotate,complexity,paircmp}``.

All subcommands write CSV to stdout (or ``--out``); numbers carry 12
significant digits and nothing time-dependent is emitted, so identical
arguments give byte-identical output.

The ``ber`` and ``paircmp`` subcommands read an INI file::

    [system]
    n_t = 8
    n_r = 8
    p = 1
    m = 4
    ; codebook = path/to/fixture.txt

    [sweep]
    detectors = alg1, ml
    ebn0_db = 6, 8, 10
    frames = 20000
    min_errors = 200     ; "none" disables early stopping
    chunk = 500
    seed = 1
    workers = 1
    paired = true

    [detector]
    rho = 0.5
    tau_max = 100
    covariance = factored

    [enhanced]
    pick_scope = node

    [mux]
    m = 4

``GQSM_SEED`` and ``GQSM_WORKERS`` override the seed and worker count.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import __version__
from .baselines import ComplexityModel, complexity_eval
from .core import ParameterError, build_codebook, load_codebook, optimize_rotation
from .enhanced import EnhancedParams
from .priors import order_statistic_matrix, prior_matrix
from .sim import (CSV_HEADER, Candidate, ExperimentConfig, equal_complexity_report, format_rows,
                  records_to_csv, run_ber_sweep)
from .uvd import DetectorParams


def _typed(value, default):
    """Convert an INI string to the type of a dataclass default."""
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if default is None:
        v = value.strip()
        return None if v.lower() == "none" else int(v)
    return value.strip()


def _section_params(cp, section, cls):
    if not cp.has_section(section):
        return cls()
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in cp.items(section):
        if key not in defaults:
            raise ParameterError(f"unknown key {key!r} in [{section}]")
        kwargs[key] = _typed(value, defaults[key])
    return cls(**kwargs)


def _csv_list(value, conv=str):
    return tuple(conv(v.strip()) for v in value.split(",") if v.strip())


def load_config(path, env=None):
    """Build an :class:`ExperimentConfig` from an INI file plus env overrides."""
    env = os.environ if env is None else env
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path, encoding="utf-8"):
        raise ParameterError(f"cannot read config {path}")
    sysd = cp["system"] if cp.has_section("system") else {}
    sw = cp["sweep"] if cp.has_section("sweep") else {}
    try:
        n_t = int(sysd["n_t"])
        p = int(sysd["p"])
    except KeyError as exc:
        raise ParameterError(f"[system] needs {exc.args[0]}") from None
    codebook = sysd.get("codebook")
    if codebook and codebook.strip().lower() != "generated":
        codebook = str((Path(path).parent / codebook.strip()).resolve())
    else:
        codebook = None
    min_err = sw.get("min_errors", "200").strip()
    kwargs = dict(
        n_t=n_t, n_r=int(sysd.get("n_r", n_t)), p=p, m=int(sysd.get("m", 4)),
        detectors=_csv_list(sw.get("detectors", "alg1")),
        ebn0_db=_csv_list(sw.get("ebn0_db", "10"), float),
        frames=int(sw.get("frames", 20000)),
        min_errors=None if min_err.lower() == "none" else int(min_err),
        chunk=int(sw.get("chunk", 500)),
        seed=int(sw.get("seed", 0)),
        workers=int(sw.get("workers", 1)),
        paired=_typed(sw.get("paired", "true"), True),
        prior_kind=sw.get("prior", "empirical").strip(),
        codebook_path=codebook,
        params=_section_params(cp, "detector", DetectorParams),
        eparams=_section_params(cp, "enhanced", EnhancedParams),
        mux_m=int(cp["mux"].get("m", 4)) if cp.has_section("mux") else 4,
    )
    if env.get("GQSM_SEED"):
        kwargs["seed"] = int(env["GQSM_SEED"])
    if env.get("GQSM_WORKERS"):
        kwargs["workers"] = int(env["GQSM_WORKERS"])
    return ExperimentConfig(**kwargs)


def _emit(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ber(args):
    cfg = load_config(args.config)
    if args.frames is not None:
        cfg = dataclasses.replace(cfg, frames=args.frames)
    progress = None
    if args.verbose:
        def progress(r):
            print(f"{r.detector} {r.ebn0_db:g} dB: {r.bit_errors}/{r.frames} frames "
                  f"ber={r.ber:.3e}", file=sys.stderr)
    result = run_ber_sweep(cfg, progress=progress)
    _emit(records_to_csv(result.records), args.out)
    if args.out:
        Path(args.out).with_suffix(".json").write_text(
            json.dumps(result.sidecar(), indent=2, sort_keys=True, default=str) + "\n",
            encoding="utf-8")
    return 0


def cmd_pmf(args):
    if args.codebook:
        cb = load_codebook(args.codebook)
    else:
        cb = build_codebook(args.n_t, args.p)
    rows = []
    kinds = ("empirical", "order_statistic") if args.kind == "both" else (args.kind,)
    for kind in kinds:
        masses = (prior_matrix(cb).masses if kind == "empirical"
                  else order_statistic_matrix(cb.n_t, cb.p).masses)
        for p in range(cb.p):
            for t in range(cb.n_t):
                row = (p + 1, t + 1, float(masses[p, t]))
                rows.append(((kind,) + row) if len(kinds) > 1 else row)
    header = ("kind", "p", "t", "mass") if len(kinds) > 1 else ("p", "t", "mass")
    _emit(format_rows(header, rows), args.out)
    return 0


def cmd_rotate(args):
    rows = [(m, optimize_rotation(m, args.grid_step)) for m in args.m]
    _emit(format_rows(("m", "theta"), rows), args.out)
    return 0


def cmd_complexity(args):
    rows = []
    models = [ComplexityModel(m) for m in args.models]
    for model in models:
        for p in args.p:
            for n_t in args.n_t:
                if p > n_t:
                    continue
                n_r = args.n_r if args.n_r is not None else n_t
                flops = complexity_eval(model, n_t, n_r, p, args.tau)
                rows.append((model.value, n_t, n_r, p, args.tau, flops))
    _emit(format_rows(("algorithm", "n_t", "n_r", "p", "tau", "flops"), rows), args.out)
    return 0


def _parse_candidate(text):
    parts = text.split(":")
    if len(parts) not in (4, 5):
        raise argparse.ArgumentTypeError(
            f"candidate {text!r} must look like MODEL:N_T:N_R:P[:TAU]")
    try:
        return Candidate(ComplexityModel(parts[0]), *(int(v) for v in parts[1:]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def cmd_paircmp(args):
    sweep = None
    if args.config:
        cfg = load_config(args.config)
        sweep = dict(ebn0_db=cfg.ebn0_db, frames=cfg.frames, min_errors=cfg.min_errors,
                     chunk=cfg.chunk, seed=cfg.seed, workers=cfg.workers, m=cfg.m,
                     params=cfg.params, eparams=cfg.eparams)
    rep = equal_complexity_report(args.budget, args.candidate, spread=args.spread,
                                  sweep=sweep)
    rows = [(r["label"], r["flops"], r["ratio"], r["qualifies"]) for r in rep["rows"]]
    text = format_rows(("config", "flops", "budget_ratio", "qualifies"), rows)
    if not rep["qualified"]:
        text += "# no candidate within the budget window\n"
    if rep["records"]:
        text += "\n" + format_rows(("config",) + CSV_HEADER,
                                    [(label,) + r.row() for label, r in rep["records"]])
    _emit(text, args.out)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="gqsm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("ber", help="run a BER sweep from an INI config")
    b.add_argument("config")
    b.add_argument("--out", help="CSV path; a .json sidecar is written next to it")
    b.add_argument("--frames", type=int, help="override the frame count")
    b.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    b.set_defaults(func=cmd_ber)

    p = sub.add_parser("pmf", help="print prior mass vectors (p, t, mass)")
    p.add_argument("--n-t", type=int, default=5)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--codebook", help="codebook fixture instead of the generated one")
    p.add_argument("--kind", choices=("empirical", "order_statistic", "both"),
                   default="empirical")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pmf)

    r = sub.add_parser("rotate", help="optimal IQ rotation angles")
    r.add_argument("--m", type=int, nargs="+", default=[4, 16, 32, 64, 128, 256])
    r.add_argument("--grid-step", type=float, default=1e-4)
    r.add_argument("--out")
    r.set_defaults(func=cmd_rotate)

    c = sub.add_parser("complexity", help="closed-form FLOP counts")
    c.add_argument("--n-t", type=int, nargs="+", default=[8, 16, 24, 32, 48, 64, 96])
    c.add_argument("--n-r", type=int, help="receive antennas (default: equal to n_t)")
    c.add_argument("--p", type=int, nargs="+", default=[1, 2, 3])
    c.add_argument("--tau", type=int, default=100)
    c.add_argument("--models", nargs="+", default=[m.value for m in ComplexityModel],
                   choices=[m.value for m in ComplexityModel])
    c.add_argument("--out")
    c.set_defaults(func=cmd_complexity)

    q = sub.add_parser("paircmp", help="equal-complexity comparison")
    q.add_argument("--budget", type=float, required=True)
    q.add_argument("--candidate", type=_parse_candidate, nargs="+", required=True,
                   help="MODEL:N_T:N_R:P[:TAU], MODEL in ML, IQ_VGABP, UVD, E_UVD")
    q.add_argument("--spread", type=float, default=5.0,
                   help="qualifying window is [budget/spread, budget*spread]")
    q.add_argument("--config", help="INI config; when given, qualifying systems are simulated")
    q.add_argument("--out")
    q.set_defaults(func=cmd_paircmp)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"gqsm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
