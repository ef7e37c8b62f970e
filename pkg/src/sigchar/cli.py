"""Command-line harness for closed-form, Monte Carlo, PDE and Taylor experiments."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .charfn_mc import estimate_cf_signature, estimate_joint_bm_levy_times
from .config import ConfigError, ExperimentConfig
from .diffusion import LiftedDiffusion, SimulationError, bm, model_from_spec, resolve_threads
from .expected_sig import expected_signature_const_coeff, taylor_cf
from .identities import link_suite, run_all
from .levy_closed_form import joint_cf_bm_levy_closed, levy_cf_conditional_closed
from .path_signature import path_signature, read_path_csv
from .pde_verify import Stencil, general_residual_grid, levy_residual_grid
from .tensor_algebra import LinearFunctional

log = logging.getLogger("sigchar")

LEVY_COLUMNS = ["t", "params", "closed_re", "closed_im", "mc_re", "mc_im", "stderr", "z_score"]
TAYLOR_COLUMNS = ["t", "m", "term_re", "term_im", "magnitude", "partial_re", "partial_im", "converged", "roc_estimate"]
PHI_COLUMNS = ["degree", "power", "word", "coefficient"]
Z_GATE = 5.0


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(rows, columns, target):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    _emit(buf.getvalue(), target)


def _emit(text: str, target):
    if target is None:
        sys.stdout.write(text)
    else:
        Path(target).write_text(text)


def _target(args, cfg):
    return args.out if args.out is not None else cfg.out


def _sim(args, cfg):
    """Flags override the config; SIGCHAR_THREADS applies when --threads is absent."""
    threads = args.threads
    if threads is None and os.environ.get("SIGCHAR_THREADS"):
        threads = resolve_threads(None)
    return cfg.sim_config(seed=args.seed, threads=threads)


# --------------------------------------------------------------------------
# commands


def cmd_levy_table(cfg: ExperimentConfig, args) -> int:
    A, mu = cfg.levy_params()
    sim = _sim(args, cfg)
    times = [float(t) for t in cfg.t_grid]
    ests = estimate_joint_bm_levy_times(A, mu, times, sim)
    params = json.dumps({"Lambda": A.tolist(), "mu": mu.tolist()}, separators=(",", ":"))
    rows, worst = [], 0.0
    for t, est in zip(times, ests):
        closed = joint_cf_bm_levy_closed(t, mu, A)
        z = est.z_score(closed)
        worst = max(worst, z)
        rows.append([_fmt(t), params, _fmt(closed.real), _fmt(closed.imag), _fmt(est.mean.real), _fmt(est.mean.imag), _fmt(est.combined_stderr), _fmt(z)])
    _write_csv(rows, LEVY_COLUMNS, _target(args, cfg))
    if worst > Z_GATE:
        log.error("largest z-score %.2f exceeds %.1f", worst, Z_GATE)
        return 1
    return 0


def cmd_pde_residual(cfg: ExperimentConfig, args) -> int:
    A, _ = cfg.levy_params()
    d = A.shape[0]
    st = Stencil(float(cfg.stencil.get("h_t", 1e-3)), float(cfg.stencil.get("h_x", 1e-3)))
    tol = float(cfg.stencil.get("tol", 1e-5))
    f = lambda t, w: levy_cf_conditional_closed(t, w, A)
    rep = levy_residual_grid(A, f, cfg.t_grid, cfg.w_values, st)
    rep_half = levy_residual_grid(A, f, cfg.t_grid, cfg.w_values, st.halved())
    # same function seen as the level-2 generalized characteristic function
    L = LiftedDiffusion(bm(d), 2)
    lam = LinearFunctional.from_levels([0.0, np.zeros(d), 0.5 * A], d)
    gen = general_residual_grid(L, lam, f, [(t, w) for t, w in rep.points], st)
    ratio = rep.max_abs / rep_half.max_abs if rep_half.max_abs > 0 else float("inf")
    out = {"levy": rep.to_dict(), "levy_halved": rep_half.to_dict(), "refinement_ratio": ratio, "general_n2": gen.to_dict()}
    _emit(json.dumps(out, indent=2) + "\n", _target(args, cfg))
    print(f"{'check':<14}{'max|res|':>14}{'mean|res|':>14}", file=sys.stderr)
    for name, r in (("levy", rep), ("levy h/2", rep_half), ("general n=2", gen)):
        print(f"{name:<14}{r.max_abs:>14.3e}{r.mean_abs:>14.3e}", file=sys.stderr)
    print(f"refinement ratio {ratio:.3f}", file=sys.stderr)
    return 0 if rep.max_abs <= tol else 1


def cmd_taylor(cfg: ExperimentConfig, args) -> int:
    model = model_from_spec(cfg.model)
    if not model.is_constant_coefficient:
        raise ConfigError("taylor needs a constant-coefficient model")
    zero = np.zeros(model.d)
    mu, b = np.asarray(model.drift(zero)), model.b(zero)
    lam = cfg.functional(model.d)
    if lam.d != model.d:
        raise ConfigError(f"functional dimension {lam.d} does not match model dimension {model.d}")
    m_max = int(cfg.taylor.get("m_max", 24))
    series = expected_signature_const_coeff(mu, b, lam.n)
    rows = []
    for t in cfg.t_grid:
        diag = taylor_cf(series, lam, float(t), m_max)
        for r in diag.to_rows():
            rows.append([_fmt(t), r["m"], _fmt(r["term_re"]), _fmt(r["term_im"]), _fmt(r["magnitude"]), _fmt(r["partial_re"]), _fmt(r["partial_im"]), int(diag.converged), _fmt(diag.roc_estimate)])
    target = _target(args, cfg)
    _write_csv(rows, TAYLOR_COLUMNS, target)
    phi_rows = []
    d = series.d
    for m, poly in enumerate(series.coeffs):
        for k in range(poly.shape[0]):
            for idx in range(poly.shape[1]):
                word = "".join(str(int(c) + 1) for c in np.unravel_index(idx, (d,) * m)) if m else ""
                phi_rows.append([m, k, word, _fmt(poly[k, idx])])
    phi_target = None if target is None else Path(target).with_name(Path(target).stem + "_phi.csv")
    if phi_target is not None:
        _write_csv(phi_rows, PHI_COLUMNS, phi_target)
    return 0


def cmd_identities(cfg: ExperimentConfig, args) -> int:
    ident = cfg.identities
    seed = args.seed if args.seed is not None else int(cfg.sim.get("seed", 0))
    results = run_all(seed, int(ident["cases"]), int(ident["max_d"]), int(ident["max_n"]), float(ident["tol"]))
    if ident.get("link"):
        results.append(link_suite(seed))
    text = "".join(r.line() + "\n" for r in results)
    _emit(text, _target(args, cfg))
    return 0 if all(r.passed for r in results) else 1


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    model = model_from_spec(cfg.model)
    lam = cfg.functional(model.d)
    x = cfg.start_point(model.d)
    sim = _sim(args, cfg)
    records = []
    for t in cfg.t_grid:
        est = estimate_cf_signature(model, x, lam, float(t), sim)
        records.append(est.to_record({"t": float(t), "model": cfg.model, "x0": x.tolist()}, sim))
    _emit(json.dumps(records, indent=2) + "\n", _target(args, cfg))
    return 0


def cmd_signature(args) -> int:
    p = read_path_csv(args.path)
    sig = path_signature(p, args.depth)
    _emit(sig.to_json(indent=2) + "\n", args.out)
    return 0


COMMANDS = {
    "levy-table": (cmd_levy_table, "closed form vs Monte Carlo table for Lévy area (CSV)"),
    "pde-residual": (cmd_pde_residual, "finite-difference PDE residuals of the closed form (JSON)"),
    "taylor": (cmd_taylor, "Taylor partial sums from expected signatures (CSV)"),
    "identities": (cmd_identities, "pathwise algebraic identity suites"),
    "simulate": (cmd_simulate, "Monte Carlo characteristic function of the signature (JSON)"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigchar", description="Characteristic functions of diffusion signatures.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", type=Path, help="experiment JSON file (defaults are used when omitted)")
        sp.add_argument("--seed", type=_u64, help="override the simulation seed")
        sp.add_argument("--threads", type=_positive_int, help="worker threads (fallback: SIGCHAR_THREADS)")
        sp.add_argument("--out", type=Path, help="output file (default: stdout)")
    sp = sub.add_parser("signature", help="signature of a piecewise-linear path read from CSV (JSON)")
    sp.add_argument("path", type=Path)
    sp.add_argument("--depth", type=_nonneg_int, default=3)
    sp.add_argument("--out", type=Path)
    return parser


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "signature":
            return cmd_signature(args)
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig(experiment=args.command)
        fn, _ = COMMANDS[args.command]
        return fn(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
