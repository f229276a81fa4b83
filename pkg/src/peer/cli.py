"""Command-line interface: gsvd | fit | diagnose | tune | simulate | report.

Exit codes: 0 success, 1 computation error (structured JSON record on
stderr), 2 usage error.  Matrix arguments are CSV paths; penalty
descriptors are inline JSON or paths to JSON files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .dataio import (
    fit_to_dict,
    load_dataset,
    load_matrix,
    load_vector,
    parse_penalty_arg,
    penalty_from_config,
    read_json,
    save_matrix,
    save_vector,
    spec_from_config,
    tuning_to_dict,
    write_json,
)
from .diagnostics import diagnose
from .errors import ConfigError, PeerError
from .estimators import fit_penalized
from .gsvd import compute_gsvd
from .penalties import orthonormal_projector
from .simulate import run_study, write_rows_csv
from .tuning import grid_search, reml_select_alpha


def _cmd_gsvd(args):
    X = load_matrix(args.x)
    L = load_matrix(args.l)
    fac = compute_gsvd(X, L)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(out / "U.csv", fac.U)
    save_matrix(out / "V.csv", fac.V)
    save_matrix(out / "W.csv", fac.W)
    save_matrix(out / "Wtilde.csv", fac.Wtilde)
    save_vector(out / "sigma.csv", fac.sigma)
    save_vector(out / "mu.csv", fac.mu)

    n, m, p = fac.n, fac.m, fac.p
    X_rec = (fac.U * fac.sigma) @ fac.Winv[p - n :, :]
    L_rec = fac.V @ (fac.mu_full[:m, None] * fac.Winv[:m, :])
    report = {
        "n": n,
        "m": m,
        "p": p,
        "q": fac.q,
        "d": fac.d,
        "rank_tol": fac.rank_tol,
        "reconstruction_x": float(
            np.linalg.norm(X - X_rec) / np.linalg.norm(X)
        ),
        "reconstruction_l": float(
            np.linalg.norm(fac.penalty_reduced - L_rec)
            / np.linalg.norm(fac.penalty_reduced)
        ),
        "sigma_mu_identity_err": float(
            np.abs(fac.sigma_full**2 + fac.mu_full**2 - 1.0).max()
        ),
    }
    write_json(out / "report.json", report)
    print(
        f"gsvd: n={n} m={m} p={p} d={fac.d}; "
        f"reconstruction {report['reconstruction_x']:.2e} / {report['reconstruction_l']:.2e}"
    )
    return 0


def _cmd_fit(args):
    design, y = load_dataset(args.x, args.y, center=args.center)
    cfg = parse_penalty_arg(args.penalty)
    L = penalty_from_config(cfg, design.p, X=design.values)
    fit = fit_penalized(design, L, y, args.alpha, path=args.path)
    write_json(args.out, fit_to_dict(fit))
    print(f"fit: method={fit.method} alpha={args.alpha:g} -> {args.out}")
    return 0


def _cmd_diagnose(args):
    X = load_matrix(args.x)
    beta = load_vector(args.beta_true)
    cfg = parse_penalty_arg(args.penalty)
    L = penalty_from_config(cfg, X.shape[1], X=X)
    fac = compute_gsvd(X, L)
    d = diagnose(X, L, args.alpha, beta, args.sigma_eps, factors=fac)

    nd = fac.n - fac.d
    sig = fac.sigma
    mu = fac.mu
    filt = sig**2 / (sig**2 + args.alpha * mu**2)
    bias_w = args.alpha * mu**2 / (sig**2 + args.alpha * mu**2)
    per_component = [
        {
            "sigma": float(sig[k]),
            "mu": float(mu[k]),
            "filter": float(filt[k]),
            "bias_weight": float(bias_w[k]),
            "in_nullspace": bool(k >= nd),
        }
        for k in range(fac.n)
    ]
    report = {
        "alpha": d.alpha,
        "sigma_eps": d.sigma_eps,
        "bias_norm": float(np.linalg.norm(d.bias)),
        "trace_var": d.variance_trace,
        "mse": d.mse_theoretical,
        "mse_bound": d.mse_bound,
        "per_component": per_component,
    }
    write_json(args.out, report)
    print(f"diagnose: mse={d.mse_theoretical:.6g} bound={d.mse_bound:.6g} -> {args.out}")
    return 0


def _cmd_tune(args):
    X = load_matrix(args.x)
    y = load_vector(args.y)
    if args.method == "reml":
        if args.penalty is None:
            raise ConfigError("tune --method reml needs --penalty")
        L = penalty_from_config(parse_penalty_arg(args.penalty), X.shape[1], X=X)
        res = reml_select_alpha(X, L, y)
    else:
        if args.prior is None or args.grid is None:
            raise ConfigError("tune --method grid needs --prior and --grid")
        prior = orthonormal_projector(load_matrix(args.prior))
        grid = [float(s) for s in args.grid.split(",") if s.strip()]
        beta = load_vector(args.beta_true) if args.beta_true else None
        res = grid_search(
            X, prior, y, grid,
            const=args.const, criterion=args.criterion, beta_true=beta,
        )
    write_json(args.out, tuning_to_dict(res))
    print(f"tune: method={res.method} alpha_hat={res.alpha_hat:.6g} -> {args.out}")
    return 0


def _cmd_simulate(args):
    spec = spec_from_config(read_json(args.spec))
    result = run_study(spec, out_dir=args.out, workers=args.workers)
    n_err = sum(1 for r in result.rows if r["error"])
    print(
        f"simulate: {spec.scenario} x{spec.replicates} replicates, "
        f"{len(result.rows)} rows ({n_err} errors) -> {args.out}"
    )
    return 0


def _cmd_report(args):
    with open(args.results, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{args.results} has no data rows")

    groups = {}
    for r in rows:
        key = (r["scenario"], r["r2"], r["snr"], r["method"])
        groups.setdefault(key, []).append(r)

    out_rows = []
    for (scenario, r2, snr, method), grp in groups.items():
        ok = [g for g in grp if not g.get("error")]
        mse = np.array([float(g["mse"]) for g in ok])
        pe = np.array([float(g["pe"]) for g in ok])
        mse = mse[np.isfinite(mse)]
        pe = pe[np.isfinite(pe)]
        out_rows.append(
            {
                "scenario": scenario,
                "r2": float(r2),
                "snr": float(snr),
                "method": method,
                "replicates_ok": len(ok),
                "mse_median": float(np.median(mse)) if mse.size else float("nan"),
                "mse_mean": float(np.mean(mse)) if mse.size else float("nan"),
                "pe_median_x1000": float(1e3 * np.median(pe)) if pe.size else float("nan"),
                "pe_mean_x1000": float(1e3 * np.mean(pe)) if pe.size else float("nan"),
            }
        )
    columns = (
        "scenario", "r2", "snr", "method", "replicates_ok",
        "mse_median", "mse_mean", "pe_median_x1000", "pe_mean_x1000",
    )
    write_rows_csv(args.out, out_rows, columns)

    print(f"{'method':<24}{'ok':>5}{'mse_median':>14}{'pe_median_x1000':>18}")
    for r in out_rows:
        print(
            f"{r['method']:<24}{r['replicates_ok']:>5}"
            f"{r['mse_median']:>14.4g}{r['pe_median_x1000']:>18.4g}"
        )
    print(f"report -> {args.out}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="peer",
        description="Structured-penalty estimation for functional linear models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gsvd", help="factor a (design, penalty) pair")
    g.add_argument("--x", required=True, help="design matrix CSV")
    g.add_argument("--l", required=True, help="penalty matrix CSV")
    g.add_argument("--out", default="gsvd_out", help="output directory")
    g.set_defaults(func=_cmd_gsvd)

    f = sub.add_parser("fit", help="penalized least-squares fit")
    f.add_argument("--x", required=True)
    f.add_argument("--y", required=True)
    f.add_argument("--penalty", required=True, help="JSON descriptor (inline or path)")
    f.add_argument("--alpha", type=float, default=1.0)
    f.add_argument("--path", choices=("direct", "gsvd", "standard_form"), default="gsvd")
    f.add_argument("--center", action="store_true", help="center columns and response")
    f.add_argument("--out", default="fit.json")
    f.set_defaults(func=_cmd_fit)

    d = sub.add_parser("diagnose", help="closed-form bias/variance/MSE report")
    d.add_argument("--x", required=True)
    d.add_argument("--penalty", required=True)
    d.add_argument("--alpha", type=float, required=True)
    d.add_argument("--beta-true", required=True, help="true coefficient CSV")
    d.add_argument("--sigma-eps", type=float, required=True)
    d.add_argument("--out", default="diagnose.json")
    d.set_defaults(func=_cmd_diagnose)

    t = sub.add_parser("tune", help="select tuning parameters")
    t.add_argument("--x", required=True)
    t.add_argument("--y", required=True)
    t.add_argument("--method", choices=("reml", "grid"), default="reml")
    t.add_argument("--penalty", help="penalty descriptor (reml)")
    t.add_argument("--prior", help="prior basis CSV (grid)")
    t.add_argument("--grid", help="comma-separated a values (grid)")
    t.add_argument("--const", type=float, default=1.0, help="a*b constant (grid)")
    t.add_argument(
        "--criterion", choices=("mse_oracle", "gcv_free_validation"),
        default="gcv_free_validation",
    )
    t.add_argument("--beta-true", help="true coefficient CSV (mse_oracle)")
    t.add_argument("--out", default="tune.json")
    t.set_defaults(func=_cmd_tune)

    s = sub.add_parser("simulate", help="run a replicate study from a spec")
    s.add_argument("--spec", required=True, help="SimulationSpec JSON")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=_cmd_simulate)

    r = sub.add_parser("report", help="summarize a results.csv")
    r.add_argument("--results", required=True)
    r.add_argument("--out", default="report.csv")
    r.set_defaults(func=_cmd_report)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (PeerError, np.linalg.LinAlgError, OSError, ValueError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


run_cli = main

if __name__ == "__main__":
    sys.exit(main())
