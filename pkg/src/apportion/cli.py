"""Command line interface: ``apportion {estimate,predict,threshold,simulate}``.

Exit codes: 0 success, 2 invalid input or usage, 3 numerical failure
(rank deficiency, singular covariance).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import build_experiment, read_config
from .covariance import LowRankPlusIsotropic
from .errors import NumericalError, ValidationError
from .estimators import (atr_coefficients, fgls_coefficients, gls_coefficients,
                         rts_coefficients)
from .io import (file_digest, fmt, load_dictionary, read_feature_list, read_sample,
                 write_profile)
from .linalg import LeastSquares, numerical_rank
from .model import Profile, decompose
from .predictors import excitation_mask, partition, predict_atr, predict_fgls, predict_rts
from .simulation import CSV_COLUMNS, RNG_NAME, run_experiment
from .variability import gamma_threshold, standard_errors_rts

log = logging.getLogger("apportion")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class _UsageError(ValidationError):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="apportion", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def inputs(p):
        p.add_argument("--dict", required=True, type=Path, help="dictionary CSV (wide or long EEM)")
        p.add_argument("--labels", required=True, type=Path, help="source labels CSV")

    def common_out(p):
        p.add_argument("--out", type=Path, help="report JSON path (default: stdout)")
        p.add_argument("--no-timestamp", action="store_true",
                       help="omit the timestamp so reruns are byte-identical")

    def method(p):
        p.add_argument("--sample", required=True, type=Path, help="sample profile CSV")
        p.add_argument("--method", required=True, choices=("atr", "rts", "gls"))
        p.add_argument("--gamma", type=float, help="regularization for --method gls")

    est = sub.add_parser("estimate", help="estimate source proportions of one sample")
    inputs(est)
    method(est)
    est.add_argument("--se", action="store_true", help="standard errors (rts only)")
    common_out(est)

    pred = sub.add_parser("predict", help="predict unobserved entries of a sample")
    inputs(pred)
    method(pred)
    mask = pred.add_mutually_exclusive_group()
    mask.add_argument("--mask-excitation", metavar="LIST",
                      help="comma separated excitation wavelengths to treat as unobserved")
    mask.add_argument("--mask-features", metavar="FILE", type=Path,
                      help="file of feature ids to treat as unobserved")
    pred.add_argument("--completed", type=Path,
                      help="completed-profile CSV (default: next to --out)")
    common_out(pred)

    thr = sub.add_parser("threshold", help="gamma below which RTS beats ATR")
    inputs(thr)
    common_out(thr)

    sim = sub.add_parser("simulate", help="run a Monte Carlo study from a config file")
    sim.add_argument("--config", required=True, type=Path)
    sim.add_argument("--out", required=True, type=Path, help="output directory")
    sim.add_argument("--workers", type=int, help="worker threads (overrides the config)")
    sim.add_argument("--nu-floor", type=float, help="force nu* >= this value (test rigs)")
    sim.add_argument("--no-timestamp", action="store_true")
    for p in sub.choices.values():
        p.set_defaults(subparser=p)
    return ap


def _check_method_flags(args) -> None:
    if args.gamma is not None and args.method != "gls":
        raise _UsageError("--gamma is only valid with --method gls")
    if args.method == "gls" and args.gamma is None:
        raise _UsageError("--method gls requires --gamma")
    if getattr(args, "se", False) and args.method != "rts":
        raise _UsageError("--se is only available for --method rts")


def _json_number(x):
    x = float(x)
    if not math.isfinite(x):
        raise NumericalError(f"refusing to report non-finite value {x}")
    return x


def _json_array(a):
    return np.vectorize(_json_number, otypes=[float])(np.asarray(a)).tolist()


def _provenance(args, files: dict, seed=None) -> dict:
    prov = {
        "inputs": {name: {"path": str(path), "sha256": file_digest(path)}
                   for name, path in files.items()},
        "seed": seed,
        "version": __version__,
    }
    if not args.no_timestamp:
        prov["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return prov


def _threshold_fields(basis) -> dict:
    g = gamma_threshold(basis)
    return {"gamma_threshold": None if math.isinf(g) else _json_number(g),
            "gamma_threshold_infinite": math.isinf(g)}


def _basis_diagnostics(basis) -> dict:
    s = np.linalg.svd(basis.X, compute_uv=False)
    return {
        "p": basis.p,
        "n": basis.n,
        "K": basis.K,
        "rank_dictionary": numerical_rank(basis.X),
        "rank_group_means": numerical_rank(basis.group_means),
        "condition_dictionary": _json_number(s[0] / s[-1]),
        **_threshold_fields(basis),
    }


def _emit(report: dict, out: Path | None) -> None:
    text = json.dumps(report, indent=2, allow_nan=False) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _load(args):
    dictionary, design = load_dictionary(args.dict, args.labels)
    return decompose(dictionary, design)


def cmd_estimate(args) -> int:
    _check_method_flags(args)
    basis = _load(args)
    sample = read_sample(args.sample, basis.dictionary.feature_ids)
    if not sample.fully_observed:
        missing = [f for f, o in zip(sample.feature_ids, sample.observed) if not o]
        raise ValidationError(
            f"sample is missing {len(missing)} dictionary feature(s) (first: {missing[0]}); "
            "use 'predict' for partial samples")
    y = sample.values
    report = {"command": "estimate", "method": args.method, "categories": list(basis.design.category_names)}
    if args.method == "atr":
        theta = atr_coefficients(basis, y)
        resid = y - basis.group_means @ theta
    elif args.method == "rts":
        theta = rts_coefficients(basis, y)
        resid = basis.dict_ls.residual(y)
    else:
        theta = fgls_coefficients(basis, y, args.gamma)
        resid = y - basis.group_means @ theta
    report["theta"] = _json_array(theta)
    report["gamma"] = None if args.gamma is None else _json_number(args.gamma)
    if args.se:
        sse = standard_errors_rts(basis, y)
        report["standard_errors"] = _json_array(np.sqrt(np.diag(sse)))
        report["sse_matrix"] = _json_array(sse)
    report["diagnostics"] = {**_basis_diagnostics(basis),
                             "residual_norm": _json_number(np.linalg.norm(resid))}
    report["provenance"] = _provenance(
        args, {"dictionary": args.dict, "labels": args.labels, "sample": args.sample})
    _emit(report, args.out)
    return EXIT_OK


def _completed_path(args) -> Path:
    if args.completed is not None:
        return args.completed
    if args.out is not None:
        return args.out.with_name(args.out.stem + "_completed.csv")
    raise _UsageError("predict needs --completed or --out to place the completed profile")


def cmd_predict(args) -> int:
    _check_method_flags(args)
    completed_path = _completed_path(args)
    basis = _load(args)
    fids = basis.dictionary.feature_ids
    sample = read_sample(args.sample, fids)
    observed = np.array(sample.observed)
    if args.mask_excitation:
        try:
            wl = [float(t) for t in args.mask_excitation.split(",") if t.strip()]
        except ValueError:
            raise _UsageError(f"--mask-excitation: cannot parse {args.mask_excitation!r}") from None
        observed &= excitation_mask(fids, wl)
    if args.mask_features:
        index = {f: i for i, f in enumerate(fids)}
        for f in read_feature_list(args.mask_features):
            if f not in index:
                raise ValidationError(f"--mask-features: {f!r} is not a dictionary feature")
            observed[index[f]] = False
    prob = partition(basis, Profile(sample.values, fids, observed))
    if args.method == "atr":
        pred = predict_atr(prob)
        theta = LeastSquares.factor(prob.M0, "observed-row group means M0").coef(prob.y0)
    elif args.method == "rts":
        pred = predict_rts(prob)
        theta = basis.A.T @ prob.dict0_ls.coef(prob.y0)
    else:
        pred = predict_fgls(prob, args.gamma)
        theta = gls_coefficients(prob.M0, LowRankPlusIsotropic(prob.E0, args.gamma), prob.y0)
    full = prob.complete(pred)
    if not np.all(np.isfinite(full)):
        raise NumericalError("prediction is not finite")
    write_profile(completed_path, Profile.full(full, fids))
    report = {
        "command": "predict",
        "method": args.method,
        "categories": list(basis.design.category_names),
        "theta": _json_array(theta),
        "gamma": None if args.gamma is None else _json_number(args.gamma),
        "predicted_features": [fids[i] for i in prob.unobserved_rows],
        "prediction": _json_array(pred),
        "completed_profile": str(completed_path),
        "diagnostics": {
            **_basis_diagnostics(basis),
            "observed_features": int(prob.observed_rows.size),
            "unobserved_features": int(prob.q),
            "rank_observed_dictionary": numerical_rank(prob.X0),
            "residual_norm": _json_number(np.linalg.norm(prob.dict0_ls.residual(prob.y0))),
        },
    }
    files = {"dictionary": args.dict, "labels": args.labels, "sample": args.sample}
    if args.mask_features:
        files["mask_features"] = args.mask_features
    report["provenance"] = _provenance(args, files)
    _emit(report, args.out)
    return EXIT_OK


def cmd_threshold(args) -> int:
    basis = _load(args)
    report = {
        "command": "threshold",
        "categories": list(basis.design.category_names),
        **_threshold_fields(basis),
        "diagnostics": _basis_diagnostics(basis),
        "provenance": _provenance(args, {"dictionary": args.dict, "labels": args.labels}),
    }
    _emit(report, args.out)
    return EXIT_OK


def write_report_csv(path: Path, report) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in report.rows:
            w.writerow([fmt(r.alpha), r.theta_id, r.method, r.category, r.metric_name,
                        fmt(r.value), fmt(r.mc_se), r.replicates, r.seed])


def write_thetas_csv(path: Path, report) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta_id", *report.categories])
        for j, t in enumerate(report.thetas):
            w.writerow([j, *(fmt(v) for v in t)])


def _summary(report) -> dict:
    groups: dict[tuple, list[float]] = {}
    for r in report.rows:
        groups.setdefault((r.alpha, r.method, r.metric_name), []).append(r.value)
    return [{"alpha": a, "method": m, "metric_name": k, "cells": len(v),
             "mean": _json_number(np.mean(v))}
            for (a, m, k), v in sorted(groups.items())]


def cmd_simulate(args) -> int:
    settings = read_config(args.config)
    if args.nu_floor is not None:
        settings.values["nu_floor"] = repr(args.nu_floor)
    cfg = build_experiment(settings, workers=args.workers)
    report = run_experiment(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_report_csv(args.out / "report.csv", report)
    write_thetas_csv(args.out / "thetas.csv", report)
    model = report.model
    summary = {
        "command": "simulate",
        "mode": cfg.mode,
        "categories": list(report.categories),
        "alphas": list(cfg.alphas),
        "theta_count": cfg.theta_count,
        "replicates": cfg.replicates,
        "dictionary": {"p": cfg.dictionary.p, "n": cfg.dictionary.n, "K": cfg.design.K},
        "population": {"nu": _json_number(model.nu), "gamma": _json_number(model.gamma),
                       "ledoit_wolf": None if model.lw is None else {
                           "m": model.lw.m, "d2": model.lw.d2,
                           "b2_bar": model.lw.b2_bar, "b2": model.lw.b2}},
        "results": _summary(report),
        "files": ["report.csv", "thetas.csv"],
    }
    files = {"config": args.config}
    for key in ("dictionary", "labels"):
        if key in settings.values:
            files[key] = settings.base_dir / settings.values[key]
    prov = _provenance(args, files, seed=cfg.seed)
    prov["rng"] = RNG_NAME
    summary["provenance"] = prov
    _emit(summary, args.out / "summary.json")
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "predict": cmd_predict,
            "threshold": cmd_threshold, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    parser = args.subparser
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"apportion {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValidationError as exc:
        print(f"apportion {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"apportion {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"apportion {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
