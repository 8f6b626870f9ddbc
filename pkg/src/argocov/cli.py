"""Command-line interface: ``argocov {simulate,empirical,fit,predict,compare,curve}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import GeoPoint
from .empirical import KernelBandwidths, default_lattice_axes, moment_lattice
from .errors import (ArgoCovError, ConfigError, DegenerateDesignError, DegenerateVarianceError,
                     FitFailedError, IngestionError, InsufficientDataError, InvalidArgumentError,
                     ModelFileError, NotPositiveDefiniteError, OutOfDomainError)
from .fit import FitConfig
from .kernels import colocated_curve
from .pipeline import (SyntheticConfig, data_hash, default_b4_theta, ingest_csv, load_fit,
                       load_json_config, save_fit, simulate, write_csv)
from .predict import (best_flags, compare_models, distance_to_nearest_float, format_table, holdout_split,
                      predict_heldout, read_report, refit_models, write_report)

log = logging.getLogger("argocov")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FIT_META = "fits.json"


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, InvalidArgumentError)):
        return EXIT_CONFIG
    if isinstance(exc, (IngestionError, InsufficientDataError, ModelFileError, OutOfDomainError)):
        return EXIT_DATA
    if isinstance(exc, (NotPositiveDefiniteError, FitFailedError, DegenerateVarianceError,
                        DegenerateDesignError)):
        return EXIT_NUMERIC
    return EXIT_NUMERIC


def _pres_grid(spec: str) -> np.ndarray:
    try:
        parts = [float(x) for x in spec.split(":")]
    except ValueError:
        raise ConfigError(f"bad pressure grid {spec!r}; use start:stop:step") from None
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise ConfigError(f"bad pressure grid {spec!r}; use start:stop:step")
    lo, hi, step = parts
    return np.arange(lo, hi + step / 2, step)


def _fit_config(args) -> FitConfig:
    d = load_json_config(args.config) if getattr(args, "config", None) else {}
    try:
        cfg = FitConfig.from_dict(d)
        if getattr(args, "models", None):
            cfg = replace(cfg, models=tuple(m.strip() for m in args.models.split(",") if m.strip()))
        if getattr(args, "seed", None) is not None:
            cfg = replace(cfg, seed=args.seed)
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    d = load_json_config(args.config)
    theta = d.get("theta", "default")
    if theta == "default":
        if d.get("model", "B4") != "B4":
            raise ConfigError("the built-in default truth exists only for B4; give theta explicitly")
        d["theta"] = default_b4_theta(d.get("knots", (0.0, 100.0, 1000.0, 2000.0)), d.get("degree", 3),
                                      **d.pop("default_theta_options", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        cfg = SyntheticConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    data = simulate(cfg)
    write_csv(data, args.out)
    log.info("wrote %d observations from %d floats to %s", len(data), len(data.float_ids), args.out)
    return EXIT_OK


def cmd_empirical(args) -> int:
    data, _ = ingest_csv(args.data)
    bw = KernelBandwidths(args.lambda_h, args.lambda_v)
    lat, lon, pres = default_lattice_axes(data, args.dlat, args.dlon, args.dpres)
    lattice = moment_lattice(data, bw, lat, lon, pres)
    lattice.to_csv(args.out)
    log.info("lattice %dx%dx%d with bandwidths lambda_h=%g km^2, lambda_v=%g dbar^2",
             lat.size, lon.size, pres.size, bw.lambda_h, bw.lambda_v)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _fit_config(args)
    data, _ = ingest_csv(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"data_hash": data_hash(data), "config": cfg.to_dict(), "holdout": None, "ref": None}
    train = data
    if args.ref_lat is not None and args.ref_lon is not None:
        ref = GeoPoint(args.ref_lat, args.ref_lon, 0.0)
        meta["ref"] = [args.ref_lat, args.ref_lon]
        if args.holdout == "nearest":
            train, _, fid = holdout_split(data, ref)
            meta["holdout"] = fid
    elif args.holdout == "nearest":
        raise ConfigError("--holdout nearest needs --ref-lat and --ref-lon")
    fits = refit_models(list(cfg.models), train, cfg)
    failures = getattr(fits, "failures", {})
    for mid, f in fits.items():
        save_fit(out / f"{mid}.model", f, train, cfg.seed)
    meta["train_hash"] = data_hash(train)
    meta["models"] = sorted(fits)
    meta["failures"] = failures
    (out / FIT_META).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    for mid in sorted(fits):
        log.info("%s: loglik %.6f, aic %.6f", mid, fits[mid].loglik, fits[mid].aic)
    if not fits:
        raise FitFailedError(f"every model failed: {failures}")
    return EXIT_OK


def cmd_predict(args) -> int:
    fits_dir = Path(args.fits)
    try:
        meta = json.loads((fits_dir / FIT_META).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read {fits_dir / FIT_META}: {exc}") from None
    data, _ = ingest_csv(args.data)
    if args.ref_lat is not None and args.ref_lon is not None:
        ref = GeoPoint(args.ref_lat, args.ref_lon, 0.0)
    elif meta.get("ref"):
        ref = GeoPoint(meta["ref"][0], meta["ref"][1], 0.0)
    else:
        raise ConfigError("no reference location: pass --ref-lat/--ref-lon")
    train, test, fid = holdout_split(data, ref)
    dist = distance_to_nearest_float(data, fid)
    ids = list(meta["models"])
    reuse = meta.get("holdout") == fid and meta.get("train_hash") == data_hash(train)
    if reuse or args.no_refit:
        load_data = train if reuse else data
        fits = {mid: load_fit(fits_dir / f"{mid}.model", load_data) for mid in ids}
    else:
        cfg = FitConfig.from_dict(meta["config"])
        fits = dict(refit_models(ids, train, cfg))
    reports = {mid: predict_heldout(f, train, test, fid, dist) for mid, f in fits.items()}
    rows = compare_models(reports, fits)
    write_report(rows, args.report)
    pred_dir = Path(args.pred_dir) if args.pred_dir else Path(args.report).parent
    pred_dir.mkdir(parents=True, exist_ok=True)
    for mid, r in reports.items():
        for v, tag in enumerate(("T", "S")):
            r.write_csv(pred_dir / f"pred_{mid}_{tag}.csv", v)
    log.info("held-out float %s, %.1f km from its nearest neighbour", fid, dist)
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = []
    for path in args.report:
        rows.extend(read_report(path))
    if not rows:
        raise InsufficientDataError("no report rows")
    if len(args.report) > 1:
        rows = compare_rows(rows)
    text = format_table(rows)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def compare_rows(rows):
    best = best_flags([[r.loglik, r.aic, r.mse_T, r.mse_S] for r in rows])
    return [replace(r, best=b) for r, b in zip(rows, best)]


def cmd_curve(args) -> int:
    fit = load_fit(args.fit)
    if fit.model.spec.family != "diffop" or not fit.model.spec.bivariate:
        raise ConfigError(f"colocated correlation curves need a bivariate operator model, got {fit.model.id}")
    theta = fit.theta_hat
    if args.beta is not None:
        if fit.model.id != "B4":
            raise ConfigError("--beta applies to B4 only")
        theta = theta.with_values(beta12=args.beta)
    kp = fit.model.kernel_params(theta)
    curve = colocated_curve(kp, args.lat, _pres_grid(args.pres), args.lon)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pres", "rho"])
        for p, r in curve:
            w.writerow([repr(p), repr(r)])
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="argocov",
                                 description="Bivariate covariance models for float temperature and salinity residuals.")
    ap.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw synthetic float profiles")
    p.add_argument("--config", required=True, help="JSON simulation settings")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("empirical", help="smoothed variance/correlation lattice")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda-h", type=float, default=300.0**2, help="km^2")
    p.add_argument("--lambda-v", type=float, default=50.0**2, help="dbar^2")
    p.add_argument("--dlat", type=float, default=1.0)
    p.add_argument("--dlon", type=float, default=1.0)
    p.add_argument("--dpres", type=float, default=10.0)
    p.set_defaults(func=cmd_empirical)

    p = sub.add_parser("fit", help="fit covariance models")
    p.add_argument("--data", required=True)
    p.add_argument("--models", default="I1,B1,I3,B3,B4")
    p.add_argument("--ref-lat", type=float)
    p.add_argument("--ref-lon", type=float)
    p.add_argument("--holdout", choices=("nearest", "none"), default=None,
                   help="leave out the float nearest the reference (default when a reference is given)")
    p.add_argument("--config", help="JSON fit settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="leave-one-float-out prediction")
    p.add_argument("--fits", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--holdout", choices=("nearest",), default="nearest")
    p.add_argument("--ref-lat", type=float)
    p.add_argument("--ref-lon", type=float)
    p.add_argument("--no-refit", action="store_true", help="reuse the stored fits even if they saw the held-out float")
    p.add_argument("--report", required=True)
    p.add_argument("--pred-dir")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="comparison table with best-per-column flags")
    p.add_argument("--report", required=True, nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("curve", help="colocated correlation against pressure")
    p.add_argument("--fit", required=True)
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, default=0.0)
    p.add_argument("--pres", default="0:2000:10", help="start:stop:step in dbar")
    p.add_argument("--beta", type=float, help="override beta12 (B4)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "fit" and args.holdout is None:
        args.holdout = "nearest" if args.ref_lat is not None and args.ref_lon is not None else "none"
    try:
        return args.func(args)
    except ArgoCovError as exc:
        print(f"argocov {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except FileNotFoundError as exc:
        print(f"argocov {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
