"""Command-line orchestration: fit, simulate, predict, validate, summarize,
serve. Every command writes a run manifest next to its outputs."""

import argparse
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import accuracy, simulate as sim
from .io import (
    DataFormatError,
    file_sha256,
    fmt,
    read_dataset,
    read_model_spec,
    spec_fingerprint,
    write_dataset,
)
from .model import ValidationError, serving_context, validate
from .prediction import _DrawViews, lambda_curve
from .sampler import dic, run, save_draws, summarize_draws
from .service import load_bundle, predict_rows, serve
from .splines import SplineDomainError, bspline_matrix

EXIT_OK = 0
EXIT_FAIL = 1  # --strict convergence failure
EXIT_ERROR = 2  # usage, data, or configuration errors
EXIT_RHAT = 3  # success, but a parameter exceeded the Rhat threshold

RHAT_THRESHOLD = 1.1
SUMMARY_COLUMNS = ("Mean", "SE(MC)", "SD", "2.5%", "97.5%", "Rhat")


class CliError(Exception):
    pass


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("vcjm")
    except Exception:
        return "0+unknown"


def _write_manifest(outdir: Path, command: str, config: dict, inputs: dict) -> None:
    doc = {
        "command": command,
        "version": _version(),
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config": config,
        "seeds": {
            "seed": config.get("seed"),
            "derivation": "all streams spawn from this seed via SeedSequence",
        },
        "inputs": {str(k): file_sha256(v) for k, v in inputs.items()},
    }
    with open(outdir / "run_manifest.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_floats(raw: str, flag: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError:
        raise CliError(f"{flag} expects comma-separated numbers, got {raw!r}")


def _parse_grid(raw: str, flag: str) -> np.ndarray:
    """Either comma-separated values or lo:hi:count."""
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise CliError(f"{flag} expects lo:hi:count, got {raw!r}")
        try:
            lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise CliError(f"{flag} expects lo:hi:count, got {raw!r}")
        if count < 2 or hi <= lo:
            raise CliError(f"{flag}: need hi > lo and count >= 2")
        return np.linspace(lo, hi, count)
    return np.array(_parse_floats(raw, flag))


def _parse_covariates(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise CliError(f"--covariate expects name=value, got {pair!r}")
        name, _, value = pair.partition("=")
        try:
            out[name] = float(value)
        except ValueError:
            raise CliError(f"--covariate {name}: {value!r} is not a number")
    return out


def _print_summary(rows, stream=None) -> None:
    stream = stream or sys.stdout
    width = max((len(r.name) for r in rows), default=9)
    header = f"{'parameter':<{width}} " + " ".join(f"{c:>10}" for c in SUMMARY_COLUMNS)
    stream.write(header + "\n")
    for r in rows:
        cells = (r.mean, r.se_mc, r.sd, r.q025, r.q975, r.rhat)
        stream.write(
            f"{r.name:<{width}} " + " ".join(f"{v:>10.4f}" for v in cells) + "\n"
        )


def _write_summary_csv(rows, path: Path) -> None:
    with open(path, "w") as fh:
        fh.write("parameter," + ",".join(SUMMARY_COLUMNS) + "\n")
        for r in rows:
            cells = (r.mean, r.se_mc, r.sd, r.q025, r.q975, r.rhat)
            fh.write(r.name + "," + ",".join(fmt(v) for v in cells) + "\n")


def cmd_fit(args) -> int:
    data = read_dataset(args.long_data, args.surv_data)
    spec = read_model_spec(args.spec)
    context = validate(spec, data)
    draws = run(
        context,
        chains=args.chains,
        n_iter=args.iter,
        burn_in=args.burnin,
        thin=args.thin,
        seed=args.seed,
    )
    out = _outdir(args.out)
    save_draws(draws, out, context)
    rows = summarize_draws(draws)
    _write_summary_csv(rows, out / "summary.csv")
    _print_summary(rows)
    result = dic(draws, context)
    with open(out / "dic.json", "w") as fh:
        json.dump(
            {
                "dic": result.dic,
                "pD": result.pD,
                "mean_deviance": result.mean_deviance,
                "plugin_deviance": result.plugin_deviance,
            },
            fh,
            indent=1,
        )
        fh.write("\n")
    print(f"DIC {result.dic:.3f} (pD {result.pD:.1f})")
    _write_manifest(
        out,
        "fit",
        {
            "long_data": args.long_data,
            "surv_data": args.surv_data,
            "spec": args.spec,
            "chains": args.chains,
            "iter": args.iter,
            "burnin": args.burnin,
            "thin": args.thin,
            "seed": args.seed,
            "strict": args.strict,
        },
        {
            args.long_data: args.long_data,
            args.surv_data: args.surv_data,
            args.spec: args.spec,
        },
    )
    worst = max((r.rhat for r in rows if np.isfinite(r.rhat)), default=1.0)
    if worst > RHAT_THRESHOLD:
        bad = [r.name for r in rows if r.rhat > RHAT_THRESHOLD]
        print(
            f"warning: Rhat exceeds {RHAT_THRESHOLD} for {', '.join(bad)}",
            file=sys.stderr,
        )
        return EXIT_FAIL if args.strict else EXIT_RHAT
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = sim.scenario_config(args.scenario)
    if args.n is not None:
        config = replace(config, n=args.n)
    dataset = sim.simulate_dataset(config, args.seed)
    out = _outdir(args.out)
    write_dataset(dataset.data, out / "longitudinal.csv", out / "survival.csv")
    sim.write_truth(dataset, out / "truth.json")
    print(sim.summary_line(dataset))
    _write_manifest(
        out,
        "simulate",
        {
            "scenario": args.scenario,
            "n": config.n,
            "seed": args.seed,
        },
        {
            "longitudinal.csv": out / "longitudinal.csv",
            "survival.csv": out / "survival.csv",
            "truth.json": out / "truth.json",
        },
    )
    return EXIT_OK


def _read_history(path: str) -> list[tuple]:
    import csv

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"time", "value"} <= set(reader.fieldnames):
            raise CliError(f"{path}: history csv needs columns time,value")
        for k, rec in enumerate(reader, start=2):
            try:
                rows.append((float(rec["time"]), float(rec["value"])))
            except (TypeError, ValueError):
                raise CliError(f"{path}:{k}: malformed history row")
    return rows


def cmd_predict(args) -> int:
    bundle = load_bundle(args.draws, subsample=args.subsample, mh_steps=args.mh_steps)
    if args.spec is not None:
        spec = read_model_spec(args.spec)
        if spec_fingerprint(spec) != bundle.fingerprint:
            raise CliError(
                "spec fingerprint does not match the draws; refusing to predict"
            )
    history = _read_history(args.history) if args.history else []
    covariates = _parse_covariates(args.covariate)
    dt_grid = _parse_floats(args.dt_grid, "--dt-grid")
    rows = predict_rows(bundle, covariates, history, args.t, dt_grid, args.seed)
    out = _outdir(args.out)
    with open(out / "predictions.csv", "w") as fh:
        fh.write("dt,mean,lo,hi\n")
        for r in rows:
            fh.write(
                f"{fmt(r['dt'])},{fmt(r['mean'])},{fmt(r['lo'])},{fmt(r['hi'])}\n"
            )
    for r in rows:
        print(f"dt {r['dt']:g}: pi {r['mean']:.4f} [{r['lo']:.4f}, {r['hi']:.4f}]")
    _write_manifest(
        out,
        "predict",
        {
            "draws": args.draws,
            "history": args.history,
            "t": args.t,
            "dt_grid": args.dt_grid,
            "covariates": covariates,
            "subsample": args.subsample,
            "mh_steps": args.mh_steps,
            "seed": args.seed,
        },
        {args.history: args.history} if args.history else {},
    )
    return EXIT_OK


def _parse_specs(pairs) -> dict:
    specs = {}
    for pair in pairs:
        if "=" in pair:
            name, _, path = pair.partition("=")
        else:
            name, path = Path(pair).stem, pair
        if name in specs:
            raise CliError(f"duplicate model name {name!r}")
        specs[name] = read_model_spec(path)
    return specs


def cmd_validate(args) -> int:
    data = read_dataset(args.long_data, args.surv_data)
    specs = _parse_specs(args.spec)
    times = _parse_floats(args.times, "--times")
    settings = dict(
        chains=args.chains,
        n_iter=args.iter,
        burn_in=args.burnin,
        thin=args.thin,
        subsample=args.subsample,
        mh_steps=args.mh_steps,
        jobs=args.jobs,
    )
    if args.mode == "internal":
        rows = accuracy.cross_validate(
            data, specs, times, args.dt,
            folds=args.folds, reps=args.reps, seed=args.seed, **settings,
        )
    else:
        ids = data.subject_ids
        if args.holdout >= len(ids):
            raise CliError(
                f"--holdout {args.holdout} must be smaller than the {len(ids)} subjects"
            )
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, 104729]))
        chosen = set(rng.permutation(len(ids))[: args.holdout].tolist())
        test_ids = [sid for k, sid in enumerate(ids) if k in chosen]
        train_ids = [sid for k, sid in enumerate(ids) if k not in chosen]
        rows = accuracy.external_validate(
            data.subset(train_ids), data.subset(test_ids), specs, times, args.dt,
            seed=args.seed, **settings,
        )
    out = _outdir(args.out)
    accuracy.write_rows(rows, out / "validation.csv")
    finite = [r.value for r in rows if np.isfinite(r.value)]
    print(
        f"{len(rows)} rows ({len(finite)} finite) -> {out / 'validation.csv'}"
    )
    _write_manifest(
        out,
        "validate",
        {
            "mode": args.mode,
            "long_data": args.long_data,
            "surv_data": args.surv_data,
            "specs": list(args.spec),
            "folds": args.folds,
            "reps": args.reps,
            "holdout": args.holdout,
            "times": args.times,
            "dt": args.dt,
            "seed": args.seed,
            **{k: v for k, v in settings.items()},
        },
        {args.long_data: args.long_data, args.surv_data: args.surv_data},
    )
    return EXIT_OK


def cmd_summarize(args) -> int:
    bundle = load_bundle(args.draws)
    draws = bundle.draws
    context = bundle.context
    out = _outdir(args.out)
    rows = summarize_draws(draws)
    _write_summary_csv(rows, out / "summary.csv")
    _print_summary(rows)
    grid = _parse_grid(args.lambda_grid, "--lambda-grid")
    with open(out / "lambda.csv", "w") as fh:
        fh.write("term,name,t,mean,lo,hi\n")
        for term_index in range(len(context.spec.association.terms)):
            curve = lambda_curve(context, draws, grid, term=term_index)
            for j in range(len(grid)):
                fh.write(
                    f"{term_index},{curve.name},{fmt(curve.t[j])},"
                    f"{fmt(curve.mean[j])},{fmt(curve.lo[j])},{fmt(curve.hi[j])}\n"
                )
    views = _DrawViews(context, draws.stacked())
    basis = bspline_matrix(context.spec.baseline, grid)
    log_h0 = basis @ views.gamma_h0.T
    h0 = np.exp(log_h0)
    with open(out / "baseline.csv", "w") as fh:
        fh.write("t,mean,lo,hi\n")
        for j in range(len(grid)):
            fh.write(
                f"{fmt(grid[j])},{fmt(np.mean(h0[j]))},"
                f"{fmt(np.percentile(h0[j], 2.5))},{fmt(np.percentile(h0[j], 97.5))}\n"
            )
    _write_manifest(
        out,
        "summarize",
        {"draws": args.draws, "lambda_grid": args.lambda_grid, "seed": None},
        {},
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    serve(
        args.draws,
        port=args.port,
        seed=args.seed,
        subsample=args.subsample,
        mh_steps=args.mh_steps,
        host=args.host,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcjm",
        description="Joint models with time-varying association coefficients",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a joint model by MCMC")
    fit.add_argument("--long-data", required=True)
    fit.add_argument("--surv-data", required=True)
    fit.add_argument("--spec", required=True)
    fit.add_argument("--chains", type=int, default=3)
    fit.add_argument("--iter", type=int, default=20000)
    fit.add_argument("--burnin", type=int, default=5000)
    fit.add_argument("--thin", type=int, default=2)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", required=True)
    fit.add_argument("--strict", action="store_true",
                     help="treat Rhat above 1.1 as failure")
    fit.set_defaults(func=cmd_fit)

    simu = sub.add_parser("simulate", help="generate a scenario dataset")
    simu.add_argument("--scenario", required=True)
    simu.add_argument("--n", type=int, default=None)
    simu.add_argument("--seed", type=int, default=0)
    simu.add_argument("--out", required=True)
    simu.set_defaults(func=cmd_simulate)

    pred = sub.add_parser("predict", help="dynamic predictions from saved draws")
    pred.add_argument("--draws", required=True)
    pred.add_argument("--history", default=None,
                      help="csv with columns time,value; omit for empty history")
    pred.add_argument("--t", type=float, required=True)
    pred.add_argument("--dt-grid", required=True)
    pred.add_argument("--covariate", action="append", metavar="NAME=VALUE")
    pred.add_argument("--spec", default=None,
                      help="optional spec file checked against the draws fingerprint")
    pred.add_argument("--subsample", type=int, default=500)
    pred.add_argument("--mh-steps", type=int, default=25)
    pred.add_argument("--seed", type=int, default=0)
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=cmd_predict)

    val = sub.add_parser("validate", help="internal or external validation")
    val.add_argument("--mode", choices=("internal", "external"), required=True)
    val.add_argument("--long-data", required=True)
    val.add_argument("--surv-data", required=True)
    val.add_argument("--spec", action="append", required=True,
                     metavar="NAME=PATH")
    val.add_argument("--folds", type=int, default=5)
    val.add_argument("--reps", type=int, default=1)
    val.add_argument("--holdout", type=int, default=200)
    val.add_argument("--times", required=True)
    val.add_argument("--dt", type=float, required=True)
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--chains", type=int, default=2)
    val.add_argument("--iter", type=int, default=2000)
    val.add_argument("--burnin", type=int, default=1000)
    val.add_argument("--thin", type=int, default=2)
    val.add_argument("--subsample", type=int, default=500)
    val.add_argument("--mh-steps", type=int, default=25)
    val.add_argument("--jobs", type=int, default=1)
    val.add_argument("--out", required=True)
    val.set_defaults(func=cmd_validate)

    summ = sub.add_parser("summarize", help="summary table and curve exports")
    summ.add_argument("--draws", required=True)
    summ.add_argument("--lambda-grid", default="0:19.5:101",
                      help="comma-separated times or lo:hi:count")
    summ.add_argument("--out", required=True)
    summ.set_defaults(func=cmd_summarize)

    srv = sub.add_parser("serve", help="local prediction service")
    srv.add_argument("--draws", required=True)
    srv.add_argument("--port", type=int, default=8000)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--seed", type=int, default=0)
    srv.add_argument("--subsample", type=int, default=500)
    srv.add_argument("--mh-steps", type=int, default=25)
    srv.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DataFormatError, ValidationError, SplineDomainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
