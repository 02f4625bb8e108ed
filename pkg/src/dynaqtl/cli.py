"""Command-line entry point: fit, scan, permute, bootstrap, simulate, power.

Machine-readable outputs (CSV, SVG figures) go to files under --out-dir;
the resolved configuration, progress, and human-readable summaries go to
standard error.  All randomness is governed by --seed, and per-replicate
seeding makes results identical for any --workers value.

Exit codes: 0 success, 2 usage error, 3 parse error, 4 consistency
error, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .covariance import sigma_from
from .data import (
    ConsistencyError,
    ParseError,
    load_dataset,
    write_dataset,
    write_scan_result,
)
from .estimator import (
    EstimationError,
    default_bases,
    diagonal_mask,
    fit_full,
    fit_null,
)
from .genetics import DESIGNS, GeneticsError, position_on_map, qtl_probs, scan_grid
from .inference import (
    bootstrap_se,
    covariance_parameters,
    declare_qtls,
    genome_scan,
    lr_statistic,
    permutation_threshold,
)
from .parallel import resolve_workers
from .simulate import (
    default_truth,
    load_truth,
    run_power_study,
    save_truth,
    simulate_population,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_CONSISTENCY = 4
EXIT_NUMERICAL = 5


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _print_config(args: argparse.Namespace) -> None:
    _log(f"[{args.subcommand}] resolved configuration:")
    for key in sorted(vars(args)):
        if key in ("func", "subcommand"):
            continue
        _log(f"  {key} = {getattr(args, key)}")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--phenotypes", required=True, help="long CSV: individual,trait,time,value")
    p.add_argument("--genotypes", required=True, help="wide CSV: individual,<marker>,... (1/2/NA)")
    p.add_argument("--map", dest="map_path", required=True, help="CSV: group,marker,position_cM")


def _fit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-basis", "-K", type=int, default=5, help="spline basis size per trait")
    p.add_argument("--design", choices=DESIGNS, default="ril-selfing")
    p.add_argument("--uncorrelated", action="store_true",
                   help="constrain the trait covariance to be diagonal")


def _common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1,
                   help="process count for replicate-level parallelism "
                        "(capped by DYNAQTL_WORKERS)")
    p.add_argument("--out-dir", default=".", help="directory for output files")


def _load(args):
    dataset = load_dataset(args.phenotypes, args.genotypes, args.map_path)
    bases = default_bases(dataset, args.n_basis)
    return dataset, bases


def _write_table(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_scan(args) -> int:
    from .report import plot_lr_profile

    out = _out_dir(args)
    dataset, bases = _load(args)
    t0 = time.time()
    grid = scan_grid(dataset.linkage_map, args.step)
    _log(f"[scan] {dataset.n_individuals} individuals, "
         f"{len(dataset.linkage_map.marker_names)} markers, "
         f"{len(grid)} grid positions")

    def progress(k, total, sp, lr):
        group = dataset.linkage_map.groups[sp.group_index].name
        _log(f"[scan] {k + 1}/{total} group {group} @ {sp.position_cM:.1f} cM: "
             f"LR = {lr:.2f}")

    result = genome_scan(
        dataset, args.step, args.design, bases=bases,
        correlated=not args.uncorrelated, positions=grid, progress=progress,
    )
    if args.n_perm > 0:
        def perm_progress(r, total, max_lr):
            _log(f"[scan] permutation {r + 1}/{total}: max LR = {max_lr:.2f}")

        result.threshold = permutation_threshold(
            dataset, args.step, args.n_perm, args.alpha, args.seed,
            design=args.design, bases=bases,
            correlated=not args.uncorrelated,
            workers=args.workers, progress=perm_progress,
        )
        result.qtl_calls = declare_qtls(result.positions, result.lr, result.threshold)
    write_scan_result(result, out / "scan.csv")
    plot_lr_profile(result, out / "scan.svg")

    best = result.argmax_position()
    _log(f"[scan] max LR {result.max_lr:.2f} at group "
         f"{result.group_names[best.group_index]} position {best.position_cM:.1f} cM")
    if result.threshold is not None:
        _log(f"[scan] threshold ({args.n_perm} permutations, "
             f"alpha={args.alpha}): {result.threshold:.2f}")
        if result.qtl_calls:
            for gi, pos, peak in result.qtl_calls:
                _log(f"[scan] QTL: group {result.group_names[gi]} at "
                     f"{pos:.1f} cM (LR = {peak:.2f})")
        else:
            _log("[scan] no QTL exceeds the threshold")
    _log(f"[scan] wrote {out / 'scan.csv'} and {out / 'scan.svg'} "
         f"({time.time() - t0:.1f} s)")
    return EXIT_OK


def cmd_fit(args) -> int:
    from .report import plot_mean_curves

    out = _out_dir(args)
    dataset, bases = _load(args)
    free_mask = diagonal_mask(dataset.n_traits) if args.uncorrelated else None
    sp = position_on_map(dataset.linkage_map, args.group, args.position)
    omega = qtl_probs(dataset, sp, args.design)
    null_fit = fit_null(dataset, bases=bases, free_mask=free_mask)
    fit = fit_full(dataset, omega, bases=bases, free_mask=free_mask)
    names, values = covariance_parameters(sigma_from(fit.param))
    _log(f"[fit] loglik H1 = {fit.loglik:.4f}, H0 = {null_fit.loglik:.4f}, "
         f"LR = {lr_statistic(null_fit, fit):.2f}")
    for name, value in zip(names, values):
        _log(f"[fit] {name} = {value:.4f}")
    _write_table(
        out / "fit.csv",
        ["quantity", "value"],
        [["loglik_h1", repr(fit.loglik)], ["loglik_h0", repr(null_fit.loglik)],
         ["lr", repr(lr_statistic(null_fit, fit))]]
        + [[n, repr(float(v))] for n, v in zip(names, values)],
    )
    k = np.cumsum([0] + [b.n_basis for b in bases])
    _write_table(
        out / "coefficients.csv",
        ["genotype", "trait", "basis", "coefficient"],
        [
            [j + 1, h + 1, b + 1, repr(float(fit.coefficients[j, k[h] + b]))]
            for j in range(fit.coefficients.shape[0])
            for h in range(dataset.n_traits)
            for b in range(bases[h].n_basis)
        ],
    )
    plot_mean_curves(bases, fit.coefficients, out / "curves.svg")
    _log(f"[fit] wrote {out / 'fit.csv'}, {out / 'coefficients.csv'}, "
         f"{out / 'curves.svg'}")
    return EXIT_OK


def cmd_permute(args) -> int:
    out = _out_dir(args)
    dataset, bases = _load(args)

    def progress(r, total, max_lr):
        _log(f"[permute] {r + 1}/{total}: max LR = {max_lr:.2f}")

    threshold, max_lrs = permutation_threshold(
        dataset, args.step, args.n_perm, args.alpha, args.seed,
        design=args.design, bases=bases, correlated=not args.uncorrelated,
        workers=args.workers, progress=progress, return_max_lrs=True,
    )
    _write_table(
        out / "permutations.csv",
        ["replicate", "max_LR"],
        [[r, repr(float(v))] for r, v in enumerate(max_lrs)],
    )
    _log(f"[permute] threshold (alpha={args.alpha}, n={args.n_perm}): "
         f"{threshold:.4f}")
    _log(f"[permute] wrote {out / 'permutations.csv'}")
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    out = _out_dir(args)
    dataset, bases = _load(args)
    sp = position_on_map(dataset.linkage_map, args.group, args.position)
    omega = qtl_probs(dataset, sp, args.design)
    fit_h1 = fit_full(dataset, omega, bases=bases)
    fit_h0 = fit_null(dataset, bases=bases)

    def progress(r, total, _res):
        _log(f"[bootstrap] replicate {r + 1}/{total}")

    report = bootstrap_se(
        dataset, fit_h1, fit_h0, omega, args.n_boot, args.seed,
        bases=bases, workers=args.workers, progress=progress,
    )
    _write_table(
        out / "bootstrap.csv",
        ["parameter", "h1_estimate", "h1_se", "h0_estimate", "h0_se"],
        [
            [name, repr(float(e1)), repr(float(s1)), repr(float(e0)), repr(float(s0))]
            for name, e1, s1, e0, s0 in zip(
                report.parameter_names, report.h1_estimates, report.h1_se,
                report.h0_estimates, report.h0_se,
            )
        ],
    )
    _log(f"[bootstrap] converged replicates: H1 {report.n_converged_h1}, "
         f"H0 {report.n_converged_h0} of {report.n_requested}")
    for name, e1, s1 in zip(report.parameter_names, report.h1_estimates, report.h1_se):
        _log(f"[bootstrap] {name} = {e1:.4f} (SE {s1:.4f})")
    _log(f"[bootstrap] wrote {out / 'bootstrap.csv'}")
    return EXIT_OK


def _resolve_truth(args):
    return load_truth(args.truth) if args.truth else default_truth()


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    truth = _resolve_truth(args)
    dataset = simulate_population(truth, args.seed)
    write_dataset(
        dataset, out / "phenotypes.csv", out / "genotypes.csv", out / "map.csv"
    )
    save_truth(truth, out / "truth.json")
    _log(f"[simulate] {dataset.n_individuals} individuals, "
         f"{dataset.n_traits} traits, "
         f"{len(dataset.linkage_map.marker_names)} markers")
    _log(f"[simulate] wrote phenotypes.csv, genotypes.csv, map.csv, "
         f"truth.json under {out}")
    return EXIT_OK


def cmd_power(args) -> int:
    out = _out_dir(args)
    truth = _resolve_truth(args)
    if args.effect_scale != 1.0:
        truth = truth.with_effect_scale(args.effect_scale)

    def progress(rep, total, detected):
        _log(f"[power] replicate {rep + 1}/{total}: "
             f"{'detected' if detected else 'not detected'}")

    power = run_power_study(
        truth, args.n_reps, args.n_perm, args.alpha, args.seed, args.step,
        progress=progress, workers=args.workers,
    )
    _write_table(
        out / "power.csv",
        ["n_reps", "n_perm", "alpha", "effect_scale", "power"],
        [[args.n_reps, args.n_perm, args.alpha, args.effect_scale, repr(power)]],
    )
    _log(f"[power] power = {power:.3f} over {args.n_reps} replicates")
    _log(f"[power] wrote {out / 'power.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynaqtl",
        description="QTL mapping for multiple dynamic traits: mixture-model "
                    "genome scans with spline mean curves.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("scan", help="LR genome scan with optional permutation threshold")
    _dataset_args(p)
    _fit_args(p)
    p.add_argument("--step", type=float, default=2.0, help="scan grid step in cM")
    p.add_argument("--n-perm", type=int, default=100,
                   help="permutation replicates for the threshold (0 = skip)")
    p.add_argument("--alpha", type=float, default=0.05)
    _common_args(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("fit", help="fit the mixture at one fixed QTL position")
    _dataset_args(p)
    _fit_args(p)
    p.add_argument("--group", required=True, help="linkage group name")
    p.add_argument("--position", type=float, required=True, help="QTL position in cM")
    _common_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("permute", help="permutation max-LR distribution and threshold")
    _dataset_args(p)
    _fit_args(p)
    p.add_argument("--step", type=float, default=2.0)
    p.add_argument("--n-perm", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.05)
    _common_args(p)
    p.set_defaults(func=cmd_permute)

    p = sub.add_parser("bootstrap", help="parametric-bootstrap covariance SEs")
    _dataset_args(p)
    _fit_args(p)
    p.add_argument("--group", required=True)
    p.add_argument("--position", type=float, required=True)
    p.add_argument("--n-boot", type=int, default=100)
    _common_args(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="simulate one dataset from a truth config")
    p.add_argument("--truth", help="truth JSON (default: packaged scenario)")
    _common_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power", help="detection power over simulated replicates")
    p.add_argument("--truth", help="truth JSON (default: packaged scenario)")
    p.add_argument("--n-reps", type=int, default=100)
    p.add_argument("--n-perm", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--step", type=float, default=2.0)
    p.add_argument("--effect-scale", type=float, default=1.0,
                   help="scale the genotype contrast (0 = null truth)")
    _common_args(p)
    p.set_defaults(func=cmd_power)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    args.workers = resolve_workers(args.workers)
    _print_config(args)
    try:
        return args.func(args)
    except ParseError as exc:
        _log(f"error (parse): {exc}")
        return EXIT_PARSE
    except ConsistencyError as exc:
        _log(f"error (consistency): {exc}")
        return EXIT_CONSISTENCY
    except GeneticsError as exc:
        _log(f"error (usage): {exc}")
        return EXIT_USAGE
    except (EstimationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        _log(f"error (numerical): {exc}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
