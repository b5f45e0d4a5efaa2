"""cordscan command line: phantom, fit, aggregate, stats, classify.

Stages exchange NIfTI volumes and CSV tables on disk so any stage can be
re-run or replaced with real preprocessed data. Every stochastic
subcommand takes --seed, echoes it, and writes a JSON sidecar with the
parameters next to its outputs. Exit codes: 0 success, 1 completed but
computation degeneracies were reported, 2 input or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

import cordscan
from cordscan.ballstick import FitConfig
from cordscan.classify import (DEFAULT_THRESHOLDS, run_combinations)
from cordscan.cohort import CohortTable, METRICS
from cordscan.errors import CordscanError
from cordscan.gradients import read_scheme, write_scheme
from cordscan.phantom import generate, spec_from_json
from cordscan.regions import build_cohort, lesion_stats, summarize_levels
from cordscan.stats import cohort_welch, correlation_matrix, pooling_analysis, \
    pooling_report
from cordscan.volume import read_volume, write_volume
from cordscan.volume_fit import fit_volume

log = logging.getLogger("cordscan")

EXIT_OK = 0
EXIT_DEGENERATE = 1
EXIT_USAGE = 2


def _setup_logging():
    level = os.environ.get("CORDSCAN_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _sidecar(out_path, payload: dict) -> None:
    payload = dict(payload)
    payload["version"] = cordscan.__version__
    side = Path(str(out_path) + ".json")
    side.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_metrics(text: str) -> tuple[str, ...]:
    combo = tuple(tok.strip().lower() for tok in text.split(",") if tok.strip())
    bad = [m for m in combo if m not in METRICS]
    if bad:
        raise argparse.ArgumentTypeError(
            f"unknown metric(s) {bad}; choose from {','.join(METRICS)}")
    return combo


def _parse_combos(text: str) -> list[tuple[str, ...]]:
    return [_parse_metrics(part) for part in text.split(";") if part.strip()]


def _parse_thr_grid(text: str) -> tuple[float, ...]:
    """Either 'lo:hi:step' or a comma list."""
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        if step <= 0 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad threshold range {text!r}")
        n = int(round((hi - lo) / step))
        return tuple(round(lo + i * step, 10) for i in range(n + 1))
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_levels(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out or any(not 1 <= l <= 7 for l in out):
        raise argparse.ArgumentTypeError(f"bad level list {text!r}")
    return tuple(sorted(set(out)))


# ------------------------------------------------------------ phantom

def cmd_phantom(args) -> int:
    text = Path(args.spec).read_text()
    spec = spec_from_json(text)
    if args.seed is not None:
        spec.seed = args.seed
    elif spec.noise != "none" and spec.sigma > 0 and "seed" not in json.loads(text):
        print("error: noisy phantom needs a seed (spec file or --seed)",
              file=sys.stderr)
        return EXIT_USAGE
    print(f"seed: {spec.seed}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = generate(spec)
    write_volume(result.dwi, out_dir / "dwi.nii.gz")
    write_scheme(result.scheme, out_dir / "bval", out_dir / "bvec")
    write_volume(result.labels.levels, out_dir / "levels.nii.gz")
    write_volume(result.labels.wm_weight, out_dir / "wm.nii.gz")
    write_volume(result.labels.lesion, out_dir / "lesion.nii.gz")
    for name, vol in result.truth.items():
        write_volume(vol, out_dir / f"truth_{name}.nii.gz")
    _sidecar(out_dir / "dwi.nii.gz", {
        "command": "phantom", "seed": spec.seed, "spec_file": str(args.spec),
        "dims": list(spec.dims), "noise": spec.noise, "sigma": spec.sigma})
    n_cord = int((np.asarray(result.labels.levels.data) > 0).sum())
    print(f"phantom: {n_cord} cord voxels, {len(result.scheme)} measurements "
          f"-> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    dwi = read_volume(args.dwi)
    scheme = read_scheme(args.bval, args.bvec)
    mask = read_volume(args.mask)
    cfg = FitConfig(d0=args.d0, lambda_perp=args.lambda_perp)
    maps = fit_volume(dwi, scheme, mask, args.model, cfg, threads=args.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, vol in maps.items():
        write_volume(vol, out_dir / f"{name}.nii.gz")
    flags = np.asarray(maps["flags"].data)
    n_masked = int((np.asarray(mask.data) > 0).sum())
    n_flagged = int((flags[np.asarray(mask.data) > 0] > 0).sum())
    wall = time.perf_counter() - t0
    _sidecar(out_dir / "fit", {
        "command": "fit", "model": args.model, "d0": args.d0,
        "lambda_perp": args.lambda_perp, "threads": args.threads,
        "voxels": n_masked, "flagged": n_flagged, "seconds": round(wall, 3)})
    print(f"fit: {args.model} on {n_masked} voxels in {wall:.1f}s "
          f"({n_flagged} flagged) -> {out_dir}")
    return EXIT_DEGENERATE if n_flagged else EXIT_OK


# ----------------------------------------------------------- aggregate

def cmd_aggregate(args) -> int:
    from cordscan.phantom import LabelMap  # type shared with the phantom

    metrics_dir = Path(args.metrics_dir)
    maps = {}
    for m in METRICS:
        for suffix in (".nii.gz", ".nii"):
            p = metrics_dir / f"{m}{suffix}"
            if p.is_file():
                maps[m] = read_volume(p)
                break
        else:
            print(f"error: missing metric map {metrics_dir}/{m}.nii.gz",
                  file=sys.stderr)
            return EXIT_USAGE
    labels = LabelMap(levels=read_volume(args.levels),
                      wm_weight=read_volume(args.wm),
                      lesion=read_volume(args.lesion) if args.lesion else None)
    requested = args.level_subset
    summaries = summarize_levels(args.subject, maps, labels, levels=requested,
                                 binary_wm=args.binary_wm)
    fractions = {}
    if args.group == "patient" and labels.lesion is not None:
        for s in summaries:
            st = lesion_stats(labels, s.level)
            fractions[(s.subject, s.level)] = st.lesion_fraction
    table = build_cohort(summaries, {args.subject: args.group}, fractions)

    out = Path(args.out)
    if args.append and out.is_file():
        existing = CohortTable.from_csv(out)
        for row in table.rows:
            existing.append(row)
        table = existing
    table.to_csv(out)
    _sidecar(out, {"command": "aggregate", "subject": args.subject,
                   "group": args.group, "levels": list(requested),
                   "binary_wm": args.binary_wm})
    print(f"aggregate: {args.subject} -> {len(summaries)} level rows in {out}")
    return EXIT_OK if len(summaries) == len(requested) else EXIT_DEGENERATE


# --------------------------------------------------------------- stats

def cmd_stats_welch(args) -> int:
    table = CohortTable.from_csv(args.table)
    res = cohort_welch(table, thresholds=args.thr)
    group_names = ["nawm"] + [f"ms_{t:g}" for t in args.thr]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["metric", "v_n", "v_mean", "v_std"]
        for g in group_names:
            header += [f"{g}_n", f"{g}_mean", f"{g}_std", f"{g}_p"]
        writer.writerow(header)
        for metric in METRICS:
            first = res[metric][group_names[0]]
            row = [metric, first.n_a, repr(first.mean_a), repr(first.std_a)]
            for g in group_names:
                r = res[metric][g]
                row += [r.n_b, repr(r.mean_b), repr(r.std_b), repr(r.p)]
            writer.writerow(row)
    _sidecar(Path(args.out), {"command": "stats welch",
                              "thresholds": list(args.thr)})
    print(f"welch: {len(METRICS)} metrics x {len(group_names)} comparisons "
          f"-> {args.out}")
    return EXIT_OK


def cmd_stats_corr(args) -> int:
    table = CohortTable.from_csv(args.table)
    if args.rows == "v":
        rows = table.v_rows()
    elif args.rows == "ms":
        from cordscan.cohort import select_ms_rows
        rows = select_ms_rows(table, args.thr)
    else:
        rows = list(table.rows)
    C = correlation_matrix(table, rows)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric"] + list(METRICS))
        for i, m in enumerate(METRICS):
            writer.writerow([m] + [repr(float(v)) for v in C[i]])
    _sidecar(Path(args.out), {"command": "stats corr", "rows": args.rows,
                              "thr": args.thr, "n_rows": len(rows)})
    print(f"corr: {len(rows)} rows -> {args.out}")
    return EXIT_OK


def cmd_stats_levels(args) -> int:
    table = CohortTable.from_csv(args.table)
    comps = pooling_analysis(table, group=args.group, alpha=args.alpha)
    report = pooling_report(comps)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "level_a", "level_b", "p_adjusted",
                         "significant"])
        for metric, comp in comps.items():
            for (l1, l2), p in sorted(comp.p_adjusted.items()):
                writer.writerow([metric, l1, l2, repr(p),
                                 int(p < comp.alpha)])
    for metric, ivs in report.intervals.items():
        spans = " ".join(f"[C{lo}-C{hi}]" for lo, hi in ivs)
        print(f"{metric}: homogeneous {spans}")
    spans = " ".join(f"[C{lo}-C{hi}]" for lo, hi in report.intersection)
    print(f"intersection: {spans}")
    _sidecar(Path(args.out), {
        "command": "stats levels", "group": args.group, "alpha": args.alpha,
        "intervals": {m: [list(iv) for iv in ivs]
                      for m, ivs in report.intervals.items()},
        "intersection": [list(iv) for iv in report.intersection]})
    return EXIT_OK


# ------------------------------------------------------------ classify

def cmd_classify(args) -> int:
    table = CohortTable.from_csv(args.table)
    print(f"seed: {args.seed}")
    results = run_combinations(
        table, combos=args.combos,
        thr_grid=args.thr, seed=args.seed, n_splits=args.splits,
        train_frac=args.train_frac, ridge=args.ridge, no_leak=args.no_leak,
        include_singletons=not args.no_singletons)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["combo", "thr", "auc_mean", "auc_std", "n_pos", "n_neg"])
        for r in results:
            writer.writerow([",".join(r.combo), f"{r.thr:g}",
                             repr(r.auc_mean), repr(r.auc_std),
                             r.n_pos, r.n_neg])
    _sidecar(Path(args.out), {
        "command": "classify", "seed": args.seed, "splits": args.splits,
        "train_frac": args.train_frac, "ridge": args.ridge,
        "no_leak": args.no_leak,
        "thresholds": [float(t) for t in args.thr],
        "combos": [",".join(c) for c in {r.combo for r in results}]})
    if args.svg:
        from cordscan.plotting import plot_auc_vs_threshold
        plot_auc_vs_threshold(results, args.svg)
        print(f"plot -> {args.svg}")
    skipped = [r for r in results if r.n_splits == 0]
    print(f"classify: {len(results)} cells ({len(skipped)} skipped) -> {args.out}")
    return EXIT_DEGENERATE if skipped else EXIT_OK


# ---------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cordscan",
        description="Spinal cord diffusion MRI microstructure and "
                    "vertebral-level group analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="JSON phantom description")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override the seed in the spec file")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("fit", help="voxel-wise model fit")
    p.add_argument("--dwi", required=True)
    p.add_argument("--bval", required=True)
    p.add_argument("--bvec", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--model", choices=("dti", "ballstick"), required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--d0", type=float, default=3.0e-3,
                   help="ball diffusivity, mm^2/s")
    p.add_argument("--lambda-perp", type=float, default=0.2e-3,
                   help="stick perpendicular eigenvalues, mm^2/s (0 = pure stick)")
    p.add_argument("--threads", type=int, default=0,
                   help="worker processes (0 = all cores)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("aggregate", help="per-level WM-weighted means")
    p.add_argument("--metrics-dir", required=True,
                   help="directory with fww/stick_ad/ad/fa/md/rd maps")
    p.add_argument("--levels", required=True, help="vertebral level NIfTI")
    p.add_argument("--wm", required=True, help="WM weight NIfTI")
    p.add_argument("--lesion", default=None, help="lesion mask NIfTI")
    p.add_argument("--subject", required=True)
    p.add_argument("--group", choices=("healthy", "patient"), required=True)
    p.add_argument("--level-subset", type=_parse_levels, default=(2, 3, 4),
                   help="levels to aggregate, e.g. 2-4 or 1-7 (default 2-4)")
    p.add_argument("--binary-wm", action="store_true",
                   help="threshold WM weight at 0.5 instead of weighting")
    p.add_argument("--out", required=True, help="cohort CSV")
    p.add_argument("--append", action="store_true",
                   help="append to an existing cohort CSV")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("stats", help="group statistics")
    stats_sub = p.add_subparsers(dest="stats_command", required=True)

    q = stats_sub.add_parser("welch", help="healthy vs patient group tests")
    q.add_argument("--table", required=True)
    q.add_argument("--thr", type=_parse_thr_grid, default=(0.05, 0.10),
                   help="lesion thresholds, e.g. 0.05,0.10")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_stats_welch)

    q = stats_sub.add_parser("corr", help="metric correlation matrix")
    q.add_argument("--table", required=True)
    q.add_argument("--rows", choices=("all", "v", "ms"), default="v")
    q.add_argument("--thr", type=float, default=0.10,
                   help="lesion threshold for --rows ms")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_stats_corr)

    q = stats_sub.add_parser("levels", help="level pooling report")
    q.add_argument("--table", required=True)
    q.add_argument("--group", choices=("healthy", "patient"), default="healthy")
    q.add_argument("--alpha", type=float, default=0.05)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_stats_levels)

    p = sub.add_parser("classify", help="LDA / repeated-split ROC AUC")
    p.add_argument("--table", required=True)
    p.add_argument("--combos", type=_parse_combos, default=None,
                   help='e.g. "FA,MD,RD;FWW,STICK_AD,MD,RD" (default: the '
                        'eight bundled sets)')
    p.add_argument("--thr", type=_parse_thr_grid,
                   default=DEFAULT_THRESHOLDS,
                   help="threshold grid lo:hi:step or comma list "
                        "(default 0.02:0.20:0.02)")
    p.add_argument("--splits", type=int, default=1000)
    p.add_argument("--train-frac", type=float, default=0.67)
    p.add_argument("--ridge", type=float, default=1e-8)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", default=None, help="AUC-vs-threshold plot")
    p.add_argument("--no-leak", action="store_true",
                   help="standardize on the training part of each split "
                        "instead of the full matrix")
    p.add_argument("--no-singletons", action="store_true",
                   help="skip the per-metric overlay runs")
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "combos", None) is None and args.command == "classify":
        from cordscan.classify import DEFAULT_COMBOS
        args.combos = list(DEFAULT_COMBOS)
    try:
        return args.func(args)
    except CordscanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
