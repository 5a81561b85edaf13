"""Command-line front end: ``ppe generate | extract | evaluate | sweep``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
Progress goes to stderr; data goes to files or stdout.  Every command that
writes files also writes a JSON manifest beside them.  The number of worker
processes for ``sweep`` defaults to the ``PPE_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .cluster import PpeConfig, PpeEngine, StoppingCriterion
from .errors import EmptyScan, PpeError
from .evaluation import DEFAULT_THRESHOLD, compare
from .msac import MsacConfig, msac_extract
from .scanio import load_scan, load_segmentation, save_planes, save_labels, save_scan
from .segmentation import Segmentation
from .synth import NoiseModel, Recipe, build_scene, derive_seed, simulate

logger = logging.getLogger("ppe")
THREADS_ENV = "PPE_THREADS"


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text}")
    return v


def _write_manifest(path: Path, args: argparse.Namespace, argv: Sequence[str],
                    inputs: List[str], outputs: List[str], start: float,
                    seed: Optional[int] = None, extra: Optional[dict] = None) -> None:
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    doc = {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "wall_time_s": round(time.perf_counter() - start, 3),
        "tool_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


# ------------------------------------------------------------------ generate

def cmd_generate(args, argv, start) -> int:
    recipe = Recipe.load(args.recipe)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = recipe.noise.rng_seed if args.seed is None else args.seed
    ext = ".opc.gz" if args.gzip else ".opc"
    outputs, seeds = [], []
    for i in range(args.count):
        s = derive_seed(seed, i)
        seeds.append(s)
        scene = build_scene(recipe, s)
        noise = NoiseModel(recipe.noise.sigma_angular, recipe.noise.sigma_radial, s)
        scan, gt = simulate(scene, recipe.pattern, noise)
        names = [f"scan_{i:04d}{ext}", f"labels_{i:04d}.pgm", f"planes_{i:04d}.txt"]
        save_scan(scan, out / names[0])
        save_labels(gt.labels, out / names[1])
        save_planes(gt, out / names[2])
        if args.png:
            from .plotting import save_label_png
            names.append(f"labels_{i:04d}.png")
            save_label_png(gt.labels, out / names[-1])
        outputs += [str(out / n) for n in names]
        logger.info("generated %s: %d valid rays, %d faces", names[0], scan.num_valid,
                    gt.num_planes)
    _write_manifest(out / "manifest.json", args, argv, [args.recipe], outputs, start, seed,
                    {"derived_seeds": seeds})
    return 0


# ------------------------------------------------------------------- extract

def cmd_extract(args, argv, start, parser) -> int:
    if args.method == "ppe":
        crit = [x is not None for x in (args.max_planes, args.max_increment,
                                        args.sqrt_max_increment)]
        if sum(crit) != 1:
            parser.error("ppe needs exactly one of --max-planes, --max-increment, "
                         "--sqrt-max-increment")
        if args.outlier_dist is None:
            parser.error("ppe needs --outlier-dist (use 'inf' to disable)")
    else:
        missing = [f for f, v in (("--inlier-dist", args.inlier_dist),
                                  ("--stop-fraction", args.stop_fraction),
                                  ("--seed", args.seed)) if v is None]
        if missing:
            parser.error("msac needs " + ", ".join(missing))
        if not 0 < args.stop_fraction <= 1:
            parser.error("--stop-fraction must lie in (0, 1]")

    scan = load_scan(args.scan)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = args.prefix
    extra = {}
    increments = None
    if args.method == "ppe":
        if args.max_planes is not None:
            stop = StoppingCriterion.planes(args.max_planes)
        elif args.max_increment is not None:
            stop = StoppingCriterion.increment(args.max_increment)
        else:
            stop = StoppingCriterion.increment(args.sqrt_max_increment ** 2)
        if scan.num_valid == 0:
            raise EmptyScan("scan has no valid rays")
        engine = PpeEngine(scan, PpeConfig(stop, args.outlier_dist))
        pmap = engine.run()
        seg = pmap.to_segmentation()
        increments = [h.candidate.error_increment for h in engine.history]
        extra = {"steps": len(increments), "total_error_m2": engine.total_error}
    else:
        cfg = MsacConfig(args.inlier_dist, args.stop_fraction, args.iterations, args.seed)
        seg = msac_extract(scan, cfg)
    names = [f"{prefix}labels.pgm", f"{prefix}planes.txt"]
    save_labels(seg.labels, out / names[0])
    save_planes(seg, out / names[1])
    if args.png:
        from .plotting import save_label_png
        names.append(f"{prefix}labels.png")
        save_label_png(seg.labels, out / names[-1])
    if args.figure and increments is not None:
        from .plotting import plot_increments
        names.append(f"{prefix}increments.png")
        thr = stop.max_increment if stop.max_increment is not None else None
        plot_increments(increments, out / names[-1], thr)
    logger.info("extracted %d planes", seg.num_planes)
    print(f"planes\t{seg.num_planes}\tcount")
    _write_manifest(out / f"{prefix}manifest.json", args, argv, [args.scan],
                    [str(out / n) for n in names], start,
                    args.seed if args.method == "msac" else None,
                    {**extra, "num_planes": seg.num_planes})
    return 0


# ------------------------------------------------------------------ evaluate

def _load_pair(labels, planes, scan) -> Segmentation:
    return load_segmentation(labels, planes, scan)


def cmd_evaluate(args, argv, start) -> int:
    scan = load_scan(args.scan) if args.scan else None
    gt = _load_pair(args.gt, args.gt_planes, scan)
    ms = _load_pair(args.ms, args.ms_planes, scan)
    report = compare(gt, ms, args.threshold, scan=scan, rmse_cutoff=args.rmse_cutoff)
    sys.stdout.write(report.format_table())
    sys.stdout.write(report.format_records())
    outputs = []
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.format_records())
        outputs.append(str(out))
    if args.figure:
        from .plotting import plot_comparison
        plot_comparison(gt.labels, ms.labels, args.figure,
                        ranges=None if scan is None else scan.ranges.reshape(scan.height,
                                                                             scan.width))
        outputs.append(str(args.figure))
    if outputs:
        first = Path(outputs[0])
        inputs = [p for p in (args.gt, args.ms, args.scan, args.gt_planes, args.ms_planes) if p]
        _write_manifest(first.with_name(first.name.split(".")[0] + ".manifest.json"),
                        args, argv, inputs, outputs, start)
    return 0


# --------------------------------------------------------------------- sweep

def _training_pairs(train_dir: Path):
    scans = sorted(p for p in train_dir.iterdir()
                   if p.name.startswith("scan_") and (p.name.endswith(".opc")
                                                     or p.name.endswith(".opc.gz")))
    if not scans:
        raise PpeError(f"no scan_*.opc files in {train_dir}")
    data = []
    for p in scans:
        tag = p.name[len("scan_"):].split(".")[0]
        labels = train_dir / f"labels_{tag}.pgm"
        if not labels.exists():
            raise PpeError(f"missing labels for {p.name}: expected {labels.name}")
        planes = train_dir / f"planes_{tag}.txt"
        scan = load_scan(p)
        gt = load_segmentation(labels, planes if planes.exists() else None, scan)
        data.append((scan, gt))
    return scans, data


def cmd_sweep(args, argv, start, parser) -> int:
    from .sweep import METRICS, parse_grid, sweep

    try:
        axes = parse_grid(args.grid)
    except ValueError as exc:
        parser.error(str(exc))
    train = Path(args.train_dir)
    paths, data = _training_pairs(train)
    jobs = args.jobs if args.jobs is not None else int(os.environ.get(THREADS_ENV, "1") or 1)
    try:
        result = sweep(args.method, data, axes, threshold=args.threshold,
                       rmse_cutoff=args.rmse_cutoff, jobs=max(1, jobs), seed=args.seed,
                       iterations=args.iterations)
    except ValueError as exc:
        if isinstance(exc, PpeError):
            raise
        parser.error(str(exc))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cols = result.names + list(METRICS)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in result.rows:
            w.writerow([repr(float(row[c])) for c in cols])
    stem = out.name.split(".")[0]
    best_path = out.with_name(stem + ".best.json")
    best_path.write_text(json.dumps({"method": args.method, "best": result.best},
                                    indent=2, sort_keys=True) + "\n")
    outputs = [str(out), str(best_path)]
    if args.figure:
        from .plotting import plot_sweep
        plot_sweep(result.names, result.rows, args.figure)
        outputs.append(str(args.figure))
    for name in result.names:
        print(f"best_{name}\t{result.best[name]!r}\t{_UNITS.get(name, '1')}")
    for m in METRICS:
        print(f"best_{m}\t{result.best[m]!r}\t{_UNITS.get(m, '1')}")
    _write_manifest(out.with_name(stem + ".manifest.json"), args, argv,
                    [str(p) for p in paths], outputs, start, args.seed,
                    {"jobs": max(1, jobs)})
    return 0


_UNITS = {"e": "m2", "sqrt_e": "m", "d": "m", "a": "m", "b": "1", "iterations": "count",
          "rmse": "m", "rmse_ray": "m"}


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppe", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="progress on stderr (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate synthetic scans with ground truth")
    g.add_argument("--recipe", required=True, help="scene recipe (JSON)")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=None,
                   help="base seed (default: the recipe's noise seed)")
    g.add_argument("--gzip", action="store_true", help="write gzipped scan files")
    g.add_argument("--png", action="store_true", help="also write colourised label PNGs")

    e = sub.add_parser("extract", help="extract planes from a scan")
    e.add_argument("--method", choices=("ppe", "msac"), required=True)
    e.add_argument("--scan", required=True)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--prefix", default="", help="prefix for output file names")
    e.add_argument("--max-planes", type=int, help="ppe: stop at this many planes")
    e.add_argument("--max-increment", type=float, help="ppe: stop above this increment [m^2]")
    e.add_argument("--sqrt-max-increment", type=float,
                   help="ppe: as --max-increment, given as a square root [m]")
    e.add_argument("--outlier-dist", type=_positive_float,
                   help="ppe: max endpoint distance of linked neighbours [m]")
    e.add_argument("--inlier-dist", type=_positive_float, help="msac: inlier distance [m]")
    e.add_argument("--stop-fraction", type=float, help="msac: fraction of points left over")
    e.add_argument("--seed", type=int, help="msac: random seed")
    e.add_argument("--iterations", type=int, default=500, help="msac: hypotheses per plane")
    e.add_argument("--png", action="store_true", help="also write a colourised label PNG")
    e.add_argument("--figure", action="store_true",
                   help="ppe: also plot the error increment of every step")

    v = sub.add_parser("evaluate", help="compare a segmentation against ground truth")
    v.add_argument("--gt", required=True, help="ground-truth label file")
    v.add_argument("--ms", required=True, help="label file under test")
    v.add_argument("--scan", help="scan file (needed for the RMSE)")
    v.add_argument("--gt-planes", help="ground-truth plane list (for alpha)")
    v.add_argument("--ms-planes", help="plane list of the segmentation under test")
    v.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    v.add_argument("--rmse-cutoff", type=_positive_float,
                   help="skip planes whose own RMSE exceeds this [m], e.g. 10")
    v.add_argument("--out", help="write the machine-readable records here")
    v.add_argument("--figure", help="write a GT/MS comparison figure here")

    s = sub.add_parser("sweep", help="grid-search parameters on training scans")
    s.add_argument("--method", choices=("ppe", "msac"), required=True)
    s.add_argument("--train-dir", required=True,
                   help="directory with scan_NNNN.opc[.gz] and labels_NNNN.pgm pairs")
    s.add_argument("--grid", action="append", required=True, metavar="NAME=LO:HI:N",
                   help="grid axis; repeat per parameter")
    s.add_argument("--out", required=True, help="CSV table of all grid points")
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    s.add_argument("--rmse-cutoff", type=_positive_float)
    s.add_argument("--seed", type=int, default=0, help="msac: random seed")
    s.add_argument("--iterations", type=int, default=500, help="msac: hypotheses per plane")
    s.add_argument("--jobs", type=int, default=None,
                   help=f"worker processes (default: ${THREADS_ENV} or 1)")
    s.add_argument("--figure", help="write a heatmap of mean f here")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                            stream=sys.stderr)
        start = time.perf_counter()
        sub = parser._subparsers._group_actions[0].choices[args.command]
        if args.command == "generate":
            return cmd_generate(args, argv, start)
        if args.command == "extract":
            return cmd_extract(args, argv, start, sub)
        if args.command == "evaluate":
            if not 0.5 < args.threshold <= 1:
                sub.error("--threshold must lie in (0.5, 1]")
            return cmd_evaluate(args, argv, start)
        return cmd_sweep(args, argv, start, sub)
    except SystemExit as exc:
        return int(exc.code or 0) if isinstance(exc.code, int) else 2
    except (PpeError, OSError) as exc:
        print(f"ppe: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
