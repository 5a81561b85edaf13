"""Grid search of extraction parameters against labelled training scans.

Grid axes are given as ``name=lo:hi:n`` (``n`` evenly spaced values, both
ends included) or ``name=v`` for a single value.  PPE understands ``e``
(maximum error increment, m^2) or ``sqrt_e`` (its square root, m) plus ``d``
(outlier distance, m).  MSAC understands ``a`` (inlier distance, m), ``b``
(stop fraction) and ``iterations``.

For PPE a run with threshold ``e`` is a prefix of a run with any larger
threshold, so all ``e`` values of one ``(d, scan)`` pair come out of a single
engine run.  Work units are independent and may run in worker processes;
results are collected by index, so the output does not depend on the number
of workers.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cluster import extract_increment_path
from .errors import EmptyGrid, NoPlanes
from .evaluation import DEFAULT_THRESHOLD, HooverReport, compare
from .geometry import OrganizedScan
from .msac import MsacConfig, msac_extract
from .segmentation import Segmentation

logger = logging.getLogger(__name__)

PPE_PARAMS = ("e", "sqrt_e", "d")
MSAC_PARAMS = ("a", "b", "iterations")
METRICS = ("f", "k", "rmse", "rmse_ray")


@dataclass(frozen=True)
class GridAxis:
    name: str
    values: Tuple[float, ...]


def parse_axis(spec: str) -> GridAxis:
    """Parse ``name=lo:hi:n`` or ``name=value``."""
    name, sep, rng = spec.partition("=")
    name = name.strip()
    if not sep or not name:
        raise ValueError(f"grid axis must look like name=lo:hi:n, got {spec!r}")
    parts = rng.split(":")
    try:
        if len(parts) == 1:
            values = (float(parts[0]),)
        elif len(parts) == 3:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
            if n < 0:
                raise ValueError
            # 12 significant digits keep 0.1 from printing as 0.09999999999999999
            values = tuple(float(f"{v:.12g}") for v in np.linspace(lo, hi, n)) if n > 1 else (
                (lo,) if n == 1 else ())
        else:
            raise ValueError
    except ValueError:
        raise ValueError(f"bad grid range in {spec!r}; expected lo:hi:n") from None
    return GridAxis(name, values)


def parse_grid(specs: Sequence[str]) -> List[GridAxis]:
    axes = [parse_axis(s) for s in specs]
    names = [a.name for a in axes]
    if len(set(names)) != len(names):
        raise ValueError("grid axis given twice")
    return axes


@dataclass
class SweepResult:
    names: List[str]
    rows: List[dict]
    best: dict
    per_scan: List[List[HooverReport]] = field(default_factory=list, repr=False)


def _check_axes(method: str, axes: Sequence[GridAxis]) -> None:
    allowed = PPE_PARAMS if method == "ppe" else MSAC_PARAMS
    for a in axes:
        if a.name not in allowed:
            raise ValueError(f"unknown {method} parameter {a.name!r}; expected one of {allowed}")
        if not a.values:
            raise EmptyGrid(f"grid axis {a.name!r} has no values")
    names = {a.name for a in axes}
    if method == "ppe" and len(names & {"e", "sqrt_e"}) != 1:
        raise ValueError("ppe sweep needs exactly one of e or sqrt_e")


def _report(gt: Segmentation, ms: Segmentation, scan: OrganizedScan, threshold, cutoff):
    try:
        return compare(gt, ms, threshold, scan=scan, rmse_cutoff=cutoff)
    except NoPlanes:
        # every plane was cut off; metrics other than the RMSE still count
        return compare(gt, ms, threshold)


def _ppe_unit(args):
    scan, gt, d, es, threshold, cutoff = args
    segs = extract_increment_path(scan, es, outlier_distance=d)
    return [_report(gt, s, scan, threshold, cutoff) for s in segs]


def _msac_unit(args):
    scan, gt, config, threshold, cutoff = args
    return [_report(gt, msac_extract(scan, config), scan, threshold, cutoff)]


def _mean(values) -> float:
    vals = [math.inf if v is None or not np.isfinite(v) else v for v in values]
    return float(np.mean(vals))


def sweep(method: str, data: Sequence[Tuple[OrganizedScan, Segmentation]],
          axes: Sequence[GridAxis], threshold: float = DEFAULT_THRESHOLD,
          rmse_cutoff: Optional[float] = None, jobs: int = 1, seed: int = 0,
          iterations: int = 500) -> SweepResult:
    """Evaluate every grid point on every scan and pick the best mean f.

    Ties go to the lower mean RMSE, then to the lexicographically smaller
    parameter tuple (in axis order).
    """
    if method not in ("ppe", "msac"):
        raise ValueError("method must be 'ppe' or 'msac'")
    if not data:
        raise EmptyGrid("no training scans")
    if not axes:
        raise EmptyGrid("empty parameter grid")
    _check_axes(method, axes)
    names = [a.name for a in axes]
    points = list(itertools.product(*(a.values for a in axes)))

    units, owners = [], []
    if method == "ppe":
        e_name = "e" if "e" in names else "sqrt_e"
        e_pos = names.index(e_name)
        rest = [i for i in range(len(names)) if i != e_pos]
        groups: Dict[tuple, List[int]] = {}
        for pi, p in enumerate(points):
            groups.setdefault(tuple(p[i] for i in rest), []).append(pi)
        for key, members in groups.items():
            params = dict(zip([names[i] for i in rest], key))
            d = params.get("d", math.inf)
            es = [points[pi][e_pos] ** (2 if e_name == "sqrt_e" else 1) for pi in members]
            for si, (scan, gt) in enumerate(data):
                units.append((scan, gt, d, es, threshold, rmse_cutoff))
                owners.append((members, si))
        worker = _ppe_unit
    else:
        for pi, p in enumerate(points):
            params = dict(zip(names, p))
            cfg = MsacConfig(params.get("a", 0.05), params.get("b", 0.1),
                             int(params.get("iterations", iterations)), seed)
            for si, (scan, gt) in enumerate(data):
                units.append((scan, gt, cfg, threshold, rmse_cutoff))
                owners.append(([pi], si))
        worker = _msac_unit

    logger.info("sweep: %d grid points, %d work units, %d jobs", len(points), len(units), jobs)
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(worker, units))
    else:
        outputs = []
        for i, u in enumerate(units):
            outputs.append(worker(u))
            logger.info("sweep: unit %d/%d done", i + 1, len(units))

    per_point: List[List[Optional[HooverReport]]] = [[None] * len(data) for _ in points]
    for (members, si), reports in zip(owners, outputs):
        for pi, rep in zip(members, reports):
            per_point[pi][si] = rep

    rows = []
    for p, reps in zip(points, per_point):
        row = dict(zip(names, p))
        row["f"] = float(np.mean([r.f for r in reps]))
        row["k"] = float(np.mean([r.k_value for r in reps]))
        row["rmse"] = _mean([r.rmse for r in reps])
        row["rmse_ray"] = _mean([r.rmse_ray for r in reps])
        rows.append(row)
    best = min(rows, key=lambda r: (-r["f"], r["rmse"], tuple(r[n] for n in names)))
    return SweepResult(names, rows, dict(best), per_point)
