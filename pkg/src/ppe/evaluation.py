"""Segmentation comparison: Hoover classification, k-value and RMSE.

Region classification follows Hoover et al. (1996) at overlap threshold
``T`` in (0.5, 1]:

* correct detection: GT region m and MS region n overlap by at least
  ``T`` of each region,
* over-segmentation: GT region m and MS regions n1..nx (x >= 2), each n_i
  lying at least ``T`` inside m, together covering at least ``T`` of m,
* under-segmentation: the same with the roles of GT and MS swapped,
* missed: a GT region in none of the above,
* noise (spurious): an MS region in none of the above.

Because ``T > 0.5`` these instances never compete for a region, except that a
correct detection takes precedence over an over-/under-segmentation that
would include it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import DimensionMismatch, InconsistentAssignment, NoPlanes
from .geometry import PARALLEL_EPS, OrganizedScan, PlaneGeometry, fit_plane_radial
from .segmentation import Segmentation

DEFAULT_THRESHOLD = 0.8


@dataclass
class HooverReport:
    threshold: float
    num_gt: int
    num_ms: int
    correct: int
    oversegmented: int
    undersegmented: int
    missed: int
    spurious: int
    mean_angle: float
    k_value: float
    rmse: Optional[float] = None
    rmse_ray: Optional[float] = None
    correct_pairs: List[Tuple[int, int]] = field(default_factory=list)
    over_instances: List[Tuple[int, Tuple[int, ...]]] = field(default_factory=list)
    under_instances: List[Tuple[int, Tuple[int, ...]]] = field(default_factory=list)
    missed_ids: List[int] = field(default_factory=list)
    spurious_ids: List[int] = field(default_factory=list)

    @property
    def f(self) -> float:
        """Fraction of ground-truth planes that are correctly detected."""
        return self.correct / self.num_gt if self.num_gt else 0.0

    def records(self) -> List[Tuple[str, float, str]]:
        """Machine-readable ``(name, value, unit)`` triples."""
        rows = [
            ("threshold", self.threshold, "1"),
            ("gt_planes", self.num_gt, "count"),
            ("ms_planes", self.num_ms, "count"),
            ("correct", self.correct, "count"),
            ("f", self.f, "1"),
            ("k", self.k_value, "1"),
            ("rmse", self.rmse, "m"),
            ("rmse_ray", self.rmse_ray, "m"),
            ("alpha", self.mean_angle, "deg"),
            ("n_o", self.oversegmented, "count"),
            ("n_u", self.undersegmented, "count"),
            ("n_m", self.missed, "count"),
            ("n_s", self.spurious, "count"),
        ]
        return [(n, float("nan") if v is None else v, u) for n, v, u in rows]

    def format_records(self, sep: str = "\t") -> str:
        lines = []
        for name, value, unit in self.records():
            if isinstance(value, (int, np.integer)):
                text = str(int(value))
            else:
                text = repr(float(value))
            lines.append(sep.join((name, text, unit)))
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        def num(v, scale=1.0, fmt="{:.1f}"):
            return "-" if v is None or not np.isfinite(v) else fmt.format(v * scale)

        head = ("f [%]", "k [%]", "RMSE [mm]", "alpha [deg]", "n_o", "n_u", "n_m", "n_s")
        vals = (num(self.f, 100), num(self.k_value, 100), num(self.rmse, 1000),
                num(self.mean_angle), str(self.oversegmented), str(self.undersegmented),
                str(self.missed), str(self.spurious))
        widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
        line1 = "  ".join(h.rjust(w) for h, w in zip(head, widths))
        line2 = "  ".join(v.rjust(w) for v, w in zip(vals, widths))
        extra = (f"GT planes: {self.num_gt}   MS planes: {self.num_ms}   "
                 f"correct: {self.correct}   threshold: {self.threshold:g}")
        return f"{line1}\n{line2}\n{extra}\n"


def overlap_table(gt: Segmentation, ms: Segmentation):
    """Pixel overlap counts between GT and MS regions.

    Returns ``(gt_ids, ms_ids, overlaps, gt_sizes, ms_sizes)``; labels 0 are
    excluded from both axes.
    """
    _check_dims(gt, ms)
    g = gt.labels.reshape(-1)
    m = ms.labels.reshape(-1)
    gt_ids = np.array(gt.ids, dtype=np.int64)
    ms_ids = np.array(ms.ids, dtype=np.int64)
    gi = np.searchsorted(gt_ids, g)
    mi = np.searchsorted(ms_ids, m)
    both = (g > 0) & (m > 0)
    O = np.zeros((gt_ids.size, ms_ids.size), dtype=np.int64)
    np.add.at(O, (gi[both], mi[both]), 1)
    gsz = np.array([gt.planes[i].count for i in gt_ids], dtype=np.int64)
    msz = np.array([ms.planes[i].count for i in ms_ids], dtype=np.int64)
    return gt_ids, ms_ids, O, gsz, msz


def _check_dims(gt: Segmentation, ms: Segmentation):
    if (gt.width, gt.height) != (ms.width, ms.height):
        raise DimensionMismatch(
            f"segmentations differ in size: {gt.width}x{gt.height} vs {ms.width}x{ms.height}"
        )


def _normal_angle(a: PlaneGeometry, b: PlaneGeometry) -> float:
    c = min(1.0, abs(float(a.normal @ b.normal)))
    return float(np.degrees(np.arccos(c)))


def compare(gt: Segmentation, ms: Segmentation, threshold: float = DEFAULT_THRESHOLD,
            scan: Optional[OrganizedScan] = None, rmse_cutoff: Optional[float] = None
            ) -> HooverReport:
    """Classify regions of ``ms`` against ``gt`` at the given overlap threshold.

    When ``scan`` is given the report also carries the RMSE of ``ms``.
    """
    if not 0.5 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0.5, 1]")
    gt_ids, ms_ids, O, gsz, msz = overlap_table(gt, ms)
    T = threshold
    in_gt = O >= T * gsz[:, None]  # fraction of the GT region
    in_ms = O >= T * msz[None, :]  # fraction of the MS region
    in_gt &= O > 0
    in_ms &= O > 0

    gt_used = np.zeros(gt_ids.size, dtype=bool)
    ms_used = np.zeros(ms_ids.size, dtype=bool)
    correct = []
    for a, b in zip(*np.nonzero(in_gt & in_ms)):
        correct.append((int(gt_ids[a]), int(ms_ids[b])))
        gt_used[a] = ms_used[b] = True

    over = []
    for a in range(gt_ids.size):
        if gt_used[a]:
            continue
        parts = np.flatnonzero(in_ms[a] & ~ms_used)
        if parts.size >= 2 and O[a, parts].sum() >= T * gsz[a]:
            over.append((int(gt_ids[a]), tuple(int(ms_ids[p]) for p in parts)))
            gt_used[a] = True
            ms_used[parts] = True

    under = []
    for b in range(ms_ids.size):
        if ms_used[b]:
            continue
        parts = np.flatnonzero(in_gt[:, b] & ~gt_used)
        if parts.size >= 2 and O[parts, b].sum() >= T * msz[b]:
            under.append((int(ms_ids[b]), tuple(int(gt_ids[p]) for p in parts)))
            ms_used[b] = True
            gt_used[parts] = True

    angles = []
    for g, m in correct:
        a, b = gt.planes[g].geometry, ms.planes[m].geometry
        if a is not None and b is not None:
            angles.append(_normal_angle(a, b))

    K = gt.width * gt.height
    k = sum(gt.planes[g].count for g, _ in correct) / K

    report = HooverReport(
        threshold=T,
        num_gt=int(gt_ids.size),
        num_ms=int(ms_ids.size),
        correct=len(correct),
        oversegmented=len(over),
        undersegmented=len(under),
        missed=int((~gt_used).sum()),
        spurious=int((~ms_used).sum()),
        mean_angle=float(np.mean(angles)) if angles else float("nan"),
        k_value=float(k),
        correct_pairs=correct,
        over_instances=over,
        under_instances=under,
        missed_ids=[int(i) for i in gt_ids[~gt_used]],
        spurious_ids=[int(i) for i in ms_ids[~ms_used]],
    )
    if scan is not None and ms.num_planes:
        report.rmse = rmse(scan, ms, cutoff=rmse_cutoff, strict=False)
        report.rmse_ray = rmse(scan, ms, per="ray", cutoff=rmse_cutoff, strict=False)
    return report


def k_value(gt: Segmentation, ms: Segmentation, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Share of all K pixels that belong to correctly detected GT planes."""
    return compare(gt, ms, threshold).k_value


def plane_errors(scan: OrganizedScan, seg: Segmentation, strict: bool = True,
                 parallel_eps: float = PARALLEL_EPS) -> Dict[int, Tuple[float, int]]:
    """Per-label ``(sum of squared radial residuals, pixel count)``.

    Labels without geometry are fitted radially first.  With ``strict`` a
    labeled ray that misses its plane raises; otherwise its plane scores inf.
    """
    if (scan.width, scan.height) != (seg.width, seg.height):
        raise DimensionMismatch("scan and segmentation differ in size")
    S, V, R = scan._arrays()
    flat = seg.labels.reshape(-1)
    out = {}
    for lab in seg.ids:
        idx = np.flatnonzero(flat == lab)
        geom = seg.planes[lab].geometry
        if geom is None:
            geom, _ = fit_plane_radial(scan, idx, parallel_eps)
        nv = V[idx] @ geom.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((geom.support - S[idx]) @ geom.normal) / nv
        bad = (np.abs(nv) < parallel_eps) | ~(t > 0) | ~scan.valid[idx]
        if bad.any():
            if strict:
                raise InconsistentAssignment(
                    f"plane {lab}: {int(bad.sum())} labeled rays do not intersect it")
            out[lab] = (float("inf"), int(idx.size))
            continue
        res = R[idx] - t
        out[lab] = (float(res @ res), int(idx.size))
    return out


def rmse(scan: OrganizedScan, seg: Segmentation, per: str = "plane",
         cutoff: Optional[float] = None, strict: bool = True) -> float:
    """Root of the summed squared radial residuals over a normaliser.

    ``per="plane"`` divides by the number of planes, ``per="ray"`` by the
    number of labeled rays.  With ``cutoff`` planes whose own value (same
    normaliser) exceeds it are left out.
    """
    if per not in ("plane", "ray"):
        raise ValueError("per must be 'plane' or 'ray'")
    errs = plane_errors(scan, seg, strict=strict)
    kept = []
    for lab, (e, n) in errs.items():
        own = np.sqrt(e) if per == "plane" else np.sqrt(e / n)
        if cutoff is not None and not own <= cutoff:
            continue
        kept.append((e, n))
    if not kept:
        raise NoPlanes("no planes to evaluate")
    total = sum(e for e, _ in kept)
    denom = len(kept) if per == "plane" else sum(n for _, n in kept)
    return float(np.sqrt(total / denom))
