"""MSAC baseline: sequential plane detection with a truncated quadratic score.

Each round draws ``iterations_per_plane`` three-point hypotheses from the
points still unassigned, keeps the one minimising ``sum(min(d^2, a^2))`` over
orthogonal distances ``d``, labels its inliers (``d <= a``) and removes them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import DegenerateSet, TooFewPoints
from .geometry import OrganizedScan, PlaneGeometry, pca_plane
from .segmentation import PlaneEntry, Segmentation

COLLINEAR_TOL = 1e-9
# consecutive degenerate samples tolerated before a round gives up
MAX_DEGENERATE_DRAWS = 100_000
_CHUNK = 64


@dataclass(frozen=True)
class MsacConfig:
    inlier_distance: float
    stop_fraction: float
    iterations_per_plane: int = 500
    rng_seed: int = 0

    def __post_init__(self):
        if not self.inlier_distance > 0:
            raise ValueError("inlier_distance must be positive")
        if not 0 < self.stop_fraction <= 1:
            raise ValueError("stop_fraction must lie in (0, 1]")
        if self.iterations_per_plane < 1:
            raise ValueError("iterations_per_plane must be positive")


@dataclass
class MsacRound:
    """Diagnostics of one detection round."""

    normals: np.ndarray  # (H, 3) hypothesis normals
    offsets: np.ndarray  # (H,) n.x = offset
    scores: np.ndarray  # (H,)
    best: int
    num_remaining: int
    num_inliers: int


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def msac_score(points, normal, offset, a: float) -> float:
    d = np.asarray(points, dtype=np.float64) @ np.asarray(normal) - offset
    return float(np.minimum(d * d, a * a).sum())


def _sample_hypotheses(P: np.ndarray, count: int, rng: np.random.Generator):
    n = P.shape[0]
    normals = np.empty((count, 3))
    offsets = np.empty(count)
    h = 0
    misses = 0
    while h < count:
        i, j, k = rng.integers(0, n, 3)
        u = P[j] - P[i]
        w = P[k] - P[i]
        c = np.cross(u, w)
        norm = np.linalg.norm(c)
        if i == j or j == k or i == k or not norm > COLLINEAR_TOL * np.linalg.norm(u) * np.linalg.norm(w):
            misses += 1
            if misses > MAX_DEGENERATE_DRAWS:
                break
            continue
        misses = 0
        normals[h] = c / norm
        offsets[h] = normals[h] @ P[i]
        h += 1
    return normals[:h], offsets[:h]


def _scores(P: np.ndarray, normals: np.ndarray, offsets: np.ndarray, a: float) -> np.ndarray:
    out = np.empty(normals.shape[0])
    a2 = a * a
    for s in range(0, normals.shape[0], _CHUNK):
        D = P @ normals[s:s + _CHUNK].T - offsets[s:s + _CHUNK]
        out[s:s + _CHUNK] = np.minimum(D * D, a2).sum(axis=0)
    return out


def msac_extract(scan: OrganizedScan, config: MsacConfig,
                 trace: Optional[List[MsacRound]] = None) -> Segmentation:
    """Sequential MSAC plane extraction; unassigned pixels get label 0.

    Inlier sets are not split into connected components, so coplanar but
    disconnected surfaces end up in one plane.  Each plane's stored geometry is
    an orthogonal least-squares refit to its inliers.  Pass a list as
    ``trace`` to collect per-round diagnostics.
    """
    valid_idx = np.flatnonzero(scan.valid)
    K = valid_idx.size
    if K < 3:
        raise TooFewPoints(f"need at least 3 valid points, got {K}")
    points = scan.points
    a = float(config.inlier_distance)
    rng = make_rng(config.rng_seed)
    labels = np.zeros(scan.size, dtype=np.int64)
    planes = {}
    remaining = valid_idx
    while remaining.size > config.stop_fraction * K and remaining.size >= 3:
        P = points[remaining]
        normals, offsets = _sample_hypotheses(P, config.iterations_per_plane, rng)
        if normals.shape[0] == 0:
            break
        scores = _scores(P, normals, offsets, a)
        best = int(np.argmin(scores))
        inl = np.abs(P @ normals[best] - offsets[best]) <= a
        if trace is not None:
            trace.append(MsacRound(normals, offsets, scores, best,
                                   int(remaining.size), int(inl.sum())))
        if inl.sum() < 3:
            break
        members = remaining[inl]
        label = len(planes) + 1
        try:
            geom = pca_plane(points[members], scan.origin)
        except DegenerateSet:
            n = normals[best]
            if n @ (scan.origin - points[members[0]]) < 0:
                n = -n
            geom = PlaneGeometry(points[members[0]], n)
        labels[members] = label
        planes[label] = PlaneEntry(geom, int(members.size))
        remaining = remaining[~inl]
    return Segmentation(scan.width, scan.height, labels.reshape(scan.height, scan.width), planes)
