"""Scene builders and independent oracles shared by the test modules."""

from __future__ import annotations

import itertools
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from ppe.errors import FitError
from ppe.geometry import OrganizedScan, PlaneGeometry, fit_plane_radial
from ppe.segmentation import Segmentation
from ppe.synth import ScanPattern

# Walls of a box around the origin as (normal, offset) with n.y = offset and
# normals facing the sensor, listed so that any prefix is visible in
# the default field of view below.
BOX_WALLS = [
    ((-1.0, 0.0, 0.0), -4.0),  # front wall x = 4
    ((0.0, 0.0, 1.0), -1.5),   # floor z = -1.5
    ((0.0, -1.0, 0.0), -2.5),  # left wall y = 2.5
    ((0.0, 1.0, 0.0), -2.5),   # right wall y = -2.5
    ((0.0, 0.0, -1.0), -1.5),  # ceiling z = 1.5
]


def directions(width, height, az=(-0.9, 0.9), el=(-0.6, 0.6)) -> np.ndarray:
    return ScanPattern((0.0, 0.0, 0.0), az, el, width, height).directions()


def plane_scan(planes: Sequence[PlaneGeometry], width: int, height: int, sigma: float = 0.0,
               seed: int = 0, az=(-0.9, 0.9), el=(-0.6, 0.6), origin=(0.0, 0.0, 0.0),
               jitter: float = 0.0) -> Tuple[OrganizedScan, Segmentation]:
    """Scan of infinite planes: nearest positive hit per ray, plus Gaussian range noise.

    Labels are 1-based plane indices; rays hitting nothing are invalid.
    ``jitter`` (rad) perturbs the grid directions so that no three hits of a
    plane are collinear, as they are within one column of an exact grid.
    """
    o = np.asarray(origin, dtype=np.float64)
    D = directions(width, height, az, el)
    if jitter > 0:
        D = D + np.random.default_rng([seed, 1]).normal(0.0, jitter, D.shape)
        D /= np.linalg.norm(D, axis=1, keepdims=True)
    best = np.full(D.shape[0], np.inf)
    lab = np.zeros(D.shape[0], dtype=np.int64)
    for i, p in enumerate(planes, start=1):
        nv = D @ p.normal
        with np.errstate(divide="ignore"):
            t = ((p.support - o) @ p.normal) / nv
        hit = (np.abs(nv) > 1e-9) & (t > 0) & (t < best)
        best[hit] = t[hit]
        lab[hit] = i
    if sigma > 0:
        best = best + np.random.default_rng(seed).normal(0.0, sigma, best.shape)
    scan = OrganizedScan.from_rays(o, D, best, noise_sigma=sigma if sigma > 0 else 0.02,
                                   width=width, height=height)
    lab[~scan.valid] = 0
    geoms = {i: planes[i - 1] for i in np.unique(lab[lab > 0]).tolist()}
    return scan, Segmentation.from_labels(lab.reshape(height, width), geoms)


def tilted_walls(count: int, rng: np.random.Generator, tilt: float = 0.15) -> List[PlaneGeometry]:
    """The first ``count`` box walls, each tilted and shifted at random."""
    out = []
    for n, d in BOX_WALLS[:count]:
        n = np.asarray(n) + rng.uniform(-tilt, tilt, 3)
        n /= np.linalg.norm(n)
        out.append(PlaneGeometry.from_normal_offset(n, d * rng.uniform(0.9, 1.1)))
    return out


# ----------------------------------------------------------------- oracles

# All 19 fixed tetrominoes as (row, col) offsets, written out by hand.
FIXED_TETROMINOES = {
    "I_h": [(0, 0), (0, 1), (0, 2), (0, 3)],
    "I_v": [(0, 0), (1, 0), (2, 0), (3, 0)],
    "O": [(0, 0), (0, 1), (1, 0), (1, 1)],
    "T_up": [(0, 1), (1, 0), (1, 1), (1, 2)],
    "T_down": [(0, 0), (0, 1), (0, 2), (1, 1)],
    "T_left": [(0, 1), (1, 0), (1, 1), (2, 1)],
    "T_right": [(0, 0), (1, 0), (1, 1), (2, 0)],
    "S_h": [(0, 1), (0, 2), (1, 0), (1, 1)],
    "S_v": [(0, 0), (1, 0), (1, 1), (2, 1)],
    "Z_h": [(0, 0), (0, 1), (1, 1), (1, 2)],
    "Z_v": [(0, 1), (1, 0), (1, 1), (2, 0)],
    "L_0": [(0, 0), (1, 0), (2, 0), (2, 1)],
    "L_90": [(0, 0), (0, 1), (0, 2), (1, 0)],
    "L_180": [(0, 0), (0, 1), (1, 1), (2, 1)],
    "L_270": [(0, 2), (1, 0), (1, 1), (1, 2)],
    "J_0": [(0, 1), (1, 1), (2, 0), (2, 1)],
    "J_90": [(0, 0), (1, 0), (1, 1), (1, 2)],
    "J_180": [(0, 0), (0, 1), (1, 0), (2, 0)],
    "J_270": [(0, 0), (0, 1), (0, 2), (1, 2)],
}
NON_I = {k: v for k, v in FIXED_TETROMINOES.items() if not k.startswith("I")}


def stamp_tetrominoes(height: int, width: int, allowed=None) -> set:
    """Every placement of a non-I shape whose cells all satisfy ``allowed``."""
    out = set()
    for cells in NON_I.values():
        for r0 in range(height):
            for c0 in range(width):
                idx = []
                for dr, dc in cells:
                    r, c = r0 + dr, c0 + dc
                    if not (0 <= r < height and 0 <= c < width):
                        break
                    idx.append(r * width + c)
                else:
                    if allowed is None or allowed(idx):
                        out.add(frozenset(idx))
    return out


def grid_edges(height: int, width: int):
    for r in range(height):
        for c in range(width):
            k = r * width + c
            if c + 1 < width:
                yield k, k + 1
            if r + 1 < height:
                yield k, k + width


class GreedyOracle:
    """From-scratch enumeration of every feasible PPE action on a map state.

    It looks only at the owner grid, the scan and the outlier distance; fits
    go through the public radial fit and are memoised by member set.
    """

    def __init__(self, scan: OrganizedScan, outlier_distance: float):
        self.scan = scan
        self.H, self.W = scan.height, scan.width
        P = scan.points
        self.link = {}
        for a, b in grid_edges(self.H, self.W):
            ok = bool(scan.valid[a] and scan.valid[b]
                      and np.linalg.norm(P[a] - P[b]) <= outlier_distance)
            self.link[(a, b)] = self.link[(b, a)] = ok
        self.cache: Dict[FrozenSet[int], Optional[float]] = {}

    def fit(self, members: FrozenSet[int]) -> Optional[float]:
        if members not in self.cache:
            try:
                self.cache[members] = fit_plane_radial(self.scan, sorted(members))[1]
            except FitError:
                self.cache[members] = None
        return self.cache[members]

    def neighbours(self, k):
        r, c = divmod(k, self.W)
        for dr, dc in ((0, -1), (0, 1), (-1, 0), (1, 0)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < self.H and 0 <= cc < self.W:
                yield rr * self.W + cc

    def warm_fit(self, members: FrozenSet[int], initial: PlaneGeometry) -> Optional[float]:
        try:
            return fit_plane_radial(self.scan, sorted(members), initial=initial)[1]
        except FitError:
            return None

    def candidates(self, owner: np.ndarray, state=None):
        """List of ``(increment, kind, detail)`` for every feasible action.

        ``state`` maps regular plane ids to ``(geometry, residual)`` as held by
        the algorithm.  Extensions are then warm-started from the plane's
        geometry and increments are taken against the held residuals, which is
        how the clustering defines them.  Without it every fit is cold.
        """
        K = owner.size
        atomic = {k for k in range(K) if owner[k] == k}
        groups: Dict[int, set] = {}
        for k in range(K):
            if owner[k] >= 0 and owner[k] != k:
                groups.setdefault(int(owner[k]), set()).add(k)
        out = []

        def internal_ok(cells):
            return all(self.link[(a, b)] for a, b in itertools.combinations(cells, 2)
                       if (a, b) in self.link)

        for cells in stamp_tetrominoes(self.H, self.W,
                                       lambda idx: all(i in atomic for i in idx)):
            if not internal_ok(cells):
                continue
            e = self.fit(cells)
            if e is not None:
                out.append((max(e, 0.0), 0, tuple(sorted(cells))))

        if state is None:
            res = {pid: self.fit(frozenset(m)) for pid, m in groups.items()}
        else:
            res = {pid: state[pid][1] for pid in groups}
        for pid, members in groups.items():
            border = {n for m in members for n in self.neighbours(m) if n in atomic}
            for k in border:
                if not all(self.link[(k, m)] for m in self.neighbours(k) if m in members):
                    continue
                grown = frozenset(members | {k})
                e = self.fit(grown) if state is None else self.warm_fit(grown, state[pid][0])
                if e is not None:
                    out.append((max(e - res[pid], 0.0), 1, (pid, k)))
        for i, j in itertools.combinations(sorted(groups), 2):
            cross = [(a, b) for a in groups[i] for b in self.neighbours(a) if b in groups[j]]
            if not cross or not all(self.link[e] for e in cross):
                continue
            e = self.fit(frozenset(groups[i] | groups[j]))
            if e is not None:
                out.append((max(e - res[i] - res[j], 0.0), 2, (i, j)))
        return out


def radial_objective(scan: OrganizedScan, members, normal, offset) -> float:
    """Sum of squared radial residuals by direct per-ray substitution."""
    total = 0.0
    for k in members:
        ray = scan.ray(k)
        t = (offset - normal @ ray.start) / (normal @ ray.direction)
        total += (ray.range - t) ** 2
    return total
