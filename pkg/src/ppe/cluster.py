"""Agglomerative plane extraction by greedy likelihood maximisation.

Every valid ray starts as an atomic plane that explains it exactly.  Three
actions reduce the number of planes, each raising the total squared radial
error by a nonnegative increment:

* create: fit a regular plane to four atomic planes forming a tetromino,
* extend: absorb one 4-adjacent atomic plane into a regular plane,
* merge: join two 4-adjacent regular planes.

Each step applies the action with the smallest increment.  Ties are broken
by action kind (create < extend < merge) and then by operand ids.

Plane ids: atomic planes use their ray index; regular planes get ids from
``K`` upward in order of creation.  A merge keeps the smaller id.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import _fit
from .errors import EmptyScan, StaleCandidate
from .geometry import PARALLEL_EPS, OrganizedScan, Plane, PlaneGeometry
from .segmentation import Segmentation

logger = logging.getLogger(__name__)

# cells of the 19 fixed tetrominoes as (row, col) offsets
_ALL_TETROMINOES = {
    "I0": ((0, 0), (0, 1), (0, 2), (0, 3)),
    "I1": ((0, 0), (1, 0), (2, 0), (3, 0)),
    "O": ((0, 0), (0, 1), (1, 0), (1, 1)),
    "T0": ((0, 0), (0, 1), (0, 2), (1, 1)),
    "T1": ((0, 1), (1, 0), (1, 1), (2, 1)),
    "T2": ((0, 1), (1, 0), (1, 1), (1, 2)),
    "T3": ((0, 0), (1, 0), (1, 1), (2, 0)),
    "S0": ((0, 1), (0, 2), (1, 0), (1, 1)),
    "S1": ((0, 0), (1, 0), (1, 1), (2, 1)),
    "Z0": ((0, 0), (0, 1), (1, 1), (1, 2)),
    "Z1": ((0, 1), (1, 0), (1, 1), (2, 0)),
    "L0": ((0, 0), (1, 0), (2, 0), (2, 1)),
    "L1": ((0, 0), (0, 1), (0, 2), (1, 0)),
    "L2": ((0, 0), (0, 1), (1, 1), (2, 1)),
    "L3": ((0, 2), (1, 0), (1, 1), (1, 2)),
    "J0": ((0, 1), (1, 1), (2, 0), (2, 1)),
    "J1": ((0, 0), (1, 0), (1, 1), (1, 2)),
    "J2": ((0, 0), (0, 1), (1, 0), (2, 0)),
    "J3": ((0, 0), (0, 1), (0, 2), (1, 2)),
}
# four collinear endpoints do not determine a plane
TETROMINOES = {k: v for k, v in _ALL_TETROMINOES.items() if not k.startswith("I")}

_OFFSETS = ((0, -1), (0, 1), (-1, 0), (1, 0))


class CandidateKind(IntEnum):
    CREATE = 0
    EXTEND = 1
    MERGE = 2


@dataclass(frozen=True)
class MergeCandidate:
    """A hypothetical clustering action and the plane it would produce.

    operands: create -> the four sorted ray indices; extend -> (plane id,
    ray index); merge -> (smaller plane id, larger plane id).
    """

    kind: CandidateKind
    operands: Tuple[int, ...]
    error_increment: float
    geometry: PlaneGeometry
    residual: float
    versions: Tuple[int, ...] = ()

    @property
    def key(self):
        return (self.error_increment, int(self.kind), self.operands)


@dataclass(frozen=True)
class StoppingCriterion:
    max_planes: Optional[int] = None
    max_increment: Optional[float] = None

    def __post_init__(self):
        if (self.max_planes is None) == (self.max_increment is None):
            raise ValueError("exactly one stopping criterion must be set")
        if self.max_planes is not None and self.max_planes < 1:
            raise ValueError("max_planes must be positive")
        if self.max_increment is not None and not self.max_increment >= 0:
            raise ValueError("max_increment must be nonnegative")

    @classmethod
    def planes(cls, j_max: int) -> "StoppingCriterion":
        return cls(max_planes=int(j_max))

    @classmethod
    def increment(cls, e_max: float) -> "StoppingCriterion":
        return cls(max_increment=float(e_max))


@dataclass(frozen=True)
class PpeConfig:
    stopping: StoppingCriterion
    outlier_distance: float = float("inf")
    parallel_eps: float = PARALLEL_EPS

    def __post_init__(self):
        if not self.outlier_distance > 0:
            raise ValueError("outlier_distance must be positive")


class PlaneMap:
    """Partition of the valid rays of a scan into atomic and regular planes.

    ``owner[k]`` is the id of the plane that owns ray ``k`` (``-1`` for
    invalid rays).  Besides the partition the map keeps, per regular plane,
    the atomic rays bordering it and the regular planes adjacent to it, which
    the incremental engine relies on.  `rebuild_*` helpers recompute the same
    relations from the owner grid alone.
    """

    def __init__(self, scan: OrganizedScan, outlier_distance: float = float("inf")):
        self.scan = scan
        self.width = scan.width
        self.height = scan.height
        K = scan.size
        self.num_rays = K
        self.owner = np.where(scan.valid, np.arange(K), -1).astype(np.int64)
        self.planes: Dict[int, Plane] = {}
        self.version: Dict[int, int] = {}
        self.next_id = K
        self.num_atomic = int(scan.valid.sum())
        self.outlier_distance = float(outlier_distance)
        self.neighbors, self.linkable = _grid_links(scan, self.outlier_distance)
        self.boundary: Dict[int, Set[int]] = {}
        self.adjacent: Dict[int, Set[int]] = {}
        self.blocked: Dict[int, Set[int]] = {}

    # -- queries ---------------------------------------------------------
    @property
    def num_planes(self) -> int:
        return self.num_atomic + len(self.planes)

    def is_atomic(self, k: int) -> bool:
        return self.owner[k] == k

    def regular_ids(self) -> List[int]:
        return sorted(self.planes)

    def atomic_ids(self) -> np.ndarray:
        return np.flatnonzero(self.owner == np.arange(self.num_rays))

    def plane(self, pid: int) -> Plane:
        if pid in self.planes:
            return self.planes[pid]
        if 0 <= pid < self.num_rays and self.owner[pid] == pid:
            ray = self.scan.ray(pid)
            return Plane(PlaneGeometry(ray.endpoint, ray.direction), [pid], atomic=True)
        raise KeyError(pid)

    def total_error(self) -> float:
        return float(sum(p.residual for p in self.planes.values()))

    def regular_neighbors(self, pid: int) -> Set[int]:
        return set(self.adjacent.get(pid, ()))

    def copy(self) -> "PlaneMap":
        other = PlaneMap.__new__(PlaneMap)
        other.__dict__.update(self.__dict__)
        other.owner = self.owner.copy()
        other.planes = {
            k: Plane(p.geometry, p.members.copy(), p.atomic, p.residual)
            for k, p in self.planes.items()
        }
        other.version = dict(self.version)
        other.boundary = {k: set(v) for k, v in self.boundary.items()}
        other.adjacent = {k: set(v) for k, v in self.adjacent.items()}
        other.blocked = {k: set(v) for k, v in self.blocked.items()}
        return other

    # -- mutation --------------------------------------------------------
    def _absorb(self, pid: int, k: int) -> None:
        """Move atomic ray ``k`` into regular plane ``pid``."""
        self.owner[k] = pid
        self.num_atomic -= 1
        bnd = self.boundary[pid]
        bnd.discard(k)
        for m, ok in zip(self.neighbors[k], self.linkable[k]):
            if m < 0:
                continue
            o = self.owner[m]
            if o < 0 or o == pid:
                continue
            if o == m:
                bnd.add(m)
            else:
                self.boundary[o].discard(k)
                self.adjacent[pid].add(o)
                self.adjacent[o].add(pid)
                if not ok:
                    self.blocked[pid].add(o)
                    self.blocked[o].add(pid)

    def _new_plane(self, geometry, members, residual) -> int:
        pid = self.next_id
        self.next_id += 1
        self.planes[pid] = Plane(geometry, np.sort(np.asarray(members, dtype=np.int64)),
                                 False, residual)
        self.version[pid] = 0
        self.boundary[pid] = set()
        self.adjacent[pid] = set()
        self.blocked[pid] = set()
        return pid

    def _merge_into(self, keep: int, drop: int) -> None:
        members = self.planes[drop].members
        self.owner[members] = keep
        self.boundary[keep] |= self.boundary.pop(drop)
        for rel in (self.adjacent, self.blocked):
            for o in rel.pop(drop):
                rel[o].discard(drop)
                if o != keep:
                    rel[o].add(keep)
                    rel[keep].add(o)
            rel[keep].discard(drop)
        del self.planes[drop]
        del self.version[drop]

    # -- from-scratch relations (reference implementations) ---------------
    def rebuild_boundary(self, pid: int) -> Set[int]:
        out = set()
        for k in self.planes[pid].members:
            for m in self.neighbors[k]:
                if m >= 0 and self.owner[m] == m:
                    out.add(int(m))
        return out

    def rebuild_adjacency(self) -> Tuple[Dict[int, Set[int]], Dict[int, Set[int]]]:
        adjacent = {p: set() for p in self.planes}
        blocked = {p: set() for p in self.planes}
        K = self.num_rays
        for k in range(K):
            a = self.owner[k]
            if a < K:
                continue
            for m, ok in zip(self.neighbors[k], self.linkable[k]):
                if m < 0:
                    continue
                b = self.owner[m]
                if b >= K and b != a:
                    adjacent[a].add(int(b))
                    if not ok:
                        blocked[a].add(int(b))
        return adjacent, blocked

    def check_consistency(self) -> None:
        """Assert that the incremental relations match a rebuild."""
        K = self.num_rays
        seen = np.zeros(K, dtype=bool)
        for pid, p in self.planes.items():
            assert np.all(self.owner[p.members] == pid)
            assert not seen[p.members].any()
            seen[p.members] = True
            assert self.boundary[pid] == self.rebuild_boundary(pid), pid
        atoms = self.owner == np.arange(K)
        assert not (seen & atoms).any()
        assert np.array_equal(seen | atoms, self.scan.valid)
        assert int(atoms.sum()) == self.num_atomic
        adjacent, blocked = self.rebuild_adjacency()
        assert adjacent == self.adjacent
        assert blocked == self.blocked

    def to_segmentation(self) -> Segmentation:
        """Regular planes become labels 1..J in id order; atomic rays label 0."""
        labels = np.zeros(self.num_rays, dtype=np.int64)
        geometries = {}
        for lab, pid in enumerate(self.regular_ids(), start=1):
            p = self.planes[pid]
            labels[p.members] = lab
            geometries[lab] = p.geometry
        return Segmentation.from_labels(
            labels.reshape(self.height, self.width), geometries
        )


def _grid_links(scan: OrganizedScan, d: float):
    """4-neighbour table ``(K, 4)`` and whether each edge passes the outlier filter."""
    H, W = scan.height, scan.width
    rows, cols = np.divmod(np.arange(H * W), W)
    nbr = np.full((H * W, 4), -1, dtype=np.int64)
    for j, (dr, dc) in enumerate(_OFFSETS):
        r2, c2 = rows + dr, cols + dc
        ok = (r2 >= 0) & (r2 < H) & (c2 >= 0) & (c2 < W)
        nbr[ok, j] = r2[ok] * W + c2[ok]
    safe = np.where(nbr >= 0, nbr, 0)
    dist = np.linalg.norm(scan.points[:, None, :] - scan.points[safe], axis=2)
    both = scan.valid[:, None] & scan.valid[safe] & (nbr >= 0)
    link = both & (dist <= d)
    return nbr.tolist(), link.tolist()


def init_atomic(scan: OrganizedScan, outlier_distance: float = float("inf")) -> PlaneMap:
    """One atomic plane per valid ray."""
    if scan.num_valid == 0:
        raise EmptyScan("scan has no valid rays")
    return PlaneMap(scan, outlier_distance)


def enumerate_tetrominoes(pmap: PlaneMap) -> np.ndarray:
    """All non-I tetromino placements of atomic rays, as sorted rows ``(M, 4)``.

    A placement qualifies when its cells are atomic and every grid edge inside
    it passes the outlier filter.
    """
    H, W = pmap.height, pmap.width
    atomic = (pmap.owner == np.arange(pmap.num_rays)).reshape(H, W)
    link = np.asarray(pmap.linkable, dtype=bool).reshape(H, W, 4)
    found = []
    for cells in TETROMINOES.values():
        h = max(r for r, _ in cells) + 1
        w = max(c for _, c in cells) + 1
        if h > H or w > W:
            continue
        ok = np.ones((H - h + 1, W - w + 1), dtype=bool)
        for r, c in cells:
            ok &= atomic[r:r + H - h + 1, c:c + W - w + 1]
        for (r1, c1) in cells:
            for j, (dr, dc) in enumerate(_OFFSETS):
                if (r1 + dr, c1 + dc) in cells:
                    ok &= link[r1:r1 + H - h + 1, c1:c1 + W - w + 1, j]
        rr, cc = np.nonzero(ok)
        if rr.size == 0:
            continue
        idx = np.stack([(rr + r) * W + (cc + c) for r, c in cells], axis=1)
        found.append(idx)
    if not found:
        return np.empty((0, 4), dtype=np.int64)
    sets = np.sort(np.concatenate(found).astype(np.int64), axis=1)
    # distinct shapes never cover the same four cells, but keep the contract explicit
    sets = np.unique(sets, axis=0)
    return sets


# -- candidate evaluation ------------------------------------------------

def _kernel_args(scan: OrganizedScan):
    S, V, R = scan._arrays()
    return S, V, R, scan.points


def _evaluate_creates(scan, sets, eps):
    S, V, R, P = _kernel_args(scan)
    out = np.empty((sets.shape[0], 7))
    status = np.empty(sets.shape[0], dtype=np.int64)
    if sets.shape[0]:
        _fit.fit_sets(S, V, R, P, sets, eps, out, status)
    return out, status


def _extension_targets(pmap: PlaneMap, pid: int, boundary) -> np.ndarray:
    """Atomic rays in ``boundary`` whose every edge into ``pid`` passes the filter."""
    owner = pmap.owner
    ks = []
    for k in sorted(boundary):
        ok = True
        touches = False
        for m, link in zip(pmap.neighbors[k], pmap.linkable[k]):
            if m >= 0 and owner[m] == pid:
                touches = True
                if not link:
                    ok = False
                    break
        if ok and touches:
            ks.append(k)
    return np.asarray(ks, dtype=np.int64)


def _evaluate_extensions(pmap: PlaneMap, pid: int, boundary, eps):
    """Sorted list of ``(increment, k, geometry, residual)`` for plane ``pid``."""
    plane = pmap.planes[pid]
    ks = _extension_targets(pmap, pid, boundary)
    if ks.size == 0:
        return []
    S, V, R, _ = _kernel_args(pmap.scan)
    out = np.empty((ks.size, 7))
    status = np.empty(ks.size, dtype=np.int64)
    _fit.fit_extensions(S, V, R, plane.members, ks, plane.geometry.support,
                        plane.geometry.normal, eps, out, status)
    result = []
    for k, row, st in zip(ks.tolist(), out, status):
        if st != _fit.OK:
            continue
        inc = max(float(row[6]) - plane.residual, 0.0)
        result.append((inc, k, row))
    result.sort(key=lambda t: (t[0], t[1]))
    return result


def _evaluate_merge(pmap: PlaneMap, i: int, j: int, eps):
    a, b = pmap.planes[i], pmap.planes[j]
    S, V, R, P = _kernel_args(pmap.scan)
    out = np.empty(7)
    st = _fit.fit_union(S, V, R, P, a.members, b.members, eps, out)
    if st != _fit.OK:
        return None
    return max(float(out[6]) - a.residual - b.residual, 0.0), out


def _geometry(row) -> PlaneGeometry:
    return PlaneGeometry(row[3:6], row[0:3])


def best_create(scan: OrganizedScan, pmap: PlaneMap,
                parallel_eps: float = PARALLEL_EPS) -> Optional[MergeCandidate]:
    sets = enumerate_tetrominoes(pmap)
    out, status = _evaluate_creates(scan, sets, parallel_eps)
    best = None
    for cells, row, st in zip(sets, out, status):
        if st != _fit.OK:
            continue
        key = (float(row[6]), tuple(int(c) for c in cells))
        if best is None or key < best[0]:
            best = (key, row)
    if best is None:
        return None
    (inc, cells), row = best
    return MergeCandidate(CandidateKind.CREATE, cells, inc, _geometry(row), inc)


def best_extend(scan: OrganizedScan, pmap: PlaneMap,
                parallel_eps: float = PARALLEL_EPS) -> Optional[MergeCandidate]:
    best = None
    for pid in pmap.regular_ids():
        cands = _evaluate_extensions(pmap, pid, pmap.rebuild_boundary(pid), parallel_eps)
        if not cands:
            continue
        inc, k, row = cands[0]
        key = (inc, (pid, k))
        if best is None or key < best[0]:
            best = (key, row)
    if best is None:
        return None
    (inc, ops), row = best
    return MergeCandidate(CandidateKind.EXTEND, ops, inc, _geometry(row), float(row[6]),
                          (pmap.version[ops[0]],))


def best_merge(scan: OrganizedScan, pmap: PlaneMap,
               parallel_eps: float = PARALLEL_EPS) -> Optional[MergeCandidate]:
    adjacent, blocked = pmap.rebuild_adjacency()
    best = None
    for i in sorted(adjacent):
        for j in sorted(adjacent[i]):
            if j <= i or j in blocked[i]:
                continue
            res = _evaluate_merge(pmap, i, j, parallel_eps)
            if res is None:
                continue
            key = (res[0], (i, j))
            if best is None or key < best[0]:
                best = (key, res[1])
    if best is None:
        return None
    (inc, ops), row = best
    return MergeCandidate(CandidateKind.MERGE, ops, inc, _geometry(row), float(row[6]),
                          (pmap.version[ops[0]], pmap.version[ops[1]]))


def apply_candidate(pmap: PlaneMap, cand: MergeCandidate) -> PlaneMap:
    """Apply ``cand`` to ``pmap`` in place and return it.

    Raises StaleCandidate if any operand changed since evaluation.
    """
    if cand.kind == CandidateKind.CREATE:
        if not all(pmap.is_atomic(k) for k in cand.operands):
            raise StaleCandidate(f"create {cand.operands}: cells no longer atomic")
        pid = pmap._new_plane(cand.geometry, cand.operands, cand.residual)
        for k in cand.operands:
            pmap._absorb(pid, k)
    elif cand.kind == CandidateKind.EXTEND:
        pid, k = cand.operands
        if (pid not in pmap.planes or pmap.version[pid] != cand.versions[0]
                or not pmap.is_atomic(k) or k not in pmap.boundary[pid]):
            raise StaleCandidate(f"extend {cand.operands}: operands changed")
        p = pmap.planes[pid]
        p.members = np.insert(p.members, np.searchsorted(p.members, k), k)
        p.geometry = cand.geometry
        p.residual = cand.residual
        pmap.version[pid] += 1
        pmap._absorb(pid, k)
    else:
        i, j = cand.operands
        if (i not in pmap.planes or j not in pmap.planes
                or (pmap.version[i], pmap.version[j]) != tuple(cand.versions)):
            raise StaleCandidate(f"merge {cand.operands}: operands changed")
        keep = pmap.planes[i]
        keep.members = _fit.sorted_union(keep.members, pmap.planes[j].members)
        keep.geometry = cand.geometry
        keep.residual = cand.residual
        pmap.version[i] += 1
        pmap._merge_into(i, j)
    return pmap


# -- engine --------------------------------------------------------------

@dataclass
class StepRecord:
    candidate: MergeCandidate
    num_planes: int
    total_error: float


class PpeEngine:
    """Greedy clustering loop over a `PlaneMap`.

    With ``incremental=True`` candidates live in a priority queue and only
    those touching a changed plane are re-evaluated.  With ``incremental=False``
    all candidates are recomputed from scratch before every step; both modes
    apply the identical sequence of actions.
    """

    def __init__(self, scan: OrganizedScan, config: PpeConfig, incremental: bool = True):
        self.scan = scan
        self.config = config
        self.eps = config.parallel_eps
        self.map = init_atomic(scan, config.outlier_distance)
        self.incremental = incremental
        self.history: List[StepRecord] = []
        self.total_error = 0.0
        self._seq = 0
        self._heap: list = []
        self._ext: Dict[int, Tuple[int, list, int]] = {}
        if incremental:
            self._seed_creates()

    # -- incremental bookkeeping -------------------------------------------
    def _push(self, key, payload):
        self._seq += 1
        heapq.heappush(self._heap, (key[0], key[1], key[2], self._seq, payload))

    def _seed_creates(self):
        sets = enumerate_tetrominoes(self.map)
        out, status = _evaluate_creates(self.scan, sets, self.eps)
        self._create_sets = sets
        self._create_out = out
        ok = np.flatnonzero(status == _fit.OK)
        incs = out[ok, 6].tolist()
        cells = [tuple(r) for r in sets[ok].tolist()]
        self._heap = [(inc, 0, c, i, ("c", int(r)))
                      for i, (inc, c, r) in enumerate(zip(incs, cells, ok.tolist()))]
        self._seq = len(self._heap)
        heapq.heapify(self._heap)

    def _refresh_plane(self, pid: int):
        """Re-evaluate every extension and merge involving ``pid``."""
        pmap = self.map
        ver = pmap.version[pid]
        cands = _evaluate_extensions(pmap, pid, pmap.boundary[pid], self.eps)
        self._ext[pid] = (ver, cands, 0)
        self._push_ext_head(pid)
        for o in sorted(pmap.adjacent[pid] - pmap.blocked[pid]):
            i, j = (pid, o) if pid < o else (o, pid)
            res = _evaluate_merge(pmap, i, j, self.eps)
            if res is None:
                continue
            self._push((res[0], 2, (i, j)),
                       ("m", pmap.version[i], pmap.version[j], res[1]))

    def _push_ext_head(self, pid: int):
        ver, cands, pos = self._ext[pid]
        while pos < len(cands) and not self.map.is_atomic(cands[pos][1]):
            pos += 1
        self._ext[pid] = (ver, cands, pos)
        if pos < len(cands):
            inc, k, _ = cands[pos]
            self._push((inc, 1, (pid, k)), ("e", ver, pos))

    def _peek_incremental(self) -> Optional[MergeCandidate]:
        pmap = self.map
        heap = self._heap
        while heap:
            inc, kind, ops, _, payload = heap[0]
            tag = payload[0]
            if tag == "c":
                if all(pmap.owner[k] == k for k in ops):
                    row = self._create_out[payload[1]]
                    return MergeCandidate(CandidateKind.CREATE, ops, inc, _geometry(row),
                                          float(row[6]))
                heapq.heappop(heap)
            elif tag == "e":
                pid, k = ops
                entry = self._ext.get(pid)
                if pid not in pmap.planes or entry is None or entry[0] != payload[1]:
                    heapq.heappop(heap)
                    continue
                if pmap.owner[k] == k:
                    row = entry[1][payload[2]][2]
                    return MergeCandidate(CandidateKind.EXTEND, ops, inc, _geometry(row),
                                          float(row[6]), (payload[1],))
                heapq.heappop(heap)
                if entry[2] == payload[2]:
                    self._ext[pid] = (entry[0], entry[1], entry[2] + 1)
                    self._push_ext_head(pid)
            else:
                i, j = ops
                if (i in pmap.planes and j in pmap.planes
                        and pmap.version[i] == payload[1] and pmap.version[j] == payload[2]):
                    row = payload[3]
                    return MergeCandidate(CandidateKind.MERGE, ops, inc, _geometry(row),
                                          float(row[6]), (payload[1], payload[2]))
                heapq.heappop(heap)
        return None

    # -- public loop -------------------------------------------------------
    def peek(self) -> Optional[MergeCandidate]:
        """The action the next step would apply, or None if nothing is feasible."""
        if self.incremental:
            return self._peek_incremental()
        cands = [c for c in (best_create(self.scan, self.map, self.eps),
                             best_extend(self.scan, self.map, self.eps),
                             best_merge(self.scan, self.map, self.eps)) if c is not None]
        return min(cands, key=lambda c: c.key) if cands else None

    def apply(self, cand: MergeCandidate) -> None:
        pmap = self.map
        apply_candidate(pmap, cand)
        if cand.kind == CandidateKind.CREATE:
            pid = pmap.next_id - 1
        else:
            pid = cand.operands[0]
        self.total_error += cand.error_increment
        self.history.append(StepRecord(cand, pmap.num_planes, self.total_error))
        if self.incremental:
            if cand.kind == CandidateKind.MERGE:
                self._ext.pop(cand.operands[1], None)
            self._refresh_plane(pid)

    def step(self) -> Optional[MergeCandidate]:
        cand = self.peek()
        if cand is not None:
            self.apply(cand)
        return cand

    def should_stop(self, cand: Optional[MergeCandidate]) -> bool:
        crit = self.config.stopping
        if cand is None:
            return True
        if crit.max_planes is not None:
            return self.map.num_planes <= crit.max_planes
        return cand.error_increment > crit.max_increment

    def run(self) -> PlaneMap:
        crit = self.config.stopping
        while True:
            if crit.max_planes is not None and self.map.num_planes <= crit.max_planes:
                break
            cand = self.peek()
            if self.should_stop(cand):
                break
            self.apply(cand)
            if len(self.history) % 1000 == 0:
                logger.debug("step %d: J=%d E=%.6g", len(self.history),
                             self.map.num_planes, self.total_error)
        return self.map


def extract(scan: OrganizedScan, config: PpeConfig,
            incremental: bool = True) -> Tuple[PlaneMap, Segmentation]:
    """Run the clustering to completion and return the map and its segmentation."""
    if scan.num_valid == 0:
        raise EmptyScan("scan has no valid rays")
    engine = PpeEngine(scan, config, incremental=incremental)
    pmap = engine.run()
    return pmap, pmap.to_segmentation()


def extract_increment_path(scan: OrganizedScan, max_increments: Sequence[float],
                           outlier_distance: float = float("inf"),
                           parallel_eps: float = PARALLEL_EPS) -> List[Segmentation]:
    """Segmentations for several error-increment thresholds from a single run.

    A run with threshold ``e`` is a prefix of a run with any larger threshold,
    so one pass up to the largest threshold yields all of them.  Results are
    returned in the order of ``max_increments``.
    """
    order = sorted(range(len(max_increments)), key=lambda i: max_increments[i])
    config = PpeConfig(StoppingCriterion.increment(max(max_increments)),
                       outlier_distance, parallel_eps)
    engine = PpeEngine(scan, config)
    results: List[Optional[Segmentation]] = [None] * len(max_increments)
    pos = 0
    while pos < len(order):
        cand = engine.peek()
        while pos < len(order) and (cand is None
                                    or cand.error_increment > max_increments[order[pos]]):
            results[order[pos]] = engine.map.to_segmentation()
            pos += 1
        if pos == len(order):
            break
        engine.apply(cand)
    return results
