"""Synthetic indoor scans: polyhedral scenes, spherical raycasting, noise.

Scenes are lists of planar convex polygons ("faces") with stable integer ids.
A recipe (JSON) describes a room box plus objects; convex polyhedra are
tessellated into faces at load time via their convex hull, with coplanar hull
facets merged into one polygon.

Recipe fields::

    {
      "name": "room",
      "room": {"min": [x, y, z], "max": [x, y, z]},
      "objects": [
        {"type": "box", "params": {"size": [sx, sy, sz]},
         "pose": {"position": [x, y, z], "yaw": 0.0}},
        {"type": "polyhedron", "params": {"vertices": [[x, y, z], ...]},
         "pose": {"position": [x, y, z], "yaw": 0.0}},
        {"type": "random_boxes", "params": {"count": 4, "size_min": [..],
         "size_max": [..], "on_floor": true}},
        {"type": "random_polyhedra", "params": {"count": 3, "num_vertices": 8,
         "radius_min": 0.3, "radius_max": 0.7, "on_floor": true}}
      ],
      "sensor": {"origin": [x, y, z], "azimuth": [lo, hi],
                 "elevation": [lo, hi], "counts": [width, height]},
      "noise": {"sigma_ang_rad": 1.745e-5, "sigma_rad_m": 0.02, "seed": 0}
    }

``position`` is the object's centre (boxes) or the translation applied to the
vertices (polyhedra); ``yaw`` rotates about +z.  Random objects may also give
``region_min``/``region_max`` (xy bounds of the object centre, default: the
room) and ``yaw`` (``[lo, hi]`` in radians, default a full turn).  They are
rejection-sampled so they neither leave the room nor enclose the sensor.

Randomness uses Philox keyed by ``(seed, stream)``.  Layout draws use stream
0; noise uses stream 1 + scan index.  Noise draws exactly three uniforms per
pixel in row-major order, so pixel ``k`` consumes 64-bit words ``3k..3k+2``
of its stream: a worker can reproduce any pixel range by calling
``Philox.advance(3k // 4)`` and discarding ``3k % 4`` words.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.special import ndtri

from .errors import InvalidRecipe
from .geometry import OrganizedScan, PlaneGeometry
from .segmentation import PlaneEntry, Segmentation

COPLANAR_TOL = 1e-9
INSIDE_TOL = 1e-12
DEFAULT_SIGMA = 0.02
SENSOR_CLEARANCE = 0.1
MAX_PLACEMENT_TRIES = 1000


@dataclass
class Face:
    id: int
    vertices: np.ndarray
    normal: np.ndarray = field(init=False)
    offset: float = field(init=False)

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=np.float64)
        if V.ndim != 2 or V.shape[1] != 3 or V.shape[0] < 3:
            raise InvalidRecipe(f"face {self.id}: need at least 3 vertices")
        # Newell's method gives a normal consistent with the vertex order
        nxt = np.roll(V, -1, axis=0)
        n = np.array([
            np.sum((V[:, 1] - nxt[:, 1]) * (V[:, 2] + nxt[:, 2])),
            np.sum((V[:, 2] - nxt[:, 2]) * (V[:, 0] + nxt[:, 0])),
            np.sum((V[:, 0] - nxt[:, 0]) * (V[:, 1] + nxt[:, 1])),
        ])
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise InvalidRecipe(f"face {self.id}: zero area")
        n = n / norm
        c = V.mean(axis=0)
        if np.max(np.abs((V - c) @ n)) > COPLANAR_TOL:
            raise InvalidRecipe(f"face {self.id}: vertices are not coplanar")
        self.vertices = V
        self.normal = n
        self.offset = float(n @ c)

    def geometry(self, toward=None) -> PlaneGeometry:
        n = self.normal
        if toward is not None and n @ (np.asarray(toward) - self.vertices[0]) < 0:
            n = -n
        return PlaneGeometry(self.vertices.mean(axis=0), n)


@dataclass
class SceneModel:
    faces: List[Face]
    name: str = "scene"

    def __post_init__(self):
        ids = [f.id for f in self.faces]
        if len(set(ids)) != len(ids):
            raise InvalidRecipe("face ids must be unique")
        if any(i <= 0 for i in ids):
            raise InvalidRecipe("face ids must be positive")

    def face(self, fid: int) -> Face:
        for f in self.faces:
            if f.id == fid:
                return f
        raise KeyError(fid)


@dataclass(frozen=True)
class ScanPattern:
    """Equiangular azimuth x elevation grid.

    Row 0 is the highest elevation; column 0 the largest azimuth, so the
    image reads as seen from the sensor.  A count of 1 samples the centre.
    """

    origin: Tuple[float, float, float]
    azimuth: Tuple[float, float]
    elevation: Tuple[float, float]
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("pattern counts must be positive")
        if not (self.azimuth[0] <= self.azimuth[1] and self.elevation[0] <= self.elevation[1]):
            raise ValueError("pattern ranges must be nonempty")

    @staticmethod
    def _samples(lo, hi, n):
        if n == 1:
            return np.array([(lo + hi) / 2])
        return np.linspace(lo, hi, n)

    def directions(self) -> np.ndarray:
        az = self._samples(*self.azimuth, self.width)[::-1]
        el = self._samples(*self.elevation, self.height)[::-1]
        A, E = np.meshgrid(az, el)
        d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)
        return d.reshape(-1, 3)


@dataclass(frozen=True)
class NoiseModel:
    sigma_angular: float = 0.0
    sigma_radial: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.sigma_angular < 0 or self.sigma_radial < 0:
            raise ValueError("noise sigmas must be nonnegative")


# ---------------------------------------------------------------- scenes

def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def hull_faces(vertices, first_id: int) -> List[Face]:
    """Faces of the convex hull of ``vertices``, coplanar facets merged."""
    P = np.asarray(vertices, dtype=np.float64)
    try:
        hull = ConvexHull(P)
    except (QhullError, ValueError) as exc:
        raise InvalidRecipe(f"degenerate polyhedron: {exc}") from None
    groups: List[Tuple[np.ndarray, float, set]] = []
    for simplex, eq in zip(hull.simplices, hull.equations):
        n, d = eq[:3], eq[3]
        for gn, gd, verts in groups:
            if gn @ n > 1 - 1e-9 and abs(gd - d) < 1e-9:
                verts.update(simplex.tolist())
                break
        else:
            groups.append((n, d, set(simplex.tolist())))
    faces = []
    for n, _, verts in groups:
        V = P[sorted(verts)]
        c = V.mean(axis=0)
        u = V[0] - c
        u /= np.linalg.norm(u)
        w = np.cross(n, u)
        ang = np.arctan2((V - c) @ w, (V - c) @ u)
        V = V[np.argsort(ang, kind="stable")]
        # snap onto the facet plane so the coplanarity check holds exactly enough
        V = V - np.outer((V - c) @ n, n)
        faces.append(Face(first_id + len(faces), V))
    return faces


def box_vertices(size, position=(0, 0, 0), yaw=0.0) -> np.ndarray:
    s = np.asarray(size, dtype=np.float64) / 2
    if s.shape != (3,) or not (s > 0).all():
        raise InvalidRecipe("box size must be three positive numbers")
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]) * s
    return corners @ _yaw_matrix(yaw).T + np.asarray(position, dtype=np.float64)


def room_faces(lo, hi) -> List[Face]:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.shape != (3,) or hi.shape != (3,) or not (hi > lo).all():
        raise InvalidRecipe("room needs min < max in every axis")
    return hull_faces(box_vertices(hi - lo, (lo + hi) / 2), 1)


@dataclass
class Recipe:
    name: str
    room_min: np.ndarray
    room_max: np.ndarray
    objects: List[dict]
    pattern: ScanPattern
    noise: NoiseModel

    @classmethod
    def from_dict(cls, doc: dict) -> "Recipe":
        try:
            room = doc["room"]
            sensor = doc["sensor"]
            counts = sensor["counts"]
            pattern = ScanPattern(
                origin=tuple(float(x) for x in sensor["origin"]),
                azimuth=tuple(float(x) for x in sensor["azimuth"]),
                elevation=tuple(float(x) for x in sensor["elevation"]),
                width=int(counts[0]),
                height=int(counts[1]),
            )
            nz = doc.get("noise", {})
            noise = NoiseModel(float(nz.get("sigma_ang_rad", 0.0)),
                               float(nz.get("sigma_rad_m", 0.0)),
                               int(nz.get("seed", 0)))
            objects = list(doc.get("objects", []))
            rec = cls(str(doc.get("name", "scene")), np.asarray(room["min"], dtype=np.float64),
                      np.asarray(room["max"], dtype=np.float64), objects, pattern, noise)
        except InvalidRecipe:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise InvalidRecipe(f"malformed recipe: {exc!r}") from None
        for obj in rec.objects:
            if not isinstance(obj, dict) or obj.get("type") not in _OBJECT_TYPES:
                raise InvalidRecipe(f"unknown object entry: {obj!r}")
        room_faces(rec.room_min, rec.room_max)
        if not _inside_box(np.asarray(pattern.origin), rec.room_min, rec.room_max, 0.0):
            raise InvalidRecipe("sensor origin must lie inside the room")
        return rec

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Recipe":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidRecipe(f"{path}: not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InvalidRecipe(f"{path}: top level must be an object")
        return cls.from_dict(doc)


def _inside_box(p, lo, hi, margin) -> bool:
    return bool(np.all(p > lo + margin) and np.all(p < hi - margin))


def _contains(vertices, point, margin) -> bool:
    """Whether ``point`` lies within ``margin`` of the convex hull of ``vertices``."""
    hull = ConvexHull(vertices)
    return bool(np.all(hull.equations[:, :3] @ point + hull.equations[:, 3] <= margin))


def _object_ok(V, rec: Recipe) -> bool:
    inside = np.all(V >= rec.room_min - 1e-12) and np.all(V <= rec.room_max + 1e-12)
    return bool(inside) and not _contains(V, np.asarray(rec.pattern.origin), SENSOR_CLEARANCE)


def _explicit_vertices(obj: dict) -> np.ndarray:
    params = obj.get("params", {})
    pose = obj.get("pose", {})
    pos = np.asarray(pose.get("position", (0, 0, 0)), dtype=np.float64)
    yaw = float(pose.get("yaw", 0.0))
    if obj["type"] == "box":
        return box_vertices(params["size"], pos, yaw)
    V = np.asarray(params["vertices"], dtype=np.float64)
    if V.ndim != 2 or V.shape[1] != 3 or V.shape[0] < 4:
        raise InvalidRecipe("polyhedron needs at least 4 vertices")
    return V @ _yaw_matrix(yaw).T + pos


def _random_vertices(obj: dict, rec: Recipe, rng: np.random.Generator) -> np.ndarray:
    p = obj.get("params", {})
    lo = np.asarray(p.get("region_min", rec.room_min[:2]), dtype=np.float64)[:2]
    hi = np.asarray(p.get("region_max", rec.room_max[:2]), dtype=np.float64)[:2]
    on_floor = bool(p.get("on_floor", True))
    if obj["type"] == "random_boxes":
        smin = np.asarray(p.get("size_min", (0.3, 0.3, 0.3)), dtype=np.float64)
        smax = np.asarray(p.get("size_max", (1.0, 1.0, 1.0)), dtype=np.float64)
        size = smin + rng.random(3) * (smax - smin)
        local = box_vertices(size)
    else:
        nv = int(p.get("num_vertices", 8))
        if nv < 4:
            raise InvalidRecipe("random_polyhedra needs num_vertices >= 4")
        rmin, rmax = float(p.get("radius_min", 0.3)), float(p.get("radius_max", 0.7))
        d = rng.standard_normal((nv, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        local = d * (rmin + rng.random((nv, 1)) * (rmax - rmin))
    ymin, ymax = (float(v) for v in p.get("yaw", (0.0, 2 * math.pi)))
    local = local @ _yaw_matrix(ymin + rng.random() * (ymax - ymin)).T
    local -= (local.max(axis=0) + local.min(axis=0)) / 2
    half = (local.max(axis=0) - local.min(axis=0)) / 2
    xy = lo + rng.random(2) * (hi - lo)
    if on_floor:
        z = rec.room_min[2] + half[2]
    else:
        z = rec.room_min[2] + half[2] + rng.random() * max(
            rec.room_max[2] - rec.room_min[2] - 2 * half[2], 0)
    return local + np.array([xy[0], xy[1], z])


_OBJECT_TYPES = ("box", "polyhedron", "random_boxes", "random_polyhedra")


def build_scene(recipe: Recipe, seed: int = 0) -> SceneModel:
    """Instantiate a recipe; random objects draw from the seed's layout stream."""
    rng = stream_rng(seed, 0)
    faces = room_faces(recipe.room_min, recipe.room_max)
    for obj in recipe.objects:
        if obj["type"] in ("box", "polyhedron"):
            try:
                V = _explicit_vertices(obj)
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidRecipe(f"bad {obj['type']}: {exc!r}") from None
            if not _object_ok(V, recipe):
                raise InvalidRecipe(f"{obj['type']} leaves the room or encloses the sensor")
            faces += hull_faces(V, len(faces) + 1)
            continue
        count = int(obj.get("params", {}).get("count", 1))
        for _ in range(count):
            for _try in range(MAX_PLACEMENT_TRIES):
                V = _random_vertices(obj, recipe, rng)
                if _object_ok(V, recipe):
                    break
            else:
                raise InvalidRecipe(f"could not place a {obj['type']} object")
            faces += hull_faces(V, len(faces) + 1)
    return SceneModel(faces, recipe.name)


# ------------------------------------------------------------- raycasting

def stream_rng(seed: int, stream: int) -> np.random.Generator:
    key = np.array([int(seed) & (2**64 - 1), int(stream) & (2**64 - 1)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def cast(scene: SceneModel, origin, directions) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest positive face hit per direction: ``(ranges, face ids)``.

    Misses have range ``inf`` and id 0.  Ties go to the face listed first.
    """
    o = np.asarray(origin, dtype=np.float64)
    D = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    best = np.full(D.shape[0], np.inf)
    ids = np.zeros(D.shape[0], dtype=np.int64)
    for f in scene.faces:
        n = f.normal
        nv = D @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (f.offset - n @ o) / nv
        cand = (np.abs(nv) > 1e-15) & (t > 0) & (t < best)
        if not cand.any():
            continue
        idx = np.flatnonzero(cand)
        P = o + t[idx, None] * D[idx]
        V = f.vertices
        inside = np.ones(idx.size, dtype=bool)
        for i in range(V.shape[0]):
            e = V[(i + 1) % V.shape[0]] - V[i]
            side = np.cross(e, P - V[i]) @ n
            inside &= side >= -INSIDE_TOL * np.linalg.norm(e)
        hit = idx[inside]
        best[hit] = t[hit]
        ids[hit] = f.id
    return best, ids


def _labels_segmentation(scene: SceneModel, ids: np.ndarray, origin, width, height) -> Segmentation:
    labels = ids.reshape(height, width)
    present = np.unique(ids[ids > 0])
    geoms = {int(i): scene.face(int(i)).geometry(toward=origin) for i in present}
    return Segmentation.from_labels(labels, geoms)


def raycast(scene: SceneModel, pattern: ScanPattern,
            noise_sigma: float = DEFAULT_SIGMA) -> Tuple[OrganizedScan, Segmentation]:
    """Noise-free scan plus ground-truth labels (face ids, 0 = no hit)."""
    if not scene.faces:
        raise InvalidRecipe("scene has no faces")
    D = pattern.directions()
    r, ids = cast(scene, pattern.origin, D)
    scan = OrganizedScan.from_rays(pattern.origin, D, r, noise_sigma=noise_sigma,
                                   width=pattern.width, height=pattern.height)
    return scan, _labels_segmentation(scene, ids, pattern.origin, pattern.width, pattern.height)


def noise_uniforms(seed: int, stream: int, count: int) -> np.ndarray:
    """The ``(count, 3)`` uniforms in (0, 1) driving per-pixel noise."""
    u = stream_rng(seed, stream).random((count, 3))
    # the generator never returns 1.0; map an exact 0 inward so quantiles stay finite
    return np.where(u == 0.0, 2.0**-54, u)


def perturb_directions(D: np.ndarray, sigma: float, u_angle, u_axis) -> np.ndarray:
    """Rotate each unit direction by N(0, sigma^2) about a random perpendicular axis."""
    D = np.asarray(D, dtype=np.float64)
    if sigma == 0:
        return D.copy()
    theta = sigma * ndtri(u_angle)
    phi = 2 * math.pi * u_axis
    helper = np.where(np.abs(D[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
    t1 = np.cross(D, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(D, t1)
    axis = np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2
    out = np.cos(theta)[:, None] * D + np.sin(theta)[:, None] * np.cross(axis, D)
    return out


def add_noise(scan: OrganizedScan, noise: NoiseModel, scene: Optional[SceneModel] = None,
              scan_index: int = 0) -> OrganizedScan:
    """Apply angular then radial Gaussian noise.

    Each direction is perturbed and re-intersected with ``scene``; radial
    noise is added to the resulting range.  The stored direction stays the
    nominal one, as a scanner reports its commanded beam angle.  Without a
    scene only radial noise is possible.
    """
    return _noisy(scan, noise, scene, scan_index)[0]


def _noisy(scan, noise, scene, scan_index):
    if noise.sigma_angular > 0 and scene is None:
        raise ValueError("angular noise needs the scene for re-intersection")
    if noise.sigma_angular == 0 and noise.sigma_radial == 0:
        # exact identity: re-casting derived directions would move points by an ulp
        return scan, None
    D = scan.directions
    u = noise_uniforms(noise.rng_seed, 1 + scan_index, scan.size)
    ids = None
    if scene is not None:
        Dp = perturb_directions(D, noise.sigma_angular, u[:, 0], u[:, 1])
        r, ids = cast(scene, scan.origin, Dp)
    else:
        r = np.where(scan.valid, scan.ranges, np.inf)
    r = r + noise.sigma_radial * ndtri(u[:, 2])
    sigma = noise.sigma_radial if noise.sigma_radial > 0 else scan.noise_sigma
    valid = np.isfinite(r) & (r > 0)
    pts = np.where(valid[:, None], scan.origin + np.where(valid, r, 1.0)[:, None] * D,
                   scan.origin + D)
    out = OrganizedScan(scan.width, scan.height, scan.origin, pts, valid, sigma)
    return out, ids


def simulate(scene: SceneModel, pattern: ScanPattern, noise: NoiseModel,
             scan_index: int = 0) -> Tuple[OrganizedScan, Segmentation]:
    """Noisy scan with labels of the faces actually hit by the perturbed rays."""
    sigma = noise.sigma_radial if noise.sigma_radial > 0 else DEFAULT_SIGMA
    clean, gt = raycast(scene, pattern, sigma)
    if noise.sigma_angular == 0 and noise.sigma_radial == 0:
        return clean, gt
    scan, ids = _noisy(clean, noise, scene, scan_index)
    ids = np.where(scan.valid, ids, 0)
    return scan, _labels_segmentation(scene, ids, pattern.origin, pattern.width, pattern.height)


def derive_seed(seed: int, index: int) -> int:
    """Per-index seed for batch generation."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def generate_benchmark(recipe: Union[Recipe, dict, str, Path], seeds: Sequence[int]
                       ) -> List[Tuple[OrganizedScan, Segmentation]]:
    """One scene layout and noisy scan per seed."""
    if not isinstance(recipe, Recipe):
        recipe = Recipe.from_dict(recipe) if isinstance(recipe, dict) else Recipe.load(recipe)
    out = []
    for s in seeds:
        scene = build_scene(recipe, s)
        noise = NoiseModel(recipe.noise.sigma_angular, recipe.noise.sigma_radial, s)
        out.append(simulate(scene, recipe.pattern, noise))
    return out
