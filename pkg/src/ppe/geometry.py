"""Rays, planes and the radial measurement model.

A measurement is a ray ``s + t v`` observed at range ``r``.  Given a plane
``n . y = n . x`` the predicted range along the ray is
``rhat = n . (x - s) / (n . v)`` and the error of an assignment of rays to
planes is the sum of squared radial residuals ``(r - rhat)^2``.  Planes are
fitted by minimising exactly that quantity rather than the orthogonal
point-to-plane distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import _fit
from .errors import (
    DegenerateSet,
    InconsistentAssignment,
    NoConvergence,
    ParallelRay,
)

PARALLEL_EPS = 1e-6
UNIT_TOL = 1e-9


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    return a


@dataclass(frozen=True)
class Ray:
    start: np.ndarray
    direction: np.ndarray
    range: Optional[float]
    valid: bool = True

    def __post_init__(self):
        object.__setattr__(self, "start", _vec3(self.start))
        object.__setattr__(self, "direction", _vec3(self.direction))
        if abs(np.linalg.norm(self.direction) - 1.0) > UNIT_TOL:
            raise ValueError("ray direction must be unit length")
        if self.valid:
            if self.range is None or not self.range > 0:
                raise ValueError("a valid ray needs a positive range")
        else:
            object.__setattr__(self, "range", None)

    @property
    def endpoint(self) -> np.ndarray:
        return self.start + self.range * self.direction


@dataclass(frozen=True)
class PlaneGeometry:
    support: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "support", _vec3(self.support))
        n = _vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
            raise ValueError("plane normal must be unit length")
        object.__setattr__(self, "normal", n)

    @classmethod
    def from_normal_offset(cls, normal, offset: float) -> "PlaneGeometry":
        """Plane ``normal . y = offset``; the support is the foot of the origin."""
        n = _vec3(normal)
        n = n / np.linalg.norm(n)
        return cls(offset * n, n)

    @property
    def offset(self) -> float:
        return float(self.normal @ self.support)

    def signed_distance(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.support) @ self.normal

    def same_plane(self, other: "PlaneGeometry", tol: float = 1e-9) -> bool:
        """True if both describe the same plane up to normal sign."""
        s = 1.0 if self.normal @ other.normal >= 0 else -1.0
        return bool(
            np.allclose(self.normal, s * other.normal, atol=tol, rtol=0)
            and abs(self.offset - s * other.offset) <= tol
        )


@dataclass
class Plane:
    """A plane with its member rays; atomic planes explain exactly one ray."""

    geometry: PlaneGeometry
    members: np.ndarray
    atomic: bool = False
    residual: float = 0.0

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.int64)
        if self.atomic and self.members.size != 1:
            raise ValueError("an atomic plane has exactly one member")
        if not self.atomic and self.members.size < 3:
            raise ValueError("a regular plane needs at least three members")

    @property
    def size(self) -> int:
        return int(self.members.size)


@dataclass(eq=False)
class OrganizedScan:
    """A ``height x width`` grid of rays sharing one sensor origin.

    ``points`` holds the measured endpoints, row-major with shape ``(K, 3)``.
    For invalid cells the stored point is ``origin + direction`` so that the
    ray direction survives without a range.  Directions and ranges are always
    derived from the points, which makes the point array the single source of
    truth for equality and serialisation.
    """

    width: int
    height: int
    origin: np.ndarray
    points: np.ndarray
    valid: np.ndarray
    noise_sigma: float = 0.02
    _derived: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("scan dimensions must be positive")
        self.origin = _vec3(self.origin)
        K = self.width * self.height
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(K, 3)
        self.valid = np.ascontiguousarray(self.valid, dtype=bool).reshape(K)
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")
        self.noise_sigma = float(self.noise_sigma)

    @classmethod
    def from_rays(cls, origin, directions, ranges, valid=None, noise_sigma=0.02,
                  width=None, height=None) -> "OrganizedScan":
        """Build a scan from per-cell directions and ranges.

        ``directions`` may be ``(H, W, 3)`` or ``(K, 3)`` with explicit sizes.
        Cells with a non-finite or non-positive range are invalid.
        """
        d = np.asarray(directions, dtype=np.float64)
        if d.ndim == 3:
            height, width = d.shape[:2]
        d = d.reshape(-1, 3)
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        r = np.asarray(ranges, dtype=np.float64).reshape(-1)
        ok = np.isfinite(r) & (r > 0)
        if valid is not None:
            ok &= np.asarray(valid, dtype=bool).reshape(-1)
        o = _vec3(origin)
        pts = o + np.where(ok, r, 1.0)[:, None] * d
        return cls(int(width), int(height), o, pts, ok, noise_sigma)

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def num_valid(self) -> int:
        return int(self.valid.sum())

    def _arrays(self):
        if self._derived is None:
            delta = self.points - self.origin
            r = np.linalg.norm(delta, axis=1)
            v = delta / r[:, None]
            r = np.where(self.valid, r, np.nan)
            S = np.ascontiguousarray(np.broadcast_to(self.origin, self.points.shape))
            self._derived = (S, np.ascontiguousarray(v), np.ascontiguousarray(r))
        return self._derived

    @property
    def directions(self) -> np.ndarray:
        return self._arrays()[1]

    @property
    def ranges(self) -> np.ndarray:
        """Measured ranges; NaN for invalid cells."""
        return self._arrays()[2]

    @property
    def starts(self) -> np.ndarray:
        return self._arrays()[0]

    def ray(self, k: int) -> Ray:
        k = int(k)
        if self.valid[k]:
            return Ray(self.origin, self.directions[k], float(self.ranges[k]), True)
        return Ray(self.origin, self.directions[k], None, False)

    def rays(self) -> Iterable[Ray]:
        return (self.ray(k) for k in range(self.size))

    def index(self, row: int, col: int) -> int:
        return row * self.width + col

    def __eq__(self, other) -> bool:
        if not isinstance(other, OrganizedScan):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.noise_sigma == other.noise_sigma
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.points, other.points)
        )


def intersect_ray_plane(ray: Ray, plane: PlaneGeometry,
                        parallel_eps: float = PARALLEL_EPS) -> Optional[float]:
    """Distance along ``ray`` to ``plane``; None if parallel or behind the start."""
    nv = float(plane.normal @ ray.direction)
    if abs(nv) < parallel_eps:
        return None
    t = float(plane.normal @ (plane.support - ray.start)) / nv
    if not t > 0:
        return None
    return t


def predicted_range(ray: Ray, planes: Sequence[PlaneGeometry],
                    parallel_eps: float = PARALLEL_EPS) -> Optional[float]:
    """Range to the first plane hit by ``ray``; None if no plane is hit."""
    if len(planes) == 0:
        raise ValueError("predicted_range needs at least one plane")
    best = None
    for plane in planes:
        t = intersect_ray_plane(ray, plane, parallel_eps)
        if t is not None and (best is None or t < best):
            best = t
    return best


def scan_error(scan: OrganizedScan, assignment: Mapping[int, PlaneGeometry],
               parallel_eps: float = PARALLEL_EPS) -> float:
    """Sum of squared radial residuals, each ray scored against its own plane.

    Rays missing from ``assignment`` and invalid rays contribute nothing.
    """
    total = 0.0
    for k, plane in assignment.items():
        if not scan.valid[k]:
            continue
        ray = scan.ray(k)
        t = intersect_ray_plane(ray, plane, parallel_eps)
        if t is None:
            raise InconsistentAssignment(f"ray {k} does not intersect its plane")
        total += (ray.range - t) ** 2
    return total


def pca_plane(points, origin=(0.0, 0.0, 0.0)) -> PlaneGeometry:
    """Orthogonal least-squares plane through ``points``.

    The normal is oriented to point to the side of ``origin``.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if P.shape[0] < 3:
        raise DegenerateSet("need at least three points")
    x0, n, w = _fit.pca(P, np.arange(P.shape[0]))
    if w[2] <= 0 or w[1] <= _fit.COLLINEAR_TOL * w[2]:
        raise DegenerateSet("points are collinear")
    if n @ (_vec3(origin) - x0) < 0:
        n = -n
    return PlaneGeometry(x0, n / np.linalg.norm(n))


def _member_array(members) -> np.ndarray:
    idx = np.unique(np.asarray(list(members) if not isinstance(members, np.ndarray)
                               else members, dtype=np.int64))
    return idx


def fit_plane_radial(scan: OrganizedScan, members,
                     parallel_eps: float = PARALLEL_EPS,
                     initial: Optional[PlaneGeometry] = None) -> Tuple[PlaneGeometry, float]:
    """Maximum-likelihood plane of the rays ``members`` and its residual.

    Minimises the sum of squared radial residuals with Gauss-Newton started
    from the PCA plane of the endpoints, or from ``initial`` if given (the
    clustering engine warm-starts extensions this way).  The member order is
    irrelevant.
    """
    idx = _member_array(members)
    if idx.size and not scan.valid[idx].all():
        raise ValueError("cannot fit invalid rays")
    S, V, R = scan._arrays()
    out = np.empty(7)
    if initial is None:
        status = _fit.fit_into(S, V, R, scan.points, idx, parallel_eps, out)
    elif idx.size < 3:
        status = _fit.DEGENERATE
    else:
        out[:] = np.nan
        status = _fit.refine(S, V, R, idx, initial.support.copy(), initial.normal.copy(),
                             parallel_eps, out)
    _raise_for_status(status)
    return PlaneGeometry(out[3:6], out[:3]), float(out[6])


def _raise_for_status(status: int) -> None:
    if status == _fit.OK:
        return
    if status == _fit.DEGENERATE:
        raise DegenerateSet("member endpoints are collinear")
    if status == _fit.PARALLEL:
        raise ParallelRay("a member ray is parallel to the plane")
    raise NoConvergence("radial plane fit did not converge")


def tangent_basis(normal) -> Tuple[np.ndarray, np.ndarray]:
    t1, t2 = _fit.tangent_basis(_vec3(normal))
    return t1, t2


def perturb_plane(plane: PlaneGeometry, a: float, b: float, c: float) -> PlaneGeometry:
    """Move a plane in the local coordinates used by the fit.

    The normal becomes ``normalize(n + a t1 + b t2)`` and the plane passes at
    offset ``c`` from the original support along the new normal.
    """
    t1, t2 = tangent_basis(plane.normal)
    n = plane.normal + a * t1 + b * t2
    n = n / np.linalg.norm(n)
    return PlaneGeometry(plane.support + c * n, n)


def radial_residuals(scan: OrganizedScan, members, plane: PlaneGeometry) -> np.ndarray:
    idx = _member_array(members)
    S, V, R = scan._arrays()
    nv = V[idx] @ plane.normal
    rhat = ((plane.support - S[idx]) @ plane.normal) / nv
    return R[idx] - rhat


def radial_objective_gradient(scan: OrganizedScan, members,
                              plane: PlaneGeometry) -> Tuple[float, np.ndarray]:
    """Objective and its gradient in the ``(a, b, c)`` coordinates of `perturb_plane`."""
    idx = _member_array(members)
    S, V, R = scan._arrays()
    n = plane.normal
    t1, t2 = tangent_basis(n)
    nv = V[idx] @ n
    rhat = ((plane.support - S[idx]) @ n) / nv
    rho = R[idx] - rhat
    h = S[idx] + rhat[:, None] * V[idx] - plane.support
    J = np.column_stack([(h @ t1) / nv, (h @ t2) / nv, -1.0 / nv])
    return float(rho @ rho), 2.0 * (J.T @ rho)
