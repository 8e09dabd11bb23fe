"""Harbor free region, ship footprint, and winding-angle collision residuals.

The free region is a simple counter-clockwise polygon.  Containment of a
point is decided by summing, over all polygon edges, the signed angle
subtended at the point (two-argument arctangent of cross and dot products of
the rays to consecutive vertices).  For a CCW simple polygon the sum is
exactly ``2*pi`` for interior points and ``0`` for exterior points, which
turns "stay inside" into equality constraints: one residual
``angle_sum - 2*pi`` per ship boundary point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import configfile

TWO_PI = 2.0 * math.pi

#: A query point closer than this to a polygon vertex degenerates the rays.
VERTEX_TOLERANCE = 1e-12


class GeometryError(ValueError):
    """Invalid polygon/footprint data or a degenerate geometric query."""


class DegenerateRayError(GeometryError):
    """Query point coincides with a polygon vertex within tolerance."""


@dataclass(frozen=True)
class Pose:
    """Midship position (m) and yaw angle (rad) in the earth frame."""

    x0: float
    y0: float
    psi: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x0, self.y0, self.psi)):
            raise GeometryError(f"non-finite pose: {self}")


@dataclass(frozen=True)
class HarborPolygon:
    """Simple CCW polygon bounding the obstacle-free water."""

    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise GeometryError(f"polygon needs >= 3 (x, y) vertices, got shape {verts.shape}")
        if not np.all(np.isfinite(verts)):
            raise GeometryError("polygon vertices must be finite")
        if signed_area(verts) <= 0.0:
            raise GeometryError("polygon must be counter-clockwise (use load_polygon to normalize)")
        _check_simple(verts)
        verts.flags.writeable = False
        object.__setattr__(self, "vertices", verts)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]


@dataclass(frozen=True)
class ShipFootprint:
    """Boundary points of the hull in the ship-fixed frame, midship at origin."""

    local_points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.array(self.local_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise GeometryError(f"footprint needs >= 3 (x, y) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("footprint points must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "local_points", pts)

    @property
    def n_points(self) -> int:
        return self.local_points.shape[0]

    def validate_within_hull(self, lpp: float, breadth: float) -> None:
        pts = self.local_points
        if (np.any(np.abs(pts[:, 0]) > 0.5 * lpp + 1e-9)
                or np.any(np.abs(pts[:, 1]) > 0.5 * breadth + 1e-9)):
            raise GeometryError(
                f"footprint exceeds hull box [{-0.5 * lpp}, {0.5 * lpp}] x "
                f"[{-0.5 * breadth}, {0.5 * breadth}]")


def default_footprint(lpp: float, breadth: float) -> ShipFootprint:
    """Five-point pentagon: bow apex, two shoulder points, two stern corners."""
    half_b = 0.5 * breadth
    return ShipFootprint(np.array([
        [0.5 * lpp, 0.0],
        [0.25 * lpp, half_b],
        [-0.5 * lpp, half_b],
        [-0.5 * lpp, -half_b],
        [0.25 * lpp, -half_b],
    ]))


def signed_area(vertices) -> float:
    """Shoelace area: positive for CCW orientation."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def world_points(footprint: ShipFootprint, pose: Pose) -> np.ndarray:
    """Footprint points rotated by the yaw angle and shifted to the pose."""
    return footprint_world_batch(footprint, np.array([pose.x0, pose.y0, pose.psi]))


def footprint_world_batch(footprint: ShipFootprint, poses) -> np.ndarray:
    """Earth-frame footprint points for poses ``(..., 3)``; output ``(..., n_s, 2)``."""
    poses = np.asarray(poses, dtype=float)
    cos_psi = np.cos(poses[..., 2])[..., None]
    sin_psi = np.sin(poses[..., 2])[..., None]
    local = footprint.local_points
    wx = poses[..., 0:1] + local[:, 0] * cos_psi - local[:, 1] * sin_psi
    wy = poses[..., 1:2] + local[:, 0] * sin_psi + local[:, 1] * cos_psi
    return np.stack([wx, wy], axis=-1)


def angle_sum(point, polygon) -> float:
    """Sum of signed angles subtended by the polygon edges at ``point``.

    Exactly ``2*pi`` for points strictly inside a CCW simple polygon, ``0``
    strictly outside.  Points on an edge yield the raw intermediate sum (the
    caller decides how to treat them); a point within ``VERTEX_TOLERANCE`` of
    a vertex raises :class:`DegenerateRayError`.
    """
    return float(angle_sums(np.asarray(point, dtype=float), polygon))


def angle_sums(points, polygon) -> np.ndarray:
    """Vectorized :func:`angle_sum` for points shaped ``(..., 2)``."""
    verts = polygon.vertices if isinstance(polygon, HarborPolygon) else np.asarray(polygon, dtype=float)
    points = np.asarray(points, dtype=float)
    rays = verts - points[..., None, :]                    # (..., nv, 2)
    dist_sq = np.sum(rays * rays, axis=-1)
    if np.any(dist_sq < VERTEX_TOLERANCE**2):
        raise DegenerateRayError("query point coincides with a polygon vertex")
    nxt = np.roll(rays, -1, axis=-2)
    cross = rays[..., 0] * nxt[..., 1] - rays[..., 1] * nxt[..., 0]
    dot = np.sum(rays * nxt, axis=-1)
    return np.sum(np.arctan2(cross, dot), axis=-1)


def collision_residuals(footprint: ShipFootprint, pose: Pose, polygon: HarborPolygon) -> np.ndarray:
    """Per-boundary-point residual ``angle_sum - 2*pi`` (all zero iff inside)."""
    return collision_residuals_batch(footprint, np.array([pose.x0, pose.y0, pose.psi]), polygon)


def collision_residuals_batch(footprint: ShipFootprint, poses, polygon: HarborPolygon) -> np.ndarray:
    """Residuals for poses ``(..., 3)``; output ``(..., n_s)``."""
    pts = footprint_world_batch(footprint, poses)
    return angle_sums(pts, polygon) - TWO_PI


def nearest_boundary_point(point, polygon: HarborPolygon) -> tuple[np.ndarray, float]:
    """Closest point on the polygon boundary and its distance."""
    p = np.asarray(point, dtype=float)
    a = polygon.vertices
    b = np.roll(a, -1, axis=0)
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    t = np.clip(np.sum((p - a) * ab, axis=1) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    dist = np.hypot(proj[:, 0] - p[0], proj[:, 1] - p[1])
    i = int(np.argmin(dist))
    return proj[i], float(dist[i])


def load_polygon(path: str | Path) -> HarborPolygon:
    """Read a polygon file, normalizing clockwise input to CCW."""
    data = configfile.read_file(path)
    section = configfile.require(data, "polygon", dict, str(path))
    verts = np.asarray(configfile.require(section, "vertices_m", list, str(path)), dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise GeometryError(f"{path}: vertices_m must be a list of [x, y] pairs")
    if signed_area(verts) < 0.0:
        verts = verts[::-1]
    return HarborPolygon(verts)


def load_footprint(path: str | Path) -> ShipFootprint:
    data = configfile.read_file(path)
    section = configfile.require(data, "footprint", dict, str(path))
    pts = np.asarray(configfile.require(section, "points_m", list, str(path)), dtype=float)
    return ShipFootprint(pts)


def _check_simple(verts: np.ndarray) -> None:
    """Reject self-intersecting boundaries (O(n^2) segment test)."""
    n = verts.shape[0]
    for i in range(n):
        a1, a2 = verts[i], verts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent edges share an endpoint
            b1, b2 = verts[j], verts[(j + 1) % n]
            if _segments_intersect(a1, a2, b1, b2):
                raise GeometryError(f"polygon is self-intersecting (edges {i} and {j})")


def _segments_intersect(a1, a2, b1, b2) -> bool:
    d1 = _orient(b1, b2, a1)
    d2 = _orient(b1, b2, a2)
    d3 = _orient(a1, a2, b1)
    d4 = _orient(a1, a2, b2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    # collinear touching counts as intersection for non-adjacent edges
    for d, p, q, r in ((d1, b1, b2, a1), (d2, b1, b2, a2), (d3, a1, a2, b1), (d4, a1, a2, b2)):
        if d == 0.0 and _on_segment(p, q, r):
            return True
    return False


def _orient(p, q, r) -> float:
    return float((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))


def _on_segment(p, q, r) -> bool:
    return (min(p[0], q[0]) - 1e-12 <= r[0] <= max(p[0], q[0]) + 1e-12
            and min(p[1], q[1]) - 1e-12 <= r[1] <= max(p[1], q[1]) + 1e-12)
