"""Geometry primitives: quaternions (w, x, y, z), oriented boxes, SAT overlap tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UP = np.array([0.0, 0.0, 1.0])
IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)

# Overlap depth below this is treated as touching, not penetrating.
PENETRATION_TOL = 0.005


def quat_normalize(q) -> tuple[float, float, float, float]:
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return tuple(float(v) for v in q)


def quat_from_yaw(yaw: float) -> tuple[float, float, float, float]:
    return (math.cos(yaw / 2.0), 0.0, 0.0, math.sin(yaw / 2.0))


def quat_from_axis_angle(axis, angle: float) -> tuple[float, float, float, float]:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    s = math.sin(angle / 2.0)
    return (math.cos(angle / 2.0), float(axis[0] * s), float(axis[1] * s), float(axis[2] * s))


def quat_mul(a, b) -> tuple[float, float, float, float]:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return (
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> tuple[float, float, float, float]:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    return quat_normalize(q)


def quat_angle(a, b) -> float:
    """Geodesic angle in radians between two orientations."""
    d = abs(sum(x * y for x, y in zip(a, b)))
    return 2.0 * math.acos(min(1.0, d))


def yaw_of(q) -> float:
    """Heading of the local +X axis projected onto the floor plane."""
    r = quat_to_matrix(q)
    return math.atan2(r[1, 0], r[0, 0])


def tilt_of(q) -> float:
    """Angle between the local +Z axis and world up, radians."""
    r = quat_to_matrix(q)
    return math.acos(max(-1.0, min(1.0, r[2, 2])))


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class Obb:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    orientation: tuple[float, float, float, float] = IDENTITY_QUAT

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise ValueError(f"half extents must be positive, got {self.half_extents}")

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    @property
    def volume(self) -> float:
        hx, hy, hz = self.half_extents
        return 8.0 * hx * hy * hz

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        local = signs * np.asarray(self.half_extents)
        return local @ self.rotation.T + np.asarray(self.center)

    def aabb_half_widths(self) -> np.ndarray:
        """Half widths of the world-axis-aligned box enclosing this one."""
        return np.abs(self.rotation) @ np.asarray(self.half_extents)

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        p = (np.atleast_2d(points) - np.asarray(self.center)) @ self.rotation
        return np.all(np.abs(p) <= np.asarray(self.half_extents) + tol, axis=1)

    def footprint(self) -> np.ndarray:
        """Counter-clockwise xy corners of the box's horizontal footprint (upright boxes)."""
        r = self.rotation
        hx, hy, _ = self.half_extents
        c = np.asarray(self.center[:2])
        ax, ay = r[:2, 0] * hx, r[:2, 1] * hy
        return np.array([c - ax - ay, c + ax - ay, c + ax + ay, c - ax + ay])


def _sat_axes(ra: np.ndarray, rb: np.ndarray) -> np.ndarray:
    """The 15 separating-axis candidates: 3 + 3 face normals and 9 edge cross products."""
    cross = np.cross(ra.T[:, None, :], rb.T[None, :, :]).reshape(9, 3)
    return np.concatenate([ra.T, rb.T, cross])


def obb_penetration(a: Obb, b: Obb) -> float:
    """Minimum overlap depth over the 15 SAT axes; <= 0 means separated."""
    ra, rb = a.rotation, b.rotation
    ha, hb = np.asarray(a.half_extents), np.asarray(b.half_extents)
    d = np.asarray(b.center) - np.asarray(a.center)
    axes = _sat_axes(ra, rb)
    n = np.linalg.norm(axes, axis=1)
    keep = n >= 1e-9
    axes = axes[keep] / n[keep, None]
    pa = np.abs(axes @ ra) @ ha
    pb = np.abs(axes @ rb) @ hb
    return float(np.min(pa + pb - np.abs(axes @ d)))


def obb_collide(a: Obb, b: Obb, tol: float = PENETRATION_TOL) -> bool:
    return obb_penetration(a, b) > tol


def obb_collide_many(centers, rotations, halfs, other: Obb, tol: float = PENETRATION_TOL) -> np.ndarray:
    """Vectorised SAT of M boxes against one box. Returns bool (M,) of penetrations > tol."""
    centers = np.asarray(centers, dtype=float)
    rotations = np.asarray(rotations, dtype=float)
    halfs = np.asarray(halfs, dtype=float)
    m = len(centers)
    rb = other.rotation
    hb = np.asarray(other.half_extents)
    d = np.asarray(other.center)[None, :] - centers
    # Quick reject on bounding spheres.
    ra_rad = np.linalg.norm(halfs, axis=1)
    near = np.linalg.norm(d, axis=1) <= ra_rad + np.linalg.norm(hb)
    out = np.zeros(m, dtype=bool)
    if not near.any():
        return out
    idx = np.nonzero(near)[0]
    ra = rotations[idx]
    ha = halfs[idx]
    dd = d[idx]
    min_overlap = np.full(len(idx), np.inf)
    axes = [ra[:, :, i] for i in range(3)] + [np.broadcast_to(rb[:, j], (len(idx), 3)) for j in range(3)]
    for i in range(3):
        for j in range(3):
            axes.append(np.cross(ra[:, :, i], rb[:, j][None, :]))
    for axis in axes:
        n = np.linalg.norm(axis, axis=1)
        valid = n > 1e-9
        ax = np.where(valid[:, None], axis / np.where(valid, n, 1.0)[:, None], 0.0)
        pa = np.sum(ha * np.abs(np.einsum("mij,mi->mj", ra, ax)), axis=1)
        pb = np.abs(ax @ rb) @ hb
        overlap = pa + pb - np.abs(np.sum(dd * ax, axis=1))
        overlap = np.where(valid, overlap, np.inf)
        np.minimum(min_overlap, overlap, out=min_overlap)
    out[idx] = min_overlap > tol
    return out


def tris_box_intersect(tris: np.ndarray, box: Obb, shrink: float = PENETRATION_TOL) -> bool:
    """True if any triangle (T,3,3) intersects the box shrunk by ``shrink`` on every side."""
    h = np.asarray(box.half_extents) - shrink
    if np.any(h <= 0):
        return False
    r = box.rotation
    v = (np.asarray(tris, dtype=float) - np.asarray(box.center)) @ r  # box-local
    if len(v) == 0:
        return False
    # Box face normals.
    lo, hi = v.min(axis=1), v.max(axis=1)
    cand = np.all((lo < h) & (hi > -h), axis=1)
    if not cand.any():
        return False
    v = v[cand]
    e = [v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]]
    sep = np.zeros(len(v), dtype=bool)
    normal = np.cross(e[0], e[1])
    axes = [normal]
    basis = np.eye(3)
    for ei in e:
        for k in range(3):
            axes.append(np.cross(basis[k][None, :], ei))
    for ax in axes:
        p = np.einsum("tkj,tj->tk", v, ax)
        rad = np.abs(ax) @ h
        live = np.linalg.norm(ax, axis=1) > 1e-12  # parallel edges give a zero axis, which separates nothing
        sep |= live & ((p.min(axis=1) >= rad) | (p.max(axis=1) <= -rad))
    return bool(np.any(~sep))


def point_rect_distance(points: np.ndarray, center, yaw: float, half_xy) -> np.ndarray:
    """Distance from xy points to a yawed rectangle (0 inside)."""
    c, s = math.cos(yaw), math.sin(yaw)
    p = np.atleast_2d(points) - np.asarray(center)[:2]
    lx = p[:, 0] * c + p[:, 1] * s
    ly = -p[:, 0] * s + p[:, 1] * c
    dx = np.maximum(np.abs(lx) - half_xy[0], 0.0)
    dy = np.maximum(np.abs(ly) - half_xy[1], 0.0)
    return np.hypot(dx, dy)


def rotate_points(points: np.ndarray, q) -> np.ndarray:
    return np.asarray(points) @ quat_to_matrix(q).T
