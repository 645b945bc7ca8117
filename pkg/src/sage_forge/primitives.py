"""Closed triangle-mesh primitives used by the asset templates."""

from __future__ import annotations

import math

import numpy as np

Part = tuple[np.ndarray, np.ndarray]


def box(x0, x1, y0, y1, z0, z1) -> Part:
    v = np.array(
        [[x, y, z] for z in (z0, z1) for y in (y0, y1) for x in (x0, x1)],
        dtype=float,
    )
    # Vertex index = 4*z + 2*y + x.
    f = [
        (0, 2, 1), (1, 2, 3),  # bottom (-z)
        (4, 5, 6), (5, 7, 6),  # top (+z)
        (0, 1, 4), (1, 5, 4),  # -y
        (2, 6, 3), (3, 6, 7),  # +y
        (0, 4, 2), (2, 4, 6),  # -x
        (1, 3, 5), (3, 7, 5),  # +x
    ]
    return v, np.array(f)


def revolve(profile: list[tuple[float, float]], segments: int = 24, cx: float = 0.0, cy: float = 0.0) -> Part:
    """Solid of revolution of a closed (r, z) profile about the vertical axis.

    Profile points with r == 0 collapse to a single axis vertex.
    """
    verts: list[list[float]] = []
    rings: list[list[int]] = []
    angles = [2 * math.pi * k / segments for k in range(segments)]
    for r, z in profile:
        if r == 0:
            verts.append([cx, cy, z])
            rings.append([len(verts) - 1] * segments)
        else:
            start = len(verts)
            verts.extend([cx + r * math.cos(a), cy + r * math.sin(a), z] for a in angles)
            rings.append(list(range(start, start + segments)))
    faces = []
    n = len(profile)
    for i in range(n):
        a, b = rings[i], rings[(i + 1) % n]
        for k in range(segments):
            k2 = (k + 1) % segments
            quad = (a[k], a[k2], b[k2], b[k])
            for tri in ((quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])):
                if len(set(tri)) == 3:
                    faces.append(tri)
    v, f = np.array(verts, dtype=float), np.array(faces)
    return orient_outward(v, f)


def cylinder(cx, cy, r, z0, z1, segments: int = 16, r_top: float | None = None) -> Part:
    rt = r if r_top is None else r_top
    return revolve([(0.0, z0), (r, z0), (rt, z1), (0.0, z1)], segments, cx, cy)


def uv_sphere(cx, cy, cz, r, rings: int = 8, segments: int = 16, flat_bottom: float = 0.0) -> Part:
    """Sphere as a revolved half-circle; ``flat_bottom`` clips the lowest fraction of the diameter."""
    prof = []
    zcut = cz - r + flat_bottom * 2 * r
    for i in range(rings + 1):
        th = math.pi * i / rings  # 0 at bottom pole
        z = cz - r * math.cos(th)
        rr = r * math.sin(th)
        if i in (0, rings):
            rr = 0.0
        if flat_bottom > 0 and z < zcut:
            continue
        prof.append((rr, z))
    if flat_bottom > 0:
        rc = math.sqrt(max(r * r - (zcut - cz) ** 2, 0.0))
        prof = [(0.0, zcut), (rc, zcut)] + prof
    # Revolve wants a closed loop ordered bottom -> outer -> top.
    return revolve(_dedupe(prof), segments, cx, cy)


def extrude_x(poly_yz: list[tuple[float, float]], x0: float, x1: float) -> Part:
    """Prism of a convex (y, z) polygon extruded along x, with fan caps."""
    n = len(poly_yz)
    verts = [[x0, y, z] for y, z in poly_yz] + [[x1, y, z] for y, z in poly_yz]
    verts.append([x0, *np.mean(poly_yz, axis=0)])
    verts.append([x1, *np.mean(poly_yz, axis=0)])
    c0, c1 = 2 * n, 2 * n + 1
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [(i, j, n + j), (i, n + j, n + i), (c0, j, i), (c1, n + i, n + j)]
    return orient_outward(np.array(verts, dtype=float), np.array(faces))


def ellipse_yz(cy: float, cz: float, half_y: float, half_z: float, segments: int = 32) -> list[tuple[float, float]]:
    """Ellipse points starting at the bottom, so a vertex lies exactly at z = cz - half_z."""
    out = []
    for k in range(segments):
        a = -math.pi / 2 + 2 * math.pi * k / segments
        out.append((cy + half_y * math.cos(a), cz + half_z * math.sin(a)))
    return out


def orient_outward(v: np.ndarray, f: np.ndarray) -> Part:
    tv = v[f]
    vol = np.einsum("ij,ij->i", tv[:, 0], np.cross(tv[:, 1], tv[:, 2])).sum()
    if vol < 0:
        f = f[:, ::-1].copy()
    return v, f


def merge(parts: list[Part]) -> Part:
    verts, faces, off = [], [], 0
    for v, f in parts:
        verts.append(v)
        faces.append(np.asarray(f) + off)
        off += len(v)
    return np.concatenate(verts), np.concatenate(faces)


def _dedupe(prof):
    out = []
    for p in prof:
        if not out or (abs(out[-1][0] - p[0]) > 1e-12 or abs(out[-1][1] - p[1]) > 1e-12):
            out.append(p)
    return out
