"""Support-surface extraction: near-horizontal, upward-facing planar mesh regions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import shapely
from shapely import affinity
from shapely.geometry import MultiPolygon, Polygon

from .geometry import quat_to_matrix
from .scene import SceneObject, TriMesh

NORMAL_TOL_DEG = 15.0
HEIGHT_TOL = 0.01
MIN_AREA = 25e-4  # 25 cm^2
MIN_CLEARANCE = 0.01


@dataclass(frozen=True)
class SupportSurface:
    polygon: Polygon
    height: float
    clearance: float = math.inf

    @property
    def area(self) -> float:
        return float(self.polygon.area)


def extract_support_surfaces(mesh: TriMesh) -> list[SupportSurface]:
    """Planar up-facing regions of a mesh, sorted by ascending height.

    Faces qualify when their normal is within 15 degrees of +Z and their own
    vertical extent is under 1 cm. Qualifying faces are grouped by height
    (1 cm tolerance), split into connected regions, and regions smaller than
    25 cm^2 or covered by geometry less than 1 cm above are dropped.
    """
    return list(_extract(mesh, None))


def surfaces_in_pose(mesh: TriMesh, orientation) -> list[SupportSurface]:
    """Surfaces of the mesh rotated by ``orientation`` (not translated)."""
    return list(_extract(mesh, tuple(orientation)))


@lru_cache(maxsize=4096)
def _extract(mesh: TriMesh, orientation) -> tuple[SupportSurface, ...]:
    v = mesh.vertices if orientation is None else mesh.vertices @ quat_to_matrix(orientation).T
    t = mesh.triangles
    if len(t) == 0:
        return ()
    tv = v[t]
    n = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    norm = np.linalg.norm(n, axis=1)
    ok = norm > 1e-14
    nz = np.where(ok, n[:, 2] / np.where(ok, norm, 1.0), 0.0)
    zmin, zmax = tv[:, :, 2].min(axis=1), tv[:, :, 2].max(axis=1)
    up = ok & (nz >= math.cos(math.radians(NORMAL_TOL_DEG))) & (zmax - zmin <= HEIGHT_TOL)
    idx = np.nonzero(up)[0]
    if len(idx) == 0:
        return ()
    heights = tv[idx, :, 2].mean(axis=1)
    order = idx[np.argsort(heights, kind="stable")]
    clusters: list[list[int]] = []
    for i in order:
        h = tv[i, :, 2].mean()
        if clusters and h - tv[clusters[-1][0], :, 2].mean() <= HEIGHT_TOL:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    out: list[SupportSurface] = []
    tri_polys = {}
    for cl in clusters:
        polys = []
        for i in cl:
            p = Polygon(tv[i, :, :2])
            if p.area > 1e-12:
                polys.append(p)
                tri_polys[i] = p
        if not polys:
            continue
        merged = shapely.union_all(polys).buffer(0)
        comps = list(merged.geoms) if isinstance(merged, MultiPolygon) else [merged]
        weights = np.array([tri_polys[i].area for i in cl if i in tri_polys])
        hs = np.array([tv[i, :, 2].mean() for i in cl if i in tri_polys])
        height = float(np.sum(weights * hs) / np.sum(weights))
        member = np.zeros(len(t), dtype=bool)
        member[cl] = True
        for comp in comps:
            if comp.area < MIN_AREA:
                continue
            # Geometry standing on the region (a post, a divider) cuts its footprint out.
            blocked = _footprint_above(tv, zmin, member, comp, height, height + MIN_CLEARANCE)
            if blocked is not None:
                rest = comp.difference(blocked)
                pieces = list(rest.geoms) if isinstance(rest, MultiPolygon) else [rest]
            else:
                pieces = [comp]
            for piece in pieces:
                if not isinstance(piece, Polygon) or piece.area < MIN_AREA:
                    continue
                clearance = _clearance(tv, zmin, member, piece, height)
                if clearance < MIN_CLEARANCE:
                    continue
                out.append(SupportSurface(piece, height, clearance))
    out.sort(key=lambda s: (s.height, -s.area))
    return tuple(out)


def _footprint_above(tv, zmin, member, comp: Polygon, lo: float, hi: float):
    """Union of xy projections of non-member triangles starting between ``lo`` and ``hi`` over ``comp``."""
    x0, y0, x1, y1 = comp.bounds
    xs, ys = tv[:, :, 0], tv[:, :, 1]
    cand = (
        ~member
        & (zmin >= lo - 1e-6)
        & (zmin < hi)
        & (xs.max(axis=1) > x0)
        & (xs.min(axis=1) < x1)
        & (ys.max(axis=1) > y0)
        & (ys.min(axis=1) < y1)
    )
    polys = [p for p in (Polygon(tv[i, :, :2]) for i in np.nonzero(cand)[0]) if p.area > 1e-10]
    if not polys:
        return None
    return shapely.union_all(polys).buffer(0)


def _clearance(tv, zmin, member, comp: Polygon, height: float) -> float:
    x0, y0, x1, y1 = comp.bounds
    xs, ys = tv[:, :, 0], tv[:, :, 1]
    cand = (
        ~member
        & (zmin >= height - 1e-6)
        & (xs.max(axis=1) > x0)
        & (xs.min(axis=1) < x1)
        & (ys.max(axis=1) > y0)
        & (ys.min(axis=1) < y1)
    )
    best = math.inf
    for i in np.nonzero(cand)[0]:
        if zmin[i] - height >= best:
            continue
        p = Polygon(tv[i, :, :2])
        if p.area <= 1e-10:
            continue
        if zmin[i] - height < MIN_CLEARANCE:
            continue  # already cut out of the region
        if comp.intersection(p).area > 1e-6:
            best = float(zmin[i] - height)
    return best


def world_surfaces(obj: SceneObject) -> list[SupportSurface]:
    """Support surfaces of a placed object in world coordinates."""
    local = surfaces_in_pose(obj.mesh, obj.pose.orientation)
    x, y, z = obj.pose.position
    return [SupportSurface(affinity.translate(s.polygon, x, y), s.height + z, s.clearance) for s in local]
