"""Physics critic: quasi-static settle, stability rule, placement validation and scene metrics.

The settle procedure stands in for a rigid-body simulator. Each iteration drops
the object onto the first support surface below it, takes the convex hull of
the vertices touching that plane, and tips the object about the nearest edge
of that contact patch whenever the centre of mass projects outside it (less a
1 cm margin). Everything is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import shapely
from shapely.geometry import MultiPoint, Point, Polygon
from shapely.ops import nearest_points, unary_union

from .geometry import (
    PENETRATION_TOL,
    obb_penetration,
    quat_angle,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    tris_box_intersect,
)
from .scene import FLOOR, WALL, PlacementClass, Pose, Scene, SceneObject, SupportRelation, world_obb
from .surfaces import world_surfaces

MAX_ITERATIONS = 120
MAX_TRANSLATION = 0.2  # m
MAX_ROTATION_DEG = 8.0
CONTACT_TOL = 0.002
COM_MARGIN = 0.01
PENETRATION_ALLOWANCE = 0.02
TIP_STEP_DEG = 1.0
TIP_CAP_DEG = 90.0


class NoSupportBelow(RuntimeError):
    pass


@dataclass(frozen=True)
class SettleResult:
    object_id: str
    pre_pose: Pose
    post_pose: Pose
    iterations: int
    converged: bool
    support: SupportRelation | None = None


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    delta_translation: float
    delta_rotation: float  # degrees


@dataclass(frozen=True)
class Accept:
    pose: Pose
    adjusted: bool = False
    support: SupportRelation | None = None


@dataclass(frozen=True)
class Reject:
    reason: str


@dataclass
class CollisionReport:
    colliding_pairs: list[tuple[str, str]] = field(default_factory=list)
    collision_ratio: float = 0.0


def check_stability(pre: Pose, post: Pose) -> StabilityVerdict:
    dt = float(np.linalg.norm(np.subtract(post.position, pre.position)))
    dr = math.degrees(quat_angle(pre.orientation, post.orientation))
    return StabilityVerdict(dt <= MAX_TRANSLATION and dr <= MAX_ROTATION_DEG, dt, dr)


# ---------------------------------------------------------------------------
# Support lookup


@dataclass(frozen=True)
class _Support:
    polygon: Polygon
    height: float
    parent_id: str
    surface_index: int


def floor_polygon(scene: Scene) -> Polygon:
    return unary_union([Polygon(r.polygon) for r in scene.plan.rooms]).buffer(1e-3, join_style="mitre")


def _candidate_supports(scene: Scene, obj_id: str) -> list[_Support]:
    skip = {obj_id, *scene.descendants(obj_id)}
    out = [_Support(floor_polygon(scene), 0.0, FLOOR, 0)]
    for oid in sorted(scene.objects):
        if oid in skip:
            continue
        other = scene.objects[oid]
        for i, s in enumerate(world_surfaces(other)):
            out.append(_Support(s.polygon, s.height, oid, i))
    return out


def _drop(verts: np.ndarray, supports: list[_Support]) -> tuple[float, _Support] | None:
    """Vertical shift onto the first support hit moving down (slight penetration is lifted out)."""
    best = None
    x0, y0 = verts[:, 0].min(), verts[:, 1].min()
    x1, y1 = verts[:, 0].max(), verts[:, 1].max()
    for s in supports:
        bx0, by0, bx1, by1 = s.polygon.bounds
        if bx1 < x0 or bx0 > x1 or by1 < y0 or by0 > y1:
            continue
        inside = shapely.contains_xy(s.polygon, verts[:, 0], verts[:, 1])
        if not inside.any():
            continue
        gap = float(verts[inside, 2].min()) - s.height
        if gap < -PENETRATION_ALLOWANCE:
            continue
        key = (round(gap, 9), -s.height)
        if best is None or key < best[0]:
            best = (key, gap, s)
    if best is None:
        return None
    return -best[1], best[2]


def _contact(verts: np.ndarray, support: _Support):
    near = verts[np.abs(verts[:, 2] - support.height) <= CONTACT_TOL]
    if len(near) == 0:
        return None
    hull = MultiPoint([tuple(p) for p in near[:, :2]]).convex_hull
    patch = hull.intersection(support.polygon) if hull.geom_type == "Polygon" else hull
    if patch.is_empty:
        patch = hull
    return patch


def _tip_direction(patch, com_xy: np.ndarray, rot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(pivot point xy, unit outward direction) for a COM outside the stable region."""
    c = Point(com_xy)
    if patch.geom_type == "Polygon" and patch.contains(c):
        b = np.array(nearest_points(patch.exterior, c)[0].coords[0])
        d = b - com_xy
    else:
        b = np.array(nearest_points(patch, c)[0].coords[0])
        d = com_xy - b
    n = np.linalg.norm(d)
    if n > 1e-9:
        return b, d / n
    # COM exactly over a line or point contact: tip across the contact's long axis.
    pts = np.asarray(patch.convex_hull.exterior.coords if patch.geom_type == "Polygon" else patch.coords)
    if len(pts) >= 2 and np.ptp(pts, axis=0).max() > 1e-9:
        centered = pts - pts.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        axis = vt[0]
        d = np.array([-axis[1], axis[0]])
    else:
        d = rot[:2, 0].copy()
        if np.linalg.norm(d) < 1e-9:
            d = np.array([1.0, 0.0])
    d = d / np.linalg.norm(d)
    if d[0] + 1e-3 * d[1] < 0:
        d = -d
    return b, d


def _tip(verts: np.ndarray, com: np.ndarray, pivot_xy: np.ndarray, d: np.ndarray, support: _Support):
    """Smallest whole-degree rotation (capped) at which an outward vertex meets the plane over the support."""
    h = support.height
    b = np.array([pivot_xy[0], pivot_xy[1], h])
    d3 = np.array([d[0], d[1], 0.0])
    u = np.cross([0.0, 0.0, 1.0], d3)
    rel = verts - b
    s = rel @ d3
    t = rel[:, 2]
    w = rel @ u
    outward = s > 1e-6
    steps = int(round(TIP_CAP_DEG / TIP_STEP_DEG))
    angles = np.radians(TIP_STEP_DEG * np.arange(1, steps + 1))
    chosen = angles[-1]
    if outward.any():
        so, to, wo = s[outward], t[outward], w[outward]
        ca, sa = np.cos(angles)[:, None], np.sin(angles)[:, None]
        z = to[None, :] * ca - so[None, :] * sa
        touching = z <= CONTACT_TOL
        for k in np.nonzero(touching.any(axis=1))[0]:
            idx = np.nonzero(touching[k])[0]
            horiz = so[idx] * ca[k, 0] + to[idx] * sa[k, 0]
            xy = b[:2][None, :] + horiz[:, None] * d[None, :] + wo[idx, None] * u[None, :2]
            if shapely.contains_xy(support.polygon, xy[:, 0], xy[:, 1]).any():
                chosen = angles[k]
                break
    return u, b, float(chosen)


def settle_pose(obj: SceneObject, pose: Pose, supports: list[_Support]) -> tuple[Pose, int, bool, _Support]:
    verts_local = obj.mesh.vertices
    com_local = obj.mesh.center_of_mass
    pos = np.array(pose.position, dtype=float)
    q = pose.orientation
    support = None
    for it in range(1, MAX_ITERATIONS + 1):
        rot = Pose(tuple(pos), q).rotation
        verts = verts_local @ rot.T + pos
        hit = _drop(verts, supports)
        if hit is None:
            raise NoSupportBelow(f"nothing below object {obj.id}")
        dz, support = hit
        pos[2] += dz
        verts[:, 2] += dz
        com = com_local @ rot.T + pos
        patch = _contact(verts, support)
        if patch is None:
            raise NoSupportBelow(f"no contact for object {obj.id}")
        stable_region = patch.buffer(-COM_MARGIN) if patch.geom_type == "Polygon" else Polygon()
        if not stable_region.is_empty and stable_region.contains(Point(com[:2])):
            return Pose(tuple(pos), q), it, True, support
        pivot, d = _tip_direction(patch, com[:2], rot)
        u, b, angle = _tip(verts, com, pivot, d, support)
        dq = quat_from_axis_angle(u, angle)
        rmat = Pose((0.0, 0.0, 0.0), dq).rotation
        pos = b + rmat @ (pos - b)
        q = quat_normalize(quat_mul(dq, q))
    return Pose(tuple(pos), q), MAX_ITERATIONS, False, support


def settle_object(scene: Scene, obj_id: str, pose: Pose | None = None) -> SettleResult:
    obj = scene.objects[obj_id]
    pre = pose or obj.pose
    if obj.attrs.static or obj.placement_class == PlacementClass.WALL:
        return SettleResult(obj_id, pre, pre, 0, True, scene.supports.get(obj_id))
    supports = _candidate_supports(scene, obj_id)
    post, iters, converged, s = settle_pose(obj, pre, supports)
    rel = SupportRelation(obj_id, s.parent_id, s.surface_index) if s is not None else None
    return SettleResult(obj_id, pre, post, iters, converged, rel)


def _verdict(res: SettleResult) -> StabilityVerdict:
    v = check_stability(res.pre_pose, res.post_pose)
    if not res.converged:
        return StabilityVerdict(False, v.delta_translation, v.delta_rotation)
    return v


def is_stable(scene: Scene, obj_id: str) -> bool:
    try:
        return _verdict(settle_object(scene, obj_id)).stable
    except NoSupportBelow:
        return False


# ---------------------------------------------------------------------------
# Collision checks


def parent_clearance_ok(scene: Scene, obj: SceneObject, parent_id: str) -> bool:
    """True when the object's box does not cut into its parent's mesh (e.g. a shelf above)."""
    parent = scene.objects.get(parent_id)
    if parent is None:
        return True
    tris = parent.world_vertices()[parent.mesh.triangles]
    return not tris_box_intersect(tris, world_obb(obj), PENETRATION_TOL)


def collides_with_scene(scene: Scene, obj: SceneObject, ignore: set[str] = frozenset()) -> list[str]:
    box = world_obb(obj)
    half = box.aabb_half_widths()
    hits = []
    for oid in sorted(scene.objects):
        if oid == obj.id or oid in ignore:
            continue
        other = world_obb(scene.objects[oid])
        # Boxes whose enclosing axis-aligned boxes are apart cannot overlap.
        if np.any(np.abs(np.subtract(other.center, box.center)) > half + other.aabb_half_widths()):
            continue
        if obb_penetration(box, other) > PENETRATION_TOL:
            hits.append(oid)
    return hits


def validate_placement(scene: Scene, candidate, obj: SceneObject | None = None, check_parent: bool = True):
    """Settle once; if unstable, settle again from the settled pose and accept that if it holds."""
    obj = obj or scene.objects[candidate.object_id]
    work = scene.copy()
    placed = replace(obj, pose=candidate.pose)
    support = getattr(candidate, "support", None) or scene.supports.get(obj.id)
    work.add(placed, support or SupportRelation(obj.id, FLOOR, 0))
    try:
        first = settle_object(work, obj.id)
        if _verdict(first).stable:
            pose, adjusted, rel = candidate.pose, False, support
        else:
            second = settle_object(work, obj.id, first.post_pose)
            if not _verdict(second).stable:
                return Reject("Unstable")
            if support is not None and first.support is not None and first.support.parent_id != support.parent_id:
                return Reject("Unstable")  # it came to rest somewhere other than its parent
            # The pose that survived re-simulation is the one recorded.
            pose, adjusted, rel = first.post_pose, True, first.support
    except NoSupportBelow:
        return Reject("NoSupportBelow")
    final = replace(obj, pose=pose)
    parent = (rel or support).parent_id if (rel or support) else FLOOR
    ignore = {parent} if parent not in (FLOOR, WALL) else set()
    if adjusted and collides_with_scene(scene, final, ignore | {obj.id}):
        return Reject("Collision")
    if check_parent and parent not in (FLOOR, WALL) and not parent_clearance_ok(scene, final, parent):
        return Reject("ParentClearance")
    return Accept(pose, adjusted, rel)


def batch_settle(scene: Scene, ids: list[str] | None = None) -> tuple[Scene, list[str]]:
    """Settle dynamic floor objects once (lowest base first) and prune unstable ones with their children."""
    out = scene.copy()
    if ids is None:
        ids = [
            oid
            for oid, o in out.objects.items()
            if o.placement_class == PlacementClass.FLOOR and not o.attrs.static
        ]
    order = sorted(ids, key=lambda i: (float(world_obb(out.objects[i]).corners()[:, 2].min()), i))
    removed: list[str] = []
    for oid in order:
        if oid not in out.objects:
            continue
        if not is_stable(out, oid):
            removed += out.remove(oid)
    return out, removed


# ---------------------------------------------------------------------------
# Metrics


def support_pairs(scene: Scene) -> set[frozenset]:
    return {
        frozenset((s.child_id, s.parent_id))
        for s in scene.supports.values()
        if s.parent_id in scene.objects and s.child_id in scene.objects
    }


def scene_collision_ratio(scene: Scene) -> CollisionReport:
    """Pairwise box overlap beyond 5 mm; a child resting on its parent is checked against the parent's mesh instead."""
    ids = sorted(scene.objects)
    if not ids:
        return CollisionReport([], 0.0)
    boxes = {i: world_obb(scene.objects[i]) for i in ids}
    sup = support_pairs(scene)
    pairs = []
    for a_i, a in enumerate(ids):
        for b in ids[a_i + 1 :]:
            if frozenset((a, b)) in sup:
                child, parent = (a, b) if scene.supports.get(a) and scene.supports[a].parent_id == b else (b, a)
                if not parent_clearance_ok(scene, scene.objects[child], parent):
                    pairs.append((a, b))
                continue
            if obb_penetration(boxes[a], boxes[b]) > PENETRATION_TOL:
                pairs.append((a, b))
    involved = {x for p in pairs for x in p}
    return CollisionReport(pairs, len(involved) / len(ids))


def unstable_objects(scene: Scene) -> list[str]:
    return [oid for oid in sorted(scene.objects) if not is_stable(scene, oid)]


def scene_stability_ratio(scene: Scene) -> float:
    if not scene.objects:
        return 1.0
    return 1.0 - len(unstable_objects(scene)) / len(scene.objects)


def metrics_report(scene: Scene) -> dict:
    coll = scene_collision_ratio(scene)
    unstable = unstable_objects(scene)
    n = len(scene.objects)
    return {
        "num_objects": n,
        "collision_ratio": coll.collision_ratio,
        "stability_ratio": 1.0 if n == 0 else 1.0 - len(unstable) / n,
        "unstable_ids": unstable,
        "colliding_pairs": [list(p) for p in coll.colliding_pairs],
    }
