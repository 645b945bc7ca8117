"""Placement planner: classification, constraint scoring, grid candidates and DFS placement."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

import numpy as np
import shapely

from . import physics
from .assets import derive_seed
from .geometry import PENETRATION_TOL, obb_collide_many, point_rect_distance, quat_from_yaw, wrap_angle
from .scene import (
    CLASS_ORDER,
    FLOOR,
    WALL,
    PlacementClass,
    Pose,
    Room,
    Scene,
    SceneObject,
    SupportRelation,
    normalize_category,
    world_obb,
)
from .surfaces import world_surfaces

log = logging.getLogger(__name__)

FLOOR_RESOLUTION = 0.10
SURFACE_RESOLUTION = 0.05
N_YAWS = 8
DEFAULT_CAP = 50
DEFAULT_BACKTRACK_BUDGET = 64
DOOR_CLEARANCE = 0.8
WALL_GAP = 0.002
DEFAULT_WALL_BAND = (1.2, 1.8)
MIN_INSIDE_FRACTION = 0.5

DEFAULTS = {
    "near": 1.0,
    "far": 2.0,
    "facing": math.radians(15.0),
    "aligned": math.radians(10.0),
}
KINDS = ("edge", "middle", "corner", "near", "far", "facing", "aligned", "on")


class NoFreeSpace(RuntimeError):
    pass


class DanglingAnchor(KeyError):
    pass


class ConstraintSyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    kind: str
    anchor: str | None = None
    value: float | None = None
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConstraintSyntaxError(f"unknown constraint {self.kind!r}")
        if self.weight < 0:
            raise ConstraintSyntaxError("constraint weight must be non-negative")

    @property
    def param(self) -> float | None:
        return self.value if self.value is not None else DEFAULTS.get(self.kind)

    def to_text(self) -> str:
        args = []
        if self.anchor is not None:
            args.append(self.anchor)
        if self.value is not None:
            args.append(repr(self.value))
        body = self.kind + (f"({', '.join(args)})" if args else "")
        return body if self.weight == 1.0 else f"{body}*{self.weight!r}"


@dataclass(frozen=True)
class CandidatePlacement:
    object_id: str
    pose: Pose
    score: float
    collision_free: bool
    support: SupportRelation
    grid_index: int = 0


@dataclass
class PlacementRequest:
    obj: SceneObject
    placement_class: PlacementClass
    constraints: tuple[Constraint, ...] = ()


@dataclass
class PlacementPlan:
    placements: list[tuple[str, CandidatePlacement]] = field(default_factory=list)
    unplaced: list[tuple[str, str]] = field(default_factory=list)
    scene: Scene | None = None
    expansions: int = 0


# ---------------------------------------------------------------------------
# Constraint language


def _split_top(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ConstraintSyntaxError(f"unbalanced parentheses in {text!r}")
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth != 0:
        raise ConstraintSyntaxError(f"unbalanced parentheses in {text!r}")
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


_ITEM = re.compile(r"^([a-z_]+)\s*(?:\((.*)\))?\s*(?:\*\s*([0-9]*\.?[0-9]+(?:e-?\d+)?))?$", re.I)


def parse_constraints(text: str | None) -> tuple[Constraint, ...]:
    """Parse ``near(table, 1.0), facing(table)*2, edge`` style text."""
    if not text:
        return ()
    out = []
    for item in _split_top(text):
        m = _ITEM.match(item)
        if not m:
            raise ConstraintSyntaxError(f"cannot parse constraint {item!r}")
        kind = m.group(1).lower()
        args = [a.strip() for a in m.group(2).split(",")] if m.group(2) else []
        weight = float(m.group(3)) if m.group(3) else 1.0
        anchor, value = None, None
        if kind in ("near", "far", "facing", "aligned", "on"):
            if not args or not args[0]:
                raise ConstraintSyntaxError(f"{kind} needs an anchor")
            anchor = args[0]
            if len(args) > 1:
                try:
                    value = float(args[1])
                except ValueError as exc:
                    raise ConstraintSyntaxError(f"bad number in {item!r}") from exc
        elif args:
            raise ConstraintSyntaxError(f"{kind} takes no arguments")
        out.append(Constraint(kind, anchor, value, weight))
    return tuple(out)


def format_constraints(cons) -> str:
    return ", ".join(c.to_text() for c in cons)


def relax_constraints(cons) -> tuple[Constraint, ...]:
    """Keep only the support requirement; used when a placement keeps failing."""
    return tuple(c for c in cons if c.kind == "on")


# ---------------------------------------------------------------------------
# Classification


@lru_cache(maxsize=None)
def _rules() -> tuple:
    data = json.loads(resources.files("sage_forge.data").joinpath("placement_rules.json").read_text("utf-8"))
    return tuple((re.compile(r["pattern"], re.I), r["field"], PlacementClass(r["class"])) for r in data["rules"])


_SIDE_PHRASE = re.compile(r"\bon the (left|right|other side|side)( side)?( of)?\b", re.I)


def classify_placement(description: str, constraints: str = "") -> PlacementClass:
    """First matching keyword rule wins; Floor when nothing matches."""
    desc = _SIDE_PHRASE.sub(" ", description)
    cons = _SIDE_PHRASE.sub(" ", constraints or "")
    fields = {"description": desc, "constraints": cons, "text": f"{desc} {cons}"}
    for pattern, fld, cls in _rules():
        if pattern.search(fields[fld]):
            log.debug("classified %r as %s via %s", description, cls.value, pattern.pattern)
            return cls
    log.debug("classified %r as floor (default)", description)
    return PlacementClass.FLOOR


# ---------------------------------------------------------------------------
# Scoring


@dataclass
class _Batch:
    """Candidate poses evaluated together."""

    pos: np.ndarray  # (N, 2) object origin xy
    yaw: np.ndarray  # (N,)
    parents: np.ndarray  # (N,) parent id strings
    room: Room
    obj: SceneObject


def resolve_anchor(scene: Scene, anchor: str, exclude: str | None = None) -> list[SceneObject]:
    if anchor in scene.objects and anchor != exclude:
        return [scene.objects[anchor]]
    found = [o for o in scene.by_category(anchor) if o.id != exclude]
    if not found:
        raise DanglingAnchor(anchor)
    return sorted(found, key=lambda o: o.id)


def _anchor_rect(a: SceneObject):
    box = world_obb(a)
    return np.asarray(box.center[:2]), a.yaw, np.asarray(box.half_extents[:2])


def satisfaction(c: Constraint, batch: _Batch, scene: Scene) -> np.ndarray:
    """Per-candidate satisfaction in [0, 1]."""
    pos, yaw = batch.pos, batch.yaw
    n = len(pos)
    x0, y0, x1, y1 = batch.room.bounds
    half_span = 0.5 * min(x1 - x0, y1 - y0)
    if c.kind in ("near", "far", "facing", "aligned"):
        anchors = resolve_anchor(scene, c.anchor, batch.obj.id)
        vals = []
        for a in anchors:
            center, ayaw, half = _anchor_rect(a)
            if c.kind == "near":
                d = point_rect_distance(pos, center, ayaw, half)
                vals.append(np.clip(2.0 - d / c.param, 0.0, 1.0))
            elif c.kind == "far":
                d = point_rect_distance(pos, center, ayaw, half)
                vals.append(np.clip(d / c.param, 0.0, 1.0))
            elif c.kind == "facing":
                bearing = np.arctan2(center[1] - pos[:, 1], center[0] - pos[:, 0])
                err = np.abs(wrap_angle(bearing - yaw))
                vals.append(np.clip(2.0 - err / c.param, 0.0, 1.0))
            else:
                err = np.abs(wrap_angle(2.0 * (yaw - ayaw))) / 2.0
                vals.append(np.clip(2.0 - err / c.param, 0.0, 1.0))
        stack = np.vstack(vals)
        return stack.min(axis=0) if c.kind == "far" else stack.max(axis=0)
    if c.kind == "on":
        target = normalize_category(c.anchor)
        out = np.zeros(n)
        for i, p in enumerate(batch.parents):
            par = scene.objects.get(p)
            if p == c.anchor or (par is not None and normalize_category(par.category) == target):
                out[i] = 1.0
        return out
    cx, cy = _footprint_centers(batch)
    if c.kind == "middle":
        mx, my = batch.room.center
        return np.clip(1.0 - np.hypot(cx - mx, cy - my) / half_span, 0.0, 1.0)
    if c.kind == "corner":
        d = np.min([np.hypot(cx - px, cy - py) for px, py in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))], axis=0)
        return np.clip(1.0 - d / half_span, 0.0, 1.0)
    # edge: half for hugging the nearest wall, half for facing away from it.
    hx, hy = _aabb_half_xy(batch)
    gaps = np.stack([cx - hx - x0, x1 - cx - hx, cy - hy - y0, y1 - cy - hy])
    which = np.argmin(gaps, axis=0)
    gap = np.maximum(gaps[which, np.arange(n)], 0.0)
    normals = np.array([0.0, math.pi, math.pi / 2, -math.pi / 2])[which]
    err = np.abs(wrap_angle(yaw - normals))
    prox = np.clip(1.0 - gap / 0.5, 0.0, 1.0)
    face = np.clip(2.0 - err / math.radians(15.0), 0.0, 1.0)
    return 0.5 * prox + 0.5 * face


def _local_box(obj: SceneObject):
    lo, hi = obj.mesh.bounds
    return (lo + hi) / 2.0, np.maximum((hi - lo) / 2.0, 1e-6), lo, hi


def _footprint_centers(batch: _Batch):
    lc, _, _, _ = _local_box(batch.obj)
    c, s = np.cos(batch.yaw), np.sin(batch.yaw)
    return batch.pos[:, 0] + c * lc[0] - s * lc[1], batch.pos[:, 1] + s * lc[0] + c * lc[1]


def _aabb_half_xy(batch: _Batch):
    _, half, _, _ = _local_box(batch.obj)
    c, s = np.abs(np.cos(batch.yaw)), np.abs(np.sin(batch.yaw))
    return c * half[0] + s * half[1], s * half[0] + c * half[1]


def score_batch(batch: _Batch, constraints, scene: Scene) -> np.ndarray:
    total = np.zeros(len(batch.pos))
    for c in constraints:
        total += c.weight * satisfaction(c, batch, scene)
    return total


def score_candidate(c: CandidatePlacement, constraints, scene: Scene, obj: SceneObject | None = None) -> float:
    """Weighted sum of satisfactions; raises DanglingAnchor for missing anchors."""
    obj = obj or scene.objects[c.object_id]
    obj = replace(obj, pose=c.pose)
    batch = _Batch(
        np.array([c.pose.position[:2]]),
        np.array([obj.yaw]),
        np.array([c.support.parent_id], dtype=object),
        _room_for(scene, obj),
        obj,
    )
    return float(score_batch(batch, constraints, scene)[0])


def _room_for(scene: Scene, obj: SceneObject) -> Room:
    return scene.room_of(obj)


# ---------------------------------------------------------------------------
# Candidate generation


_YAWS = np.array([k * 2 * math.pi / N_YAWS for k in range(N_YAWS)])
_YAWS = np.where(_YAWS > math.pi, _YAWS - 2 * math.pi, _YAWS)


def _rotz(yaws: np.ndarray) -> np.ndarray:
    c, s = np.cos(yaws), np.sin(yaws)
    r = np.zeros((len(yaws), 3, 3))
    r[:, 0, 0], r[:, 0, 1], r[:, 1, 0], r[:, 1, 1], r[:, 2, 2] = c, -s, s, c, 1.0
    return r


def _free_mask(scene: Scene, obj: SceneObject, pos3: np.ndarray, yaw: np.ndarray, ignore: set[str]) -> np.ndarray:
    """True for candidate poses whose box clears every other object's box (5 mm tolerance)."""
    lc, half, _, _ = _local_box(obj)
    rot = _rotz(yaw)
    centers = pos3 + np.einsum("nij,j->ni", rot, lc)
    aabb = np.abs(rot) @ half
    free = np.ones(len(pos3), dtype=bool)
    for oid in sorted(scene.objects):
        if oid == obj.id or oid in ignore:
            continue
        box = world_obb(scene.objects[oid])
        ob_half = box.aabb_half_widths()
        near = np.all(np.abs(centers - np.asarray(box.center)) < aabb + ob_half - PENETRATION_TOL, axis=1) & free
        if not near.any():
            continue
        idx = np.nonzero(near)[0]
        hit = obb_collide_many(centers[idx], rot[idx], np.broadcast_to(half, (len(idx), 3)), box)
        free[idx[hit]] = False
    return free


def _door_mask(scene: Scene, room: Room, cx, cy, hx, hy) -> np.ndarray:
    ok = np.ones(len(cx), dtype=bool)
    for door in scene.plan.doors:
        if room.id not in (door.room_a, door.room_b):
            continue
        (ax, ay), (bx, by) = door.segment
        mx, my = (ax + bx) / 2, (ay + by) / 2
        half_w = door.width / 2
        if abs(ax - bx) < 1e-9:  # vertical wall
            zx0, zx1, zy0, zy1 = mx - DOOR_CLEARANCE, mx + DOOR_CLEARANCE, my - half_w, my + half_w
        else:
            zx0, zx1, zy0, zy1 = mx - half_w, mx + half_w, my - DOOR_CLEARANCE, my + DOOR_CLEARANCE
        blocked = (cx + hx > zx0) & (cx - hx < zx1) & (cy + hy > zy0) & (cy - hy < zy1)
        ok &= ~blocked
    return ok


def _rank(score, dist, index, cap):
    order = np.lexsort((index, np.round(dist, 9), -np.round(score, 9)))
    return order[:cap]


def _floor_candidates(scene: Scene, obj: SceneObject, room: Room, constraints, res: float):
    x0, y0, x1, y1 = room.bounds
    nx, ny = int(math.floor((x1 - x0) / res + 1e-9)), int(math.floor((y1 - y0) / res + 1e-9))
    gx = x0 + res * (np.arange(nx) + 0.5)
    gy = y0 + res * (np.arange(ny) + 0.5)
    iy, ix, k = np.meshgrid(np.arange(ny), np.arange(nx), np.arange(N_YAWS), indexing="ij")
    iy, ix, k = iy.ravel(), ix.ravel(), k.ravel()
    index = (iy * nx + ix) * N_YAWS + k
    yaw = _YAWS[k]
    pos = np.stack([gx[ix], gy[iy]], axis=1)
    lo_z = obj.mesh.bounds[0][2]
    batch = _Batch(pos, yaw, np.array([FLOOR] * len(pos), dtype=object), room, obj)
    cx, cy = _footprint_centers(batch)
    hx, hy = _aabb_half_xy(batch)
    inside = (cx - hx >= x0 - 1e-9) & (cx + hx <= x1 + 1e-9) & (cy - hy >= y0 - 1e-9) & (cy + hy <= y1 + 1e-9)
    inside &= _door_mask(scene, room, cx, cy, hx, hy)
    return batch, index, inside, np.full(len(pos), 0.0 - lo_z), [SupportRelation(obj.id, FLOOR, 0)] * len(pos)


def wall_band(category: str) -> tuple[float, float]:
    from .assets import default_attribute_table

    rec = default_attribute_table().get(normalize_category(category), {})
    return tuple(rec.get("wall_band", DEFAULT_WALL_BAND))


def _wall_candidates(scene: Scene, obj: SceneObject, room: Room, constraints, res: float):
    lc, half, lo, hi = _local_box(obj)
    height = hi[2] - lo[2]
    band_lo, band_hi = wall_band(obj.category)
    centers_z = np.arange(band_lo, band_hi + 1e-9, 0.1)
    centers_z = centers_z[centers_z + height / 2 <= room.wall_height]
    pos, yaw, index = [], [], []
    idx = 0
    for (ax, ay), (bx, by) in room.walls():
        length = math.hypot(bx - ax, by - ay)
        tx, ty = (bx - ax) / length, (by - ay) / length
        nx, ny = -ty, tx  # inward for counter-clockwise rooms
        blocked = []
        for door in scene.plan.doors:
            if room.id not in (door.room_a, door.room_b):
                continue
            (dx0, dy0), (dx1, dy1) = door.segment
            t0 = (dx0 - ax) * tx + (dy0 - ay) * ty
            t1 = (dx1 - ax) * tx + (dy1 - ay) * ty
            off = abs((dx0 - ax) * nx + (dy0 - ay) * ny) + abs((dx1 - ax) * nx + (dy1 - ay) * ny)
            if off < 1e-6:
                blocked.append((min(t0, t1), max(t0, t1)))
        n_steps = int(math.floor(length / res + 1e-9))
        for i in range(n_steps):
            t = res * (i + 0.5)
            if t - half[1] < 0 or t + half[1] > length:
                idx += len(centers_z)
                continue
            if any(t + half[1] > b0 and t - half[1] < b1 for b0, b1 in blocked):
                idx += len(centers_z)
                continue
            for zc in centers_z:
                depth = -lo[0] + WALL_GAP
                px, py = ax + tx * t + nx * depth, ay + ty * t + ny * depth
                pos.append((px, py, zc - height / 2 - lo[2]))
                yaw.append(math.atan2(ny, nx))
                index.append(idx)
                idx += 1
    pos = np.array(pos).reshape(-1, 3)
    batch = _Batch(pos[:, :2], np.array(yaw), np.array([WALL] * len(pos), dtype=object), room, obj)
    inside = np.ones(len(pos), dtype=bool)
    return batch, np.array(index, dtype=int), inside, pos[:, 2], [SupportRelation(obj.id, WALL, 0)] * len(pos)


def _parents_for(scene: Scene, obj: SceneObject, constraints, room: Room) -> list[SceneObject]:
    ons = [c for c in constraints if c.kind == "on"]
    if ons:
        out = []
        for c in ons:
            for p in resolve_anchor(scene, c.anchor, obj.id):
                if p not in out:
                    out.append(p)
        return out
    skip = {obj.id, *scene.descendants(obj.id)}
    return [
        o
        for oid, o in sorted(scene.objects.items())
        if oid not in skip and o.room_id in ("", room.id) and o.placement_class != PlacementClass.ON_TOP
    ]


def _ontop_candidates(scene: Scene, obj: SceneObject, room: Room, constraints, res: float):
    lc, half, lo, hi = _local_box(obj)
    pos_all, yaw_all, par_all, idx_all, z_all, sup_all, dist_all = [], [], [], [], [], [], []
    surf_counter = 0
    for parent in _parents_for(scene, obj, constraints, room):
        for si, surf in enumerate(world_surfaces(parent)):
            poly = surf.polygon
            bx0, by0, bx1, by1 = poly.bounds
            nx = max(int(math.floor((bx1 - bx0) / res + 1e-9)), 1)
            ny = max(int(math.floor((by1 - by0) / res + 1e-9)), 1)
            gx = bx0 + (bx1 - bx0 - res * (nx - 1)) / 2 + res * np.arange(nx)
            gy = by0 + (by1 - by0 - res * (ny - 1)) / 2 + res * np.arange(ny)
            iy, ix, k = np.meshgrid(np.arange(ny), np.arange(nx), np.arange(N_YAWS), indexing="ij")
            iy, ix, k = iy.ravel(), ix.ravel(), k.ravel()
            yaw = _YAWS[k]
            c, s = np.cos(yaw), np.sin(yaw)
            fx = gx[ix]
            fy = gy[iy]
            centre_in = shapely.contains_xy(poly, fx, fy)
            if not centre_in.any():
                surf_counter += 1
                continue
            sel = np.nonzero(centre_in)[0]
            fx, fy, yaw, c, s, iy, ix, k = fx[sel], fy[sel], yaw[sel], c[sel], s[sel], iy[sel], ix[sel], k[sel]
            # Footprint rectangles centred on the grid point.
            corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * half[:2]
            rx = fx[:, None] + c[:, None] * corners[None, :, 0] - s[:, None] * corners[None, :, 1]
            ry = fy[:, None] + s[:, None] * corners[None, :, 0] + c[:, None] * corners[None, :, 1]
            rects = shapely.polygons(np.stack([rx, ry], axis=2))
            frac = shapely.area(shapely.intersection(rects, poly)) / (4 * half[0] * half[1])
            keep = frac >= MIN_INSIDE_FRACTION - 1e-9
            if not keep.any():
                surf_counter += 1
                continue
            fx, fy, yaw, c, s, iy, ix, k = fx[keep], fy[keep], yaw[keep], c[keep], s[keep], iy[keep], ix[keep], k[keep]
            # Origin so that the footprint centre sits on the grid point.
            ox = fx - (c * lc[0] - s * lc[1])
            oy = fy - (s * lc[0] + c * lc[1])
            pc = poly.centroid
            dist = np.round(np.hypot(fx - pc.x, fy - pc.y) / res) * res
            pos_all.append(np.stack([ox, oy], axis=1))
            yaw_all.append(yaw)
            par_all += [parent.id] * len(ox)
            idx_all.append(((surf_counter * ny + iy) * nx + ix) * N_YAWS + k)
            z_all.append(np.full(len(ox), surf.height - lo[2]))
            sup_all += [SupportRelation(obj.id, parent.id, si)] * len(ox)
            dist_all.append(dist)
            surf_counter += 1
    if not pos_all:
        empty = _Batch(np.zeros((0, 2)), np.zeros(0), np.array([], dtype=object), room, obj)
        return empty, np.zeros(0, dtype=int), np.zeros(0, dtype=bool), np.zeros(0), [], np.zeros(0)
    batch = _Batch(np.concatenate(pos_all), np.concatenate(yaw_all), np.array(par_all, dtype=object), room, obj)
    n = len(batch.pos)
    # Surface index blocks are contiguous, so offset them to keep the global index surface-major.
    index = np.concatenate(idx_all)
    block = np.concatenate([np.full(len(a), i) for i, a in enumerate(idx_all)])
    index = block * 10**9 + index
    return batch, index, np.ones(n, dtype=bool), np.concatenate(z_all), sup_all, np.concatenate(dist_all)


def sample_candidates(
    scene: Scene,
    obj: SceneObject,
    cls: PlacementClass,
    cap: int = DEFAULT_CAP,
    constraints=(),
    resolution: float | None = None,
    room: Room | None = None,
) -> list[CandidatePlacement]:
    """Top-``cap`` collision-free grid candidates, ranked by (score desc, centre distance asc, grid index asc)."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    room = room or scene.room_of(obj)
    constraints = tuple(constraints)
    if cls == PlacementClass.FLOOR:
        batch, index, ok, z, sups = _floor_candidates(scene, obj, room, constraints, resolution or FLOOR_RESOLUTION)
        cx, cy = _footprint_centers(batch)
        mx, my = room.center
        dist = np.hypot(cx - mx, cy - my)
    elif cls == PlacementClass.WALL:
        batch, index, ok, z, sups = _wall_candidates(scene, obj, room, constraints, resolution or FLOOR_RESOLUTION)
        cx, cy = _footprint_centers(batch)
        mx, my = room.center
        dist = np.hypot(cx - mx, cy - my)
    else:
        batch, index, ok, z, sups, dist = _ontop_candidates(
            scene, obj, room, constraints, resolution or SURFACE_RESOLUTION
        )
    if len(batch.pos) == 0 or not ok.any():
        raise NoFreeSpace(f"no room for {obj.id} ({obj.category})")
    pos3 = np.column_stack([batch.pos, z])
    ignore = set(np.unique(batch.parents[ok]).tolist()) - {FLOOR, WALL} if cls == PlacementClass.ON_TOP else set()
    free = ok.copy()
    free[ok] = _free_mask(scene, obj, pos3[ok], batch.yaw[ok], ignore)
    if cls == PlacementClass.ON_TOP:
        # Each candidate ignores only its own parent's box.
        for q in sorted(ignore):
            sub = np.nonzero(free & (batch.parents != q))[0]
            if len(sub):
                free[sub[_collide_with(obj, pos3[sub], batch.yaw[sub], world_obb(scene.objects[q]))]] = False
    if not free.any():
        raise NoFreeSpace(f"no collision-free pose for {obj.id} ({obj.category})")
    sel = np.nonzero(free)[0]
    sub = _Batch(batch.pos[sel], batch.yaw[sel], batch.parents[sel], room, obj)
    scores = _safe_scores(sub, constraints, scene)
    order = _rank(scores, dist[sel], index[sel], cap)
    out = []
    for j in order:
        i = sel[j]
        pose = Pose((float(pos3[i, 0]), float(pos3[i, 1]), float(pos3[i, 2])), quat_from_yaw(float(batch.yaw[i])))
        out.append(CandidatePlacement(obj.id, pose, float(scores[j]), True, sups[i], int(index[i])))
    return out


def _collide_with(obj, pos3, yaw, box) -> np.ndarray:
    lc, half, _, _ = _local_box(obj)
    rot = _rotz(yaw)
    centers = pos3 + np.einsum("nij,j->ni", rot, lc)
    return obb_collide_many(centers, rot, np.broadcast_to(half, (len(centers), 3)), box)


def _safe_scores(batch: _Batch, constraints, scene: Scene) -> np.ndarray:
    usable = []
    for c in constraints:
        if c.kind == "on" or c.anchor is None:
            usable.append(c)
            continue
        try:
            resolve_anchor(scene, c.anchor, batch.obj.id)
            usable.append(c)
        except DanglingAnchor:
            log.info("dropping constraint %s: anchor %r not in scene", c.kind, c.anchor)
    return score_batch(batch, usable, scene)


# ---------------------------------------------------------------------------
# Depth-first planning


def _place(work: Scene, req: PlacementRequest, cand: CandidatePlacement, physics_on: bool):
    """Returns (pose, support) when the candidate is accepted, else None."""
    obj = replace(req.obj, pose=cand.pose)
    if req.placement_class == PlacementClass.ON_TOP and physics_on:
        verdict = physics.validate_placement(work, cand, obj)
        if isinstance(verdict, physics.Reject):
            return None
        support = cand.support
        if verdict.support is not None and verdict.support.parent_id == cand.support.parent_id:
            support = verdict.support
        return verdict.pose, support
    return cand.pose, cand.support


def _on_depth(requests, i: int, seen: frozenset = frozenset()) -> int:
    """How many batch members the i-th request stacks on, so supports are placed before what rests on them."""
    names = {}
    for k, r in enumerate(requests):
        names.setdefault(r.obj.id, k)
        names.setdefault(normalize_category(r.obj.category), k)
    depth = 0
    for c in requests[i].constraints:
        if c.kind != "on" or c.anchor is None:
            continue
        k = names.get(c.anchor, names.get(normalize_category(c.anchor)))
        if k is not None and k != i and k not in seen:
            depth = max(depth, 1 + _on_depth(requests, k, seen | {i}))
    return depth


def plan_placements(
    scene: Scene,
    requests,
    physics_on: bool = True,
    cap: int = DEFAULT_CAP,
    budget: int = DEFAULT_BACKTRACK_BUDGET,
    shuffle_seed: int | None = None,
) -> PlacementPlan:
    """Place requests in class order (Floor, Wall, OnTop) with bounded backtracking.

    With ``shuffle_seed`` the ranked candidates are tried in a seeded random order
    instead, which is how pose variants are drawn.
    """
    order = sorted(enumerate(requests), key=lambda t: (CLASS_ORDER[t[1].placement_class], _on_depth(requests, t[0]), t[0]))
    reqs = [r for _, r in order]
    work = scene.copy()
    plan = PlacementPlan()
    stack: list[tuple[int, list[CandidatePlacement], int]] = []  # (request idx, candidates, next try)
    expansions = 0

    def candidates(i):
        r = reqs[i]
        cands = sample_candidates(work, r.obj, r.placement_class, cap, r.constraints)
        if shuffle_seed is not None:
            rng = np.random.default_rng(derive_seed(shuffle_seed, r.obj.id))
            cands = [cands[k] for k in rng.permutation(len(cands))]
        return cands

    def try_from(i, cands, start):
        for j in range(start, len(cands)):
            res = _place(work, reqs[i], cands[j], physics_on)
            if res is not None:
                pose, support = res
                work.add(replace(reqs[i].obj, pose=pose), replace(support, child_id=reqs[i].obj.id))
                return j
        return None

    i = 0
    while i < len(reqs):
        try:
            cands = candidates(i)
            reason = "NoFreeSpace"
        except NoFreeSpace:
            cands, reason = [], "NoFreeSpace"
        except DanglingAnchor as exc:
            cands, reason = [], f"DanglingAnchor({exc.args[0]})"
        j = try_from(i, cands, 0)
        if cands and j is None:
            reason = "Unstable" if reqs[i].placement_class == PlacementClass.ON_TOP else "NoFreeSpace"
        if j is not None:
            stack.append((i, cands, j + 1))
            i += 1
            continue
        # Backtrack: move earlier objects to their next candidates until this one fits or the budget runs out.
        # Only a lack of free space can be cured by moving a neighbour; stability and anchor failures cannot.
        snapshot = (work.copy(), list(stack))
        fixed = False
        while stack and expansions < budget and not fixed and reason == "NoFreeSpace":
            k, kc, nxt = stack.pop()
            work.remove(reqs[k].obj.id)
            while nxt < len(kc) and expansions < budget:
                expansions += 1
                jk = try_from(k, kc, nxt)
                if jk is None:
                    break
                try:
                    ci = candidates(i)
                except (NoFreeSpace, DanglingAnchor):
                    ci = []
                ji = try_from(i, ci, 0)
                if ji is not None:
                    stack.append((k, kc, jk + 1))
                    stack.append((i, ci, ji + 1))
                    fixed = True
                    break
                work.remove(reqs[k].obj.id)
                nxt = jk + 1
            if not fixed:
                # Restore k's original choice before looking further back is not attempted: one level only.
                break
        if not fixed:
            work, stack = snapshot
            plan.unplaced.append((reqs[i].obj.id, reason))
        i += 1
    plan.expansions = expansions
    for k, kc, nxt in stack:
        oid = reqs[k].obj.id
        if oid in work.objects:
            plan.placements.append((oid, replace(kc[nxt - 1], pose=work.objects[oid].pose, support=work.supports[oid])))
    plan.scene = work
    return plan
