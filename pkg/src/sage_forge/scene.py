"""Scene data model: poses, meshes, objects, rooms, support graph and validation."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .geometry import IDENTITY_QUAT, Obb, quat_to_matrix

FLOOR = "__floor__"
WALL = "__wall__"
SENTINELS = (FLOOR, WALL)


class EmptyMesh(ValueError):
    pass


class PlacementClass(str, enum.Enum):
    FLOOR = "floor"
    WALL = "wall"
    ON_TOP = "on_top"


CLASS_ORDER = {PlacementClass.FLOOR: 0, PlacementClass.WALL: 1, PlacementClass.ON_TOP: 2}


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] = IDENTITY_QUAT

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "orientation", tuple(float(v) for v in self.orientation))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def transform(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + np.asarray(self.position)

    def quat_norm_error(self) -> float:
        return abs(math.sqrt(sum(v * v for v in self.orientation)) - 1.0)


class TriMesh:
    """Immutable triangle mesh in object-local coordinates (meters, base at z=0)."""

    __slots__ = ("vertices", "triangles", "watertight", "__dict__")

    def __init__(self, vertices, triangles, watertight: bool | None = None):
        v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        v.setflags(write=False)
        t.setflags(write=False)
        self.vertices = v
        self.triangles = t
        self.watertight = is_watertight(t) if watertight is None else bool(watertight)

    def __eq__(self, other):
        if not isinstance(other, TriMesh):
            return NotImplemented
        return (
            self.vertices.shape == other.vertices.shape
            and self.triangles.shape == other.triangles.shape
            and bool(np.array_equal(self.vertices, other.vertices))
            and bool(np.array_equal(self.triangles, other.triangles))
            and self.watertight == other.watertight
        )

    def __hash__(self):
        return hash(self.content_hash)

    def __repr__(self):
        return f"TriMesh({len(self.vertices)} verts, {len(self.triangles)} tris)"

    @cached_property
    def content_hash(self) -> str:
        h = hashlib.sha1()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        return h.hexdigest()

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            raise EmptyMesh("mesh has no vertices")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def triangle_vertices(self) -> np.ndarray:
        return self.vertices[self.triangles]

    @cached_property
    def center_of_mass(self) -> np.ndarray:
        """Volume centroid for closed meshes; falls back to the vertex mean."""
        tv = self.triangle_vertices
        if len(tv) == 0:
            return self.vertices.mean(axis=0)
        vol = np.einsum("ij,ij->i", tv[:, 0], np.cross(tv[:, 1], tv[:, 2])) / 6.0
        total = vol.sum()
        if abs(total) < 1e-12:
            return self.vertices.mean(axis=0)
        return (vol[:, None] * tv.sum(axis=1) / 4.0).sum(axis=0) / total

    @property
    def height(self) -> float:
        lo, hi = self.bounds
        return float(hi[2] - lo[2])


def is_watertight(triangles: np.ndarray) -> bool:
    """Every directed edge is matched by exactly one opposite edge."""
    t = np.asarray(triangles)
    if len(t) == 0:
        return False
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    fwd = {}
    for a, b in map(tuple, edges):
        fwd[(a, b)] = fwd.get((a, b), 0) + 1
    for (a, b), n in fwd.items():
        if n != 1 or fwd.get((b, a), 0) != 1:
            return False
    return True


@dataclass(frozen=True)
class PhysicalAttributes:
    height: float
    mass: float
    metallic: float = 0.0
    roughness: float = 0.5
    static: bool = False


@dataclass
class SceneObject:
    id: str
    description: str
    category: str
    placement_class: PlacementClass
    pose: Pose
    mesh: TriMesh
    attrs: PhysicalAttributes
    task_relevant: bool = False
    constraints: str = ""
    room_id: str = ""

    @property
    def obb(self) -> Obb:
        return world_obb(self)

    @property
    def yaw(self) -> float:
        r = self.pose.rotation
        return math.atan2(r[1, 0], r[0, 0])

    def world_vertices(self) -> np.ndarray:
        return self.pose.transform(self.mesh.vertices)

    def world_com(self) -> np.ndarray:
        return self.pose.transform(self.mesh.center_of_mass[None, :])[0]


_OBB_CACHE: dict = {}


def world_obb(obj: SceneObject) -> Obb:
    """Oriented box tight along the object's local axes, in world coordinates."""
    mesh = obj.mesh
    if len(mesh.vertices) == 0:
        raise EmptyMesh(f"object {obj.id} has an empty mesh")
    key = (mesh.content_hash, obj.pose)
    hit = _OBB_CACHE.get(key)
    if hit is not None:
        return hit
    lo, hi = mesh.bounds
    local_center = (lo + hi) / 2.0
    half = np.maximum((hi - lo) / 2.0, 1e-6)
    center = obj.pose.transform(local_center[None, :])[0]
    box = Obb(tuple(float(v) for v in center), tuple(float(v) for v in half), obj.pose.orientation)
    if len(_OBB_CACHE) > 200_000:
        _OBB_CACHE.clear()
    _OBB_CACHE[key] = box
    return box


@dataclass(frozen=True)
class Room:
    id: str
    polygon: tuple[tuple[float, float], ...]
    wall_height: float = 2.8
    room_type: str = "room"
    floor_color: tuple[int, int, int] = (180, 160, 130)
    wall_color: tuple[int, int, int] = (225, 222, 214)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.polygon]
        ys = [p[1] for p in self.polygon]
        return min(xs), min(ys), max(xs), max(ys)

    @property
    def area(self) -> float:
        return polygon_signed_area(self.polygon)

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bounds
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    def walls(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        pts = list(self.polygon)
        return [(pts[i], pts[(i + 1) % len(pts)]) for i in range(len(pts))]


@dataclass(frozen=True)
class Door:
    room_a: str
    room_b: str
    segment: tuple[tuple[float, float], tuple[float, float]]
    width: float


@dataclass(frozen=True)
class FloorPlan:
    rooms: tuple[Room, ...]
    doors: tuple[Door, ...] = ()

    def room(self, room_id: str) -> Room:
        for r in self.rooms:
            if r.id == room_id:
                return r
        raise KeyError(room_id)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        b = [r.bounds for r in self.rooms]
        return min(x[0] for x in b), min(x[1] for x in b), max(x[2] for x in b), max(x[3] for x in b)


@dataclass(frozen=True)
class SupportRelation:
    child_id: str
    parent_id: str
    surface_index: int = 0


@dataclass(frozen=True)
class RequiredObject:
    description: str
    category: str
    constraints: str = ""


@dataclass(frozen=True)
class TaskSpec:
    prompt: str
    room_types: tuple[str, ...] = ()
    required_objects: tuple[RequiredObject, ...] = ()


@dataclass
class Scene:
    plan: FloorPlan
    objects: dict[str, SceneObject] = field(default_factory=dict)
    supports: dict[str, SupportRelation] = field(default_factory=dict)
    seed: int = 0
    task: TaskSpec | None = None

    def copy(self) -> "Scene":
        return Scene(
            plan=self.plan,
            objects={k: replace(v) for k, v in self.objects.items()},
            supports=dict(self.supports),
            seed=self.seed,
            task=self.task,
        )

    def add(self, obj: SceneObject, support: SupportRelation) -> None:
        self.objects[obj.id] = obj
        self.supports[obj.id] = support

    def children(self, parent_id: str) -> list[str]:
        return [s.child_id for s in self.supports.values() if s.parent_id == parent_id and s.child_id in self.objects]

    def descendants(self, parent_id: str) -> list[str]:
        out, stack = [], [parent_id]
        while stack:
            for c in self.children(stack.pop()):
                if c not in out:
                    out.append(c)
                    stack.append(c)
        return out

    def remove(self, obj_id: str) -> list[str]:
        """Delete an object and everything resting on it; returns removed ids."""
        gone = [obj_id] + self.descendants(obj_id)
        for oid in gone:
            self.objects.pop(oid, None)
            self.supports.pop(oid, None)
        return gone

    def room_of(self, obj: SceneObject) -> Room:
        if obj.room_id:
            return self.plan.room(obj.room_id)
        x, y = obj.pose.position[:2]
        for r in self.plan.rooms:
            x0, y0, x1, y1 = r.bounds
            if x0 <= x <= x1 and y0 <= y <= y1:
                return r
        return self.plan.rooms[0]

    def by_category(self, category: str) -> list[SceneObject]:
        cat = normalize_category(category)
        return [o for o in self.objects.values() if normalize_category(o.category) == cat]


def normalize_category(text: str) -> str:
    return " ".join(text.lower().replace("_", " ").replace("-", " ").split())


def polygon_signed_area(poly) -> float:
    pts = list(poly)
    a = 0.0
    for i in range(len(pts)):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % len(pts)]
        a += x0 * y1 - x1 * y0
    return a / 2.0


def rect_room(room_id: str, x0: float, y0: float, x1: float, y1: float, **kw) -> Room:
    return Room(room_id, ((x0, y0), (x1, y0), (x1, y1), (x0, y1)), **kw)


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    detail: str = ""


def validate_scene(scene: Scene) -> list[Violation]:
    """Check every data-model invariant; violations are returned, never raised."""
    out: list[Violation] = []
    rooms = {r.id: r for r in scene.plan.rooms}
    for r in scene.plan.rooms:
        if len(r.polygon) < 3 or r.area <= 0:
            out.append(Violation("BadRoomPolygon", r.id, "polygon must be counter-clockwise with positive area"))
    for i, a in enumerate(scene.plan.rooms):
        for b in scene.plan.rooms[i + 1 :]:
            ax0, ay0, ax1, ay1 = a.bounds
            bx0, by0, bx1, by1 = b.bounds
            if min(ax1, bx1) - max(ax0, bx0) > 1e-9 and min(ay1, by1) - max(ay0, by0) > 1e-9:
                out.append(Violation("RoomOverlap", f"{a.id},{b.id}"))
    for d in scene.plan.doors:
        if d.room_a not in rooms or d.room_b not in rooms:
            out.append(Violation("DoorUnknownRoom", f"{d.room_a},{d.room_b}"))
        elif not (_on_boundary(rooms[d.room_a], d.segment) and _on_boundary(rooms[d.room_b], d.segment)):
            out.append(Violation("DoorNotOnSharedWall", f"{d.room_a},{d.room_b}"))
    for oid, obj in scene.objects.items():
        if oid != obj.id:
            out.append(Violation("IdMismatch", oid))
        if obj.pose.quat_norm_error() > 1e-6:
            out.append(Violation("BadQuaternion", oid))
        if len(obj.mesh.vertices) == 0:
            out.append(Violation("EmptyMesh", oid))
        elif len(obj.mesh.triangles) and (obj.mesh.triangles.min() < 0 or obj.mesh.triangles.max() >= len(obj.mesh.vertices)):
            out.append(Violation("MeshIndexOutOfRange", oid))
        a = obj.attrs
        if not (a.height > 0 and a.mass > 0 and 0 <= a.metallic <= 1 and 0 <= a.roughness <= 1):
            out.append(Violation("BadAttributes", oid))
        if obj.placement_class == PlacementClass.WALL and not a.static:
            out.append(Violation("WallNotStatic", oid))
        if obj.room_id and obj.room_id not in rooms:
            out.append(Violation("UnknownRoom", oid, obj.room_id))
        if oid not in scene.supports:
            out.append(Violation("MissingSupport", oid))
    for cid, rel in scene.supports.items():
        if cid != rel.child_id:
            out.append(Violation("SupportKeyMismatch", cid))
        if cid not in scene.objects:
            out.append(Violation("OrphanSupport", cid))
        if rel.parent_id not in SENTINELS and rel.parent_id not in scene.objects:
            out.append(Violation("DanglingSupport", cid, rel.parent_id))
    # Forest check: walking parents must reach a sentinel.
    for cid in scene.supports:
        seen = {cid}
        cur = scene.supports[cid].parent_id
        while cur not in SENTINELS and cur in scene.supports:
            if cur in seen:
                out.append(Violation("SupportCycle", cid))
                break
            seen.add(cur)
            cur = scene.supports[cur].parent_id
    return out


def _on_boundary(room: Room, seg) -> bool:
    (ax, ay), (bx, by) = seg
    for (px, py), (qx, qy) in room.walls():
        ex, ey = qx - px, qy - py
        ln = math.hypot(ex, ey)
        ok = True
        for x, y in ((ax, ay), (bx, by)):
            cross = (x - px) * ey - (y - py) * ex
            t = ((x - px) * ex + (y - py) * ey) / (ln * ln)
            if abs(cross) / ln > 1e-6 or t < -1e-9 or t > 1 + 1e-9:
                ok = False
        if ok:
            return True
    return False
