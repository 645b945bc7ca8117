"""Robot demonstrations on generated scenes: occupancy grid, bidirectional RRT, staged pick-and-place."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import shapely
from scipy import ndimage
from shapely.geometry import LineString, Polygon

from . import physics
from .geometry import Obb, quat_from_yaw
from .placement import Constraint, NoFreeSpace, sample_candidates
from .scene import FLOOR, PlacementClass, Pose, Scene, SupportRelation, world_obb
from .scene_io import atomic_write, dumps
from .surfaces import world_surfaces

log = logging.getLogger(__name__)

TIMESTEP = 0.05  # s
EE_SPACING = 0.05  # m between end-effector waypoints
MAX_OPENING = 0.08
REACH = 0.85  # horizontal base-to-gripper reach, m
APPROACH_HEIGHT = 0.10
LIFT_HEIGHT = 0.15
GRASP_OFFSET = 0.02
DROP_CLEARANCE = 0.03
HOME_HEIGHT = 1.0
GRIPPER_HALF = (0.015, 0.04, 0.015)
TARGET_TOL = 0.10
CLOSE_STEPS = 5
CARRY_CORRIDOR = 0.10  # m, half width of the swept corridor checked for tall objects
CARRY_CLEARANCE = 0.03

RRT_STEP = 3.0  # cells
RRT_GOAL_BIAS = 0.1
RRT_MAX_ITERS = 5000
SHORTCUT_ATTEMPTS = 100

ARM_STAGES = ("Approach", "Descend", "Close", "Lift", "Transport", "Drop")
MOBILE_MACRO = ("navigate_to_pick", "pick", "navigate_to_place", "place")
MOBILE_STAGES = (("Navigate",), ("Approach", "Descend", "Close", "Lift"), ("Navigate",), ("Transport", "Drop"))


class NoPath(RuntimeError):
    pass


class StartOccupied(ValueError):
    pass


class GoalOccupied(ValueError):
    pass


class TooWide(ValueError):
    pass


class NoTopSurface(ValueError):
    pass


class Unreachable(RuntimeError):
    pass


class TrajectoryCollision(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Occupancy grid


@dataclass
class OccupancyGrid:
    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray  # [ny, nx], True = occupied

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def to_cell(self, xy) -> tuple[int, int]:
        ix = int(math.floor((xy[0] - self.origin[0]) / self.resolution))
        iy = int(math.floor((xy[1] - self.origin[1]) / self.resolution))
        return ix, iy

    def to_world(self, cell) -> tuple[float, float]:
        return (self.origin[0] + (cell[0] + 0.5) * self.resolution, self.origin[1] + (cell[1] + 0.5) * self.resolution)

    def occupied(self, cell) -> bool:
        ix, iy = int(cell[0]), int(cell[1])
        ny, nx = self.cells.shape
        return not (0 <= ix < nx and 0 <= iy < ny) or bool(self.cells[iy, ix])


def rasterize_occupancy(
    scene: Scene, resolution: float = 0.1, robot_radius: float = 0.2, clearance_height: float = 1.2
) -> OccupancyGrid:
    """Free cells are room interior; low object footprints are inflated by the robot radius; doors stay open."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    x0, y0, x1, y1 = scene.plan.bounds
    origin = (x0 - resolution, y0 - resolution)
    nx = int(round((x1 - x0) / resolution)) + 2
    ny = int(round((y1 - y0) / resolution)) + 2
    cx = origin[0] + (np.arange(nx) + 0.5) * resolution
    cy = origin[1] + (np.arange(ny) + 0.5) * resolution
    gx, gy = np.meshgrid(cx, cy)
    free = np.zeros((ny, nx), dtype=bool)
    for room in scene.plan.rooms:
        free |= shapely.contains_xy(Polygon(room.polygon), gx, gy)
    # Walls shared by two rooms are solid except at doors.
    doors = [LineString(d.segment) for d in scene.plan.doors]
    for i, a in enumerate(scene.plan.rooms):
        for b in scene.plan.rooms[i + 1 :]:
            shared = Polygon(a.polygon).boundary.intersection(Polygon(b.polygon).boundary)
            if shared.length <= 0:
                continue
            for door in doors:
                shared = shared.difference(door.buffer(1e-6, cap_style="flat"))
            if shared.is_empty:
                continue
            wall = shared.buffer(resolution / 2 + 1e-9, cap_style="flat")
            free &= ~shapely.contains_xy(wall, gx, gy)
    occ = ~free
    for obj in scene.objects.values():
        box = world_obb(obj)
        if box.corners()[:, 2].min() >= clearance_height:
            continue
        foot = Polygon(box.footprint()).buffer(robot_radius)
        occ |= shapely.contains_xy(foot, gx, gy)
    return OccupancyGrid(resolution, origin, occ)


# ---------------------------------------------------------------------------
# Bidirectional RRT on a grid (cell coordinates, node (i, j) is the centre of cell column i, row j)


def segment_cells(a, b) -> list[tuple[int, int]]:
    """Cells crossed by the segment between two cell centres (grid traversal).

    Where the segment passes exactly through a cell corner both side cells are
    included, so a path never squeezes diagonally between two occupied cells.
    """
    x, y = int(a[0]), int(a[1])
    x1, y1 = int(b[0]), int(b[1])
    dx, dy = x1 - x, y1 - y
    sx, sy = (dx > 0) - (dx < 0), (dy > 0) - (dy < 0)
    ax, ay = abs(dx), abs(dy)
    out = [(x, y)]
    # Crossing times of the next vertical and horizontal cell borders, scaled to integers.
    ix = iy = 0
    while ix < ax or iy < ay:
        nx_t = (2 * ix + 1) * ay if ix < ax else None
        ny_t = (2 * iy + 1) * ax if iy < ay else None
        if ny_t is None or (nx_t is not None and nx_t < ny_t):
            x += sx
            ix += 1
        elif nx_t is None or ny_t < nx_t:
            y += sy
            iy += 1
        else:
            out.append((x + sx, y))
            out.append((x, y + sy))
            x += sx
            y += sy
            ix += 1
            iy += 1
        out.append((x, y))
    return out


def segment_free(cells: np.ndarray, a, b) -> bool:
    ny, nx = cells.shape
    for cx, cy in segment_cells(a, b):
        if not (0 <= cx < nx and 0 <= cy < ny) or cells[cy, cx]:
            return False
    return True


def path_free(cells: np.ndarray, path) -> bool:
    if len(path) == 1:
        return not cells[path[0][1], path[0][0]]
    return all(segment_free(cells, p, q) for p, q in zip(path[:-1], path[1:]))


def connected(cells: np.ndarray, start, goal) -> bool:
    """Four-connected reachability over free cells."""
    labels, _ = ndimage.label(~cells)
    return labels[start[1], start[0]] != 0 and labels[start[1], start[0]] == labels[goal[1], goal[0]]


class _Tree:
    def __init__(self, root, capacity: int):
        self.nodes = [tuple(root)]
        self.parent = [-1]
        self._arr = np.empty((capacity + 1, 2))
        self._arr[0] = root

    def nearest(self, p) -> int:
        arr = self._arr[: len(self.nodes)]
        return int(np.argmin(((arr - p) ** 2).sum(axis=1)))

    def add(self, node, parent: int) -> int:
        if len(self.nodes) == len(self._arr):
            self._arr = np.concatenate([self._arr, np.empty_like(self._arr)])
        self._arr[len(self.nodes)] = node
        self.nodes.append(tuple(node))
        self.parent.append(parent)
        return len(self.nodes) - 1

    def branch(self, i: int) -> list:
        out = []
        while i >= 0:
            out.append(self.nodes[i])
            i = self.parent[i]
        return out


def _steer(cells, frm, to, step):
    """Farthest free cell on the straight line from ``frm`` toward ``to`` within ``step`` cells.

    When the direct line is blocked right away, the two axis-aligned components of the
    direction are tried instead, which lets trees grow along one-cell corridors.
    """
    frm = np.asarray(frm, dtype=float)
    d = np.asarray(to, dtype=float) - frm
    dist = float(np.hypot(*d))
    if dist < 1e-9:
        return None
    here = tuple(int(v) for v in frm)
    reach = min(step, dist)
    for s in np.arange(reach, 0.99, -1.0):
        cand = tuple(int(v) for v in np.round(frm + d * (s / dist)))
        if cand != here and segment_free(cells, frm, cand):
            return cand
    for axis in np.argsort(-np.abs(d), kind="stable"):
        if abs(d[axis]) < 0.5:
            continue
        for s in range(int(min(step, abs(d[axis]))), 0, -1):
            cand = list(here)
            cand[axis] += int(np.sign(d[axis])) * s
            if segment_free(cells, here, cand):
                return tuple(cand)
    return None


def plan_path_rrt(
    cells: np.ndarray,
    start,
    goal,
    seed: int = 0,
    max_iters: int = RRT_MAX_ITERS,
    step: float = RRT_STEP,
    goal_bias: float = RRT_GOAL_BIAS,
) -> list[tuple[int, int]]:
    """RRT-Connect between two free cells, followed by seeded shortcut smoothing."""
    cells = np.asarray(cells, dtype=bool)
    start, goal = tuple(int(v) for v in start), tuple(int(v) for v in goal)
    ny, nx = cells.shape
    if not (0 <= start[0] < nx and 0 <= start[1] < ny) or cells[start[1], start[0]]:
        raise StartOccupied(f"start {start} is occupied")
    if not (0 <= goal[0] < nx and 0 <= goal[1] < ny) or cells[goal[1], goal[0]]:
        raise GoalOccupied(f"goal {goal} is occupied")
    if start == goal:
        return [start]
    if not connected(cells, start, goal):
        raise NoPath("start and goal are not connected")
    rng = np.random.default_rng(seed)
    if segment_free(cells, start, goal):
        return [start, goal]
    ta, tb = _Tree(start, 1024), _Tree(goal, 1024)
    free_cells = np.argwhere(~cells)[:, ::-1]
    path = None
    for _ in range(max_iters):
        # Samples are drawn from free cells; the goal bias pulls toward the other tree's root.
        target = tb.nodes[0] if rng.random() < goal_bias else tuple(free_cells[rng.integers(len(free_cells))])
        i = ta.nearest(target)
        new = _steer(cells, ta.nodes[i], target, step)
        if new is not None:
            ia = ta.add(new, i)
            # Greedily extend the other tree toward the new node.
            j = tb.nearest(new)
            while True:
                if segment_free(cells, tb.nodes[j], new) and np.hypot(*np.subtract(new, tb.nodes[j])) <= step:
                    path = ta.branch(ia)[::-1] + tb.branch(j)
                    break
                nxt = _steer(cells, tb.nodes[j], new, step)
                if nxt is None:
                    break
                j = tb.add(nxt, j)
            if path is not None:
                break
        ta, tb = tb, ta
    if path is None:
        raise NoPath(f"no path within {max_iters} iterations")
    if path[0] != start:
        path = path[::-1]
    return shortcut(cells, path, rng)


def shortcut(cells: np.ndarray, path: list, rng: np.random.Generator, attempts: int = SHORTCUT_ATTEMPTS) -> list:
    path = list(path)
    for _ in range(attempts):
        if len(path) < 3:
            break
        i, j = sorted(rng.choice(len(path), 2, replace=False))
        if j - i < 2:
            continue
        if segment_free(cells, path[i], path[j]):
            path = path[: i + 1] + path[j:]
    return path


def path_length(path) -> float:
    return float(sum(np.hypot(*np.subtract(q, p)) for p, q in zip(path[:-1], path[1:])))


# ---------------------------------------------------------------------------
# Grasps and demonstrations


@dataclass(frozen=True)
class GraspPose:
    position: tuple[float, float, float]
    approach: tuple[float, float, float] = (0.0, 0.0, -1.0)
    width: float = MAX_OPENING
    yaw: float = 0.0


@dataclass
class Waypoint:
    t: float
    base: tuple[float, float, float]  # x, y, yaw
    ee: tuple[float, float, float]
    gripper: float  # 1 open, 0 closed
    collision: str = ""


@dataclass
class Stage:
    name: str
    waypoints: list[Waypoint] = field(default_factory=list)


@dataclass
class Demonstration:
    stages: list[Stage]
    pick_id: str
    target: tuple[float, float, float]
    final_position: tuple[float, float, float] | None = None
    success: bool = False
    failure_reason: str = ""
    macro: list[tuple[str, list[str]]] = field(default_factory=list)

    @property
    def stage_names(self) -> list[str]:
        return [s.name for s in self.stages]

    def waypoints(self) -> list[Waypoint]:
        return [w for s in self.stages for w in s.waypoints]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Demonstration":
        stages = [Stage(s["name"], [Waypoint(w["t"], tuple(w["base"]), tuple(w["ee"]), w["gripper"], w["collision"])
                                    for w in s["waypoints"]]) for s in d["stages"]]
        return cls(stages, d["pick_id"], tuple(d["target"]),
                   tuple(d["final_position"]) if d["final_position"] is not None else None,
                   d["success"], d["failure_reason"], [(m[0], list(m[1])) for m in d["macro"]])


def propose_grasp(obj, max_opening: float = MAX_OPENING) -> GraspPose:
    """Top-centre grasp straight down, closing across the object's narrow horizontal side."""
    box = world_obb(obj)
    top = box.corners()[:, 2].max()
    hx, hy, _ = box.half_extents
    tris = obj.world_vertices()[obj.mesh.triangles]
    normal = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    up = normal[:, 2] >= math.cos(math.radians(15)) * np.linalg.norm(normal, axis=1) - 1e-12
    if not np.any(up & (tris[:, :, 2].min(axis=1) >= top - 0.01)):
        raise NoTopSurface(f"{obj.id} has no flat top to grasp")
    narrow = 2 * min(hx, hy)
    if narrow > max_opening:
        raise TooWide(f"{obj.id} is {narrow:.3f} m across, gripper opens {max_opening} m")
    yaw = obj.yaw + (math.pi / 2 if hy < hx else 0.0)
    width = min(narrow + 0.01, max_opening)
    return GraspPose((float(box.center[0]), float(box.center[1]), float(top + GRASP_OFFSET)), width=width, yaw=yaw)


class _Recorder:
    """Builds stages with a shared clock and per-waypoint collision checks."""

    def __init__(self, scene: Scene, pick_id: str, base, ee, reach: float):
        self.scene = scene
        self.pick = scene.objects[pick_id]
        self.stages: list[Stage] = []
        self.t = 0.0
        self.base = tuple(base)
        self.ee = tuple(ee)
        self.gripper = 1.0
        self.held_offset = None  # object position minus ee position while grasped
        self.reach = reach
        self.boxes = {oid: world_obb(o) for oid, o in scene.objects.items() if oid != pick_id}

    def stage(self, name: str) -> Stage:
        self.stages.append(Stage(name))
        return self.stages[-1]

    def held_pose(self, ee) -> Pose:
        p = np.asarray(ee) + self.held_offset
        return replace(self.pick.pose, position=tuple(float(v) for v in p))

    def _collision(self, ee, ignore: set[str]) -> str:
        grip = Obb(tuple(float(v) for v in ee), GRIPPER_HALF, quat_from_yaw(self.base[2]))
        probes = [grip]
        if self.held_offset is not None:
            probes.append(world_obb(replace(self.pick, pose=self.held_pose(ee))))
        for box in probes:
            for oid in sorted(self.boxes):
                if oid in ignore:
                    continue
                if physics.obb_penetration(box, self.boxes[oid]) > physics.PENETRATION_TOL:
                    return oid
        return ""

    def emit(self, st: Stage, base, ee, gripper, ignore=frozenset()):
        if math.hypot(ee[0] - base[0], ee[1] - base[1]) > self.reach + 1e-9:
            raise Unreachable(f"gripper at {ee[:2]} is beyond reach of base {base[:2]}")
        self.t = round(self.t + TIMESTEP, 10)
        self.base, self.ee, self.gripper = tuple(base), tuple(ee), gripper
        st.waypoints.append(Waypoint(self.t, self.base, self.ee, gripper, self._collision(ee, set(ignore))))

    def move_ee(self, st: Stage, goal, ignore=frozenset()):
        a, b = np.asarray(self.ee), np.asarray(goal, dtype=float)
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / EE_SPACING)))
        for k in range(1, n + 1):
            self.emit(st, self.base, tuple(float(v) for v in a + (b - a) * k / n), self.gripper, ignore)

    def set_gripper(self, st: Stage, value: float, ignore=frozenset()):
        g0 = self.gripper
        for k in range(1, CLOSE_STEPS + 1):
            self.emit(st, self.base, self.ee, g0 + (value - g0) * k / CLOSE_STEPS, ignore)

    def drive(self, st: Stage, points_xy):
        """Base motion along world waypoints, at most one grid cell apart; the gripper rides along."""
        ee_off = np.subtract(self.ee[:2], self.base[:2])
        for x, y in points_xy:
            dx, dy = x - self.base[0], y - self.base[1]
            yaw = math.atan2(dy, dx) if math.hypot(dx, dy) > 1e-9 else self.base[2]
            self.emit(st, (x, y, yaw), (x + ee_off[0], y + ee_off[1], self.ee[2]), self.gripper)


def _pick_stages(rec: _Recorder, grasp: GraspPose, parent: str):
    above = (grasp.position[0], grasp.position[1], grasp.position[2] + APPROACH_HEIGHT)
    rec.move_ee(rec.stage("Approach"), above)
    rec.move_ee(rec.stage("Descend"), grasp.position)
    rec.set_gripper(rec.stage("Close"), 0.0)
    rec.held_offset = np.subtract(rec.pick.pose.position, grasp.position)
    lifted = (grasp.position[0], grasp.position[1], grasp.position[2] + LIFT_HEIGHT)
    rec.move_ee(rec.stage("Lift"), lifted, ignore={parent})


def place_candidates(scene: Scene, pick_id: str, target, cap: int = 1000) -> list[tuple[float, float, float]]:
    """Collision-free resting points for the picked object on the target object, best first."""
    work = scene.copy()
    obj = work.objects[pick_id]
    work.remove(pick_id)
    try:
        cands = sample_candidates(work, obj, PlacementClass.ON_TOP, cap, (Constraint("on", target),))
    except NoFreeSpace as exc:
        raise Unreachable(f"no free spot on {target}") from exc
    out = [tuple(float(v) for v in c.pose.position) for c in cands]
    return list(dict.fromkeys(out))  # yaw variants share a position


def place_target(scene: Scene, pick_id: str, target) -> tuple[tuple[float, float, float], str]:
    """A resting point for the picked object on the target object (or an explicit point)."""
    if not isinstance(target, str):
        return tuple(float(v) for v in target), FLOOR
    return place_candidates(scene, pick_id, target, 10)[0], target


def _drop_and_settle(scene: Scene, pick_id: str, release: Pose):
    """Let go at the release pose; the settled pose is where the object ends up."""
    work = scene.copy()
    work.objects[pick_id] = replace(work.objects[pick_id], pose=release)
    work.supports[pick_id] = SupportRelation(pick_id, FLOOR)
    for cid in work.children(pick_id):
        work.remove(cid)
    try:
        res = physics.settle_object(work, pick_id)
    except physics.NoSupportBelow:
        return None
    return res.post_pose


def _finish(rec: _Recorder, target, tol) -> Demonstration:
    release = rec.held_pose(rec.ee)
    rec.held_offset = None
    st = rec.stage("Drop")
    rec.set_gripper(st, 1.0)
    rec.move_ee(st, (rec.ee[0], rec.ee[1], rec.ee[2] + APPROACH_HEIGHT))
    settled = _drop_and_settle(rec.scene, rec.pick.id, release)
    demo = Demonstration(rec.stages, rec.pick.id, tuple(target))
    demo.final_position = tuple(float(v) for v in settled.position) if settled is not None else None
    ok, reason = verdict(demo, tol)
    demo.success, demo.failure_reason = ok, reason
    return demo


def _carry_height(rec: _Recorder, release_ee) -> float:
    """Gripper height at which the held object clears every top along the transport corridor."""
    corridor = LineString([rec.ee[:2], tuple(release_ee[:2])]).buffer(CARRY_CORRIDOR)
    tops = [float(b.corners()[:, 2].max()) for b in rec.boxes.values()
            if Polygon(b.footprint()).intersects(corridor)]
    held = world_obb(replace(rec.pick, pose=rec.held_pose(rec.ee)))
    below = rec.ee[2] - float(held.corners()[:, 2].min())  # gripper height above the held object's bottom
    return max([rec.ee[2], float(release_ee[2])] + [t + below + CARRY_CLEARANCE for t in tops])


def _transport(rec: _Recorder, target):
    """Rise to carry height, cross in a straight line, lower onto the release point."""
    release_ee = np.array([target[0], target[1], target[2] + DROP_CLEARANCE]) - rec.held_offset
    st = rec.stage("Transport")
    z = _carry_height(rec, release_ee)
    rec.move_ee(st, (rec.ee[0], rec.ee[1], z))
    rec.move_ee(st, (float(release_ee[0]), float(release_ee[1]), z))
    rec.move_ee(st, tuple(float(v) for v in release_ee))


def synthesize_pick_place(scene: Scene, pick_id: str, place_target_ref, spawn, reach: float = REACH,
                          tol: float = TARGET_TOL, strict: bool = False) -> Demonstration:
    """Fixed-base pick-and-place: Approach, Descend, Close, Lift, Transport, Drop."""
    if pick_id not in scene.objects:
        raise KeyError(pick_id)
    grasp = propose_grasp(scene.objects[pick_id])
    target, _ = place_target(scene, pick_id, place_target_ref)
    base = (float(spawn[0]), float(spawn[1]), float(spawn[2]) if len(spawn) > 2 else 0.0)
    for p in (grasp.position, target):
        if math.hypot(p[0] - base[0], p[1] - base[1]) > reach:
            raise Unreachable(f"point {p[:2]} is {math.hypot(p[0] - base[0], p[1] - base[1]):.2f} m from the base")
    rec = _Recorder(scene, pick_id, base, (base[0], base[1], HOME_HEIGHT), reach)
    _pick_stages(rec, grasp, scene.supports[pick_id].parent_id)
    _transport(rec, target)
    demo = _finish(rec, target, tol)
    if strict and demo.failure_reason == "TrajectoryCollision":
        raise TrajectoryCollision(demo.pick_id)
    return demo


def _base_cell_near(grid: OccupancyGrid, labels: np.ndarray, spawn_cell, point_xy, reach: float):
    """Free cell in the spawn's component closest to a point, within reach.
    With ``spawn_cell`` None any free cell qualifies."""
    lab = labels[spawn_cell[1], spawn_cell[0]] if spawn_cell is not None else None
    iy, ix = np.nonzero(labels == lab) if lab is not None else np.nonzero(labels > 0)
    wx = grid.origin[0] + (ix + 0.5) * grid.resolution
    wy = grid.origin[1] + (iy + 0.5) * grid.resolution
    d = np.hypot(wx - point_xy[0], wy - point_xy[1])
    k = int(np.lexsort((ix, iy, np.round(d, 9)))[0])
    if d[k] > reach:
        raise Unreachable(f"no free base position within reach of {tuple(round(v, 2) for v in point_xy)}")
    return int(ix[k]), int(iy[k])


def clear_above(scene: Scene, pick_id: str, target, height: float = 0.5) -> bool:
    """True when the column the held object and gripper descend through onto ``target`` is free."""
    pick = scene.objects[pick_id]
    held = world_obb(replace(pick, pose=replace(pick.pose, position=tuple(target))))
    lo = float(held.corners()[:, 2].min()) + DROP_CLEARANCE
    half = max(held.half_extents[0], held.half_extents[1], GRIPPER_HALF[1]) + 0.01
    column = Obb((float(target[0]), float(target[1]), lo + height / 2), (half, half, height / 2))
    for oid, o in scene.objects.items():
        if oid != pick_id and physics.obb_penetration(column, world_obb(o)) > physics.PENETRATION_TOL:
            return False
    return True


def lands_on_target(scene: Scene, pick_id: str, target, tol: float = TARGET_TOL) -> bool:
    """True when the object released just above ``target`` settles upright within ``tol`` of it."""
    pick = scene.objects[pick_id]
    release = replace(pick.pose, position=(target[0], target[1], target[2] + DROP_CLEARANCE))
    settled = _drop_and_settle(scene, pick_id, release)
    if settled is None:
        return False
    upright = physics.check_stability(replace(settled, position=release.position), release).stable
    return upright and float(np.linalg.norm(np.subtract(settled.position, target))) <= tol


def _reachable_target(scene, pick_id, grid, labels, spawn_cell, cands, reach, tol):
    """First placement candidate with a clear descent and a clean landing that a reachable base cell can serve."""
    elsewhere = []
    for c in cands:
        if not clear_above(scene, pick_id, c):
            continue
        try:
            cell = _base_cell_near(grid, labels, spawn_cell, c[:2], reach)
        except Unreachable:
            elsewhere.append(c[:2])
            continue
        if lands_on_target(scene, pick_id, c, tol):
            return c, cell
    _walled_off(grid, labels, elsewhere, reach)
    raise Unreachable("no placement spot on the target is within reach of a free base position")


def _walled_off(grid, labels, points, reach):
    """NoPath when a base could serve one of the points, but only from a region the robot cannot drive to."""
    for xy in points:
        try:
            _base_cell_near(grid, labels, None, xy, reach)
        except Unreachable:
            continue
        raise NoPath(f"{tuple(round(v, 2) for v in xy)} is only reachable from a disconnected region")


def _densify(grid: OccupancyGrid, path) -> list[tuple[float, float]]:
    pts = [grid.to_world(c) for c in path]
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil(math.hypot(b[0] - a[0], b[1] - a[1]) / grid.resolution)))
        out += [(a[0] + (b[0] - a[0]) * k / n, a[1] + (b[1] - a[1]) * k / n) for k in range(1, n + 1)]
    return out


def synthesize_mobile_manip(scene: Scene, pick_id: str, place_id: str, spawn, seed: int = 0,
                            grid: OccupancyGrid | None = None, reach: float = REACH,
                            tol: float = TARGET_TOL) -> Demonstration:
    """Navigate to the object, pick it, navigate to the place target, place it."""
    grid = grid or rasterize_occupancy(scene)
    spawn_cell = grid.to_cell(spawn)
    if grid.occupied(spawn_cell):
        raise StartOccupied(f"spawn {tuple(spawn)} is not free")
    labels, _ = ndimage.label(~grid.cells)
    grasp = propose_grasp(scene.objects[pick_id])
    try:
        pick_cell = _base_cell_near(grid, labels, spawn_cell, grasp.position[:2], reach)
    except Unreachable:
        _walled_off(grid, labels, [grasp.position[:2]], reach)
        raise
    target, place_cell = _reachable_target(
        scene, pick_id, grid, labels, spawn_cell, place_candidates(scene, pick_id, place_id), reach, tol)
    path1 = plan_path_rrt(grid.cells, spawn_cell, pick_cell, seed)
    path2 = plan_path_rrt(grid.cells, pick_cell, place_cell, seed + 1)
    sx, sy = grid.to_world(spawn_cell)
    rec = _Recorder(scene, pick_id, (sx, sy, 0.0), (sx, sy, HOME_HEIGHT), reach)
    rec.drive(rec.stage("Navigate"), _densify(grid, path1))
    parent = scene.supports[pick_id].parent_id
    _pick_stages(rec, grasp, parent)
    st = rec.stage("Navigate")
    # Retract over the base before driving.
    rec.move_ee(st, (rec.base[0], rec.base[1], rec.ee[2]))
    rec.drive(st, _densify(grid, path2))
    _transport(rec, target)
    demo = _finish(rec, target, tol)
    demo.macro = [(name, list(stages)) for name, stages in zip(MOBILE_MACRO, MOBILE_STAGES)]
    return demo


# ---------------------------------------------------------------------------
# Filtering, replay and the episode dataset


def verdict(demo: Demonstration, tol: float = TARGET_TOL) -> tuple[bool, str]:
    hit = next((w for w in demo.waypoints() if w.collision), None)
    if hit is not None:
        return False, "TrajectoryCollision"
    if demo.final_position is None:
        return False, "Dropped"
    if float(np.linalg.norm(np.subtract(demo.final_position, demo.target))) > tol:
        return False, "MissedTarget"
    return True, ""


def filter_failures(demos, tol: float = TARGET_TOL):
    """(passed, [(demo, reason)]) by collision and final-position checks."""
    passed, rejected = [], []
    for d in demos:
        ok, reason = verdict(d, tol)
        (passed if ok else rejected).append(d if ok else (d, reason))
    return passed, rejected


def replay_demonstration(scene: Scene, demo: Demonstration, tol: float = TARGET_TOL) -> bool:
    """Re-run the collision checks and the drop for a recorded demonstration."""
    if not demo.stages or not demo.stages[0].waypoints:
        return False
    first = demo.stages[0].waypoints[0]
    rec = _Recorder(scene, demo.pick_id, first.base, first.ee, math.inf)
    pick_parent = scene.supports[demo.pick_id].parent_id
    release = None
    for st in demo.stages:
        for w in st.waypoints:
            if st.name == "Lift" and rec.held_offset is None:
                rec.held_offset = np.subtract(rec.pick.pose.position, rec.ee)
            if st.name == "Drop" and rec.held_offset is not None:
                release = rec.held_pose(rec.ee)
                rec.held_offset = None
            ignore = {pick_parent} if st.name == "Lift" else set()
            if rec._collision(w.ee, ignore):
                return False
            rec.ee, rec.base = w.ee, w.base
    if release is None:
        return False
    stamps = [w.t for w in demo.waypoints()]
    if any(b <= a for a, b in zip(stamps[:-1], stamps[1:])):
        return False
    settled = _drop_and_settle(scene, demo.pick_id, release)
    return settled is not None and float(np.linalg.norm(np.subtract(settled.position, demo.target))) <= tol


@dataclass
class Episode:
    scene_hash: str
    spawn: tuple[float, float]
    seed: int
    demo: Demonstration

    def to_json(self) -> str:
        return json.dumps({"scene_hash": self.scene_hash, "spawn": list(self.spawn), "seed": self.seed,
                           "demo": self.demo.to_dict()}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Episode":
        d = json.loads(line)
        return cls(d["scene_hash"], tuple(d["spawn"]), d["seed"], Demonstration.from_dict(d["demo"]))


def scene_hash(scene: Scene) -> str:
    return hashlib.sha256(dumps(scene)[0].encode("utf-8")).hexdigest()


def infer_pick_place(scene: Scene) -> tuple[str, str]:
    """Pick the first graspable task object; place it on another task object that is not its current support."""
    task = [o for o in scene.objects.values() if o.task_relevant]
    order = {}
    if scene.task is not None:
        cats = [r.category for r in scene.task.required_objects]
        order = {o.id: cats.index(o.category) if o.category in cats else len(cats) for o in task}
    task.sort(key=lambda o: (order.get(o.id, 0), o.id))
    pick = next((o for o in task if o.placement_class == PlacementClass.ON_TOP), None)
    if pick is None:
        raise ValueError("no graspable task object")
    parent = scene.supports[pick.id].parent_id
    place = [o for o in task if o.id not in (pick.id, parent) and world_surfaces(o)]
    if not place:
        raise ValueError("no place target among the task objects")
    return pick.id, place[-1].id


def random_spawn(scene: Scene, grid: OccupancyGrid, seed: int) -> tuple[float, float]:
    """Uniform free cell of the largest free region, so spawns are not trapped in pockets."""
    rng = np.random.default_rng(seed)
    labels, n = ndimage.label(~grid.cells)
    if n == 0:
        raise StartOccupied("the occupancy grid has no free cell")
    big = int(np.argmax(np.bincount(labels.ravel())[1:])) + 1
    iy, ix = np.nonzero(labels == big)
    k = int(rng.integers(len(ix)))
    return grid.to_world((int(ix[k]), int(iy[k])))


def generate_episodes(scene: Scene, count: int, seed: int = 0, tol: float = TARGET_TOL) -> list[Episode]:
    """Mobile pick-and-place episodes from random spawns; failures to synthesize are recorded as rejected demos."""
    pick, place = infer_pick_place(scene)
    grid = rasterize_occupancy(scene)
    h = scene_hash(scene)
    out = []
    for k in range(count):
        s = seed * 1000 + k
        spawn = random_spawn(scene, grid, s)
        try:
            demo = synthesize_mobile_manip(scene, pick, place, spawn, s, grid, tol=tol)
        except (NoPath, Unreachable, TooWide, NoTopSurface) as exc:
            demo = Demonstration([], pick, (0.0, 0.0, 0.0), None, False, type(exc).__name__)
            log.info("episode %d: %s", k, exc)
        out.append(Episode(h, spawn, s, demo))
    return out


def write_episodes(episodes: list[Episode], path: str | Path) -> dict:
    """JSONL of passed and rejected episodes plus a summary with counts per rejection reason."""
    path = Path(path)
    atomic_write(path, "".join(e.to_json() + "\n" for e in episodes))
    reasons = Counter(e.demo.failure_reason or "passed" for e in episodes)
    summary = {"episodes": len(episodes), "passed": reasons.pop("passed", 0), "rejected": dict(sorted(reasons.items()))}
    atomic_write(path.with_suffix(".summary.json"), json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary
