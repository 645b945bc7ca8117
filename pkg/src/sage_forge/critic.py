"""Rule-based visual critic: task objects, companion rules, floor coverage and misplacements."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from shapely.geometry import LineString, Polygon
from shapely.ops import unary_union

from .geometry import point_rect_distance
from .placement import DanglingAnchor, _Batch, parse_constraints, satisfaction
from .scene import FLOOR, PlacementClass, Scene, SceneObject, TaskSpec, normalize_category, world_obb

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AddRequest:
    description: str
    category: str
    constraints: str = ""
    room_id: str = ""
    key: str = ""


@dataclass(frozen=True)
class MoveRequest:
    object_id: str
    constraints: str
    reason: str = ""


@dataclass
class CritiqueFeedback:
    add: list[AddRequest] = field(default_factory=list)
    move: list[MoveRequest] = field(default_factory=list)
    remove: list[str] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return not (self.add or self.move or self.remove)

    def to_dict(self) -> dict:
        return {
            "add": [a.__dict__ for a in self.add],
            "move": [m.__dict__ for m in self.move],
            "remove": list(self.remove),
            "satisfied": self.satisfied,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CritiqueFeedback":
        return cls(
            [AddRequest(**a) for a in d.get("add", [])],
            [MoveRequest(**m) for m in d.get("move", [])],
            list(d.get("remove", [])),
        )


@dataclass(frozen=True)
class CombinationRule:
    trigger: str
    companion: str
    min_count: int
    relation: str
    description: str
    constraints: str
    radius: float = 1.0

    def __post_init__(self):
        if normalize_category(self.trigger) == normalize_category(self.companion):
            raise ValueError("trigger and companion must differ")


@dataclass(frozen=True)
class CriticConfig:
    rules: tuple[CombinationRule, ...]
    decor: tuple[AddRequest, ...]
    coverage_threshold: float = 0.15
    max_per_room: tuple[tuple[str, int], ...] = ()


def load_rules(path: str | Path | None = None) -> CriticConfig:
    if path is None:
        text = resources.files("sage_forge.data").joinpath("combination_rules.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    d = json.loads(text)
    rules = tuple(
        CombinationRule(
            r["trigger"], r["companion"], int(r["min"]), r["relation"], r["description"], r["constraints"],
            float(r.get("radius", 1.0)),
        )
        for r in d["rules"]
    )
    decor = tuple(AddRequest(x["description"], x["category"], x.get("constraints", "")) for x in d.get("decor", []))
    return CriticConfig(rules, decor, float(d.get("coverage_threshold", 0.15)), tuple(sorted(d.get("max_per_room", {}).items())))


@lru_cache(maxsize=None)
def default_rules() -> CriticConfig:
    return load_rules()


def check_task_objects(scene: Scene, task: TaskSpec | None) -> list[str]:
    """Required categories not covered by scene objects, as a multiset difference."""
    if task is None:
        return []
    need = Counter(normalize_category(r.category) for r in task.required_objects)
    have = Counter(normalize_category(o.category) for o in scene.objects.values())
    missing = need - have
    out = []
    for r in task.required_objects:
        c = normalize_category(r.category)
        if missing[c] > 0:
            out.append(c)
            missing[c] -= 1
    return out


def floor_coverage(scene: Scene, room_id: str) -> float:
    room = scene.plan.room(room_id)
    feet = [
        Polygon(world_obb(o).footprint())
        for o in scene.objects.values()
        if o.placement_class == PlacementClass.FLOOR and scene.room_of(o).id == room_id
    ]
    if not feet:
        return 0.0
    return float(unary_union(feet).intersection(Polygon(room.polygon)).area / room.area)


def _companions(scene: Scene, trigger: SceneObject, rule: CombinationRule) -> int:
    comp = normalize_category(rule.companion)
    if rule.relation == "on":
        return sum(
            1 for cid in scene.descendants(trigger.id) if normalize_category(scene.objects[cid].category) == comp
        )
    box = world_obb(trigger)
    n = 0
    for o in scene.objects.values():
        if o.id == trigger.id or normalize_category(o.category) != comp:
            continue
        d = point_rect_distance(np.asarray(o.obb.center[:2]), box.center, trigger.yaw, box.half_extents[:2])[0]
        if d <= rule.radius:
            n += 1
    return n


def _door_blocked(scene: Scene, obj: SceneObject, clearance: float = 0.6) -> bool:
    if obj.placement_class != PlacementClass.FLOOR or not scene.plan.doors:
        return False
    foot = Polygon(world_obb(obj).footprint())
    for door in scene.plan.doors:
        zone = LineString(door.segment).buffer(clearance, cap_style="flat")
        if foot.intersection(zone).area > 1e-6:
            return True
    return False


def _facing_violation(scene: Scene, obj: SceneObject) -> bool:
    try:
        cons = [c for c in parse_constraints(obj.constraints) if c.kind == "facing"]
    except ValueError:
        return False
    if not cons:
        return False
    batch = _Batch(
        np.array([obj.pose.position[:2]]), np.array([obj.yaw]), np.array([FLOOR], dtype=object), scene.room_of(obj), obj
    )
    for c in cons:
        try:
            if satisfaction(c, batch, scene)[0] < 0.5:
                return True
        except DanglingAnchor:
            continue
    return False


def critique(scene: Scene, task: TaskSpec | None = None, config: CriticConfig | None = None) -> CritiqueFeedback:
    """Deterministic structured feedback on the current scene."""
    cfg = config or default_rules()
    task = task if task is not None else scene.task
    fb = CritiqueFeedback()
    # (a) task objects
    missing = check_task_objects(scene, task)
    if missing and task is not None:
        pending = Counter(missing)
        for i, r in enumerate(task.required_objects):
            cat = normalize_category(r.category)
            if pending[cat] > 0:
                pending[cat] -= 1
                fb.add.append(AddRequest(r.description, r.category, r.constraints, "", f"task:{i}"))
    # (b) companion rules
    for rule in cfg.rules:
        for trig in sorted(scene.by_category(rule.trigger), key=lambda o: o.id):
            have = _companions(scene, trig, rule)
            for k in range(have, rule.min_count):
                fb.add.append(
                    AddRequest(
                        rule.description,
                        rule.companion,
                        rule.constraints.replace("{trigger}", trig.id),
                        scene.room_of(trig).id,
                        f"combo:{rule.trigger}>{rule.companion}:{trig.id}:{k}",
                    )
                )
    # (c) floor coverage
    for room in scene.plan.rooms:
        cov = floor_coverage(scene, room.id)
        if cov < cfg.coverage_threshold:
            counts = Counter(
                normalize_category(o.category) for o in scene.objects.values() if scene.room_of(o).id == room.id
            )
            ranked = sorted(range(len(cfg.decor)), key=lambda i: (counts[normalize_category(cfg.decor[i].category)], i))
            for i in ranked[:2]:
                d = cfg.decor[i]
                n = counts[normalize_category(d.category)]
                fb.add.append(AddRequest(d.description, d.category, d.constraints, room.id, f"decor:{room.id}:{d.category}:{n}"))
    # (d) misplacements
    limits = dict(cfg.max_per_room)
    for room in scene.plan.rooms:
        for cat, limit in sorted(limits.items()):
            objs = sorted(
                (o for o in scene.by_category(cat) if scene.room_of(o).id == room.id and not o.task_relevant),
                key=lambda o: o.id,
            )
            keep = limit - sum(1 for o in scene.by_category(cat) if scene.room_of(o).id == room.id and o.task_relevant)
            for o in objs[max(keep, 0):]:
                fb.remove.append(o.id)
    for oid in sorted(scene.objects):
        if oid in fb.remove:
            continue
        o = scene.objects[oid]
        if _door_blocked(scene, o):
            fb.move.append(MoveRequest(oid, o.constraints, "BlocksDoor"))
        elif _facing_violation(scene, o):
            fb.move.append(MoveRequest(oid, o.constraints, "FacingViolation"))
    return fb
