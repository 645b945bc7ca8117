"""Scene-editing tools exposed over the tool protocol; all state lives in the server-side session."""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from . import physics
from .assets import UnknownCategory, build_asset, derive_seed, estimate_physical_attributes, sample_height
from .critic import critique, floor_coverage
from .geometry import Obb, quat_mul, quat_normalize, rotate_points
from .placement import (
    ConstraintSyntaxError,
    PlacementRequest,
    classify_placement,
    parse_constraints,
    plan_placements,
)
from .protocol import SessionState, ToolDescriptor, ToolError, ToolServer
from .scene import (
    Door,
    FloorPlan,
    PlacementClass,
    Pose,
    Scene,
    SceneObject,
    normalize_category,
    rect_room,
)
from .scene_io import dumps, loads, task_to_dict
from .tasks import match_category, parse_task, room_config

log = logging.getLogger(__name__)

DOOR_WIDTH = 0.9
WALL_HEIGHT = 2.8

_STR = {"type": "string"}
_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["key", "description", "category"],
    "properties": {
        "key": _STR,
        "description": _STR,
        "category": _STR,
        "constraints": _STR,
        "placement_class": {"enum": [c.value for c in PlacementClass]},
        "height_scale": {"type": "number", "exclusiveMinimum": 0},
        "task_relevant": {"type": "boolean"},
        "room_id": _STR,
        "reuse_id": _STR,
    },
}


# ---------------------------------------------------------------------------
# Floor plans


def room_size(room_type: str, seed: int, index: int) -> tuple[float, float]:
    """Width and depth drawn from the room type's size band, rounded to 10 cm."""
    lo, hi = room_config(room_type)["size"]
    rng = np.random.default_rng(derive_seed("room", seed, index, normalize_category(room_type)))
    w, d = lo + (hi - lo) * rng.random(2)
    return round(float(w), 1), round(float(d), 1)


def layout_rooms(room_types, seed: int, sizes=None) -> FloorPlan:
    """Rooms in a row along +x; neighbours share a wall with a centred door."""
    rooms, doors = [], []
    x = 0.0
    for i, rt in enumerate(room_types):
        w, d = sizes[i] if sizes else room_size(rt, seed, i)
        cfg = room_config(rt)
        rooms.append(
            rect_room(f"room{i}", x, 0.0, round(x + w, 6), d, wall_height=WALL_HEIGHT, room_type=normalize_category(rt),
                      floor_color=tuple(cfg["floor_color"]), wall_color=tuple(cfg["wall_color"]))
        )
        if i > 0:
            shared = min(d, rooms[i - 1].bounds[3])
            yc = shared / 2
            seg = ((x, yc - DOOR_WIDTH / 2), (x, yc + DOOR_WIDTH / 2))
            doors.append(Door(rooms[i - 1].id, rooms[i].id, seg, DOOR_WIDTH))
        x = round(x + w, 6)
    return FloorPlan(tuple(rooms), tuple(doors))


# ---------------------------------------------------------------------------
# Session helpers


def _scene(sess: SessionState) -> Scene:
    if sess.scene is None:
        raise ToolError("NoScene", "call scene_init first")
    return sess.scene


def _new_id(sess: SessionState) -> str:
    scene = _scene(sess)
    while True:
        n = sess.data.setdefault("id_counter", 0)
        sess.data["id_counter"] = n + 1
        oid = f"{derive_seed(scene.seed, 'object', n) & 0xFFFFFFFF:08x}"
        if oid not in scene.objects and oid not in sess.data.get("templates", {}):
            return oid


def _request_constraints(text: str):
    try:
        return parse_constraints(text)
    except ConstraintSyntaxError as exc:
        raise ToolError("ConstraintSyntaxError", str(exc)) from exc


def _build_object(sess: SessionState, req: dict) -> SceneObject:
    scene = _scene(sess)
    reuse = req.get("reuse_id")
    if reuse:
        tmpl = sess.data.get("templates", {}).get(reuse)
        if tmpl is None:
            raise ToolError("ObjectNotFound", f"no kept object {reuse}")
        return replace(tmpl, room_id=req.get("room_id", tmpl.room_id), constraints=req.get("constraints", tmpl.constraints))
    cat = normalize_category(req["category"])
    seed = derive_seed(scene.seed, "asset", req["key"])
    try:
        height = sample_height(cat, seed) * float(req.get("height_scale", 1.0))
        mesh, height = build_asset(req["description"], cat, seed, height)
    except UnknownCategory as exc:
        raise ToolError("UnknownCategory", f"unknown category {req['category']!r}") from exc
    lo, hi = mesh.bounds
    box = Obb(tuple((lo + hi) / 2), tuple(np.maximum((hi - lo) / 2, 1e-6)))
    attrs = replace(estimate_physical_attributes(cat, box, seed), height=round(float(height), 6))
    cls = PlacementClass(req["placement_class"]) if req.get("placement_class") else classify_placement(
        req["description"], req.get("constraints", "")
    )
    if cls == PlacementClass.WALL:
        attrs = replace(attrs, static=True)
    return SceneObject(
        id=_new_id(sess),
        description=req["description"],
        category=cat,
        placement_class=cls,
        pose=Pose((0.0, 0.0, 0.0)),
        mesh=mesh,
        attrs=attrs,
        task_relevant=bool(req.get("task_relevant", False)),
        constraints=req.get("constraints", ""),
        room_id=req.get("room_id", ""),
    )


def locate(scene: Scene, ref: str) -> SceneObject:
    """An object id, or a phrase naming exactly one object category present in the scene."""
    if ref in scene.objects:
        return scene.objects[ref]
    cat = match_category(ref) or normalize_category(ref)
    hits = sorted(scene.by_category(cat), key=lambda o: o.id)
    if not hits:
        raise ToolError("ObjectNotFound", f"nothing matches {ref!r}", candidates=[])
    if len(hits) > 1:
        raise ToolError("ObjectNotFound", f"{ref!r} is ambiguous", candidates=[o.id for o in hits])
    return hits[0]


# ---------------------------------------------------------------------------
# Tools


def tool_scene_init(sess: SessionState, args: dict) -> dict:
    """Parse the task, lay out the rooms and propose required objects, anchors and furnishings."""
    seed = int(args.get("seed", 0))
    task = parse_task(args["prompt"], tuple(args["room_types"]) if args.get("room_types") else None)
    sizes = [tuple(s) for s in args["room_sizes"]] if args.get("room_sizes") else None
    if sizes is not None and len(sizes) != len(task.room_types):
        raise ToolError("InvalidRoomSizes", "one size per room type is required")
    plan = layout_rooms(task.room_types, seed, sizes)
    sess.scene = Scene(plan, seed=seed, task=task)
    sess.data.clear()
    sess.data["physics"] = bool(args.get("physics", True))
    sess.data["templates"] = {}
    if args.get("keep"):
        kept = loads(args["keep"]["scene"], args["keep"].get("meshes", {}))
        sess.data["templates"] = {oid: o for oid, o in kept.objects.items()}
    first = plan.rooms[0].id
    required, anchors = [], []
    req_cats = [normalize_category(r.category) for r in task.required_objects]
    furn0 = room_config(task.room_types[0])["furnishings"]
    spare = sorted(sess.data["templates"].values(), key=lambda o: o.id)
    for i, r in enumerate(task.required_objects):
        # Unconstrained task objects take the room template's layout hints for their category.
        src = next((f for f in furn0 if normalize_category(f["category"]) == normalize_category(r.category)), None)
        cons = r.constraints or (src.get("constraints", "") if src else "")
        entry = {"key": f"task:{i}", "description": r.description, "category": r.category,
                 "constraints": cons, "task_relevant": True, "room_id": first}
        # Kept objects stand in for the task objects of the same category.
        match = next((o for o in spare if o.category == normalize_category(r.category)), None)
        if match is not None:
            spare.remove(match)
            entry["reuse_id"] = match.id
        required.append(entry)
        for c in parse_constraints(r.constraints):
            cat = normalize_category(c.anchor) if c.anchor else None
            if cat is None or cat in req_cats or any(a["category"] == cat for a in anchors):
                continue
            src = next((f for f in furn0 if normalize_category(f["category"]) == cat), None)
            anchors.append({"key": f"anchor:{cat}", "description": src["description"] if src else f"a {cat}",
                            "category": cat, "constraints": src["constraints"] if src else "", "room_id": first})
    taken = req_cats + [a["category"] for a in anchors]
    furnishings = []
    for room, rt in zip(plan.rooms, task.room_types):
        for j, f in enumerate(room_config(rt)["furnishings"]):
            cat = normalize_category(f["category"])
            if room.id == first and cat in taken:
                taken.remove(cat)
                continue
            furnishings.append({"key": f"furn:{room.id}:{j}", "description": f["description"], "category": cat,
                                "constraints": f.get("constraints", ""), "room_id": room.id})
    return {
        "task": task_to_dict(task),
        "rooms": [{"id": r.id, "room_type": r.room_type, "bounds": list(r.bounds)} for r in plan.rooms],
        "doors": [{"rooms": [d.room_a, d.room_b], "segment": [list(p) for p in d.segment]} for d in plan.doors],
        "required": required + anchors,
        "furnishings": furnishings,
    }


def tool_asset_place(sess: SessionState, args: dict) -> dict:
    """Build and place a batch of objects; failures are reported per request key."""
    scene = _scene(sess)
    physics_on = sess.data.get("physics", True)
    reqs, key_of, failed = [], {}, []
    for r in args["requests"]:
        try:
            obj = _build_object(sess, r)
            cons = _request_constraints(r.get("constraints", ""))
        except ToolError as exc:
            failed.append({"key": r["key"], "reason": exc.kind})
            continue
        key_of[obj.id] = r["key"]
        reqs.append(PlacementRequest(obj, obj.placement_class, cons))
    plan = plan_placements(scene, reqs, physics_on=physics_on)
    work = plan.scene
    for oid, reason in plan.unplaced:
        failed.append({"key": key_of[oid], "reason": reason})
    placed_ids = [oid for oid, _ in plan.placements]
    # Items resting on something belong to the supporting object's room.
    for oid in placed_ids:
        parent = work.supports[oid].parent_id
        if parent in work.objects and work.objects[parent].room_id:
            work.objects[oid] = replace(work.objects[oid], room_id=work.objects[parent].room_id)
    removed = []
    if physics_on:
        floor_ids = [i for i in placed_ids if work.objects[i].placement_class == PlacementClass.FLOOR]
        work, removed = physics.batch_settle(work, floor_ids)
        for oid in removed:
            if oid in key_of:
                failed.append({"key": key_of[oid], "reason": "Unstable"})
    sess.scene = work
    placed = [
        {"key": key_of[oid], "id": oid, "category": work.objects[oid].category,
         "parent": work.supports[oid].parent_id}
        for oid in placed_ids
        if oid in work.objects
    ]
    return {"placed": placed, "failed": sorted(failed, key=lambda f: f["key"]), "removed": removed,
            "num_objects": len(work.objects)}


def _rigid(old: Pose, new: Pose, pose: Pose) -> Pose:
    """Apply the motion old -> new to a pose attached to the moved object."""
    dq = quat_mul(new.orientation, (old.orientation[0], *(-np.asarray(old.orientation[1:]))))
    rel = np.subtract(pose.position, old.position)
    pos = np.asarray(new.position) + rotate_points(rel[None, :], dq)[0]
    return Pose(tuple(float(v) for v in pos), quat_normalize(quat_mul(dq, pose.orientation)))


def tool_asset_move(sess: SessionState, args: dict) -> dict:
    """Re-place one object; whatever rests on it moves rigidly with it. The scene is untouched on failure."""
    scene = _scene(sess)
    obj = locate(scene, args["target"])
    cons_text = args.get("constraints", obj.constraints)
    cons = _request_constraints(cons_text)
    work = scene.copy()
    carried = {d: (work.objects[d], work.supports[d]) for d in work.descendants(obj.id)}
    work.remove(obj.id)
    moving = replace(obj, constraints=cons_text)
    plan = plan_placements(work, [PlacementRequest(moving, obj.placement_class, cons)],
                           physics_on=sess.data.get("physics", True))
    if plan.unplaced:
        raise ToolError("MoveFailed", f"no placement for {obj.id}: {plan.unplaced[0][1]}", restored=True)
    work = plan.scene
    new_pose = work.objects[obj.id].pose
    for d in sorted(carried, key=lambda k: len(scene.descendants(k)), reverse=True):
        o, s = carried[d]
        work.add(replace(o, pose=_rigid(obj.pose, new_pose, o.pose)), s)
    for d in carried:
        parent = work.supports[d].parent_id
        if physics.collides_with_scene(work, work.objects[d], {parent, *work.descendants(d)}):
            raise ToolError("MoveFailed", f"{d} would collide after moving {obj.id}", restored=True)
    sess.scene = work
    return {"moved": obj.id, "pose": {"position": list(new_pose.position), "orientation": list(new_pose.orientation)},
            "carried": sorted(carried)}


def tool_asset_remove(sess: SessionState, args: dict) -> dict:
    """Delete objects; their direct children are re-settled and dropped if nothing holds them."""
    scene = _scene(sess)
    targets = [locate(scene, t).id for t in args["targets"]]
    work = scene.copy()
    removed, resettled = [], []
    for oid in targets:
        if oid not in work.objects:
            continue
        children = sorted(work.children(oid))
        work.objects.pop(oid)
        work.supports.pop(oid)
        removed.append(oid)
        for cid in children:
            try:
                res = physics.settle_object(work, cid)
            except physics.NoSupportBelow:
                res = None
            if res is None or not res.converged or res.support is None:
                removed += work.remove(cid)
                continue
            moved = replace(work.objects[cid], pose=res.post_pose)
            if physics.collides_with_scene(work, moved, {res.support.parent_id, *work.descendants(cid)}):
                removed += work.remove(cid)
                continue
            work.objects[cid] = moved
            work.supports[cid] = res.support
            resettled.append(cid)
    sess.scene = work
    return {"removed": removed, "resettled": resettled, "num_objects": len(work.objects)}


def tool_visual_critic(sess: SessionState, args: dict) -> dict:
    scene = _scene(sess)
    fb = critique(scene, scene.task)
    out = fb.to_dict()
    out["coverage"] = {r.id: round(floor_coverage(scene, r.id), 6) for r in scene.plan.rooms}
    return out


def physics_offenders(scene: Scene, report: dict) -> list[str]:
    """Unstable objects plus one member of each colliding pair (never task objects when avoidable)."""
    out = list(report["unstable_ids"])
    for a, b in report["colliding_pairs"]:
        if a in out or b in out:
            continue
        oa, ob = scene.objects[a], scene.objects[b]
        key = lambda o: (o.task_relevant, float(np.prod(o.obb.half_extents)), o.id)  # noqa: E731
        out.append(min(oa, ob, key=key).id)
    return sorted(set(out))


def tool_physics_critic(sess: SessionState, args: dict) -> dict:
    scene = _scene(sess)
    report = physics.metrics_report(scene)
    report["offenders"] = physics_offenders(scene, report)
    return report


def tool_scene_export(sess: SessionState, args: dict) -> dict:
    text, meshes = dumps(_scene(sess))
    return {"scene": text, "meshes": meshes}


def tool_scene_metrics(sess: SessionState, args: dict) -> dict:
    return physics.metrics_report(_scene(sess))


TOOLS = [
    (ToolDescriptor("scene_init", "Start a scene from a task prompt and propose objects to place.", {
        "type": "object", "required": ["prompt"],
        "properties": {"prompt": _STR, "seed": {"type": "integer"}, "physics": {"type": "boolean"},
                       "room_types": {"type": "array", "items": _STR},
                       "room_sizes": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                                  "minItems": 2, "maxItems": 2}},
                       "keep": {"type": "object", "required": ["scene"]}},
    }), tool_scene_init),
    (ToolDescriptor("asset_place", "Generate and place a batch of assets.", {
        "type": "object", "required": ["requests"],
        "properties": {"requests": {"type": "array", "items": _REQUEST_SCHEMA}},
    }), tool_asset_place),
    (ToolDescriptor("asset_move", "Move one object (id or category phrase) under new constraints.", {
        "type": "object", "required": ["target"], "properties": {"target": _STR, "constraints": _STR},
    }), tool_asset_move),
    (ToolDescriptor("asset_remove", "Remove objects by id or category phrase.", {
        "type": "object", "required": ["targets"], "properties": {"targets": {"type": "array", "items": _STR}},
    }), tool_asset_remove),
    (ToolDescriptor("visual_critic", "Structured add/move/remove feedback on the current scene.",
                    {"type": "object"}), tool_visual_critic),
    (ToolDescriptor("physics_critic", "Collision and stability report with objects to remove.",
                    {"type": "object"}), tool_physics_critic),
    (ToolDescriptor("scene_export", "The scene document and its meshes.", {"type": "object"}), tool_scene_export),
    (ToolDescriptor("scene_metrics", "Object count, collision ratio and stability ratio.", {"type": "object"}),
     tool_scene_metrics),
]


def build_server() -> ToolServer:
    server = ToolServer()
    for desc, handler in TOOLS:
        server.register_tool(desc, handler)
    return server

