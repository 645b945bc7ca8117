"""Scene file format: schema-versioned JSON plus sibling OBJ meshes.

Output is byte-stable: keys are sorted, floats use their shortest round-trip
repr, and mesh files are named by content hash.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from .scene import (
    Door,
    FloorPlan,
    PhysicalAttributes,
    PlacementClass,
    Pose,
    RequiredObject,
    Room,
    Scene,
    SceneObject,
    SupportRelation,
    TaskSpec,
    TriMesh,
)

SCHEMA_VERSION = 1


class ParseError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


def mesh_relpath(mesh: TriMesh) -> str:
    return f"meshes/{mesh.content_hash[:16]}.obj"


def mesh_to_obj(mesh: TriMesh) -> str:
    lines = ["# sage_forge mesh"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"


def mesh_from_obj(text: str) -> TriMesh:
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except ValueError as exc:
            raise ParseError(f"bad OBJ line {lineno}: {line!r}") from exc
    return TriMesh(verts, faces)


def task_to_dict(task: TaskSpec | None):
    if task is None:
        return None
    return {
        "prompt": task.prompt,
        "room_types": list(task.room_types),
        "required_objects": [
            {"description": r.description, "category": r.category, "constraints": r.constraints}
            for r in task.required_objects
        ],
    }


def task_from_dict(d) -> TaskSpec | None:
    if d is None:
        return None
    return TaskSpec(
        prompt=d["prompt"],
        room_types=tuple(d["room_types"]),
        required_objects=tuple(RequiredObject(**r) for r in d["required_objects"]),
    )


def object_to_dict(obj: SceneObject, mesh_ref) -> dict:
    a = obj.attrs
    return {
        "id": obj.id,
        "description": obj.description,
        "category": obj.category,
        "placement_class": obj.placement_class.value,
        "pose": {"position": list(obj.pose.position), "orientation": list(obj.pose.orientation)},
        "mesh": mesh_ref,
        "attrs": {
            "height": a.height,
            "mass": a.mass,
            "metallic": a.metallic,
            "roughness": a.roughness,
            "static": a.static,
        },
        "task_relevant": obj.task_relevant,
        "constraints": obj.constraints,
        "room_id": obj.room_id,
    }


def object_from_dict(d: dict, mesh: TriMesh) -> SceneObject:
    return SceneObject(
        id=d["id"],
        description=d["description"],
        category=d["category"],
        placement_class=PlacementClass(d["placement_class"]),
        pose=Pose(tuple(d["pose"]["position"]), tuple(d["pose"]["orientation"])),
        mesh=mesh,
        attrs=PhysicalAttributes(**d["attrs"]),
        task_relevant=bool(d["task_relevant"]),
        constraints=d.get("constraints", ""),
        room_id=d.get("room_id", ""),
    )


def mesh_to_inline(mesh: TriMesh) -> dict:
    return {"vertices": mesh.vertices.tolist(), "triangles": mesh.triangles.tolist()}


def mesh_from_inline(d: dict) -> TriMesh:
    return TriMesh(d["vertices"], d["triangles"])


def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": scene.seed,
        "task": task_to_dict(scene.task),
        "plan": {
            "rooms": [
                {
                    "id": r.id,
                    "polygon": [list(p) for p in r.polygon],
                    "wall_height": r.wall_height,
                    "room_type": r.room_type,
                    "floor_color": list(r.floor_color),
                    "wall_color": list(r.wall_color),
                }
                for r in scene.plan.rooms
            ],
            "doors": [
                {"room_a": d.room_a, "room_b": d.room_b, "segment": [list(p) for p in d.segment], "width": d.width}
                for d in scene.plan.doors
            ],
        },
        "objects": [object_to_dict(o, mesh_relpath(o.mesh)) for o in scene.objects.values()],
        "supports": [
            {"child_id": s.child_id, "parent_id": s.parent_id, "surface_index": s.surface_index}
            for s in scene.supports.values()
        ],
    }


def dumps(scene: Scene) -> tuple[str, dict[str, str]]:
    """Serialize to (scene JSON text, {relative mesh path: OBJ text})."""
    text = json.dumps(scene_to_dict(scene), sort_keys=True, indent=1, ensure_ascii=False) + "\n"
    meshes = {}
    for o in scene.objects.values():
        rel = mesh_relpath(o.mesh)
        if rel not in meshes:
            meshes[rel] = mesh_to_obj(o.mesh)
    return text, dict(sorted(meshes.items()))


def loads(text: str | bytes, meshes: dict[str, str] | None = None, base_dir: Path | None = None) -> Scene:
    raw = text if isinstance(text, bytes) else text.encode("utf-8")
    try:
        doc = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError("scene file is not UTF-8", exc.start) from exc
    except json.JSONDecodeError as exc:
        offset = len(exc.doc[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed scene JSON: {exc.msg}", offset) from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {doc.get('schema_version') if isinstance(doc, dict) else None}")
    cache: dict[str, TriMesh] = {}

    def resolve(ref):
        if isinstance(ref, dict):
            return mesh_from_inline(ref)
        if ref not in cache:
            if meshes is not None and ref in meshes:
                cache[ref] = mesh_from_obj(meshes[ref])
            elif base_dir is not None and (base_dir / ref).exists():
                cache[ref] = mesh_from_obj((base_dir / ref).read_text(encoding="utf-8"))
            else:
                raise ParseError(f"missing mesh file {ref}")
        return cache[ref]

    try:
        plan = doc["plan"]
        rooms = tuple(
            Room(
                id=r["id"],
                polygon=tuple(tuple(p) for p in r["polygon"]),
                wall_height=r["wall_height"],
                room_type=r["room_type"],
                floor_color=tuple(r["floor_color"]),
                wall_color=tuple(r["wall_color"]),
            )
            for r in plan["rooms"]
        )
        doors = tuple(
            Door(d["room_a"], d["room_b"], tuple(tuple(p) for p in d["segment"]), d["width"]) for d in plan["doors"]
        )
        scene = Scene(plan=FloorPlan(rooms, doors), seed=int(doc["seed"]), task=task_from_dict(doc["task"]))
        for od in doc["objects"]:
            obj = object_from_dict(od, resolve(od["mesh"]))
            scene.objects[obj.id] = obj
        for sd in doc["supports"]:
            scene.supports[sd["child_id"]] = SupportRelation(sd["child_id"], sd["parent_id"], int(sd["surface_index"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid scene document: {exc!r}") from exc
    return scene


def roundtrip(scene: Scene) -> Scene:
    text, meshes = dumps(scene)
    return loads(text, meshes)


def atomic_write(path: Path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(scene: Scene, path: str | Path) -> Path:
    path = Path(path)
    text, meshes = dumps(scene)
    for rel, obj_text in meshes.items():
        target = path.parent / rel
        if not target.exists() or target.read_text(encoding="utf-8") != obj_text:
            atomic_write(target, obj_text)
    atomic_write(path, text)
    return path


def load(path: str | Path) -> Scene:
    path = Path(path)
    return loads(path.read_bytes(), base_dir=path.parent)
