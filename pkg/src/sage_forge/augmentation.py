"""Scene variants around the task objects: new poses, new assets of the same category, new surroundings."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import physics
from .assets import build_asset, derive_seed, estimate_physical_attributes, perturb_description
from .geometry import Obb
from .orchestrator import Budget, run_generation
from .placement import FLOOR_RESOLUTION, SURFACE_RESOLUTION, Constraint, PlacementRequest, parse_constraints, plan_placements
from .scene import SENTINELS, PlacementClass, Scene, validate_scene
from .scene_io import atomic_write, dumps, save

log = logging.getLogger(__name__)

LEVELS = ("configuration", "category", "layout")
MAX_COLLISION = 0.01
MIN_STABILITY = 0.99
MAX_RESEEDS = 5


class NoTaskObjects(ValueError):
    pass


@dataclass
class Variant:
    level: str
    index: int
    seed: int
    scene: Scene | None
    metrics: dict
    passed: bool
    reason: str = ""


def task_object_ids(scene: Scene, required: bool = False) -> list[str]:
    ids = sorted(oid for oid, o in scene.objects.items() if o.task_relevant)
    if required and not ids:
        raise NoTaskObjects("the scene has no task-relevant objects")
    return ids


def _identity(level: str, index: int, seed: int, base: Scene) -> Variant:
    ok, m, why = simulation_ready(base)
    return Variant(level, index, seed, base.copy() if ok else None, m, ok, why)


def simulation_ready(scene: Scene) -> tuple[bool, dict, str]:
    """A variant is kept when it is well formed, collision-free and stable."""
    if validate_scene(scene):
        return False, {}, "InvalidScene"
    m = physics.metrics_report(scene)
    if m["collision_ratio"] > MAX_COLLISION:
        return False, m, "Collision"
    if m["stability_ratio"] < MIN_STABILITY:
        return False, m, "Unstable"
    return True, m, ""


def _moving_set(scene: Scene, ids: list[str]) -> list[str]:
    out = []
    for oid in ids:
        for x in [oid, *scene.descendants(oid)]:
            if x not in out:
                out.append(x)
    return out


def _requests(scene: Scene, objs, pin_parent: bool) -> list[PlacementRequest]:
    """Re-placement requests; OnTop objects keep their current parent when pinned or unconstrained."""
    reqs = []
    for o in objs:
        cons = parse_constraints(o.constraints)
        parent = scene.supports[o.id].parent_id
        if o.placement_class == PlacementClass.ON_TOP and parent not in SENTINELS:
            if pin_parent or not any(c.kind == "on" for c in cons):
                cons = tuple(c for c in cons if c.kind != "on") + (Constraint("on", parent),)
        reqs.append(PlacementRequest(o, o.placement_class, cons))
    return reqs


def _finish(level: str, index: int, seed: int, plan) -> Variant:
    if plan.unplaced:
        return Variant(level, index, seed, None, {}, False, f"Unplaced({plan.unplaced[0][1]})")
    out, removed = physics.batch_settle(plan.scene)
    if removed:
        return Variant(level, index, seed, None, {}, False, "Unstable")
    ok, m, why = simulation_ready(out)
    return Variant(level, index, seed, out if ok else None, m, ok, why)


def configuration_variant(base: Scene, index: int, seed: int) -> Variant:
    """Resample the poses of the task objects (and whatever rests on them)."""
    ids = _moving_set(base, task_object_ids(base))
    if not ids:
        return _identity("configuration", index, seed, base)
    work = base.copy()
    objs = [work.objects[i] for i in ids]
    reqs = _requests(base, objs, pin_parent=False)
    for i in ids:
        work.objects.pop(i, None)
        work.supports.pop(i, None)
    plan = plan_placements(work, reqs, shuffle_seed=derive_seed(seed, "configuration", index))
    return _finish("configuration", index, seed, plan)


def category_variant(base: Scene, index: int, seed: int) -> Variant:
    """Swap each task object for a freshly built asset of the same category; support parents are kept."""
    task_ids = task_object_ids(base)
    if not task_ids:
        return _identity("category", index, seed, base)
    ids = _moving_set(base, task_ids)
    work = base.copy()
    objs = []
    for i in ids:
        o = work.objects[i]
        if i in task_ids:
            s = derive_seed(seed, "category", index, i)
            desc = perturb_description(o.description, o.category, s)
            if desc == o.description:  # nothing to perturb: keep the asset as is
                objs.append(o)
                continue
            mesh, h = build_asset(desc, o.category, s)
            lo, hi = mesh.bounds
            box = Obb(tuple((lo + hi) / 2), tuple(float(max(v, 1e-6)) for v in (hi - lo) / 2))
            attrs = replace(estimate_physical_attributes(o.category, box, s), height=h, static=o.attrs.static)
            o = replace(o, description=desc, mesh=mesh, attrs=attrs)
        objs.append(o)
    reqs = _requests(base, objs, pin_parent=True)
    for i in ids:
        work.objects.pop(i, None)
        work.supports.pop(i, None)
    plan = plan_placements(work, reqs, shuffle_seed=derive_seed(seed, "category", index))
    return _finish("category", index, seed, plan)


def layout_variant(base: Scene, index: int, seed: int, budget: Budget | None = None) -> Variant:
    """Keep the task objects' assets and regenerate the room around them."""
    kept = base.copy()
    keep_ids = set(task_object_ids(base, required=True))
    for oid in list(kept.objects):
        if oid not in keep_ids:
            kept.objects.pop(oid)
            kept.supports.pop(oid)
    text, meshes = dumps(kept)
    new_seed = derive_seed(seed, "layout", index) & 0x7FFFFFFF
    prompt = base.task.prompt if base.task else ""
    room_types = base.task.room_types if base.task else ()
    res = run_generation(prompt, new_seed, budget=budget, room_types=room_types,
                         keep={"scene": text, "meshes": meshes})
    missing = keep_ids - set(res.scene.objects)
    if missing:
        return Variant("layout", index, seed, None, res.metrics, False, f"LostTaskObjects({len(missing)})")
    ok, m, why = simulation_ready(res.scene)
    return Variant("layout", index, seed, res.scene if ok else None, m, ok, why)


_MAKERS = {"configuration": configuration_variant, "category": category_variant, "layout": layout_variant}


def make_variant(base: Scene, level: str, index: int, seed: int) -> Variant:
    if level not in _MAKERS:
        raise ValueError(f"unknown augmentation level {level!r}")
    return _MAKERS[level](base, index, seed)


def _make_packed(args) -> Variant:
    return make_variant(*args)


def _too_close(a: Scene, b: Scene, ids: list[str]) -> bool:
    """True when no task object differs by a full placement-grid cell between the two scenes."""
    for i in ids:
        if i not in a.objects or i not in b.objects:
            return False
        cell = SURFACE_RESOLUTION if a.objects[i].placement_class == PlacementClass.ON_TOP else FLOOR_RESOLUTION
        pa, pb = np.asarray(a.objects[i].pose.position), np.asarray(b.objects[i].pose.position)
        if np.max(np.abs(pa - pb)) >= cell - 1e-9:
            return False
    return True


def augment(base: Scene, levels=LEVELS, count: int = 5, seed: int = 0, jobs: int = 1) -> list[Variant]:
    """``count`` variants per level; variants are independent, so ``jobs`` > 1 runs them in worker processes.
    A configuration variant within a grid cell of an earlier one is regenerated with a new seed."""
    for level in levels:
        if level not in _MAKERS:
            raise ValueError(f"unknown augmentation level {level!r}")
    if "layout" in levels:
        task_object_ids(base, required=True)
    work = [(base, level, k, seed) for level in levels for k in range(count)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_make_packed, work))
    else:
        out = [_make_packed(w) for w in work]
    ids = task_object_ids(base)
    if ids:
        kept: list[Scene] = []
        for n, v in enumerate(out):
            if v.level != "configuration" or v.scene is None:
                continue
            for attempt in range(1, MAX_RESEEDS + 1):
                if v.scene is None or not any(_too_close(v.scene, k, ids) for k in kept):
                    break
                v = configuration_variant(base, v.index, derive_seed(seed, "reseed", v.index, attempt) & 0x7FFFFFFF)
            if v.scene is not None and any(_too_close(v.scene, k, ids) for k in kept):
                v = replace(v, scene=None, passed=False, reason="Duplicate")
            if v.scene is not None:
                kept.append(v.scene)
            out[n] = v
    for v in out:
        log.info("%s variant %d: %s", v.level, v.index, "ok" if v.passed else v.reason)
    return out


def scene_hash(scene: Scene) -> str:
    return hashlib.sha256(dumps(scene)[0].encode("utf-8")).hexdigest()


def write_variants(variants: list[Variant], out_dir: str | Path, base: Scene | None = None) -> Path:
    """One scene folder per passing variant plus a manifest covering all of them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for v in variants:
        entry = {"level": v.level, "index": v.index, "seed": v.seed, "passed": v.passed, "reason": v.reason,
                 "metrics": {k: v.metrics[k] for k in ("num_objects", "collision_ratio", "stability_ratio")
                             if k in v.metrics}}
        if v.scene is not None:
            rel = f"{v.level}_{v.index:02d}/scene.json"
            save(v.scene, out_dir / rel)
            entry["path"] = rel
        entries.append(entry)
    path = out_dir / "manifest.json"
    doc = {"variants": entries}
    if base is not None:
        doc["parent"] = scene_hash(base)
    atomic_write(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path
