import json
from itertools import combinations

import numpy as np
import pytest
from conftest import table_scene

from sage_forge import augmentation
from sage_forge.assets import default_attribute_table
from sage_forge.augmentation import NoTaskObjects, augment, layout_variant, scene_hash, write_variants
from sage_forge.orchestrator import run_generation
from sage_forge.placement import SURFACE_RESOLUTION
from sage_forge.scene_io import dumps


@pytest.fixture(scope="module")
def base():
    return run_generation("a bedroom with a mug on the nightstand", 1).scene


def _mug(scene):
    return next(o for o in scene.objects.values() if o.category == "mug" and o.task_relevant)


def test_configuration_variants_are_distinct_and_stable(base):
    vs = augment(base, ("configuration",), 5, seed=3)
    assert len(vs) == 5 and all(v.passed for v in vs)
    poses = [np.asarray(_mug(v.scene).pose.position) for v in vs]
    for a, b in combinations(poses, 2):
        assert np.max(np.abs(a - b)) >= SURFACE_RESOLUTION - 1e-9
    moved = {x for oid, o in base.objects.items() if o.task_relevant for x in [oid, *base.descendants(oid)]}
    for v in vs:
        assert v.metrics["stability_ratio"] == 1.0 and v.metrics["collision_ratio"] == 0.0
        assert v.scene.objects[v.scene.supports[_mug(base).id].parent_id].category == "nightstand"
        for oid, o in base.objects.items():
            if oid not in moved:
                assert v.scene.objects[oid].pose == o.pose  # background untouched


def test_configuration_is_deterministic(base):
    a = [dumps(v.scene) for v in augment(base, ("configuration",), 2, seed=4)]
    b = [dumps(v.scene) for v in augment(base, ("configuration",), 2, seed=4)]
    assert a == b


def test_category_variant_keeps_category_and_parent(base):
    mug = _mug(base)
    lo, hi = default_attribute_table()["mug"]["height"]
    for v in augment(base, ("category",), 3, seed=5):
        assert v.passed
        new = v.scene.objects[mug.id]
        assert new.category == "mug" and new.description != mug.description
        assert v.scene.supports[mug.id].parent_id == base.supports[mug.id].parent_id
        assert lo - 1e-6 <= 2 * new.obb.half_extents[2] <= hi + 1e-6


def test_layout_variants_keep_task_assets_and_differ(base):
    mug = _mug(base)
    vs = [layout_variant(base, k, seed=1) for k in range(3)]
    assert all(v.passed for v in vs)
    for v in vs:
        assert v.scene.objects[mug.id].mesh == mug.mesh
        assert v.scene.objects[mug.id].category == "mug"
    texts = [dumps(v.scene)[0] for v in vs]
    assert len(set(texts)) == 3


def test_no_task_objects():
    s = table_scene()
    vs = augment(s, ("configuration", "category"), 2)
    assert all(v.passed and dumps(v.scene) == dumps(s) for v in vs)
    with pytest.raises(NoTaskObjects):
        augment(s, ("layout",), 1)


def test_unknown_level():
    with pytest.raises(ValueError):
        augment(table_scene(), ("texture",), 1)


def test_manifest_lists_variants_and_parent(base, tmp_path):
    vs = augment(base, ("configuration",), 2, seed=6)
    path = write_variants(vs, tmp_path, base)
    doc = json.loads(path.read_text())
    assert doc["parent"] == scene_hash(base)
    assert [e["index"] for e in doc["variants"]] == [0, 1]
    for e in doc["variants"]:
        assert (tmp_path / e["path"]).exists()


def test_simulation_ready_rejects_collisions():
    s = table_scene()
    o = s.objects["table"]
    from dataclasses import replace

    from sage_forge.scene import FLOOR, SupportRelation

    s.add(replace(o, id="t2"), SupportRelation("t2", FLOOR))
    ok, m, why = augmentation.simulation_ready(s)
    assert not ok and why == "Collision"
