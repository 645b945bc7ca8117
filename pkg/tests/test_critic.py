from collections import Counter

import numpy as np
import pytest
from conftest import empty_scene, make_object, table_scene

from sage_forge.critic import (
    CombinationRule,
    check_task_objects,
    critique,
    floor_coverage,
    load_rules,
)
from sage_forge.geometry import quat_from_yaw
from sage_forge.render import SIZE, occupied_pixels, render_top_down, render_views, top_down_transform
from sage_forge.scene import FLOOR, RequiredObject, SupportRelation, TaskSpec
from sage_forge.tasks import is_manipulation, parse_room_types, parse_task


def _task(*cats):
    return TaskSpec("t", ("bedroom",), tuple(RequiredObject(f"a {c}", c) for c in cats))


def _with(scene, oid, cat, size=(0.3, 0.3, 0.3), xy=(1.0, 1.0)):
    scene.add(make_object(oid, size, (*xy, 0.0), category=cat), SupportRelation(oid, FLOOR))
    return scene


def test_check_task_objects_multiset():
    s = _with(empty_scene(), "b", "bowl")
    assert check_task_objects(s, _task("mug", "bowl")) == ["mug"]
    assert check_task_objects(_with(s, "m", "mug", xy=(2, 2)), _task("mug", "bowl")) == []
    # Two mugs required, one present: one still missing (oracle: Counter difference).
    need = Counter(["mug", "mug", "bowl"])
    have = Counter(o.category for o in s.objects.values())
    assert check_task_objects(s, _task("mug", "mug", "bowl")) == list((need - have).elements())


def test_missing_task_object_is_added():
    s = table_scene()
    fb = critique(s, _task("mug"))
    assert any(a.category == "mug" for a in fb.add)
    assert not fb.satisfied


def test_dining_table_wants_two_chairs():
    s = _with(empty_scene(), "dt", "dining table", (1.6, 0.9, 0.75), (2.0, 2.0))
    fb = critique(s, _task())
    chairs = [a for a in fb.add if a.category == "chair"]
    assert len(chairs) == 2
    assert all("near(dt" in a.constraints for a in chairs)


def test_low_coverage_adds_background_decor():
    s = _with(empty_scene(5.0, 5.0), "b", "box", (1.0, 1.0, 0.5))  # 4% of the floor
    assert floor_coverage(s, "room0") == pytest.approx(0.04)
    fb = critique(s, _task())
    assert {a.category for a in fb.add} & {"potted plant", "floor plant", "basket"}


def test_duplicate_bed_removed():
    s = _with(_with(empty_scene(), "b1", "bed", (1, 2, 0.5), (1, 1.5)), "b2", "bed", (1, 2, 0.5), (3, 1.5))
    assert critique(s, _task()).remove == ["b2"]


def test_feedback_is_deterministic_and_refers_to_existing_ids():
    s = _with(_with(empty_scene(), "dt", "dining table", (1.6, 0.9, 0.75), (2.0, 2.0)), "b2", "bed", (1, 2, 0.5), (3, 1))
    a, b = critique(s, _task("mug")), critique(s, _task("mug"))
    assert a.to_dict() == b.to_dict()
    assert set(a.remove) <= set(s.objects) and {m.object_id for m in a.move} <= set(s.objects)


def test_satisfied_implies_no_missing_objects():
    s = _with(empty_scene(2.0, 2.0), "big", "rug", (1.8, 1.8, 0.01), (1.0, 1.0))
    fb = critique(s, TaskSpec("t", ("generic",), ()))
    assert fb.satisfied
    assert check_task_objects(s, TaskSpec("t", ("generic",), ())) == []


def test_rule_config_ships_25_rules_and_rejects_self_rule():
    assert len(load_rules().rules) == 25
    with pytest.raises(ValueError):
        CombinationRule("chair", "chair", 1, "near", "x", "")


def test_parse_task_named_objects():
    t = parse_task("pick an apple and place it to a bowl")
    assert {r.category for r in t.required_objects} >= {"apple", "bowl"}
    assert is_manipulation("pick an apple and place it to a bowl")
    t = parse_task("a bedroom with a mug on the nightstand")
    assert t.room_types == ("bedroom",)
    mug = next(r for r in t.required_objects if r.category == "mug")
    assert mug.constraints == "on(nightstand)"
    assert parse_room_types("a kitchen and a living room") == ("kitchen", "living room")


def test_manipulation_prompt_without_objects_is_rejected():
    with pytest.raises(ValueError):
        parse_task("pick it up and put it down")


def test_empty_room_render_is_floor_with_wall_border():
    s = empty_scene()
    img = np.asarray(render_top_down(s))
    assert img.shape == (SIZE, SIZE, 3)
    scale, _ = top_down_transform(s)
    mid = img[SIZE // 2 - 50: SIZE // 2 + 50, SIZE // 2 - 50: SIZE // 2 + 50].reshape(-1, 3)
    assert len(np.unique(mid, axis=0)) == 1
    assert tuple(mid[0]) == s.plan.rooms[0].floor_color
    edge = img[SIZE // 2, int(SIZE / 2 - 2.0 * scale)]
    assert tuple(edge) == s.plan.rooms[0].wall_color


@pytest.mark.parametrize("yaw", [0.0, 0.5])
def test_table_pixel_area_matches_footprint(yaw):
    s = empty_scene()
    s.add(make_object("t", (1.2, 0.8, 0.75), (2.0, 2.0, 0.0), quat_from_yaw(yaw), category="table"),
          SupportRelation("t", FLOOR))
    scale, _ = top_down_transform(s)
    expect = 1.2 * 0.8 * scale * scale
    assert occupied_pixels(render_top_down(s)) == pytest.approx(expect, rel=0.05)


def test_views_are_deterministic():
    s = table_scene()
    a = [im.tobytes() for im in render_views(s)]
    b = [im.tobytes() for im in render_views(s)]
    assert len(a) == 5 and a == b
