import math

import pytest
from conftest import make_object

from sage_forge.protocol import InProcessClient, ToolCallError
from sage_forge.scene import FLOOR, PlacementClass, SupportRelation, validate_scene
from sage_forge.scene_io import dumps
from sage_forge.tools import build_server, room_size


def _client(prompt="a bedroom", seed=1, **kw):
    c = InProcessClient(build_server())
    return c, c.call("scene_init", {"prompt": prompt, "seed": seed, **kw})


def _place(c, *reqs):
    return c.call("asset_place", {"requests": [
        {"key": f"k{i}", "description": f"a {cat}", "category": cat, "constraints": cons}
        for i, (cat, cons) in enumerate(reqs)
    ]})


def _scene(c):
    return c.server.session().scene


def test_bedroom_init_proposes_template_furniture():
    _, out = _client()
    assert len(out["rooms"]) == 1 and out["doors"] == []
    x0, y0, x1, y1 = out["rooms"][0]["bounds"]
    assert 3.0 <= x1 - x0 <= 4.5 and 3.0 <= y1 - y0 <= 4.5
    cats = {o["category"] for o in out["required"] + out["furnishings"]}
    assert {"bed", "nightstand", "wardrobe"} <= cats


def test_room_size_is_deterministic_per_seed():
    assert room_size("bedroom", 4, 0) == room_size("bedroom", 4, 0)
    assert all(3.0 <= v <= 4.5 for v in room_size("bedroom", 4, 0))


def test_task_objects_are_required():
    _, out = _client("pick an apple and place it to a bowl")
    req = {o["category"] for o in out["required"] if o.get("task_relevant")}
    assert {"apple", "bowl"} <= req


def test_two_room_plan_has_one_door_on_shared_wall():
    c, out = _client("a kitchen and a living room")
    assert len(out["rooms"]) == 2 and len(out["doors"]) == 1
    shared_x = out["rooms"][0]["bounds"][2]
    (a, b) = out["doors"][0]["segment"]
    assert a[0] == b[0] == pytest.approx(shared_x)
    assert validate_scene(_scene(c)) == []


def test_place_then_remove_resettles_children():
    c, _ = _client(room_sizes=[[4.0, 4.0]])
    out = _place(c, ("desk", ""), ("table lamp", "on(desk)"))
    assert not out["failed"]
    ids = {p["category"]: p["id"] for p in out["placed"]}
    assert _scene(c).supports[ids["table lamp"]].parent_id == ids["desk"]
    res = c.call("asset_remove", {"targets": [ids["desk"]]})
    assert ids["desk"] in res["removed"]
    s = _scene(c)
    if ids["table lamp"] in s.objects:  # the lamp dropped onto the floor
        assert ids["table lamp"] in res["resettled"] and s.supports[ids["table lamp"]].parent_id == FLOOR


def test_remove_by_category_phrase():
    c, _ = _client(room_sizes=[[4.0, 4.0]])
    _place(c, ("floor lamp", ""))
    c.call("asset_remove", {"targets": ["the floor lamp"]})
    assert not _scene(c).by_category("floor lamp")


def test_ambiguous_remove_lists_candidates():
    c, _ = _client(room_sizes=[[4.0, 4.0]])
    out = _place(c, ("chair", ""), ("chair", ""), ("chair", ""))
    with pytest.raises(ToolCallError) as err:
        c.call("asset_remove", {"targets": ["the chair"]})
    assert err.value.kind == "ObjectNotFound"
    assert sorted(err.value.data["candidates"]) == sorted(p["id"] for p in out["placed"])


def test_move_onto_covered_table_fails_and_restores():
    c, _ = _client(room_sizes=[[4.0, 4.0]])
    s = _scene(c)
    s.add(make_object("t1", (1.0, 0.8, 0.75), (1.0, 1.0, 0.0), category="table"), SupportRelation("t1", FLOOR))
    s.add(make_object("t2", (1.0, 0.8, 0.75), (3.0, 3.0, 0.0), category="table"), SupportRelation("t2", FLOOR))
    s.add(make_object("cover", (1.0, 0.8, 0.3), (3.0, 3.0, 0.75), cls=PlacementClass.ON_TOP, category="box"),
          SupportRelation("cover", "t2"))
    s.add(make_object("mug", (0.08, 0.08, 0.1), (1.0, 1.0, 0.75), cls=PlacementClass.ON_TOP, category="mug"),
          SupportRelation("mug", "t1"))
    before = dumps(s)
    with pytest.raises(ToolCallError) as err:
        c.call("asset_move", {"target": "mug", "constraints": "on(t2)"})
    assert err.value.kind == "MoveFailed" and err.value.data["restored"]
    assert dumps(_scene(c)) == before


def test_move_carries_children():
    c, _ = _client(room_sizes=[[4.0, 4.0]])
    s = _scene(c)
    s.add(make_object("t1", (1.0, 0.8, 0.75), (1.0, 1.0, 0.0), category="table"), SupportRelation("t1", FLOOR))
    s.add(make_object("mug", (0.08, 0.08, 0.1), (1.1, 1.0, 0.75), cls=PlacementClass.ON_TOP, category="mug"),
          SupportRelation("mug", "t1"))
    out = c.call("asset_move", {"target": "t1", "constraints": "corner"})
    assert out["carried"] == ["mug"]
    t, m = _scene(c).objects["t1"].pose, _scene(c).objects["mug"].pose
    assert math.dist(t.position[:2], m.position[:2]) == pytest.approx(0.1)
    assert m.position[2] == pytest.approx(0.75)


def test_physics_report_and_metrics():
    c, _ = _client(room_sizes=[[4.0, 4.0]])
    _place(c, ("desk", ""), ("mug", "on(desk)"))
    rep = c.call("physics_critic")
    assert rep["collision_ratio"] == 0.0 and rep["stability_ratio"] == 1.0 and rep["offenders"] == []
    assert c.call("scene_metrics")["num_objects"] == 2


def test_unknown_category_is_reported_per_key():
    c, _ = _client(room_sizes=[[4.0, 4.0]])
    out = _place(c, ("flux capacitor", ""))
    assert out["failed"] == [{"key": "k0", "reason": "UnknownCategory"}]
