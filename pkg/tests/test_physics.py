import math

import numpy as np
import pytest
from conftest import box_mesh, empty_scene, make_object, mesh_of, table_scene
from oracles import rect, stability_rule, support_polygon_stable

from sage_forge import primitives as P
from sage_forge.assets import build_asset
from sage_forge.geometry import quat_angle, quat_from_axis_angle, quat_from_yaw
from sage_forge.physics import (
    MAX_ITERATIONS,
    Accept,
    NoSupportBelow,
    Reject,
    batch_settle,
    check_stability,
    metrics_report,
    scene_collision_ratio,
    scene_stability_ratio,
    settle_object,
    validate_placement,
)
from sage_forge.placement import CandidatePlacement
from sage_forge.scene import FLOOR, WALL, PlacementClass, Pose, SupportRelation


def _on_table(obj_id, size, xy, yaw=0.0, mesh=None):
    s = table_scene()
    s.add(make_object(obj_id, size, (xy[0], xy[1], 0.75), quat_from_yaw(yaw), cls=PlacementClass.ON_TOP, mesh=mesh),
          SupportRelation(obj_id, "table"))
    return s


def test_check_stability_thresholds():
    p0 = Pose()
    assert check_stability(p0, p0).stable
    assert not check_stability(p0, Pose((0.25, 0, 0))).stable
    assert not check_stability(p0, Pose((0.1, 0, 0), quat_from_axis_angle((1, 0, 0), math.radians(10)))).stable
    v = check_stability(p0, Pose((0.2, 0, 0), quat_from_yaw(math.radians(7.99))))
    assert v.stable and v.delta_translation == pytest.approx(0.2)


def test_check_stability_matches_rule_on_random_pairs(rng):
    for _ in range(2000):
        a = Pose(tuple(rng.normal(size=3)), quat_from_axis_angle(rng.normal(size=3), rng.uniform(-3, 3)))
        dt = rng.uniform(0, 0.4)
        d = rng.normal(size=3)
        b_pos = np.add(a.position, d / np.linalg.norm(d) * dt)
        b = Pose(tuple(b_pos), quat_from_axis_angle(rng.normal(size=3), math.radians(rng.uniform(0, 16))))
        assert check_stability(a, b).stable == stability_rule(a.position, a.orientation, b.position, b.orientation)


def test_cube_on_floor_is_at_rest():
    s = empty_scene()
    s.add(make_object("c", (1, 1, 1), (2, 2, 0)), SupportRelation("c", FLOOR))
    r = settle_object(s, "c")
    assert r.converged and r.iterations == 1
    assert r.post_pose == r.pre_pose


def test_floating_cube_drops():
    s = empty_scene()
    s.add(make_object("c", (0.5, 0.5, 0.5), (2, 2, 0.1)), SupportRelation("c", FLOOR))
    r = settle_object(s, "c")
    assert r.post_pose.position[2] == pytest.approx(0.0, abs=1e-6)
    assert scene_stability_ratio(s) == 1.0  # a 0.1 m drop is within the translation threshold


def test_high_floating_object_is_unstable():
    s = empty_scene()
    s.add(make_object("c", (0.5, 0.5, 0.5), (2, 2, 0.5)), SupportRelation("c", FLOOR))
    s.add(make_object("d", (0.5, 0.5, 0.5), (1, 1, 0.0)), SupportRelation("d", FLOOR))
    assert scene_stability_ratio(s) == pytest.approx(0.5)


def test_box_overhanging_table_edge_tips():
    # Table top spans x in [1.5, 2.5]; a 0.4 m box with its COM 10 cm past the edge.
    assert not support_polygon_stable(rect(2.6, 2.0, 0.2, 0.2), rect(2.0, 2.0, 0.5, 0.4), (2.6, 2.0))
    s = _on_table("b", (0.4, 0.4, 0.2), (2.6, 2.0))
    r = settle_object(s, "b")
    assert check_stability(r.pre_pose, r.post_pose).delta_rotation >= 8


def test_settle_is_idempotent():
    s = _on_table("b", (0.4, 0.4, 0.2), (2.6, 2.0))
    r = settle_object(s, "b")
    r2 = settle_object(s, "b", r.post_pose)
    v = check_stability(r2.pre_pose, r2.post_pose)
    assert v.delta_translation < 1e-6 and v.delta_rotation < 1e-6


def test_iterations_capped():
    s = _on_table("b", (0.05, 0.3, 0.6), (2.45, 2.0))
    assert settle_object(s, "b").iterations <= MAX_ITERATIONS


def test_static_object_does_not_move():
    s = empty_scene()
    s.add(make_object("p", (0.04, 0.8, 0.6), (0.02, 2.0, 1.2), category="painting", cls=PlacementClass.WALL,
                      static=True), SupportRelation("p", WALL))
    r = settle_object(s, "p")
    assert r.post_pose == r.pre_pose


def test_no_support_below():
    s = empty_scene()
    s.add(make_object("c", (0.2, 0.2, 0.2), (9.0, 9.0, 0.0)), SupportRelation("c", FLOOR))
    with pytest.raises(NoSupportBelow):
        settle_object(s, "c")


def _pillow():
    # The pillow template stands on its rounded edge.
    return build_asset("a pillow", "pillow", 1)[0]


def test_upright_pillow_falls_flat_and_is_accepted_adjusted():
    s = table_scene(top=(1.0, 0.8))
    mesh = _pillow()
    obj = make_object("pillow", mesh=mesh, position=(2.0, 2.0, 0.75), cls=PlacementClass.ON_TOP)
    first = settle_object(_on_table("pillow", None, (2.0, 2.0), mesh=mesh), "pillow")
    assert math.degrees(quat_angle(first.pre_pose.orientation, first.post_pose.orientation)) >= 80
    cand = CandidatePlacement("pillow", obj.pose, 0.0, True, SupportRelation("pillow", "table"))
    verdict = validate_placement(s, cand, obj)
    assert isinstance(verdict, Accept) and verdict.adjusted
    assert verdict.pose == first.post_pose


def test_stable_cube_accepted_unchanged():
    s = table_scene()
    obj = make_object("c", (0.1, 0.1, 0.1), (2.0, 2.0, 0.75), cls=PlacementClass.ON_TOP)
    verdict = validate_placement(s, CandidatePlacement("c", obj.pose, 0.0, True, SupportRelation("c", "table")), obj)
    assert isinstance(verdict, Accept) and not verdict.adjusted and verdict.pose == obj.pose


def test_overhang_rejected():
    # A long plank mostly off the table: it tips off and ends up on the floor, not on its parent.
    s = table_scene()
    obj = make_object("plank", (0.6, 0.1, 0.05), (2.75, 2.0, 0.75), cls=PlacementClass.ON_TOP)
    assert not support_polygon_stable(rect(2.75, 2.0, 0.3, 0.05), rect(2.0, 2.0, 0.5, 0.4), (2.75, 2.0))
    verdict = validate_placement(s, CandidatePlacement("plank", obj.pose, 0.0, True,
                                                        SupportRelation("plank", "table")), obj)
    assert isinstance(verdict, Reject) and verdict.reason == "Unstable"


def test_collision_ratio_identical_cubes():
    s = empty_scene()
    for i, xy in enumerate([(1, 1), (1, 1), (3, 3), (3, 1)]):
        s.add(make_object(f"c{i}", (0.5, 0.5, 0.5), (*xy, 0)), SupportRelation(f"c{i}", FLOOR))
    rep = scene_collision_ratio(s)
    assert rep.collision_ratio == pytest.approx(0.5)
    assert rep.colliding_pairs == [("c0", "c1")]


def test_collision_ratio_half_meter_apart_and_disjoint():
    s = empty_scene()
    s.add(make_object("a", (1, 1, 1), (1.5, 2, 0)), SupportRelation("a", FLOOR))
    s.add(make_object("b", (1, 1, 1), (2.0, 2, 0)), SupportRelation("b", FLOOR))
    assert scene_collision_ratio(s).collision_ratio == 1.0
    s.objects["b"].pose = Pose((3.2, 2, 0))
    assert scene_collision_ratio(s).collision_ratio == 0.0


def test_resting_child_is_not_a_collision():
    s = _on_table("m", (0.1, 0.1, 0.1), (2.0, 2.0))
    assert scene_collision_ratio(s).collision_ratio == 0.0


def test_empty_scene_metrics():
    m = metrics_report(empty_scene())
    assert m["num_objects"] == 0 and m["collision_ratio"] == 0.0 and m["stability_ratio"] == 1.0


def test_batch_settle_removes_tipping_stack():
    s = empty_scene()
    s.add(make_object("ok", (0.5, 0.5, 0.5), (1, 1, 0)), SupportRelation("ok", FLOOR))
    # A tall thin slab leaning into a box: it tips and is pruned.
    lean = quat_from_axis_angle((0, 1, 0), math.radians(20))
    s.add(make_object("slab", (0.05, 0.4, 1.2), (3, 3, 0.0), lean), SupportRelation("slab", FLOOR))
    s.add(make_object("wall_art", (0.04, 0.8, 0.6), (0.02, 2.0, 1.2), cls=PlacementClass.WALL, static=True),
          SupportRelation("wall_art", WALL))
    out, removed = batch_settle(s)
    assert removed == ["slab"]
    assert set(out.objects) == {"ok", "wall_art"}
    assert out.objects["wall_art"].pose == s.objects["wall_art"].pose


def test_batch_settle_all_stable_is_identity():
    s = table_scene()
    out, removed = batch_settle(s)
    assert removed == [] and out.objects["table"].pose == s.objects["table"].pose


def test_settle_agrees_with_support_polygon_oracle(rng):
    agree = 0
    n = 150
    for i in range(n):
        hx, hy, h = rng.uniform(0.03, 0.15), rng.uniform(0.03, 0.15), rng.uniform(0.05, 0.3)
        cx = 2.5 + rng.uniform(-2 * hx, 2 * hx)
        yaw = rng.uniform(-math.pi, math.pi)
        cyl = i % 2 == 1
        mesh = mesh_of(P.cylinder(0, 0, hx, 0, h, segments=24)) if cyl else box_mesh(2 * hx, 2 * hy, h)
        s = _on_table("o", None, (cx, 2.0), yaw, mesh=mesh)
        foot = rect(cx, 2.0, hx, hy, yaw) if not cyl else rect(cx, 2.0, hx, hx).centroid.buffer(hx, 24)
        expect = support_polygon_stable(foot, rect(2.0, 2.0, 0.5, 0.4), (cx, 2.0))
        r = settle_object(s, "o")
        agree += check_stability(r.pre_pose, r.post_pose).stable == expect
    assert agree / n >= 0.97
