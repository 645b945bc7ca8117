"""Why placements are settled before they are accepted.

A pillow modelled standing on its edge looks fine to a bounding-box planner, but it would
topple the moment a simulator touched it. The settle check drops it, sees it fall flat and
accepts the settled pose instead. A plank hanging off a table edge falls to the floor and
is rejected outright.
"""

import math

import numpy as np

from sage_forge.assets import build_asset
from sage_forge.geometry import quat_angle
from sage_forge.physics import check_stability, settle_object, validate_placement
from sage_forge.placement import CandidatePlacement
from sage_forge.primitives import box, merge
from sage_forge.scene import (
    FLOOR,
    FloorPlan,
    PhysicalAttributes,
    PlacementClass,
    Pose,
    Scene,
    SceneObject,
    SupportRelation,
    TriMesh,
    rect_room,
)


def obj(oid, mesh, position, cls=PlacementClass.ON_TOP):
    h = float(mesh.bounds[1][2] - mesh.bounds[0][2])
    return SceneObject(oid, f"a {oid}", oid, cls, Pose(position), mesh, PhysicalAttributes(h, 1.0))


def box_mesh(sx, sy, sz):
    return TriMesh(*merge([box(-sx / 2, sx / 2, -sy / 2, sy / 2, 0.0, sz)]))


def table_scene():
    s = Scene(FloorPlan((rect_room("room0", 0.0, 0.0, 4.0, 4.0),)))
    s.add(obj("table", box_mesh(1.0, 0.8, 0.75), (2.0, 2.0, 0.0), PlacementClass.FLOOR), SupportRelation("table", FLOOR))
    return s


def try_place(scene, o):
    cand = CandidatePlacement(o.id, o.pose, 0.0, True, SupportRelation(o.id, "table"))
    return validate_placement(scene, cand, o)


def main():
    pillow = obj("pillow", build_asset("a pillow", "pillow", 1)[0], (2.0, 2.0, 0.75))
    s = table_scene()
    s.add(pillow, SupportRelation("pillow", "table"))
    r = settle_object(s, "pillow")
    v = check_stability(r.pre_pose, r.post_pose)
    tilt = math.degrees(quat_angle(r.pre_pose.orientation, r.post_pose.orientation))
    print(f"pillow: moved {v.delta_translation:.3f} m and turned {tilt:.0f} deg in {r.iterations} steps -> "
          f"{'stable' if v.stable else 'unstable'} as placed")
    verdict = try_place(table_scene(), pillow)
    print(f"  placement verdict: {type(verdict).__name__}, adjusted={getattr(verdict, 'adjusted', None)}")
    print(f"  accepted pose rests at z = {np.round(verdict.pose.position[2], 3)}")

    plank = obj("plank", box_mesh(0.6, 0.1, 0.05), (2.75, 2.0, 0.75))
    verdict = try_place(table_scene(), plank)
    print(f"plank overhanging the edge by 0.55 m: {type(verdict).__name__} ({getattr(verdict, 'reason', '')})")

    mug = obj("mug", box_mesh(0.08, 0.08, 0.1), (2.0, 2.0, 0.75))
    verdict = try_place(table_scene(), mug)
    print(f"mug in the middle of the table: {type(verdict).__name__}, adjusted={verdict.adjusted}")


if __name__ == "__main__":
    main()
