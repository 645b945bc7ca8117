import math

import pytest
from conftest import box_mesh, make_object, mesh_of

from sage_forge import primitives as P
from sage_forge.geometry import quat_from_yaw
from sage_forge.surfaces import extract_support_surfaces, world_surfaces


def test_box_has_one_top_surface():
    s = extract_support_surfaces(box_mesh(1.0, 0.8, 0.75))
    assert len(s) == 1
    assert s[0].height == pytest.approx(0.75)
    assert s[0].area == pytest.approx(0.8)


def test_sphere_has_no_surface():
    assert extract_support_surfaces(mesh_of(P.uv_sphere(0, 0, 0.5, 0.5))) == []


def test_small_top_discarded():
    assert extract_support_surfaces(box_mesh(0.04, 0.04, 0.3)) == []  # 16 cm^2 < 25 cm^2


def test_covered_shelf_has_clearance():
    # Two slabs: the lower one is fully covered 0.3 m above.
    m = mesh_of(P.box(-0.5, 0.5, -0.2, 0.2, 0.0, 0.1), P.box(-0.5, 0.5, -0.2, 0.2, 0.4, 0.5),
                P.box(-0.5, -0.45, -0.2, 0.2, 0.1, 0.4))
    s = extract_support_surfaces(m)
    assert [round(x.height, 3) for x in s] == [0.1, 0.5]
    assert s[0].clearance == pytest.approx(0.3)
    assert math.isinf(s[1].clearance)


def test_world_surfaces_follow_pose():
    o = make_object("t", (1.0, 0.5, 0.7), (2.0, 3.0, 0.1), quat_from_yaw(math.pi / 2))
    (s,) = world_surfaces(o)
    assert s.height == pytest.approx(0.8)
    x0, y0, x1, y1 = s.polygon.bounds
    assert (x0, x1) == pytest.approx((1.75, 2.25))
    assert (y0, y1) == pytest.approx((2.5, 3.5))
