import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sage_forge.geometry import (
    Obb,
    obb_collide,
    obb_penetration,
    point_rect_distance,
    quat_angle,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_from_yaw,
    quat_mul,
    quat_to_matrix,
    tilt_of,
    tris_box_intersect,
    wrap_angle,
    yaw_of,
)


def test_quat_matrix_roundtrip(rng):
    for _ in range(100):
        axis = rng.normal(size=3)
        q = quat_from_axis_angle(axis, rng.uniform(-math.pi, math.pi))
        q2 = quat_from_matrix(quat_to_matrix(q))
        assert quat_angle(q, q2) < 1e-6


def test_quat_mul_composes_rotations():
    a = quat_from_yaw(0.3)
    b = quat_from_yaw(0.4)
    assert yaw_of(quat_mul(a, b)) == pytest.approx(0.7)
    m = quat_to_matrix(quat_mul(a, b))
    assert np.allclose(m, quat_to_matrix(a) @ quat_to_matrix(b))


def test_angles():
    assert quat_angle(quat_from_yaw(0.0), quat_from_yaw(math.radians(10))) == pytest.approx(math.radians(10))
    assert tilt_of(quat_from_axis_angle((1, 0, 0), math.radians(30))) == pytest.approx(math.radians(30))
    assert tilt_of(quat_from_yaw(1.0)) == pytest.approx(0.0, abs=1e-9)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi) or wrap_angle(3 * math.pi) == pytest.approx(-math.pi)


def test_obb_rejects_flat_box():
    with pytest.raises(ValueError):
        Obb((0, 0, 0), (1, 0, 1))


def test_unit_cubes_half_meter_apart_collide():
    a = Obb((0, 0, 0.5), (0.5, 0.5, 0.5))
    b = Obb((0.5, 0, 0.5), (0.5, 0.5, 0.5))
    assert obb_penetration(a, b) == pytest.approx(0.5)
    assert obb_collide(a, b)


def test_touching_boxes_within_tolerance():
    a = Obb((0, 0, 0.5), (0.5, 0.5, 0.5))
    b = Obb((0.997, 0, 0.5), (0.5, 0.5, 0.5))  # 3 mm overlap < 5 mm tolerance
    assert not obb_collide(a, b)
    c = Obb((0.99, 0, 0.5), (0.5, 0.5, 0.5))
    assert obb_collide(a, c)


def test_rotated_box_separated_by_diagonal_axis():
    a = Obb((0, 0, 0), (0.5, 0.5, 0.5))
    b = Obb((1.2, 0, 0), (0.5, 0.5, 0.5), quat_from_yaw(math.pi / 4))
    # Rotated cube reaches sqrt(2)/2 = 0.707 toward a, a reaches 0.5: 1.207 > 1.2.
    assert obb_penetration(a, b) == pytest.approx(0.5 + math.sqrt(0.5) - 1.2, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi))
def test_sat_agrees_with_point_sampling(x, y, yaw):
    """If any sample point lies deep inside both boxes, SAT must report overlap."""
    a = Obb((0, 0, 0), (1.0, 0.5, 0.5))
    b = Obb((x, y, 0), (0.6, 0.3, 0.5), quat_from_yaw(yaw))
    g = np.stack(np.meshgrid(np.linspace(-1, 1, 21), np.linspace(-0.5, 0.5, 11), [0.0]), -1).reshape(-1, 3)
    shared = b.contains(g, tol=-0.02).any()
    if shared:
        assert obb_penetration(a, b) > 0


def test_obb_aabb_half_widths_at_45_degrees():
    b = Obb((0, 0, 0.5), (0.5, 0.5, 0.5), quat_from_yaw(math.pi / 4))
    assert b.aabb_half_widths()[0] == pytest.approx(math.sqrt(2) / 2)


def test_point_rect_distance():
    d = point_rect_distance(np.array([[0, 0], [1.5, 0], [1.5, 1.5]]), (0, 0), 0.0, (0.5, 0.5))
    assert np.allclose(d, [0.0, 1.0, math.sqrt(2)])


def test_tris_box_intersect():
    box = Obb((0, 0, 0), (0.5, 0.5, 0.5))
    inside = np.array([[[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0]]], dtype=float)
    outside = inside + 2.0
    crossing = np.array([[[-2, 0, 0], [2, 0.1, 0], [2, -0.1, 0]]], dtype=float)
    assert tris_box_intersect(inside, box)
    assert not tris_box_intersect(outside, box)
    assert tris_box_intersect(crossing, box)
