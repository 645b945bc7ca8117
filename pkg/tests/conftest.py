import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sage_forge import primitives as P  # noqa: E402
from sage_forge.scene import (  # noqa: E402
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

ACCEPTANCE_LINES: dict[int, str] = {}


def mesh_of(*parts) -> TriMesh:
    v, f = P.merge(list(parts))
    return TriMesh(v, f)


def box_mesh(sx, sy, sz) -> TriMesh:
    return mesh_of(P.box(-sx / 2, sx / 2, -sy / 2, sy / 2, 0.0, sz))


def make_object(oid, size=(0.5, 0.5, 0.5), position=(0.0, 0.0, 0.0), orientation=(1.0, 0.0, 0.0, 0.0),
                category="box", cls=PlacementClass.FLOOR, mesh=None, static=False, **kw) -> SceneObject:
    mesh = mesh or box_mesh(*size)
    h = float(mesh.bounds[1][2] - mesh.bounds[0][2])
    return SceneObject(oid, f"a {category}", category, cls, Pose(position, orientation), mesh,
                       PhysicalAttributes(h, 1.0, static=static), **kw)


def empty_scene(w=4.0, d=4.0, seed=0) -> Scene:
    return Scene(FloorPlan((rect_room("room0", 0.0, 0.0, w, d),)), seed=seed)


def table_scene(top=(1.0, 0.8), height=0.75) -> Scene:
    """4x4 m room with a box table centred at (2, 2)."""
    scene = empty_scene()
    scene.add(make_object("table", (top[0], top[1], height), (2.0, 2.0, 0.0), category="table"),
              SupportRelation("table", FLOOR))
    return scene


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def record_acceptance():
    def record(n: int, ok: bool, detail: str):
        ACCEPTANCE_LINES[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(ACCEPTANCE_LINES[n])

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
