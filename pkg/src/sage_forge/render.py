"""Deterministic 512x512 rasterizations: one top-down view and four corner axonometric views."""

from __future__ import annotations

import hashlib
import math

import numpy as np
from PIL import Image, ImageDraw

from .scene import PlacementClass, Scene, world_obb

SIZE = 512
MARGIN = 0.2
BACKGROUND = (40, 40, 44)
WALL_PX = 4
OBJECT_COLOR = (200, 70, 60)


def _category_color(category: str) -> tuple[int, int, int]:
    h = hashlib.sha1(category.encode("utf-8")).digest()
    return (80 + h[0] % 150, 80 + h[1] % 150, 80 + h[2] % 150)


def top_down_transform(scene: Scene):
    """(scale px/m, offset) mapping world xy to pixel coordinates (y up in world, down in image)."""
    x0, y0, x1, y1 = scene.plan.bounds
    span = max(x1 - x0, y1 - y0) + 2 * MARGIN
    scale = SIZE / span
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    return scale, (cx, cy)


def _to_px(xy, scale, center):
    xy = np.asarray(xy, dtype=float)
    px = (xy[..., 0] - center[0]) * scale + SIZE / 2
    py = SIZE / 2 - (xy[..., 1] - center[1]) * scale
    return np.stack([px, py], axis=-1)


def render_top_down(scene: Scene, object_color: tuple[int, int, int] | None = OBJECT_COLOR) -> Image.Image:
    img = Image.new("RGB", (SIZE, SIZE), BACKGROUND)
    draw = ImageDraw.Draw(img)
    scale, center = top_down_transform(scene)
    for room in scene.plan.rooms:
        poly = [tuple(p) for p in _to_px(room.polygon, scale, center)]
        draw.polygon(poly, fill=tuple(room.floor_color), outline=tuple(room.wall_color), width=WALL_PX)
    for door in scene.plan.doors:
        seg = [tuple(p) for p in _to_px(door.segment, scale, center)]
        draw.line(seg, fill=(250, 250, 250), width=WALL_PX)
    # Lower objects first so that items on top stay visible.
    for obj in sorted(scene.objects.values(), key=lambda o: (world_obb(o).center[2], o.id)):
        if obj.placement_class == PlacementClass.WALL:
            continue
        foot = [tuple(p) for p in _to_px(world_obb(obj).footprint(), scale, center)]
        if object_color is None:
            # Height map: brighter means taller.
            v = int(np.clip(70 + 180 * world_obb(obj).corners()[:, 2].max() / 2.5, 0, 255))
            color = (v, v, min(255, v + 10))
        else:
            color = object_color
        draw.polygon(foot, fill=color)
    return img


def _view_matrix(azimuth: float, elevation: float) -> np.ndarray:
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    ce, se = math.cos(elevation), math.sin(elevation)
    right = np.array([-sa, ca, 0.0])
    forward = np.array([ce * ca, ce * sa, se])  # from scene toward camera
    up = np.cross(forward, right)
    return np.stack([right, up, forward])


_BOX_FACES = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]


def render_corner(scene: Scene, corner: int) -> Image.Image:
    img = Image.new("RGB", (SIZE, SIZE), BACKGROUND)
    draw = ImageDraw.Draw(img)
    x0, y0, x1, y1 = scene.plan.bounds
    top = max(r.wall_height for r in scene.plan.rooms)
    az = math.radians(45 + 90 * corner) + math.pi  # camera sits in a corner looking inwards
    view = _view_matrix(az, math.radians(35))
    pts = np.array([[x, y, z] for x in (x0, x1) for y in (y0, y1) for z in (0.0, top)])
    proj = pts @ view.T
    lo, hi = proj[:, :2].min(axis=0), proj[:, :2].max(axis=0)
    scale = (SIZE - 20) / max(hi - lo)
    mid = (lo + hi) / 2

    def px(p3):
        q = np.asarray(p3) @ view.T
        return (q[..., 0] - mid[0]) * scale + SIZE / 2, SIZE / 2 - (q[..., 1] - mid[1]) * scale

    polys = []  # (depth, points, color)
    for room in scene.plan.rooms:
        floor = np.array([[x, y, 0.0] for x, y in room.polygon])
        polys.append((-1e9, floor, tuple(room.floor_color)))
        for (ax, ay), (bx, by) in room.walls():
            quad = np.array([[ax, ay, 0], [bx, by, 0], [bx, by, room.wall_height], [ax, ay, room.wall_height]], float)
            mid_w = quad.mean(axis=0)
            inward = np.array([-(by - ay), bx - ax, 0.0])
            if inward @ view[2] < 0:  # back walls only, front walls would hide the room
                continue
            polys.append((-1e8 + float(mid_w @ view[2]) * -1, quad, tuple(room.wall_color)))
    for obj in scene.objects.values():
        box = world_obb(obj)
        corners = box.corners()
        base = np.array(_category_color(obj.category), dtype=float)
        for f in _BOX_FACES:
            quad = corners[list(f)]
            normal = np.cross(quad[1] - quad[0], quad[2] - quad[0])
            if np.linalg.norm(normal) < 1e-12:
                continue
            normal /= np.linalg.norm(normal)
            centroid = quad.mean(axis=0)
            if normal @ (centroid - np.asarray(box.center)) < 0:
                normal = -normal
            if normal @ view[2] <= 0:
                continue
            shade = 0.55 + 0.45 * max(0.0, float(normal @ np.array([0.3, 0.2, 0.93])))
            polys.append((float(centroid @ view[2]), quad, tuple(int(c) for c in np.clip(base * shade, 0, 255))))
    polys.sort(key=lambda t: (t[0], t[2]))
    for _, quad, color in polys:
        xs, ys = px(quad)
        draw.polygon(list(zip(xs.tolist(), ys.tolist())), fill=color, outline=(30, 30, 30))
    return img


def render_views(scene: Scene) -> list[Image.Image]:
    """Top-down height view followed by the four corner views."""
    return [render_top_down(scene, None)] + [render_corner(scene, k) for k in range(4)]


def occupied_pixels(img: Image.Image, color=OBJECT_COLOR) -> int:
    arr = np.asarray(img)
    return int(np.all(arr == np.array(color, dtype=np.uint8), axis=-1).sum())
