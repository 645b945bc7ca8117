"""Procedural asset provider.

Stands in for text-to-3D generation and VLM attribute estimation: parametric
templates keyed by category, an optional OBJ catalog directory, and an
editable attribute table (``data/attributes.json``).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from . import primitives as P
from .geometry import Obb
from .scene import PhysicalAttributes, TriMesh, normalize_category
from .scene_io import mesh_from_obj

log = logging.getLogger(__name__)


class UnknownCategory(KeyError):
    pass


class NonPositiveHeight(ValueError):
    pass


class DegenerateVolume(ValueError):
    pass


@dataclass(frozen=True)
class AssetRequest:
    description: str
    category: str
    seed: int = 0

    def __post_init__(self):
        if not self.category.strip():
            raise ValueError("category must be non-empty")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary labels."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little") & ((1 << 63) - 1)


def _load_json(name: str) -> dict:
    return json.loads(resources.files("sage_forge.data").joinpath(name).read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def default_attribute_table() -> dict:
    return {normalize_category(k): v for k, v in _load_json("attributes.json").items() if not k.startswith("_")}


@lru_cache(maxsize=None)
def perturbation_table() -> dict:
    return _load_json("perturbations.json")


def load_attribute_table(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    table = {normalize_category(k): v for k, v in data.items() if not k.startswith("_")}
    for cat, rec in table.items():
        lo, hi = rec["height"]
        if not (0 < lo <= hi) or rec["density"] <= 0:
            raise ValueError(f"bad attribute record for {cat!r}")
    return table


def known_categories(table: dict | None = None) -> list[str]:
    return sorted((table or default_attribute_table()).keys())


# ---------------------------------------------------------------------------
# Templates. Builders work in nominal meters; front faces +X.


def _table(d, rng, words):
    x, y, z = d
    t = 0.04 * min(1.0, z / 0.75) + 0.01
    leg = 0.045
    if "round" in words:
        r = min(x, y) / 2
        return [P.cylinder(0, 0, r, z - t, z, 24), P.cylinder(0, 0, 0.05, 0, z - t, 12), P.cylinder(0, 0, r * 0.6, 0, 0.03, 16)]
    parts = [P.box(-x / 2, x / 2, -y / 2, y / 2, z - t, z)]
    ix, iy = x / 2 - 0.03, y / 2 - 0.03
    for sx in (-1, 1):
        for sy in (-1, 1):
            cx, cy = sx * (ix - leg / 2), sy * (iy - leg / 2)
            parts.append(P.box(cx - leg / 2, cx + leg / 2, cy - leg / 2, cy + leg / 2, 0, z - t))
    return parts


def _cabinet(d, rng, words):
    x, y, z = d
    plinth = 0.05 if z > 0.3 else 0.0
    parts = [P.box(-x / 2, x / 2, -y / 2, y / 2, plinth, z)]
    if plinth:
        parts.append(P.box(-x / 2 + 0.04, x / 2 - 0.04, -y / 2 + 0.04, y / 2 - 0.04, 0, plinth))
    return parts


def _bookcase(d, rng, words, shelves=2):
    x, y, z = d
    t = 0.02
    parts = [
        P.box(-x / 2, x / 2, -y / 2, -y / 2 + t, 0, z),
        P.box(-x / 2, x / 2, y / 2 - t, y / 2, 0, z),
        P.box(-x / 2, -x / 2 + t, -y / 2 + t, y / 2 - t, 0, z - t),  # back panel
        P.box(-x / 2 + t, x / 2, -y / 2 + t, y / 2 - t, z - t, z),  # top board
    ]
    # Low bottom compartment: the first shelf sits close to the base board.
    base = 0.05
    first = base + 0.22 + 0.06 * rng.random()
    levels = [base] + list(np.linspace(first, z - t, shelves + 1)[:-1])
    for lv in levels:
        parts.append(P.box(-x / 2 + t, x / 2, -y / 2 + t, y / 2 - t, lv - t, lv))
    return parts


def _wall_shelf(d, rng, words):
    x, y, z = d
    t = 0.025
    return [
        P.box(-x / 2, -x / 2 + t, -y / 2, y / 2, 0, z),
        P.box(-x / 2 + t, x / 2, -y / 2, y / 2, z * 0.45, z * 0.45 + t),
        P.box(-x / 2 + t, x / 2, -y / 2, y / 2, z - t, z),
    ]


def _bed(d, rng, words):
    x, y, z = d
    frame = 0.3 * z
    mattress = 0.55 * z
    head = 0.07
    return [
        P.box(-x / 2 + head, x / 2, -y / 2, y / 2, 0, frame),
        P.box(-x / 2 + head, x / 2 - 0.02, -y / 2 + 0.02, y / 2 - 0.02, frame, mattress),
        P.box(-x / 2, -x / 2 + head, -y / 2, y / 2, 0, z),
    ]


def _chair(d, rng, words):
    x, y, z = d
    seat = 0.5 * z
    t = 0.05
    leg = 0.04
    parts = [P.box(-x / 2, x / 2, -y / 2, y / 2, seat - t, seat), P.box(-x / 2, -x / 2 + 0.05, -y / 2, y / 2, seat, z)]
    for sx in (-1, 1):
        for sy in (-1, 1):
            cx, cy = sx * (x / 2 - leg / 2), sy * (y / 2 - leg / 2)
            parts.append(P.box(cx - leg / 2, cx + leg / 2, cy - leg / 2, cy + leg / 2, 0, seat - t))
    return parts


def _sofa(d, rng, words):
    x, y, z = d
    seat = 0.5 * z
    arm = 0.15
    back = 0.2
    return [
        P.box(-x / 2 + back, x / 2, -y / 2 + arm, y / 2 - arm, 0, seat),
        P.box(-x / 2, -x / 2 + back, -y / 2, y / 2, 0, z),
        P.box(-x / 2 + back, x / 2, -y / 2, -y / 2 + arm, 0, 0.72 * z),
        P.box(-x / 2 + back, x / 2, y / 2 - arm, y / 2, 0, 0.72 * z),
    ]


def _lamp(d, rng, words):
    x, y, z = d
    r = min(x, y) / 2
    return [
        P.cylinder(0, 0, r * 0.7, 0, 0.03 * z + 0.01, 16),
        P.cylinder(0, 0, 0.015, 0.03 * z + 0.01, 0.7 * z, 8),
        P.cylinder(0, 0, r, 0.7 * z, z, 16, r_top=r * 0.6),
    ]


def _plant(d, rng, words):
    x, y, z = d
    r = min(x, y) / 2
    pot = 0.35 * z
    return [P.cylinder(0, 0, r * 0.6, 0, pot, 12, r_top=r * 0.75), P.cylinder(0, 0, r, pot, z, 8, r_top=r * 0.4)]


def _cylinder(d, rng, words):
    x, y, z = d
    return [P.cylinder(0, 0, min(x, y) / 2, 0, z, 24 if "round" in words else 16)]


def _vase(d, rng, words):
    x, y, z = d
    r = min(x, y) / 2
    return [P.revolve([(0.0, 0.0), (r * 0.6, 0.0), (r, 0.45 * z), (r * 0.45, z), (0.0, z)], 16)]


def _bowl(d, rng, words):
    x, y, z = d
    r = min(x, y) / 2
    w = 0.008
    base = r * 0.55
    return [P.revolve([(0.0, 0.0), (base, 0.0), (r, z), (r - w, z), (base - w, w + 0.004), (0.0, w + 0.004)], 24)]


def _fruit(d, rng, words):
    x, y, z = d
    r = min(x, y, z) / 2
    return [P.uv_sphere(0, 0, r, r, rings=8, segments=12, flat_bottom=0.12)]


def _pillow(d, rng, words):
    x, y, z = d
    return [P.extrude_x(P.ellipse_yz(0.0, z / 2, y / 2, z / 2, 32), -x / 2, x / 2)]


def _monitor(d, rng, words):
    x, y, z = d
    return [
        P.box(-x / 2, x / 2, -0.12, 0.12, 0, 0.02),
        P.box(-0.03, 0.0, -0.03, 0.03, 0.02, 0.35 * z),
        P.box(-0.02, 0.01, -y / 2, y / 2, 0.3 * z, z),
    ]


def _box(d, rng, words):
    x, y, z = d
    return [P.box(-x / 2, x / 2, -y / 2, y / 2, 0, z)]


TEMPLATES = {
    "table": _table,
    "cabinet": _cabinet,
    "bookcase": _bookcase,
    "wall_shelf": _wall_shelf,
    "bed": _bed,
    "chair": _chair,
    "sofa": _sofa,
    "lamp": _lamp,
    "plant": _plant,
    "cylinder": _cylinder,
    "vase": _vase,
    "bowl": _bowl,
    "fruit": _fruit,
    "pillow": _pillow,
    "monitor": _monitor,
    "box": _box,
}

_SHAPE_SCALE = {
    "wide": (1.0, 1.2),
    "slim": (1.0, 0.85),
    "chunky": (1.15, 1.15),
    "compact": (0.9, 0.9),
    "tall": (0.88, 0.88),
    "short": (1.12, 1.12),
}


def _words(description: str) -> set[str]:
    return set(re.findall(r"[a-z]+", description.lower()))


def normalize_unit_height(vertices: np.ndarray) -> np.ndarray:
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    h = hi[2] - lo[2]
    if h <= 0:
        raise DegenerateVolume("mesh has zero height")
    center = (lo + hi) / 2
    out = vertices - np.array([center[0], center[1], lo[2]])
    return out / h


def synthesize_asset(
    req: AssetRequest, table: dict | None = None, catalog_dir: str | Path | None = None
) -> TriMesh:
    """Unit-height mesh (base at z=0, centered in xy) for a category; pure in (description, category, seed)."""
    table = table or default_attribute_table()
    cat = normalize_category(req.category)
    if catalog_dir is not None and (Path(catalog_dir) / cat).is_dir():
        return load_catalog_mesh(catalog_dir, cat, req.seed)
    if cat not in table:
        raise UnknownCategory(req.category)
    return _synthesize_cached(req.description, cat, req.seed, json.dumps(table[cat], sort_keys=True))


@lru_cache(maxsize=4096)
def _synthesize_cached(description: str, cat: str, seed: int, rec_json: str) -> TriMesh:
    rec = json.loads(rec_json)
    rng = np.random.default_rng(derive_seed("asset", description, cat, seed))
    words = _words(description)
    x, y, z = rec["dims"]
    jx, jy = 1.0 + 0.08 * (rng.random(2) * 2 - 1)
    sx, sy = 1.0, 1.0
    for w, (ax, ay) in _SHAPE_SCALE.items():
        if w in words:
            sx, sy = sx * ax, sy * ay
    dims = (x * jx * sx, y * jy * sy, z)
    builder = TEMPLATES[rec["template"]]
    parts = builder(dims, rng, words, **rec.get("params", {}))
    v, f = P.merge(parts)
    return TriMesh(normalize_unit_height(v), f)


def rescale_to_height(mesh: TriMesh, height: float) -> TriMesh:
    if not height > 0:
        raise NonPositiveHeight(f"height must be positive, got {height}")
    lo, hi = mesh.bounds
    current = float(hi[2] - lo[2])
    if current <= 0:
        raise DegenerateVolume("mesh has zero height")
    if height == current:
        return mesh
    s = height / current
    v = (mesh.vertices - np.array([0.0, 0.0, lo[2]])) * s + np.array([0.0, 0.0, lo[2]])
    # Pin the top exactly so the bbox height is exact in floating point.
    top = v[:, 2] == v[:, 2].max()
    v[top, 2] = lo[2] + height
    return TriMesh(v, mesh.triangles, watertight=mesh.watertight)


def sample_height(category: str, seed: int, table: dict | None = None) -> float:
    rec = _record(category, table)
    lo, hi = rec["height"]
    rng = np.random.default_rng(derive_seed("height", normalize_category(category), seed))
    return round(float(lo + (hi - lo) * rng.random()), 4)


def _record(category: str, table: dict | None) -> dict:
    table = table or default_attribute_table()
    cat = normalize_category(category)
    if cat not in table:
        raise UnknownCategory(category)
    return table[cat]


def estimate_physical_attributes(category: str, obb: Obb, seed: int = 0, table: dict | None = None) -> PhysicalAttributes:
    """Table heuristic: height from the category band, mass = density x box volume."""
    rec = _record(category, table)
    vol = obb.volume
    if vol <= 1e-9:
        raise DegenerateVolume(f"bounding volume {vol} is degenerate")
    return PhysicalAttributes(
        height=sample_height(category, seed, table),
        mass=float(rec["density"]) * vol,
        metallic=float(rec.get("metallic", 0.0)),
        roughness=float(rec.get("roughness", 0.5)),
        static=bool(rec.get("static", False)),
    )


def default_static(category: str, table: dict | None = None) -> bool:
    try:
        return bool(_record(category, table).get("static", False))
    except UnknownCategory:
        return False




def perturb_description(description: str, category: str, seed: int) -> str:
    """Seeded adjective swap that keeps the category noun; identity when no vocabulary applies."""
    tab = perturbation_table()
    cat = normalize_category(category)
    vocab = {k: tab[k] for k in ("colors", "materials", "finishes", "shapes")}
    over = tab["overrides"].get(cat)
    if over is not None:
        if isinstance(over, list) and not over:
            log.warning("no perturbation vocabulary for %r; returning description unchanged", category)
            return description
        vocab.update(over)
    rng = np.random.default_rng(derive_seed("perturb", description, cat, seed))
    known = {w for words in vocab.values() for w in words}
    kept = [w for w in description.split() if w.lower().strip(",.") not in known and w.lower() not in ("a", "an", "the")]
    picks = []
    for key in ("shapes", "finishes", "colors", "materials"):
        words = vocab[key]
        if words and rng.random() < 0.75:
            picks.append(words[int(rng.integers(len(words)))])
    if not picks:
        non_empty = [vocab[k] for k in ("colors", "materials", "finishes", "shapes") if vocab[k]]
        picks.append(non_empty[0][int(rng.integers(len(non_empty[0])))])
    body = " ".join(kept) if kept else category
    if cat not in normalize_category(body):
        body = f"{body} {category}".strip()
    return f"{' '.join(picks)} {body}"


def repair_mesh(mesh: TriMesh, weld: float = 1e-6) -> TriMesh:
    """Weld near-duplicate vertices and drop degenerate triangles; watertightness is reported, not fixed."""
    v = mesh.vertices
    if len(v) == 0:
        return mesh
    keys = np.round(v / weld).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    new_v = v[first[order]]
    t = remap[inverse.reshape(-1)][mesh.triangles]
    tv = new_v[t]
    area = np.linalg.norm(np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0]), axis=1)
    keep = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2]) & (area > 1e-14)
    return TriMesh(new_v, t[keep])


def load_catalog_mesh(catalog_dir: str | Path, category: str, seed: int) -> TriMesh:
    folder = Path(catalog_dir) / normalize_category(category)
    variants = sorted(folder.glob("*.obj"))
    if not variants:
        raise UnknownCategory(category)
    pick = variants[derive_seed("catalog", category, seed) % len(variants)]
    mesh = repair_mesh(mesh_from_obj(pick.read_text(encoding="utf-8")))
    if not mesh.watertight:
        log.warning("catalog mesh %s is not watertight", pick)
    return TriMesh(normalize_unit_height(mesh.vertices), mesh.triangles, watertight=mesh.watertight)


def build_asset(description: str, category: str, seed: int, height: float | None = None, table: dict | None = None,
                catalog_dir=None) -> tuple[TriMesh, float]:
    """Synthesize and rescale in one step; returns (mesh, height)."""
    unit = synthesize_asset(AssetRequest(description, category, seed), table, catalog_dir)
    h = sample_height(category, seed, table) if height is None else height
    return rescale_to_height(unit, h), h
