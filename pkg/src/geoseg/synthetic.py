"""Seeded synthetic indoor rooms built from planar patches and boxes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .cloud import PointCloud


@dataclass(frozen=True)
class ClassSpec:
    name: str
    count: Tuple[int, int]  # inclusive range of objects per scene
    size: Tuple[float, float]  # characteristic size range, meters
    color: Tuple[float, float, float]


DEFAULT_CLASSES = (
    ClassSpec("floor", (1, 1), (0.0, 0.0), (0.55, 0.50, 0.45)),
    ClassSpec("wall", (4, 4), (0.0, 0.0), (0.75, 0.75, 0.72)),
    ClassSpec("table", (1, 2), (0.8, 1.4), (0.50, 0.35, 0.20)),
    ClassSpec("chair", (2, 4), (0.40, 0.50), (0.45, 0.35, 0.30)),
    ClassSpec("board", (1, 2), (0.6, 1.2), (0.78, 0.80, 0.80)),
    ClassSpec("clutter", (3, 6), (0.12, 0.30), (0.55, 0.45, 0.40)),
)


@dataclass(frozen=True)
class SceneSpec:
    extents: Tuple[float, float, float] = (5.0, 4.0, 2.5)
    classes: Tuple[ClassSpec, ...] = DEFAULT_CLASSES
    density: float = 60.0  # points per square meter of surface
    noise: float = 0.005  # coordinate jitter sigma, meters
    color_noise: float = 0.06
    seed: int = 0

    def __post_init__(self):
        if len(self.extents) != 3 or min(self.extents) <= 0:
            raise ValueError(f"room extents must be three positive lengths, got {self.extents}")
        if not self.density > 0:
            raise ValueError("density must be positive")
        if self.noise < 0 or self.color_noise < 0:
            raise ValueError("noise must be nonnegative")
        for cs in self.classes:
            if cs.count[0] < 0 or cs.count[1] < cs.count[0]:
                raise ValueError(f"bad count range for {cs.name}")

    @property
    def class_names(self) -> List[str]:
        return [c.name for c in self.classes]


@dataclass
class SceneObject:
    instance: int
    label: int
    name: str
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    count: int


@dataclass
class Scene:
    cloud: PointCloud
    instance: np.ndarray  # per-point object id
    inventory: List[SceneObject] = field(default_factory=list)

    def small_objects(self, fraction: float = 0.01) -> List[SceneObject]:
        n = self.cloud.n
        return [o for o in self.inventory if o.count < fraction * n]

    def small_mask(self, fraction: float = 0.01) -> np.ndarray:
        ids = [o.instance for o in self.small_objects(fraction)]
        return np.isin(self.instance, ids)


def _rect(rng, origin, u, v, density):
    """Uniform samples on the parallelogram origin + s*u + t*v, s, t in [0, 1]."""
    origin, u, v = (np.asarray(x, dtype=np.float64) for x in (origin, u, v))
    area = float(np.linalg.norm(np.cross(u, v)))
    k = max(1, int(round(density * area)))
    st = rng.random((k, 2))
    return origin + st[:, :1] * u + st[:, 1:] * v


def _box(rng, lo, hi, density, bottom=False):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    dx, dy, dz = hi - lo
    ex, ey, ez = np.eye(3)
    faces = [
        (lo + ez * dz, ex * dx, ey * dy),  # top
        (lo, ex * dx, ez * dz),
        (lo + ey * dy, ex * dx, ez * dz),
        (lo, ey * dy, ez * dz),
        (lo + ex * dx, ey * dy, ez * dz),
    ]
    if bottom:
        faces.append((lo, ex * dx, ey * dy))
    return np.vstack([_rect(rng, o, u, v, density) for o, u, v in faces])


def _footprint(rng, room, w, d, margin=0.1):
    x = rng.uniform(margin, max(margin, room[0] - w - margin))
    y = rng.uniform(margin, max(margin, room[1] - d - margin))
    return x, y


def generate_scene(spec: SceneSpec) -> Scene:
    """Deterministic room: the same spec (seed included) gives identical output."""
    # layout and surface sampling draw from separate streams so the room
    # layout does not depend on density
    rng, srng = (np.random.Generator(np.random.PCG64(s))
                 for s in np.random.SeedSequence(spec.seed).spawn(2))
    X, Y, Z = spec.extents
    dens = spec.density
    parts: List[Tuple[int, np.ndarray]] = []  # (label, points) per object
    counts = {c.name: int(rng.integers(c.count[0], c.count[1] + 1)) for c in spec.classes}
    label_of = {c.name: i for i, c in enumerate(spec.classes)}
    sizes = {c.name: c.size for c in spec.classes}
    tops: List[Tuple[float, float, float, float, float]] = []  # table tops for clutter

    def add(name, pts):
        parts.append((label_of[name], pts))

    for name in spec.class_names:
        k = counts[name]
        lo_s, hi_s = sizes[name]
        for _ in range(k):
            if name == "floor":
                add(name, _rect(srng, (0, 0, 0), (X, 0, 0), (0, Y, 0), dens))
            elif name == "wall":
                w = len([p for p in parts if p[0] == label_of[name]]) % 4
                corners = [((0, 0, 0), (X, 0, 0)), ((X, 0, 0), (0, Y, 0)),
                           ((X, Y, 0), (-X, 0, 0)), ((0, Y, 0), (0, -Y, 0))]
                o, u = corners[w]
                add(name, _rect(srng, o, u, (0, 0, Z), dens))
            elif name == "table":
                w, d = rng.uniform(lo_s, hi_s), rng.uniform(0.6, 0.9) * rng.uniform(lo_s, hi_s)
                x, y = _footprint(rng, (X, Y), w, d, 0.4)
                h = rng.uniform(0.70, 0.78)
                pts = [_box(srng, (x, y, h - 0.04), (x + w, y + d, h), dens, bottom=True)]
                for cx, cy in ((x, y), (x + w - 0.05, y), (x, y + d - 0.05), (x + w - 0.05, y + d - 0.05)):
                    pts.append(_box(srng, (cx, cy, 0), (cx + 0.05, cy + 0.05, h - 0.04), dens))
                add(name, np.vstack(pts))
                tops.append((x, y, w, d, h))
            elif name == "chair":
                s = rng.uniform(lo_s, hi_s)
                x, y = _footprint(rng, (X, Y), s, s, 0.2)
                seat = _box(srng, (x, y, 0), (x + s, y + s, 0.45), dens)
                back = _rect(srng, (x, y + s, 0.45), (s, 0, 0), (0, 0, 0.45), dens)
                add(name, np.vstack([seat, back]))
            elif name == "board":
                w, h = rng.uniform(lo_s, hi_s), rng.uniform(0.5, 0.9)
                wall = int(rng.integers(0, 4))
                span = X if wall % 2 == 0 else Y
                s0 = rng.uniform(0.1, max(0.1, span - w - 0.1))
                z0 = rng.uniform(0.9, max(0.9, Z - h - 0.2))
                off = 0.02
                if wall == 0:
                    o, u = (s0, off, z0), (w, 0, 0)
                elif wall == 1:
                    o, u = (X - off, s0, z0), (0, w, 0)
                elif wall == 2:
                    o, u = (s0, Y - off, z0), (w, 0, 0)
                else:
                    o, u = (off, s0, z0), (0, w, 0)
                add(name, _rect(srng, o, u, (0, 0, h), dens))
            elif name == "clutter":
                a, b, c = rng.uniform(lo_s, hi_s, 3)
                if tops and rng.random() < 0.5:
                    tx, ty, tw, td, th = tops[int(rng.integers(0, len(tops)))]
                    x = tx + rng.uniform(0, max(0.0, tw - a))
                    y = ty + rng.uniform(0, max(0.0, td - b))
                    z = th
                else:
                    x, y = _footprint(rng, (X, Y), a, b, 0.1)
                    z = 0.0
                add(name, _box(srng, (x, y, z), (x + a, y + b, z + c), dens))
            else:
                # user-defined class: a free-standing box of the given size
                a, b, c = rng.uniform(max(lo_s, 0.05), max(hi_s, 0.05), 3)
                x, y = _footprint(rng, (X, Y), a, b, 0.1)
                add(name, _box(srng, (x, y, 0), (x + a, y + b, c), dens))

    coords, labels, inst, cols, inventory = [], [], [], [], []
    base = {label_of[c.name]: np.asarray(c.color) for c in spec.classes}
    for i, (lab, pts) in enumerate(parts):
        pts = pts + srng.normal(0.0, spec.noise, pts.shape) if spec.noise > 0 else pts
        tint = base[lab] + srng.normal(0.0, 0.05, 3)
        col = tint + srng.normal(0.0, spec.color_noise, pts.shape)
        coords.append(pts)
        labels.append(np.full(len(pts), lab))
        inst.append(np.full(len(pts), i))
        cols.append(np.clip(col, 0.0, 1.0))
        inventory.append(SceneObject(i, lab, spec.classes[lab].name, pts.min(axis=0), pts.max(axis=0),
                                     len(pts)))
    cloud = PointCloud(np.vstack(coords), np.vstack(cols), np.concatenate(labels).astype(np.int64),
                       len(spec.classes))
    return Scene(cloud, np.concatenate(inst).astype(np.int64), inventory)


def class_counts(scene: Scene) -> Dict[str, int]:
    out: Dict[str, int] = {}
    for o in scene.inventory:
        out[o.name] = out.get(o.name, 0) + 1
    return out
