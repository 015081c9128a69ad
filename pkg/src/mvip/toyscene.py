"""Procedural toy objects and the analytic ground-truth renderer.

Objects are unions of spheres and axis-aligned boxes, shaded with a headlight
Lambert term (albedo * max(0, n . view)), no shadows. Every object carries a
pure-red front marker sitting on the +X axis, which makes "the camera sees the
front" machine-checkable. Pure red is reserved for the marker; all other
albedos keep their red channel from dominating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import CameraPose, camera_rays

MARKER_ALBEDO = (1.0, 0.0, 0.0)
# Non-marker albedos satisfy r - max(g, b) <= this; the visibility detector
# uses a strictly larger threshold so shading cannot create false positives.
_RED_DOMINANCE_CAP = 0.30
MARKER_DETECT_THRESHOLD = 0.35


@dataclass(frozen=True)
class Primitive:
    kind: str  # "sphere" | "box"
    center: tuple[float, float, float]
    extent: tuple[float, float, float]  # sphere: (radius, radius, radius)
    albedo: tuple[float, float, float]

    def __post_init__(self):
        if self.kind not in ("sphere", "box"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")

    @property
    def reach(self) -> float:
        """Distance from the origin to the primitive's farthest point."""
        c = np.linalg.norm(self.center)
        if self.kind == "sphere":
            return float(c + self.extent[0])
        return float(c + np.linalg.norm(self.extent))


@dataclass(frozen=True)
class ToyObject:
    primitives: tuple[Primitive, ...]
    front_marker: int
    bounding_radius: float

    def packed(self):
        kinds = np.array(
            [kernels.KIND_SPHERE if p.kind == "sphere" else kernels.KIND_BOX for p in self.primitives],
            dtype=np.int8,
        )
        centers = np.array([p.center for p in self.primitives], dtype=np.float64).reshape(-1, 3)
        extents = np.array([p.extent for p in self.primitives], dtype=np.float64).reshape(-1, 3)
        albedos = np.array([p.albedo for p in self.primitives], dtype=np.float64).reshape(-1, 3)
        return kinds, centers, extents, albedos

    def scaled(self, factor: float) -> "ToyObject":
        prims = tuple(
            Primitive(
                p.kind,
                tuple(factor * np.asarray(p.center)),
                tuple(factor * np.asarray(p.extent)),
                p.albedo,
            )
            for p in self.primitives
        )
        return ToyObject(prims, self.front_marker, self.bounding_radius * factor)

    def to_json(self) -> dict:
        return {
            "primitives": [
                {"kind": p.kind, "center": list(p.center), "extent": list(p.extent), "albedo": list(p.albedo)}
                for p in self.primitives
            ],
            "front_marker": self.front_marker,
            "bounding_radius": self.bounding_radius,
        }

    @classmethod
    def from_json(cls, record: dict) -> "ToyObject":
        prims = tuple(
            Primitive(p["kind"], tuple(p["center"]), tuple(p["extent"]), tuple(p["albedo"]))
            for p in record["primitives"]
        )
        return cls(prims, record["front_marker"], record["bounding_radius"])


@dataclass(frozen=True)
class RenderedView:
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    alpha: np.ndarray  # (H, W) float32, 1 where a primitive was hit
    pose: CameraPose


def generate_object(seed: int, max_radius: float = 1.0) -> ToyObject:
    """Deterministic toy object: a red front marker plus 1-5 random primitives."""
    rng = np.random.default_rng(seed)
    marker = Primitive(
        "sphere",
        (0.72 * max_radius, 0.0, 0.0),
        (0.12 * max_radius,) * 3,
        MARKER_ALBEDO,
    )
    prims = [marker]
    for _ in range(int(rng.integers(1, 6))):
        kind = "sphere" if rng.random() < 0.5 else "box"
        if kind == "sphere":
            r = rng.uniform(0.10, 0.30) * max_radius
            extent = (r, r, r)
            reach = r
        else:
            half = rng.uniform(0.08, 0.28, size=3) * max_radius
            extent = tuple(half)
            reach = float(np.linalg.norm(half))
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        center = direction * rng.uniform(0.0, max(0.0, max_radius - reach))
        albedo = rng.uniform(0.0, 1.0, size=3)
        while albedo[0] - max(albedo[1], albedo[2]) > _RED_DOMINANCE_CAP:
            albedo = rng.uniform(0.0, 1.0, size=3)
        prims.append(Primitive(kind, tuple(center), extent, tuple(albedo)))
    bounding = max(p.reach for p in prims)
    return ToyObject(tuple(prims), front_marker=0, bounding_radius=bounding)


def render_view(
    obj: ToyObject,
    pose: CameraPose,
    resolution: int,
    bg_color=(1.0, 1.0, 1.0),
    backend: str | None = None,
) -> RenderedView:
    """Analytic nearest-hit render; misses are filled with bg_color exactly."""
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    bg = np.asarray(bg_color, dtype=np.float64)
    origins, dirs = camera_rays(pose, resolution, resolution)
    if len(obj.primitives) == 0:
        rgb = np.broadcast_to(bg, (resolution * resolution, 3)).copy()
        alpha = np.zeros(resolution * resolution)
    else:
        kinds, centers, extents, albedos = obj.packed()
        rgb, alpha = kernels.ray_trace(kinds, centers, extents, albedos, origins, dirs, bg, backend=backend)
    rgb = np.clip(rgb, 0.0, 1.0).reshape(resolution, resolution, 3).astype(np.float32)
    alpha = alpha.reshape(resolution, resolution).astype(np.float32)
    return RenderedView(rgb=rgb, alpha=alpha, pose=pose)


def marker_visible(rgb: np.ndarray) -> bool:
    """True if some pixel is red-dominant enough to be the shaded front marker."""
    r = rgb[..., 0]
    other = np.maximum(rgb[..., 1], rgb[..., 2])
    return bool(np.any((r - other > MARKER_DETECT_THRESHOLD) & (r > MARKER_DETECT_THRESHOLD)))
