"""Camera poses, orthogonal view rings, camera embeddings, and constrained sampling.

World convention: +X is the canonical front axis, +Z is up. A pose is a
look-at camera aimed at the world origin, parameterized by spherical
coordinates (azimuth, elevation, distance) plus a field of view. Azimuth 0
places the camera on the front axis, so the default camera always sees the
object's front.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

FRONT_AXIS = np.array([1.0, 0.0, 0.0])
UP_AXIS = np.array([0.0, 0.0, 1.0])

# Width of the camera embedding vector. Matches the denoiser's time-embedding
# width so camera and timestep embeddings can be summed.
CAMERA_EMBED_DIM = 128

_EMBED_PROJECTION_SEED = 20240917


class _PromptFrameMarker:
    """Sentinel standing in for 'this frame is the image prompt, not a view'."""

    def __repr__(self):
        return "PROMPT_FRAME"


PROMPT_FRAME = _PromptFrameMarker()


@dataclass(frozen=True)
class CameraPose:
    """Look-at camera on a sphere around the origin.

    azimuth: degrees, stored normalized to [0, 360)
    elevation: degrees above the horizontal plane
    distance: scene units, > 0
    fov: vertical field of view in degrees, in (0, 180)
    """

    azimuth: float
    elevation: float
    distance: float
    fov: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError(f"distance must be > 0, got {self.distance}")
        if not 0 < self.fov < 180:
            raise ValueError(f"fov must be in (0, 180), got {self.fov}")
        object.__setattr__(self, "azimuth", float(self.azimuth) % 360.0)
        object.__setattr__(self, "elevation", float(self.elevation))
        object.__setattr__(self, "distance", float(self.distance))
        object.__setattr__(self, "fov", float(self.fov))

    @property
    def position(self) -> np.ndarray:
        az = np.deg2rad(self.azimuth)
        el = np.deg2rad(self.elevation)
        return self.distance * np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
        )

    @property
    def extrinsic(self) -> np.ndarray:
        """4x4 world-to-camera matrix; the camera looks along its -z axis."""
        pos = self.position
        z = pos / np.linalg.norm(pos)
        up = UP_AXIS if abs(float(z @ UP_AXIS)) < 0.999 else FRONT_AXIS
        x = np.cross(up, z)
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        rot = np.stack([x, y, z])
        ext = np.eye(4)
        ext[:3, :3] = rot
        ext[:3, 3] = -rot @ pos
        return ext

    def to_json(self) -> dict:
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "distance": self.distance,
            "fov": self.fov,
        }

    @classmethod
    def from_json(cls, record: dict) -> "CameraPose":
        return cls(**record)


@dataclass(frozen=True)
class CameraEmbedding:
    """Fixed-width conditioning vector for one frame's camera."""

    vector: np.ndarray
    is_prompt_frame: bool = False

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if self.is_prompt_frame and np.any(vec != 0.0):
            raise ValueError("prompt-frame embedding must be exactly zero")
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class CameraRanges:
    """Sampling intervals for SDS cameras (fov/elevation narrowed for image prompts)."""

    fov: tuple[float, float] = (45.0, 50.0)
    elevation: tuple[float, float] = (0.0, 5.0)
    distance: tuple[float, float] = (0.6, 0.85)

    def __post_init__(self):
        for name in ("fov", "elevation", "distance"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range has lo > hi: ({lo}, {hi})")


@lru_cache(maxsize=4)
def _embedding_projection(dim: int) -> np.ndarray:
    # Fixed random projection: deterministic across runs, injective on the
    # 17 raw camera numbers with probability one.
    rng = np.random.default_rng(_EMBED_PROJECTION_SEED)
    return rng.standard_normal((dim, 17)) / np.sqrt(17.0)


def embed_camera(pose, dim: int = CAMERA_EMBED_DIM) -> CameraEmbedding:
    """Encode a pose as a fixed vector; the prompt-frame marker encodes to zeros."""
    if pose is PROMPT_FRAME or isinstance(pose, _PromptFrameMarker):
        return CameraEmbedding(np.zeros(dim), is_prompt_frame=True)
    if not isinstance(pose, CameraPose):
        raise ValueError(f"expected CameraPose or PROMPT_FRAME, got {type(pose)!r}")
    raw = np.concatenate([pose.extrinsic.reshape(-1), [np.deg2rad(pose.fov)]])
    return CameraEmbedding(_embedding_projection(dim) @ raw, is_prompt_frame=False)


def orthogonal_ring(base_azimuth: float, elevation: float, distance: float, fov: float) -> list[CameraPose]:
    """Four poses at base + {0, 90, 180, 270} degrees, sharing all other fields."""
    return [
        CameraPose(base_azimuth + offset, elevation, distance, fov)
        for offset in (0.0, 90.0, 180.0, 270.0)
    ]


def sample_sds_cameras(
    rng: np.random.Generator,
    ranges: CameraRanges | None = None,
    base_azimuth: float | None = None,
) -> list[CameraPose]:
    """One orthogonal ring with fov/elevation/distance drawn uniformly in `ranges`.

    The base azimuth is drawn uniformly on [0, 360) unless given explicitly.
    """
    ranges = ranges or CameraRanges()
    if base_azimuth is None:
        base_azimuth = float(rng.uniform(0.0, 360.0))
    fov = float(rng.uniform(*ranges.fov))
    elevation = float(rng.uniform(*ranges.elevation))
    distance = float(rng.uniform(*ranges.distance))
    return orthogonal_ring(base_azimuth, elevation, distance, fov)


def yaw_matrix(degrees: float) -> np.ndarray:
    """4x4 world rotation about the up axis."""
    a = np.deg2rad(degrees)
    m = np.eye(4)
    m[0, 0] = np.cos(a)
    m[0, 1] = -np.sin(a)
    m[1, 0] = np.sin(a)
    m[1, 1] = np.cos(a)
    return m


def camera_rays(pose: CameraPose, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel world-space rays through pixel centers.

    Returns (origins, directions), each (H*W, 3); directions are unit length.
    Row 0 is the top image row.
    """
    ext = pose.extrinsic
    rot = ext[:3, :3]
    origin = -rot.T @ ext[:3, 3]
    tan_half = np.tan(np.deg2rad(pose.fov) / 2.0)
    aspect = width / height
    js = (np.arange(width) + 0.5) / width
    is_ = (np.arange(height) + 0.5) / height
    x = (2.0 * js - 1.0) * tan_half * aspect
    y = (1.0 - 2.0 * is_) * tan_half
    xx, yy = np.meshgrid(x, y)
    dirs_cam = np.stack([xx, yy, -np.ones_like(xx)], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ rot  # rows of rot are camera axes, so this is rot.T @ d per ray
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(origin, dirs.shape).copy()
    return origins, dirs
