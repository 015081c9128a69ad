"""Differentiable voxel radiance field and its ray-marched renderer.

The field stores raw (pre-activation) grids: density decodes through softplus,
color through sigmoid, so decoded density is nonnegative and colors live in
[0, 1] by construction. Rendering composites 128 stratified samples per ray
inside the field's bounding cube and blends the final transmittance with the
background color, so the renderer is differentiable w.r.t. both grids.

Two numerically interchangeable backends: the compiled kernel (forward plus a
hand-derived adjoint, wrapped as a torch autograd Function) and a pure torch
implementation relying on autograd. Both compute in float64 internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import kernels
from .geometry import CameraPose, camera_rays

N_SAMPLES_PER_RAY = 128


@dataclass
class VoxelField:
    density_raw: torch.Tensor  # (G, G, G)
    color_raw: torch.Tensor  # (G, G, G, 3)
    bounding_radius: float
    stage: int = 0

    @property
    def resolution(self) -> int:
        return self.density_raw.shape[0]

    @classmethod
    def create(
        cls,
        resolution: int,
        bounding_radius: float,
        density_init: float = -3.0,
        dtype=torch.float32,
    ) -> "VoxelField":
        density = torch.full((resolution,) * 3, density_init, dtype=dtype)
        color = torch.zeros((resolution,) * 3 + (3,), dtype=dtype)
        return cls(density, color, float(bounding_radius))

    def decode_density(self) -> torch.Tensor:
        return F.softplus(self.density_raw)

    def decode_color(self) -> torch.Tensor:
        return torch.sigmoid(self.color_raw)

    def parameters(self) -> list[torch.Tensor]:
        return [self.density_raw, self.color_raw]

    def requires_grad_(self, flag: bool = True) -> "VoxelField":
        self.density_raw.requires_grad_(flag)
        self.color_raw.requires_grad_(flag)
        return self

    def detach_clone(self) -> "VoxelField":
        return VoxelField(
            self.density_raw.detach().clone(),
            self.color_raw.detach().clone(),
            self.bounding_radius,
            self.stage,
        )

    def density_mass_outside(self, radius: float) -> float:
        """Sum of decoded density at voxel centers farther than `radius` from origin."""
        g = self.resolution
        coords = torch.linspace(-self.bounding_radius, self.bounding_radius, g, dtype=self.density_raw.dtype)
        x, y, z = torch.meshgrid(coords, coords, coords, indexing="ij")
        outside = (x * x + y * y + z * z) > radius * radius
        with torch.no_grad():
            return float(self.decode_density()[outside].sum())

    def save(self, path) -> None:
        np.savez(
            path,
            density_raw=self.density_raw.detach().cpu().numpy(),
            color_raw=self.color_raw.detach().cpu().numpy(),
            bounding_radius=self.bounding_radius,
            stage=self.stage,
        )

    @classmethod
    def load(cls, path) -> "VoxelField":
        data = np.load(path)
        return cls(
            torch.from_numpy(data["density_raw"]),
            torch.from_numpy(data["color_raw"]),
            float(data["bounding_radius"]),
            int(data["stage"]),
        )


def upsample(field: VoxelField, new_resolution: int) -> VoxelField:
    """Trilinear upsampling of both raw grids; shrinking is rejected."""
    old = field.resolution
    if new_resolution < old:
        raise ValueError(f"cannot shrink field from {old} to {new_resolution}")
    if new_resolution == old:
        return field.detach_clone()
    density = field.density_raw.detach()[None, None]
    density = F.interpolate(density, size=(new_resolution,) * 3, mode="trilinear", align_corners=True)
    color = field.color_raw.detach().permute(3, 0, 1, 2)[None]
    color = F.interpolate(color, size=(new_resolution,) * 3, mode="trilinear", align_corners=True)
    return VoxelField(
        density[0, 0].contiguous(),
        color[0].permute(1, 2, 3, 0).contiguous(),
        field.bounding_radius,
        field.stage,
    )


class _CompiledVolumeRender(torch.autograd.Function):
    @staticmethod
    def forward(ctx, density_raw, color_raw, origins, dirs, jitter, bbox_r, bg):
        dens = density_raw.detach().contiguous().numpy()
        col = color_raw.detach().contiguous().numpy()
        rgb, alpha = kernels.volume_forward_ext(dens, col, origins, dirs, jitter, bbox_r, bg)
        ctx.save_for_backward(density_raw, color_raw)
        ctx.geom = (origins, dirs, jitter, bbox_r, bg)
        return torch.from_numpy(rgb), torch.from_numpy(alpha)

    @staticmethod
    def backward(ctx, grad_rgb, grad_alpha):
        density_raw, color_raw = ctx.saved_tensors
        origins, dirs, jitter, bbox_r, bg = ctx.geom
        gd, gc = kernels.volume_backward_ext(
            density_raw.detach().contiguous().numpy(),
            color_raw.detach().contiguous().numpy(),
            origins, dirs, jitter, bbox_r, bg,
            grad_rgb.contiguous().numpy(),
            grad_alpha.contiguous().numpy(),
        )
        return torch.from_numpy(gd), torch.from_numpy(gc), None, None, None, None, None


def _render_rays_torch(density_raw, color_raw, origins, dirs, jitter, bbox_r, bg):
    """Pure-torch volume rendering; same math as the compiled kernel, float64 inside."""
    n_samp = jitter.shape[1]
    g = density_raw.shape[0]
    dens = density_raw.double()
    col = color_raw.double()
    o = torch.from_numpy(origins)
    d = torch.from_numpy(dirs)
    jit = torch.from_numpy(jitter)
    bg_t = torch.from_numpy(bg)

    with torch.no_grad():
        ta = (-bbox_r - o) / d
        tb = (bbox_r - o) / d
        tlo = torch.minimum(ta, tb)
        thi = torch.maximum(ta, tb)
        t0 = torch.clamp(tlo.amax(dim=1), min=1e-6)
        t1 = thi.amin(dim=1)
        hit = t1 > t0
        t0 = torch.where(hit, t0, torch.ones_like(t0))
        delta = torch.where(hit, (t1 - t0) / n_samp, torch.zeros_like(t0))

    ts = t0[:, None] + (torch.arange(n_samp, dtype=torch.float64) + jit) * delta[:, None]
    pos = o[:, None, :] + ts[..., None] * d[:, None, :]
    scale = (g - 1.0) / (2.0 * bbox_r)
    u = torch.clamp((pos + bbox_r) * scale, min=0.0, max=g - 1.0)
    i0 = torch.clamp(u.floor().long(), max=g - 2)
    f = u - i0

    ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    corner_w = [
        (0, 0, 0, (1 - fx) * (1 - fy) * (1 - fz)),
        (0, 0, 1, (1 - fx) * (1 - fy) * fz),
        (0, 1, 0, (1 - fx) * fy * (1 - fz)),
        (0, 1, 1, (1 - fx) * fy * fz),
        (1, 0, 0, fx * (1 - fy) * (1 - fz)),
        (1, 0, 1, fx * (1 - fy) * fz),
        (1, 1, 0, fx * fy * (1 - fz)),
        (1, 1, 1, fx * fy * fz),
    ]
    dens_flat = dens.reshape(-1)
    col_flat = col.reshape(-1, 3)
    raw_d = torch.zeros_like(fx)
    raw_c = torch.zeros(fx.shape + (3,), dtype=torch.float64)
    for ox_, oy_, oz_, w in corner_w:
        idx = ((ix + ox_) * g + (iy + oy_)) * g + (iz + oz_)
        raw_d = raw_d + w * dens_flat[idx]
        raw_c = raw_c + w[..., None] * col_flat[idx]

    sigma = F.softplus(raw_d)
    alpha = 1.0 - torch.exp(-sigma * delta[:, None])
    one_m = 1.0 - alpha
    trans = torch.cat([torch.ones_like(one_m[:, :1]), torch.cumprod(one_m, dim=1)[:, :-1]], dim=1)
    weights = trans * alpha
    t_final = trans[:, -1] * one_m[:, -1]
    rgb = (weights[..., None] * torch.sigmoid(raw_c)).sum(dim=1) + t_final[:, None] * bg_t
    alpha_acc = 1.0 - t_final
    return rgb, alpha_acc


def render_diff(
    field: VoxelField,
    pose: CameraPose,
    resolution: int,
    bg_color=(1.0, 1.0, 1.0),
    rng: np.random.Generator | None = None,
    n_samples: int = N_SAMPLES_PER_RAY,
    backend: str | None = None,
):
    """Differentiable render of the field; returns (rgb (H,W,3), alpha_acc (H,W)).

    `rng` draws the per-ray stratified jitter; None uses bin midpoints, which
    makes the render deterministic (used by gradient checks and snapshots).
    """
    backend = backend or kernels.ACTIVE_BACKEND
    origins, dirs = camera_rays(pose, resolution, resolution)
    n_rays = origins.shape[0]
    if rng is None:
        jitter = np.full((n_rays, n_samples), 0.5)
    else:
        jitter = rng.random((n_rays, n_samples))
    bg = np.asarray(bg_color, dtype=np.float64)
    if backend == "ext":
        rgb, alpha = _CompiledVolumeRender.apply(
            field.density_raw, field.color_raw, origins, dirs, jitter, field.bounding_radius, bg
        )
    else:
        rgb, alpha = _render_rays_torch(
            field.density_raw, field.color_raw, origins, dirs, jitter, field.bounding_radius, bg
        )
    rgb = rgb.to(field.density_raw.dtype).reshape(resolution, resolution, 3)
    alpha = alpha.to(field.density_raw.dtype).reshape(resolution, resolution)
    return rgb, alpha
