"""Backend selection for the hot kernels.

The compiled extension (mvip._core) is preferred when importable; pure
implementations take over otherwise, or when MVIP_PURE_PYTHON is set. The
analytic ray tracer's pure path lives here (numpy); the volume renderer's
pure path is the torch autograd implementation in mvip.radiance.
"""

from __future__ import annotations

import os

import numpy as np

FORCE_PURE = os.environ.get("MVIP_PURE_PYTHON", "").lower() in ("1", "true", "yes")

try:
    from . import _core
except ImportError:
    _core = None

HAS_EXT = _core is not None
ACTIVE_BACKEND = "ext" if (HAS_EXT and not FORCE_PURE) else "pure"

KIND_SPHERE = 0
KIND_BOX = 1
_HIT_EPS = 1e-6


def ray_trace(kinds, centers, extents, albedos, origins, dirs, bg, backend=None):
    """Nearest-hit render of packed primitives; returns (rgb (N,3), alpha (N,))."""
    backend = backend or ACTIVE_BACKEND
    kinds = np.ascontiguousarray(kinds, dtype=np.int8)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    extents = np.ascontiguousarray(extents, dtype=np.float64)
    albedos = np.ascontiguousarray(albedos, dtype=np.float64)
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    bg = np.ascontiguousarray(bg, dtype=np.float64)
    if backend == "ext":
        if _core is None:
            raise RuntimeError("compiled extension requested but not available")
        rgb = np.empty((origins.shape[0], 3))
        alpha = np.empty(origins.shape[0])
        _core.ray_trace(kinds, centers, extents, albedos, origins, dirs, bg, rgb, alpha)
        return rgb, alpha
    return _ray_trace_numpy(kinds, centers, extents, albedos, origins, dirs, bg)


def _ray_trace_numpy(kinds, centers, extents, albedos, origins, dirs, bg):
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_prim = np.full(n, -1, dtype=np.int64)
    best_normal = np.zeros((n, 3))
    for p in range(kinds.shape[0]):
        if kinds[p] == KIND_SPHERE:
            r = extents[p, 0]
            oc = origins - centers[p]
            b = np.einsum("ij,ij->i", oc, dirs)
            c2 = np.einsum("ij,ij->i", oc, oc) - r * r
            disc = b * b - c2
            ok = disc >= 0
            t = np.where(ok, -b - np.sqrt(np.maximum(disc, 0.0)), np.inf)
            hit = ok & (t > _HIT_EPS) & (t < best_t)
            if np.any(hit):
                pts = origins[hit] + t[hit, None] * dirs[hit]
                best_normal[hit] = (pts - centers[p]) / r
                best_t[hit] = t[hit]
                best_prim[hit] = p
        else:
            lo = centers[p] - extents[p]
            hi = centers[p] + extents[p]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo - origins) / dirs
                t2 = (hi - origins) / dirs
            t_small = np.minimum(t1, t2)
            t_big = np.maximum(t1, t2)
            # Axis-parallel rays: slab test degenerates to an inside check.
            par = np.abs(dirs) < 1e-12
            inside = (origins >= lo) & (origins <= hi)
            t_small = np.where(par, np.where(inside, -np.inf, np.inf), t_small)
            t_big = np.where(par, np.where(inside, np.inf, -np.inf), t_big)
            tmin_ax = np.argmax(t_small, axis=1)
            tmin = t_small[np.arange(n), tmin_ax]
            tmax = np.min(t_big, axis=1)
            hit = (tmin <= tmax) & (tmin > _HIT_EPS) & (tmin < best_t) & np.isfinite(tmin)
            if np.any(hit):
                normal = np.zeros((int(hit.sum()), 3))
                ax = tmin_ax[hit]
                sign = -np.sign(dirs[hit, ax])
                normal[np.arange(normal.shape[0]), ax] = sign
                best_normal[hit] = normal
                best_t[hit] = tmin[hit]
                best_prim[hit] = p
    hit_any = best_prim >= 0
    lam = np.maximum(0.0, -np.einsum("ij,ij->i", best_normal, dirs))
    rgb = np.broadcast_to(bg, (n, 3)).copy()
    rgb[hit_any] = albedos[best_prim[hit_any]] * lam[hit_any, None]
    alpha = hit_any.astype(np.float64)
    return rgb, alpha


def volume_forward_ext(density, color, origins, dirs, jitter, bbox_r, bg):
    """Compiled volume-render forward on raw grids; arrays must share dtype."""
    if _core is None:
        raise RuntimeError("compiled extension not available")
    n = origins.shape[0]
    rgb = np.empty((n, 3), dtype=density.dtype)
    alpha = np.empty(n, dtype=density.dtype)
    _core.volume_render_forward(density, color, origins, dirs, jitter, float(bbox_r), bg, rgb, alpha)
    return rgb, alpha


def volume_backward_ext(density, color, origins, dirs, jitter, bbox_r, bg, grad_rgb, grad_alpha):
    if _core is None:
        raise RuntimeError("compiled extension not available")
    grad_density = np.zeros_like(density)
    grad_color = np.zeros_like(color)
    _core.volume_render_backward(
        density, color, origins, dirs, jitter, float(bbox_r), bg,
        grad_rgb, grad_alpha, grad_density, grad_color,
    )
    return grad_density, grad_color
