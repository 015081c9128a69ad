# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: analytic ray-primitive rendering and voxel volume rendering.

The pure fallbacks live in mvip.kernels (numpy) and mvip.radiance (torch);
both must stay numerically interchangeable with these kernels.
"""

import numpy as np

cimport cython
cimport openmp
from cython.parallel cimport prange
from libc.math cimport exp, fabs, floor, log1p, sqrt

ctypedef fused real:
    float
    double

DEF KIND_SPHERE = 0
DEF KIND_BOX = 1
DEF HIT_EPS = 1e-6
# Samples behind this transmittance contribute < 1e-12 to any output and are
# skipped; keeps the kernel within 1e-9 of the exhaustive pure path.
DEF TRANS_CUTOFF = 1e-12


cdef inline double _softplus(double x) nogil:
    if x > 20.0:
        return x
    return log1p(exp(x))


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def ray_trace(signed char[::1] kinds,
              double[:, ::1] centers,
              double[:, ::1] extents,
              double[:, ::1] albedos,
              double[:, ::1] origins,
              double[:, ::1] dirs,
              double[::1] bg,
              double[:, ::1] out_rgb,
              double[::1] out_alpha):
    """Nearest-hit ray tracing of sphere/box primitives with headlight shading."""
    cdef Py_ssize_t n_rays = origins.shape[0]
    cdef Py_ssize_t n_prims = kinds.shape[0]
    cdef Py_ssize_t n, p, ax, hit_ax
    cdef double ox, oy, oz, dx, dy, dz
    cdef double best_t, t, b, c2, disc, root
    cdef double ocx, ocy, ocz, r
    cdef double tmin, tmax, t1, t2, inv_d, o_ax, c_ax, e_ax, tmp
    cdef double lam, px, py, pz
    cdef Py_ssize_t best_p
    cdef double best_nx, best_ny, best_nz
    cdef int miss_axis

    with nogil:
        for n in range(n_rays):
            ox = origins[n, 0]; oy = origins[n, 1]; oz = origins[n, 2]
            dx = dirs[n, 0]; dy = dirs[n, 1]; dz = dirs[n, 2]
            best_t = 1e30
            best_p = -1
            best_nx = 0.0; best_ny = 0.0; best_nz = 0.0
            for p in range(n_prims):
                if kinds[p] == KIND_SPHERE:
                    r = extents[p, 0]
                    ocx = ox - centers[p, 0]; ocy = oy - centers[p, 1]; ocz = oz - centers[p, 2]
                    b = ocx * dx + ocy * dy + ocz * dz
                    c2 = ocx * ocx + ocy * ocy + ocz * ocz - r * r
                    disc = b * b - c2
                    if disc < 0.0:
                        continue
                    root = sqrt(disc)
                    t = -b - root
                    if t <= HIT_EPS or t >= best_t:
                        continue
                    px = ox + t * dx; py = oy + t * dy; pz = oz + t * dz
                    best_t = t
                    best_p = p
                    best_nx = (px - centers[p, 0]) / r
                    best_ny = (py - centers[p, 1]) / r
                    best_nz = (pz - centers[p, 2]) / r
                else:
                    tmin = -1e30
                    tmax = 1e30
                    hit_ax = -1
                    miss_axis = 0
                    for ax in range(3):
                        if ax == 0:
                            inv_d = dx; o_ax = ox
                        elif ax == 1:
                            inv_d = dy; o_ax = oy
                        else:
                            inv_d = dz; o_ax = oz
                        c_ax = centers[p, ax]
                        e_ax = extents[p, ax]
                        if fabs(inv_d) < 1e-12:
                            if o_ax < c_ax - e_ax or o_ax > c_ax + e_ax:
                                miss_axis = 1
                                break
                            continue
                        t1 = (c_ax - e_ax - o_ax) / inv_d
                        t2 = (c_ax + e_ax - o_ax) / inv_d
                        if t1 > t2:
                            tmp = t1; t1 = t2; t2 = tmp
                        if t1 > tmin:
                            tmin = t1
                            hit_ax = ax
                        if t2 < tmax:
                            tmax = t2
                        if tmin > tmax:
                            miss_axis = 1
                            break
                    if miss_axis or tmin <= HIT_EPS or tmin >= best_t or hit_ax < 0:
                        continue
                    best_t = tmin
                    best_p = p
                    best_nx = 0.0; best_ny = 0.0; best_nz = 0.0
                    if hit_ax == 0:
                        best_nx = -1.0 if dx > 0.0 else 1.0
                    elif hit_ax == 1:
                        best_ny = -1.0 if dy > 0.0 else 1.0
                    else:
                        best_nz = -1.0 if dz > 0.0 else 1.0
            if best_p < 0:
                out_rgb[n, 0] = bg[0]; out_rgb[n, 1] = bg[1]; out_rgb[n, 2] = bg[2]
                out_alpha[n] = 0.0
            else:
                lam = -(best_nx * dx + best_ny * dy + best_nz * dz)
                if lam < 0.0:
                    lam = 0.0
                out_rgb[n, 0] = albedos[best_p, 0] * lam
                out_rgb[n, 1] = albedos[best_p, 1] * lam
                out_rgb[n, 2] = albedos[best_p, 2] * lam
                out_alpha[n] = 1.0


cdef inline int _ray_box(double ox, double oy, double oz,
                         double dx, double dy, double dz,
                         double r, double* t0, double* t1) nogil:
    """Intersect a ray with the cube [-r, r]^3; returns 1 on hit."""
    cdef double tmin = 1e-6
    cdef double tmax = 1e30
    cdef double o_ax, d_ax, ta, tb, tmp
    cdef Py_ssize_t ax
    for ax in range(3):
        if ax == 0:
            o_ax = ox; d_ax = dx
        elif ax == 1:
            o_ax = oy; d_ax = dy
        else:
            o_ax = oz; d_ax = dz
        if fabs(d_ax) < 1e-12:
            if o_ax < -r or o_ax > r:
                return 0
            continue
        ta = (-r - o_ax) / d_ax
        tb = (r - o_ax) / d_ax
        if ta > tb:
            tmp = ta; ta = tb; tb = tmp
        if ta > tmin:
            tmin = ta
        if tb < tmax:
            tmax = tb
        if tmin > tmax:
            return 0
    t0[0] = tmin
    t1[0] = tmax
    return 1


cdef inline void _grid_coord(double p, double r, double scale, Py_ssize_t g,
                             Py_ssize_t* i0, double* frac) nogil:
    cdef double u = (p + r) * scale
    if u < 0.0:
        u = 0.0
    elif u > g - 1.0:
        u = g - 1.0
    cdef Py_ssize_t i = <Py_ssize_t>floor(u)
    if i > g - 2:
        i = g - 2
    i0[0] = i
    frac[0] = u - i


def volume_render_forward(real[:, :, ::1] density,
                          real[:, :, :, ::1] color,
                          double[:, ::1] origins,
                          double[:, ::1] dirs,
                          double[:, ::1] jitter,
                          double bbox_r,
                          double[::1] bg,
                          real[:, ::1] out_rgb,
                          real[::1] out_alpha):
    """Stratified ray marching with alpha compositing over raw (pre-activation) grids."""
    cdef Py_ssize_t n_rays = origins.shape[0]
    cdef Py_ssize_t n_samp = jitter.shape[1]
    cdef Py_ssize_t g = density.shape[0]
    cdef double scale = (g - 1.0) / (2.0 * bbox_r)
    cdef Py_ssize_t n, k, ch
    cdef double ox, oy, oz, dx, dy, dz, t0, t1, delta, t
    cdef double px, py, pz, fx, fy, fz
    cdef Py_ssize_t ix, iy, iz
    cdef double w000, w001, w010, w011, w100, w101, w110, w111
    cdef double raw_d, sigma, a, w, trans
    cdef double acc0, acc1, acc2, cval

    for n in prange(n_rays, nogil=True, schedule="static"):
        # Plain assignments keep these loop-private under prange; they are
        # written through pointers below, which Cython cannot see.
        t0 = 0.0; t1 = 0.0
        ix = 0; iy = 0; iz = 0
        fx = 0.0; fy = 0.0; fz = 0.0
        ox = origins[n, 0]; oy = origins[n, 1]; oz = origins[n, 2]
        dx = dirs[n, 0]; dy = dirs[n, 1]; dz = dirs[n, 2]
        if not _ray_box(ox, oy, oz, dx, dy, dz, bbox_r, &t0, &t1):
            out_rgb[n, 0] = <real>bg[0]; out_rgb[n, 1] = <real>bg[1]; out_rgb[n, 2] = <real>bg[2]
            out_alpha[n] = 0.0
            continue
        delta = (t1 - t0) / n_samp
        trans = 1.0
        acc0 = 0.0; acc1 = 0.0; acc2 = 0.0
        for k in range(n_samp):
            t = t0 + (k + jitter[n, k]) * delta
            px = ox + t * dx; py = oy + t * dy; pz = oz + t * dz
            _grid_coord(px, bbox_r, scale, g, &ix, &fx)
            _grid_coord(py, bbox_r, scale, g, &iy, &fy)
            _grid_coord(pz, bbox_r, scale, g, &iz, &fz)
            w000 = (1 - fx) * (1 - fy) * (1 - fz)
            w001 = (1 - fx) * (1 - fy) * fz
            w010 = (1 - fx) * fy * (1 - fz)
            w011 = (1 - fx) * fy * fz
            w100 = fx * (1 - fy) * (1 - fz)
            w101 = fx * (1 - fy) * fz
            w110 = fx * fy * (1 - fz)
            w111 = fx * fy * fz
            raw_d = (w000 * density[ix, iy, iz] + w001 * density[ix, iy, iz + 1]
                     + w010 * density[ix, iy + 1, iz] + w011 * density[ix, iy + 1, iz + 1]
                     + w100 * density[ix + 1, iy, iz] + w101 * density[ix + 1, iy, iz + 1]
                     + w110 * density[ix + 1, iy + 1, iz] + w111 * density[ix + 1, iy + 1, iz + 1])
            sigma = _softplus(raw_d)
            a = 1.0 - exp(-sigma * delta)
            w = trans * a
            for ch in range(3):
                cval = (w000 * color[ix, iy, iz, ch] + w001 * color[ix, iy, iz + 1, ch]
                        + w010 * color[ix, iy + 1, iz, ch] + w011 * color[ix, iy + 1, iz + 1, ch]
                        + w100 * color[ix + 1, iy, iz, ch] + w101 * color[ix + 1, iy, iz + 1, ch]
                        + w110 * color[ix + 1, iy + 1, iz, ch] + w111 * color[ix + 1, iy + 1, iz + 1, ch])
                cval = _sigmoid(cval)
                if ch == 0:
                    acc0 = acc0 + w * cval
                elif ch == 1:
                    acc1 = acc1 + w * cval
                else:
                    acc2 = acc2 + w * cval
            trans = trans * (1.0 - a)
            if trans < TRANS_CUTOFF:
                break
        out_rgb[n, 0] = <real>(acc0 + trans * bg[0])
        out_rgb[n, 1] = <real>(acc1 + trans * bg[1])
        out_rgb[n, 2] = <real>(acc2 + trans * bg[2])
        out_alpha[n] = <real>(1.0 - trans)


def volume_render_backward(real[:, :, ::1] density,
                           real[:, :, :, ::1] color,
                           double[:, ::1] origins,
                           double[:, ::1] dirs,
                           double[:, ::1] jitter,
                           double bbox_r,
                           double[::1] bg,
                           real[:, ::1] grad_rgb,
                           real[::1] grad_alpha,
                           real[:, :, ::1] grad_density,
                           real[:, :, :, ::1] grad_color):
    """Hand-derived adjoint of volume_render_forward (recomputes the forward pass).

    Rays are distributed over threads; each thread scatters into its own grid
    buffer and the buffers are reduced afterwards, so results are deterministic.
    """
    cdef Py_ssize_t n_rays = origins.shape[0]
    cdef Py_ssize_t n_samp = jitter.shape[1]
    cdef Py_ssize_t g = density.shape[0]
    cdef double scale = (g - 1.0) / (2.0 * bbox_r)
    cdef int n_threads = openmp.omp_get_max_threads()

    gd_buf = np.zeros((n_threads, g, g, g), dtype=np.float64)
    gc_buf = np.zeros((n_threads, g, g, g, 3), dtype=np.float64)
    a_buf = np.empty((n_threads, n_samp), dtype=np.float64)
    t_buf = np.empty((n_threads, n_samp), dtype=np.float64)
    c_buf = np.empty((n_threads, n_samp, 3), dtype=np.float64)
    spd_buf = np.empty((n_threads, n_samp), dtype=np.float64)
    ijk_buf = np.empty((n_threads, n_samp, 3), dtype=np.intp)
    f_buf = np.empty((n_threads, n_samp, 3), dtype=np.float64)
    cdef double[:, :, :, ::1] gd_v = gd_buf
    cdef double[:, :, :, :, ::1] gc_v = gc_buf
    cdef double[:, ::1] a_v = a_buf
    cdef double[:, ::1] tr_v = t_buf
    cdef double[:, :, ::1] c_v = c_buf
    cdef double[:, ::1] spd_v = spd_buf
    cdef Py_ssize_t[:, :, ::1] ijk_v = ijk_buf
    cdef double[:, :, ::1] f_v = f_buf

    cdef Py_ssize_t n, k, ch, m
    cdef int tid
    cdef double ox, oy, oz, dx, dy, dz, t0, t1, delta, t
    cdef double px, py, pz, fx, fy, fz
    cdef Py_ssize_t ix, iy, iz
    cdef double w000, w001, w010, w011, w100, w101, w110, w111
    cdef double raw_d, sigma, a, trans, cval
    cdef double q0, q1, q2, pprod, g0, g1, g2, galpha
    cdef double d_alpha, d_rawd, wk, d_rawc

    for n in prange(n_rays, nogil=True, schedule="static"):
        # Assignments keep pointer-written variables loop-private under prange.
        t0 = 0.0; t1 = 0.0
        ix = 0; iy = 0; iz = 0
        fx = 0.0; fy = 0.0; fz = 0.0
        ox = origins[n, 0]; oy = origins[n, 1]; oz = origins[n, 2]
        dx = dirs[n, 0]; dy = dirs[n, 1]; dz = dirs[n, 2]
        if not _ray_box(ox, oy, oz, dx, dy, dz, bbox_r, &t0, &t1):
            continue
        tid = openmp.omp_get_thread_num()
        delta = (t1 - t0) / n_samp
        trans = 1.0
        m = n_samp
        for k in range(n_samp):
            t = t0 + (k + jitter[n, k]) * delta
            px = ox + t * dx; py = oy + t * dy; pz = oz + t * dz
            _grid_coord(px, bbox_r, scale, g, &ix, &fx)
            _grid_coord(py, bbox_r, scale, g, &iy, &fy)
            _grid_coord(pz, bbox_r, scale, g, &iz, &fz)
            ijk_v[tid, k, 0] = ix; ijk_v[tid, k, 1] = iy; ijk_v[tid, k, 2] = iz
            f_v[tid, k, 0] = fx; f_v[tid, k, 1] = fy; f_v[tid, k, 2] = fz
            w000 = (1 - fx) * (1 - fy) * (1 - fz)
            w001 = (1 - fx) * (1 - fy) * fz
            w010 = (1 - fx) * fy * (1 - fz)
            w011 = (1 - fx) * fy * fz
            w100 = fx * (1 - fy) * (1 - fz)
            w101 = fx * (1 - fy) * fz
            w110 = fx * fy * (1 - fz)
            w111 = fx * fy * fz
            raw_d = (w000 * density[ix, iy, iz] + w001 * density[ix, iy, iz + 1]
                     + w010 * density[ix, iy + 1, iz] + w011 * density[ix, iy + 1, iz + 1]
                     + w100 * density[ix + 1, iy, iz] + w101 * density[ix + 1, iy, iz + 1]
                     + w110 * density[ix + 1, iy + 1, iz] + w111 * density[ix + 1, iy + 1, iz + 1])
            sigma = _softplus(raw_d)
            spd_v[tid, k] = _sigmoid(raw_d)
            a = 1.0 - exp(-sigma * delta)
            a_v[tid, k] = a
            tr_v[tid, k] = trans
            for ch in range(3):
                cval = (w000 * color[ix, iy, iz, ch] + w001 * color[ix, iy, iz + 1, ch]
                        + w010 * color[ix, iy + 1, iz, ch] + w011 * color[ix, iy + 1, iz + 1, ch]
                        + w100 * color[ix + 1, iy, iz, ch] + w101 * color[ix + 1, iy, iz + 1, ch]
                        + w110 * color[ix + 1, iy + 1, iz, ch] + w111 * color[ix + 1, iy + 1, iz + 1, ch])
                c_v[tid, k, ch] = _sigmoid(cval)
            trans = trans * (1.0 - a)
            if trans < TRANS_CUTOFF:
                m = k + 1
                break

        g0 = grad_rgb[n, 0]; g1 = grad_rgb[n, 1]; g2 = grad_rgb[n, 2]
        galpha = grad_alpha[n]
        # Suffix recurrences avoid dividing by (1 - alpha), which can hit 0.
        q0 = bg[0]; q1 = bg[1]; q2 = bg[2]
        pprod = 1.0
        for k in range(m - 1, -1, -1):
            ix = ijk_v[tid, k, 0]; iy = ijk_v[tid, k, 1]; iz = ijk_v[tid, k, 2]
            fx = f_v[tid, k, 0]; fy = f_v[tid, k, 1]; fz = f_v[tid, k, 2]
            w000 = (1 - fx) * (1 - fy) * (1 - fz)
            w001 = (1 - fx) * (1 - fy) * fz
            w010 = (1 - fx) * fy * (1 - fz)
            w011 = (1 - fx) * fy * fz
            w100 = fx * (1 - fy) * (1 - fz)
            w101 = fx * (1 - fy) * fz
            w110 = fx * fy * (1 - fz)
            w111 = fx * fy * fz
            a = a_v[tid, k]
            d_alpha = (g0 * tr_v[tid, k] * (c_v[tid, k, 0] - q0)
                       + g1 * tr_v[tid, k] * (c_v[tid, k, 1] - q1)
                       + g2 * tr_v[tid, k] * (c_v[tid, k, 2] - q2)
                       + galpha * tr_v[tid, k] * pprod)
            d_rawd = d_alpha * delta * (1.0 - a) * spd_v[tid, k]
            gd_v[tid, ix, iy, iz] += w000 * d_rawd
            gd_v[tid, ix, iy, iz + 1] += w001 * d_rawd
            gd_v[tid, ix, iy + 1, iz] += w010 * d_rawd
            gd_v[tid, ix, iy + 1, iz + 1] += w011 * d_rawd
            gd_v[tid, ix + 1, iy, iz] += w100 * d_rawd
            gd_v[tid, ix + 1, iy, iz + 1] += w101 * d_rawd
            gd_v[tid, ix + 1, iy + 1, iz] += w110 * d_rawd
            gd_v[tid, ix + 1, iy + 1, iz + 1] += w111 * d_rawd
            wk = tr_v[tid, k] * a
            for ch in range(3):
                if ch == 0:
                    d_rawc = g0 * wk
                elif ch == 1:
                    d_rawc = g1 * wk
                else:
                    d_rawc = g2 * wk
                d_rawc = d_rawc * c_v[tid, k, ch] * (1.0 - c_v[tid, k, ch])
                gc_v[tid, ix, iy, iz, ch] += w000 * d_rawc
                gc_v[tid, ix, iy, iz + 1, ch] += w001 * d_rawc
                gc_v[tid, ix, iy + 1, iz, ch] += w010 * d_rawc
                gc_v[tid, ix, iy + 1, iz + 1, ch] += w011 * d_rawc
                gc_v[tid, ix + 1, iy, iz, ch] += w100 * d_rawc
                gc_v[tid, ix + 1, iy, iz + 1, ch] += w101 * d_rawc
                gc_v[tid, ix + 1, iy + 1, iz, ch] += w110 * d_rawc
                gc_v[tid, ix + 1, iy + 1, iz + 1, ch] += w111 * d_rawc
            q0 = a * c_v[tid, k, 0] + (1.0 - a) * q0
            q1 = a * c_v[tid, k, 1] + (1.0 - a) * q1
            q2 = a * c_v[tid, k, 2] + (1.0 - a) * q2
            pprod = pprod * (1.0 - a)

    gd_total = gd_buf.sum(axis=0)
    gc_total = gc_buf.sum(axis=0)
    grad_density_np = np.asarray(grad_density)
    grad_color_np = np.asarray(grad_color)
    grad_density_np += gd_total.astype(grad_density_np.dtype)
    grad_color_np += gc_total.astype(grad_color_np.dtype)
