# cython: language_level=3
"""Compiled hot loops: bilinear warping, validity-aware pooling, convolution.

Signatures mirror ``_npkernels``; inputs are expected as C-contiguous
float64 (and uint8 for masks), which the dispatcher in ``__init__`` enforces.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, floor, INFINITY

cnp.import_array()

cdef double MIN_FRONT_Z = 1e-6
cdef double BORDER_SNAP = 1e-9


cdef inline void _sample(const double[:, :, ::1] img, double u, double v,
                         double* out, Py_ssize_t c) noexcept nogil:
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t x0, y0, x1, y1, k
    cdef double ax, ay, top, bot
    x0 = <Py_ssize_t>floor(u)
    y0 = <Py_ssize_t>floor(v)
    if x0 > w - 2:
        x0 = w - 2
    if x0 < 0:
        x0 = 0
    if y0 > h - 2:
        y0 = h - 2
    if y0 < 0:
        y0 = 0
    x1 = x0 + 1 if x0 + 1 < w else w - 1
    y1 = y0 + 1 if y0 + 1 < h else h - 1
    ax = u - x0
    ay = v - y0
    for k in range(c):
        top = (1.0 - ax) * img[y0, x0, k] + ax * img[y0, x1, k]
        bot = (1.0 - ax) * img[y1, x0, k] + ax * img[y1, x1, k]
        out[k] = (1.0 - ay) * top + ay * bot


def bilinear(const double[:, :, ::1] img, const double[::1] u, const double[::1] v):
    cdef Py_ssize_t n = u.shape[0], c = img.shape[2], i, k
    cdef double w1 = img.shape[1] - 1, h1 = img.shape[0] - 1
    out_arr = np.zeros((n, c), dtype=np.float64)
    inb_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] out = out_arr
    cdef unsigned char[::1] inb = inb_arr
    with nogil:
        for i in range(n):
            if u[i] >= 0.0 and u[i] <= w1 and v[i] >= 0.0 and v[i] <= h1:
                inb[i] = 1
                _sample(img, u[i], v[i], &out[i, 0], c)
    return out_arr, inb_arr


cdef inline double _snap(double x, double hi) noexcept nogil:
    if fabs(x) <= BORDER_SNAP:
        return 0.0
    if fabs(x - hi) <= BORDER_SNAP:
        return hi
    return x


def warp(const double[:, :, ::1] src, const double[:, ::1] depth,
         const unsigned char[:, ::1] valid, double fx, double fy, double cx,
         double cy, const double[:, ::1] rot, const double[::1] trans):
    cdef Py_ssize_t h = depth.shape[0], w = depth.shape[1], c = src.shape[2]
    cdef Py_ssize_t i, j
    cdef double sw1 = src.shape[1] - 1, sh1 = src.shape[0] - 1
    cdef double d, x, y, z, xs, ys, zs, u, v
    out_arr = np.zeros((h, w, c), dtype=np.float64)
    mask_arr = np.zeros((h, w), dtype=np.uint8)
    cdef double[:, :, ::1] out = out_arr
    cdef unsigned char[:, ::1] mask = mask_arr
    with nogil:
        for i in range(h):
            for j in range(w):
                if not valid[i, j]:
                    continue
                d = depth[i, j]
                x = d * (j - cx) / fx
                y = d * (i - cy) / fy
                z = d
                xs = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + trans[0]
                ys = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + trans[1]
                zs = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + trans[2]
                if not zs > MIN_FRONT_Z:
                    continue
                u = _snap(fx * xs / zs + cx, sw1)
                v = _snap(fy * ys / zs + cy, sh1)
                if u >= 0.0 and u <= sw1 and v >= 0.0 and v <= sh1:
                    mask[i, j] = 1
                    _sample(src, u, v, &out[i, j, 0], c)
    return out_arr, mask_arr


cdef _masked_pool(const double[:, ::1] depth, const unsigned char[:, ::1] valid,
                  int k, bint take_min):
    cdef Py_ssize_t h = depth.shape[0], w = depth.shape[1], i, j, q, lo, hi
    cdef int r = k // 2
    cdef double fill = INFINITY if take_min else -INFINITY
    cdef double best, val
    rows_arr = np.empty((h, w), dtype=np.float64)
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] rows = rows_arr
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(h):
            for j in range(w):
                lo = j - r if j - r > 0 else 0
                hi = j + r if j + r < w - 1 else w - 1
                best = fill
                for q in range(lo, hi + 1):
                    if valid[i, q]:
                        val = depth[i, q]
                        if (take_min and val < best) or (not take_min and val > best):
                            best = val
                rows[i, j] = best
        for i in range(h):
            lo = i - r if i - r > 0 else 0
            hi = i + r if i + r < h - 1 else h - 1
            for j in range(w):
                best = fill
                for q in range(lo, hi + 1):
                    val = rows[q, j]
                    if (take_min and val < best) or (not take_min and val > best):
                        best = val
                out[i, j] = 0.0 if best == fill else best
    return out_arr


def masked_min_pool(const double[:, ::1] depth, const unsigned char[:, ::1] valid, int k):
    return _masked_pool(depth, valid, k, True)


def masked_max_pool(const double[:, ::1] depth, const unsigned char[:, ::1] valid, int k):
    return _masked_pool(depth, valid, k, False)


def conv2d_same(const double[:, :, ::1] x, const double[:, :, :, ::1] weight,
                const double[::1] bias):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t o = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t oc, ic, i, j, dy, dx, yi, xi, jlo, jhi
    cdef double wt
    if weight.shape[1] != c:
        raise ValueError(f"conv input has {c} channels, kernel expects {weight.shape[1]}")
    out_arr = np.empty((o, h, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for oc in range(o):
            for i in range(h):
                for j in range(w):
                    out[oc, i, j] = bias[oc]
            for ic in range(c):
                for dy in range(kh):
                    for dx in range(kw):
                        wt = weight[oc, ic, dy, dx]
                        if wt == 0.0:
                            continue
                        jlo = pw - dx if pw - dx > 0 else 0
                        jhi = w + pw - dx if w + pw - dx < w else w
                        for i in range(h):
                            yi = i + dy - ph
                            if yi < 0 or yi >= h:
                                continue
                            for j in range(jlo, jhi):
                                xi = j + dx - pw
                                out[oc, i, j] += wt * x[ic, yi, xi]
    return out_arr
