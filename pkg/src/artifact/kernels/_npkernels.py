"""Pure numpy implementations of the hot kernels.

These are the fallback used when the compiled ``_ckernels`` extension is not
available. Both backends evaluate the same arithmetic in the same order so
their outputs agree to rounding.
"""
import numpy as np

MIN_FRONT_Z = 1e-6
# Reprojected coordinates this close to the raster edge are snapped onto it,
# so round-off in an identity warp cannot push border pixels out of bounds.
BORDER_SNAP = 1e-9


def bilinear(img, u, v):
    """Sample ``img`` (H, W, C) at continuous coordinates.

    Returns ``(values, in_bounds)`` where ``values`` has shape ``u.shape + (C,)``.
    The 2x2 stencil is clamped to the raster; points outside
    ``[0, W-1] x [0, H-1]`` (or non-finite) get value 0 and ``in_bounds=False``.
    """
    h, w, c = img.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        inb = (u >= 0.0) & (u <= w - 1) & (v >= 0.0) & (v <= h - 1)
    uu = np.where(inb, u, 0.0)
    vv = np.where(inb, v, 0.0)
    x0 = np.clip(np.floor(uu), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(vv), 0, max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (uu - x0)[..., None]
    ay = (vv - y0)[..., None]
    top = (1.0 - ax) * img[y0, x0] + ax * img[y0, x1]
    bot = (1.0 - ax) * img[y1, x0] + ax * img[y1, x1]
    out = (1.0 - ay) * top + ay * bot
    out[~inb] = 0.0
    return out, inb


def reproject(depth, valid, fx, fy, cx, cy, rot, trans):
    """Map every target pixel with valid depth into the source camera.

    Returns ``(u, v, z, ok)``; ``ok`` is False where depth is invalid or the
    point lands behind the source camera.
    """
    h, w = depth.shape
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d = np.where(valid, depth, 1.0)
    x = d * (jj - cx) / fx
    y = d * (ii - cy) / fy
    z = d
    xs = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + trans[0]
    ys = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + trans[1]
    zs = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + trans[2]
    ok = valid & (zs > MIN_FRONT_Z)
    zsafe = np.where(ok, zs, 1.0)
    u = _snap(fx * xs / zsafe + cx, w - 1)
    v = _snap(fy * ys / zsafe + cy, h - 1)
    return u, v, zs, ok


def _snap(x, hi):
    x = np.where(np.abs(x) <= BORDER_SNAP, 0.0, x)
    return np.where(np.abs(x - hi) <= BORDER_SNAP, float(hi), x)


def warp(src, depth, valid, fx, fy, cx, cy, rot, trans):
    u, v, _, ok = reproject(depth, valid, fx, fy, cx, cy, rot, trans)
    u = np.where(ok, u, -1.0)
    out, inb = bilinear(src, u, v)
    mask = ok & inb
    out[~mask] = 0.0
    return out, mask


def _window_reduce(arr, k, fill, op):
    r = k // 2
    padded = np.pad(arr, r, mode="constant", constant_values=fill)
    # separable: rows then columns
    rows = op(np.lib.stride_tricks.sliding_window_view(padded, k, axis=1), axis=-1)
    return op(np.lib.stride_tricks.sliding_window_view(rows, k, axis=0), axis=-1)


def masked_min_pool(depth, valid, k):
    arr = np.where(valid, depth, np.inf)
    out = _window_reduce(arr, k, np.inf, np.min)
    return np.where(np.isinf(out), 0.0, out)


def masked_max_pool(depth, valid, k):
    arr = np.where(valid, depth, -np.inf)
    out = _window_reduce(arr, k, -np.inf, np.max)
    return np.where(np.isinf(out), 0.0, out)


def conv2d_same(x, weight, bias):
    """Zero-padded stride-1 cross-correlation. x: (C, H, W); weight: (O, C, k, k)."""
    c, h, w = x.shape
    o, c2, kh, kw = weight.shape
    if c2 != c:
        raise ValueError(f"conv input has {c} channels, kernel expects {c2}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    out = np.empty((o, h, w), dtype=np.float64)
    out[:] = np.asarray(bias, dtype=np.float64)[:, None, None]
    for dy in range(kh):
        for dx in range(kw):
            out += np.tensordot(weight[:, :, dy, dx], xp[:, dy:dy + h, dx:dx + w], axes=(1, 0))
    return out
