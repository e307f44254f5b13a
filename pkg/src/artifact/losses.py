"""Photometric and structure (SSIM) losses, per-pixel minimum reprojection,
multi-view and multi-scale aggregation, and the analytic gradient of the
single-source loss with respect to target depth.

All scalar reductions are means over valid pixels. With no valid pixel the
reduction is 0 and the reported count is 0.
"""
from dataclasses import dataclass

import numpy as np

from .geometry import Intrinsics, PoseSE3, reproject_coords, warp_image
from .grid import DepthMap, ImageBuf, Pyramid, upsample_to

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WINDOW = 3

# Not specified by the method; the usual 0.15 L1 / 0.85 SSIM split.
DEFAULT_W_PH = 0.15
DEFAULT_W_ST = 0.85
MIN_MODES = ("separate", "joint")


@dataclass(frozen=True, eq=False)
class LossMap:
    value: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.value, dtype=np.float64)
        m = np.asarray(self.valid, dtype=bool)
        if v.shape != m.shape or v.ndim != 2:
            raise ValueError(f"loss map value {v.shape} and mask {m.shape} must be equal 2-D shapes")
        v = np.where(m, v, 0.0)
        if not np.all(np.isfinite(v)) or (v < 0).any():
            raise ValueError("loss values must be finite and non-negative")
        v.setflags(write=False)
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "valid", m)

    @property
    def shape(self):
        return self.value.shape

    def count(self):
        return int(self.valid.sum())

    def mean(self):
        n = self.count()
        if n == 0:
            return 0.0
        return float(self.value[self.valid].sum() / n)


@dataclass(frozen=True)
class LossBreakdown:
    photometric: float
    structure: float
    per_scale: tuple
    total: float
    valid_pixels: int
    w_ph: float = DEFAULT_W_PH
    w_st: float = DEFAULT_W_ST

    def to_dict(self):
        return {
            "photometric": self.photometric,
            "structure": self.structure,
            "total": self.total,
            "valid_pixels": self.valid_pixels,
            "w_ph": self.w_ph,
            "w_st": self.w_st,
            "per_scale": [
                {"scale": s, "photometric": p, "structure": q} for s, p, q in self.per_scale
            ],
        }


def _check_pair(target, recon, valid):
    if target.shape != recon.shape or target.channels != recon.channels:
        raise ValueError(f"image size mismatch: {target.data.shape} vs {recon.data.shape}")
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != target.shape:
        raise ValueError(f"mask shape {valid.shape} != image shape {target.shape}")
    return valid


def photometric_map(target: ImageBuf, recon: ImageBuf, valid) -> LossMap:
    """Per-pixel mean absolute difference over channels."""
    valid = _check_pair(target, recon, valid)
    return LossMap(np.abs(target.data - recon.data).mean(axis=2), valid)


def _box3(a):
    """3x3 mean filter with reflect padding, same size output. a: (H, W, C)."""
    h, w = a.shape[:2]
    p = np.pad(a, ((1, 1), (1, 1), (0, 0)), mode="reflect")
    s = p[0:h] + p[1:h + 1] + p[2:h + 2]
    s = s[:, 0:w] + s[:, 1:w + 1] + s[:, 2:w + 2]
    return s / 9.0


def _box3_adjoint(g):
    """Adjoint of :func:`_box3` (reflect padding folded back onto the interior)."""
    h, w = g.shape[:2]
    gz = np.pad(g, ((2, 2), (2, 2), (0, 0)))
    s = gz[0:h + 2] + gz[1:h + 3] + gz[2:h + 4]
    s = s[:, 0:w + 2] + s[:, 1:w + 3] + s[:, 2:w + 4]
    s /= 9.0
    r = s[1:h + 1].copy()
    r[1] += s[0]
    r[h - 2] += s[h + 1]
    out = r[:, 1:w + 1].copy()
    out[:, 1] += r[:, 0]
    out[:, w - 2] += r[:, w + 1]
    return out


def _masked_pair(x, y, valid):
    # Invalid samples are replaced in both images by their midpoint so they
    # add no dissimilarity to neighbouring windows. Symmetric in (x, y).
    mid = 0.5 * (x + y)
    m = valid[:, :, None]
    return np.where(m, x, mid), np.where(m, y, mid)


def _ssim_terms(x, y):
    mu_x = _box3(x)
    mu_y = _box3(y)
    exx = _box3(x * x)
    eyy = _box3(y * y)
    exy = _box3(x * y)
    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * (exy - mu_x * mu_y) + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = (exx - mu_x * mu_x) + (eyy - mu_y * mu_y) + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return s, (mu_x, mu_y, a1, a2, b1, b2)


def ssim_index(x, y):
    """Per-pixel, per-channel SSIM of two (H, W, C) arrays over 3x3 windows."""
    return _ssim_terms(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))[0]


def ssim_map(target: ImageBuf, recon: ImageBuf, valid) -> LossMap:
    """Per-pixel ``(1 - SSIM) / 2`` clamped to [0, 1], averaged over channels."""
    valid = _check_pair(target, recon, valid)
    if target.height < SSIM_WINDOW or target.width < SSIM_WINDOW:
        raise ValueError(f"image {target.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    x, y = _masked_pair(target.data, recon.data, valid)
    s = ssim_index(x, y)
    return LossMap(np.clip(0.5 * (1.0 - s), 0.0, 1.0).mean(axis=2), valid)


def combined_map(target: ImageBuf, recon: ImageBuf, valid, w_ph=DEFAULT_W_PH, w_st=DEFAULT_W_ST) -> LossMap:
    ph = photometric_map(target, recon, valid)
    st = ssim_map(target, recon, valid)
    return LossMap(w_ph * ph.value + w_st * st.value, ph.valid)


def _stack(maps):
    if not maps:
        raise ValueError("need at least one loss map")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ValueError(f"loss map shapes differ: {shape} vs {m.shape}")
    vals = np.stack([m.value for m in maps])
    valid = np.stack([m.valid for m in maps])
    return vals, valid


def masked_argmin(vals, valid):
    """Index of the smallest valid entry along axis 0 (ties -> lowest index).

    Returns ``(index, any_valid)``; index is 0 where nothing is valid.
    """
    masked = np.where(valid, vals, np.inf)
    return np.argmin(masked, axis=0), valid.any(axis=0)


def min_reprojection(maps) -> LossMap:
    """Per-pixel minimum over maps, skipping contributors that are invalid there."""
    vals, valid = _stack(list(maps))
    idx, anyv = masked_argmin(vals, valid)
    out = np.take_along_axis(vals, idx[None], axis=0)[0]
    return LossMap(np.where(anyv, out, 0.0), anyv)


def reprojection_maps(target: ImageBuf, depth: DepthMap, sources, poses, K: Intrinsics):
    """Warp each source into the target; return ``[(photometric, structure), ...]``."""
    if len(sources) == 0:
        raise ValueError("need at least one source view")
    if len(sources) != len(poses):
        raise ValueError(f"{len(sources)} sources but {len(poses)} poses")
    if depth.shape != target.shape:
        raise ValueError(f"depth {depth.shape} and target {target.shape} differ in size")
    out = []
    for src, pose in zip(sources, poses):
        recon, valid = warp_image(src, depth, K, pose)
        out.append((photometric_map(target, recon, valid), ssim_map(target, recon, valid)))
    return out


def reduce_min(per_source, min_mode="separate", w_ph=DEFAULT_W_PH, w_st=DEFAULT_W_ST):
    """Combine per-source (photometric, structure) maps with the per-pixel minimum.

    ``separate`` takes the minimum of each term independently. ``joint`` picks,
    per pixel, the source with the smallest weighted sum and reports both terms
    from that source.
    """
    if min_mode not in MIN_MODES:
        raise ValueError(f"min_mode must be one of {MIN_MODES}, got {min_mode!r}")
    phs = [p for p, _ in per_source]
    sts = [s for _, s in per_source]
    if min_mode == "separate":
        return min_reprojection(phs), min_reprojection(sts)
    pv, valid = _stack(phs)
    sv, _ = _stack(sts)
    idx, anyv = masked_argmin(w_ph * pv + w_st * sv, valid)
    ph = np.take_along_axis(pv, idx[None], axis=0)[0]
    st = np.take_along_axis(sv, idx[None], axis=0)[0]
    return LossMap(np.where(anyv, ph, 0.0), anyv), LossMap(np.where(anyv, st, 0.0), anyv)


def _breakdown(per_scale, scale_weights, counts, w_ph, w_st):
    photometric = 0.0
    structure = 0.0
    for (_, ph, st), sw in zip(per_scale, scale_weights):
        photometric += sw * ph
        structure += sw * st
    return LossBreakdown(
        photometric=photometric,
        structure=structure,
        per_scale=tuple(per_scale),
        total=w_ph * photometric + w_st * structure,
        valid_pixels=int(sum(counts)),
        w_ph=w_ph,
        w_st=w_st,
    )


def pairwise_poses(frame_poses):
    """Relative poses for all ordered pairs from per-frame poses.

    ``frame_poses[i]`` maps reference-camera coordinates to frame ``i``;
    the result maps ``(x, y)`` to ``T_x_to_y``.
    """
    out = {}
    for x, px in enumerate(frame_poses):
        inv = px.inverse()
        for y, py in enumerate(frame_poses):
            if x != y:
                out[(x, y)] = py.compose(inv)
    return out


def multiview_consistency_loss(frames, poses, K: Intrinsics, pairs=None, w_ph=DEFAULT_W_PH,
                               w_st=DEFAULT_W_ST, min_mode="separate") -> LossBreakdown:
    """Multi-view photometric + structure loss over ordered frame pairs.

    ``frames`` is a list of ``(ImageBuf, DepthMap)``; ``poses[(x, y)]`` maps
    frame-x camera coordinates into frame y. For every target x, the views y
    paired with it are warped into x with ``d_x``, the per-pixel minimum is
    taken over them, and the result is averaged over pixels and then over
    targets.
    """
    if len(frames) < 2:
        raise ValueError("multi-view loss needs at least two frames")
    if pairs is None:
        pairs = [(x, y) for x in range(len(frames)) for y in range(len(frames)) if x != y]
    targets = {}
    for x, y in pairs:
        if x == y:
            raise ValueError(f"pair ({x}, {y}) warps a frame onto itself")
        if (x, y) not in poses:
            raise KeyError(f"missing pose for pair ({x}, {y})")
        targets.setdefault(x, []).append(y)
    phs, sts, counts = [], [], []
    for x, ys in targets.items():
        img, depth = frames[x]
        maps = reprojection_maps(img, depth, [frames[y][0] for y in ys], [poses[(x, y)] for y in ys], K)
        ph, st = reduce_min(maps, min_mode, w_ph, w_st)
        phs.append(ph.mean())
        sts.append(st.mean())
        counts.append(ph.count())
    per_scale = [(0, float(np.mean(phs)), float(np.mean(sts)))]
    return _breakdown(per_scale, [1.0], counts, w_ph, w_st)


def multiscale_loss(depth_pyramid: Pyramid, target: ImageBuf, sources, poses, K: Intrinsics,
                    scale_weights, w_ph=DEFAULT_W_PH, w_st=DEFAULT_W_ST,
                    min_mode="separate") -> LossBreakdown:
    """Minimum-reprojection loss with every depth level evaluated at full resolution.

    Coarse depth levels are upsampled (nearest neighbour) to the target size,
    so each coarse value reconstructs a block of full-resolution pixels.
    """
    if len(scale_weights) != len(depth_pyramid):
        raise ValueError(f"{len(scale_weights)} scale weights for {len(depth_pyramid)} pyramid levels")
    per_scale, counts = [], []
    h, w = target.shape
    for k, level in enumerate(depth_pyramid.levels):
        depth = upsample_to(level, h, w)
        ph, st = reduce_min(reprojection_maps(target, depth, sources, poses, K), min_mode, w_ph, w_st)
        per_scale.append((k, ph.mean(), st.mean()))
        counts.append(ph.count())
    return _breakdown(per_scale, list(scale_weights), counts, w_ph, w_st)


# ---------------------------------------------------------------------------
# single-source scalar loss and its analytic depth gradient


def scalar_loss(depth: DepthMap, target: ImageBuf, source: ImageBuf, pose: PoseSE3, K: Intrinsics,
                w_ph=DEFAULT_W_PH, w_st=DEFAULT_W_ST):
    """``w_ph * mean(photometric) + w_st * mean(structure)`` for one source view."""
    recon, valid = warp_image(source, depth, K, pose)
    return w_ph * photometric_map(target, recon, valid).mean() + w_st * ssim_map(target, recon, valid).mean()


def _bilinear_with_grad(img, u, v):
    """Bilinear sample plus d/du, d/dv on the same clamped stencil as the kernels."""
    h, w, _ = img.shape
    x0 = np.clip(np.floor(u), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(v), 0, max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (u - x0)[..., None]
    ay = (v - y0)[..., None]
    i00, i01, i10, i11 = img[y0, x0], img[y0, x1], img[y1, x0], img[y1, x1]
    top = (1.0 - ax) * i00 + ax * i01
    bot = (1.0 - ax) * i10 + ax * i11
    return (1.0 - ay) * top + ay * bot, (1.0 - ay) * (i01 - i00) + ay * (i11 - i10), bot - top


def _ssim_grad_wrt_y(x, y, upstream):
    """d(sum_p upstream[p] * ssim_loss[p]) / dy for (H, W, C) images."""
    s, (mu_x, mu_y, a1, a2, b1, b2) = _ssim_terms(x, y)
    c = x.shape[2]
    inside = (s > -1.0) & (s < 1.0)
    g_s = np.where(inside, -0.5 / c * upstream[:, :, None], 0.0)
    den = b1 * b2
    ds_dmu = (2.0 * mu_x * a2 - 2.0 * mu_x * a1) / den - s * (2.0 * mu_y * b2 - 2.0 * mu_y * b1) / den
    ds_deyy = -s / b2
    ds_dexy = 2.0 * a1 / den
    return (
        _box3_adjoint(g_s * ds_dmu)
        + 2.0 * y * _box3_adjoint(g_s * ds_deyy)
        + x * _box3_adjoint(g_s * ds_dexy)
    )


def loss_gradient_wrt_depth(depth: DepthMap, target: ImageBuf, source: ImageBuf, pose: PoseSE3,
                            K: Intrinsics, w_ph=DEFAULT_W_PH, w_st=DEFAULT_W_ST):
    """Analytic d(scalar_loss)/d(depth) at every pixel; 0 where the warp is invalid.

    Chains the loss through bilinear sampling, projection into the source and
    back-projection of the target pixel.
    """
    if source.shape != depth.shape or target.shape != depth.shape:
        raise ValueError("depth, target and source must share dimensions")
    if target.height < SSIM_WINDOW or target.width < SSIM_WINDOW:
        raise ValueError("image smaller than the SSIM window")
    h, w = depth.shape
    u, v, zs, ok = reproject_coords(depth, K, pose)
    recon, valid = warp_image(source, depth, K, pose)
    n = int(valid.sum())
    grad = np.zeros((h, w))
    if n == 0:
        return grad
    x = target.data
    y = recon.data
    c = x.shape[2]

    # photometric: mean over valid pixels of mean_c |x - y|
    g_y = np.where(valid[:, :, None], np.sign(y - x) / (c * n), 0.0) * w_ph
    # structure
    xm, ym = _masked_pair(x, y, valid)
    g_y = g_y + _ssim_grad_wrt_y(xm, ym, np.where(valid, w_st / n, 0.0))
    g_y = np.where(valid[:, :, None], g_y, 0.0)

    # sampling position as a function of depth
    _, di_du, di_dv = _bilinear_with_grad(source.data, np.where(valid, u, 0.0), np.where(valid, v, 0.0))
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    ray = np.stack([(jj - K.cx) / K.fx, (ii - K.cy) / K.fy, np.ones_like(jj)], axis=-1)
    q = ray @ pose.rotation.T  # d p_src / d depth
    d = np.where(valid, depth.depth, 1.0)
    xs = d * ray[..., 0]
    ys = d * ray[..., 1]
    ps = np.stack([xs, ys, d], axis=-1) @ pose.rotation.T + pose.translation
    z = np.where(valid, ps[..., 2], 1.0)
    du_dd = K.fx * (q[..., 0] * z - ps[..., 0] * q[..., 2]) / (z * z)
    dv_dd = K.fy * (q[..., 1] * z - ps[..., 1] * q[..., 2]) / (z * z)
    dy_dd = di_du * du_dd[..., None] + di_dv * dv_dd[..., None]
    grad = (g_y * dy_dd).sum(axis=2)
    return np.where(valid, grad, 0.0)
