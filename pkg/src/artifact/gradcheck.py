"""Central finite-difference verification of ``loss_gradient_wrt_depth``.

The loss is piecewise smooth in depth: bilinear sampling has kinks on cell
edges, the L1 term has a kink where the residual changes sign, and pixels can
enter or leave the valid set. A central difference whose interval straddles
one of these kinks does not estimate the derivative, so such pixels are
classified and reported separately instead of being compared.
"""
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .geometry import Intrinsics, PoseSE3, reproject_coords
from .grid import DepthMap, ImageBuf
from .losses import DEFAULT_W_PH, DEFAULT_W_ST, loss_gradient_wrt_depth, scalar_loss

FD_STEP = 1e-3  # meters
REL_TOL = 1e-3
GRAD_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_pixel: tuple
    checked: int
    skipped_nonsmooth: int
    below_floor: int
    step: float
    tol: float
    passed: bool

    def to_dict(self):
        d = asdict(self)
        d["worst_pixel"] = list(self.worst_pixel)
        return d


def finite_difference_gradient(depth: DepthMap, target: ImageBuf, source: ImageBuf, pose: PoseSE3,
                               K: Intrinsics, h=FD_STEP, w_ph=DEFAULT_W_PH, w_st=DEFAULT_W_ST):
    """Central differences of :func:`scalar_loss`, one depth pixel at a time."""
    grad = np.zeros(depth.shape)
    base = depth.depth
    for i, j in zip(*np.nonzero(depth.valid)):
        plus = base.copy()
        minus = base.copy()
        plus[i, j] += h
        minus[i, j] -= h
        fp = scalar_loss(DepthMap(plus, depth.valid), target, source, pose, K, w_ph, w_st)
        fm = scalar_loss(DepthMap(minus, depth.valid), target, source, pose, K, w_ph, w_st)
        grad[i, j] = (fp - fm) / (2.0 * h)
    return grad


def nonsmooth_mask(depth: DepthMap, target: ImageBuf, source: ImageBuf, pose: PoseSE3, K: Intrinsics,
                   h=FD_STEP):
    """Pixels whose ``[d - h, d + h]`` interval crosses a kink of the loss.

    Each reconstructed pixel depends only on its own depth, so perturbing all
    pixels at once gives every pixel's endpoint state in one pass.
    """
    hs, ws = source.shape
    states = []
    for delta in (-h, 0.0, h):
        d = np.where(depth.valid, depth.depth + delta, 0.0)
        valid = depth.valid & (d > 0)
        dm = DepthMap(d, valid)
        u, v, _, ok = reproject_coords(dm, K, pose)
        recon, inb = kernels.warp(source.data, dm.depth, dm.valid, K.fx, K.fy, K.cx, K.cy,
                                  pose.rotation, pose.translation)
        x0 = np.clip(np.floor(np.where(inb, u, 0.0)), 0, max(ws - 2, 0))
        y0 = np.clip(np.floor(np.where(inb, v, 0.0)), 0, max(hs - 2, 0))
        sign = np.sign(target.data - recon)
        states.append((inb, x0, y0, sign))
    bad = np.zeros(depth.shape, dtype=bool)
    ref = states[1]
    for st in (states[0], states[2]):
        bad |= st[0] != ref[0]
        bad |= ref[0] & ((st[1] != ref[1]) | (st[2] != ref[2]))
        bad |= ref[0] & (st[3] != ref[3]).any(axis=2)
    return bad & depth.valid


def relative_error(a, b):
    den = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, np.abs(a - b) / den, 0.0)


def gradcheck(depth: DepthMap, target: ImageBuf, source: ImageBuf, pose: PoseSE3, K: Intrinsics,
              h=FD_STEP, tol=REL_TOL, grad_floor=GRAD_FLOOR, w_ph=DEFAULT_W_PH, w_st=DEFAULT_W_ST):
    analytic = loss_gradient_wrt_depth(depth, target, source, pose, K, w_ph, w_st)
    numeric = finite_difference_gradient(depth, target, source, pose, K, h, w_ph, w_st)
    skip = nonsmooth_mask(depth, target, source, pose, K, h)
    big = np.abs(analytic) > grad_floor
    check = big & ~skip
    rel = np.where(check, relative_error(analytic, numeric), 0.0)
    if check.any():
        flat = int(np.argmax(rel))
        worst = tuple(int(t) for t in np.unravel_index(flat, rel.shape))
        max_rel = float(rel.max())
    else:
        worst, max_rel = (-1, -1), 0.0
    return GradCheckReport(
        max_rel_error=max_rel,
        worst_pixel=worst,
        checked=int(check.sum()),
        skipped_nonsmooth=int((skip & big).sum()),
        below_floor=int((depth.valid & ~big).sum()),
        step=h,
        tol=tol,
        passed=bool(check.any() and max_rel < tol),
    )
