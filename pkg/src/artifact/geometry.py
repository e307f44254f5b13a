"""Pinhole camera model, rigid poses and inverse warping between views.

Pose convention used everywhere in this package: ``T_tgt_to_src`` maps a
point from target-camera coordinates to source-camera coordinates,
``p_src = R @ p_tgt + t``.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import DepthMap, ImageBuf

MIN_FRONT_Z = kernels._npkernels.MIN_FRONT_Z
ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy) and np.isfinite(self.fx) and np.isfinite(self.fy)):
            raise ValueError("intrinsics must be finite")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor):
        """Intrinsics for an image resized by ``factor`` (pixel-centre convention)."""
        return Intrinsics(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor)


@dataclass(frozen=True, eq=False)
class PoseSE3:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose must be finite")
        if np.abs(r.T @ r - np.eye(3)).max() > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant is not +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis_angle, translation):
        return cls(rotation_from_axis_angle(axis_angle), translation)

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        rt = self.rotation.T
        return PoseSE3(rt, -rt @ self.translation)

    def compose(self, other):
        """``self @ other``: apply ``other`` first, then ``self``."""
        return PoseSE3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, p):
        return np.asarray(p, dtype=np.float64) @ self.rotation.T + self.translation


def rotation_from_axis_angle(w):
    """Rodrigues' formula."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    if theta < 1e-15:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def nearest_rotation(m):
    """Project a 3x3 matrix onto SO(3) (SVD polar factor)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def backproject(K: Intrinsics, u, v, d):
    """Pixel (u, v) at depth d -> camera-frame point."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(~(d > 0)):
        raise ValueError("backproject requires depth > 0")
    x = d * (np.asarray(u, dtype=np.float64) - K.cx) / K.fx
    y = d * (np.asarray(v, dtype=np.float64) - K.cy) / K.fy
    return np.stack(np.broadcast_arrays(x, y, d), axis=-1)


def project(K: Intrinsics, p):
    """Camera-frame point(s) -> ``(u, v, z, in_front)``."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    in_front = z > MIN_FRONT_Z
    zs = np.where(in_front, z, 1.0)
    u = K.fx * p[..., 0] / zs + K.cx
    v = K.fy * p[..., 1] / zs + K.cy
    if p.ndim == 1:
        return float(u), float(v), float(z), bool(in_front)
    return u, v, z, in_front


def reproject_coords(depth_tgt: DepthMap, K: Intrinsics, T_tgt_to_src: PoseSE3):
    """Source-image coordinates of every target pixel: ``(u, v, z_src, ok)``."""
    return kernels._npkernels.reproject(
        depth_tgt.depth, depth_tgt.valid, K.fx, K.fy, K.cx, K.cy,
        T_tgt_to_src.rotation, T_tgt_to_src.translation,
    )


def warp_image(src: ImageBuf, depth_tgt: DepthMap, K: Intrinsics, T_tgt_to_src: PoseSE3, backend=None):
    """Inverse-warp ``src`` into the target view using the target's depth.

    Returns ``(recon, valid)``. ``valid`` is False where the depth is invalid,
    the point is behind the source camera, or it projects outside the source
    raster; those pixels carry color 0.
    """
    if src.shape != depth_tgt.shape:
        raise ValueError(f"source image {src.shape} and target depth {depth_tgt.shape} differ in size")
    be = kernels.get_backend(backend)
    recon, valid = be.warp(
        src.data, depth_tgt.depth, depth_tgt.valid, K.fx, K.fy, K.cx, K.cy,
        T_tgt_to_src.rotation, T_tgt_to_src.translation,
    )
    # convex combinations of [0, 1] values can overshoot by one ulp
    np.clip(recon, 0.0, 1.0, out=recon)
    return ImageBuf(recon), valid
