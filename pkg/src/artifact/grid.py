"""Raster containers, bilinear sampling and image/depth pyramids."""
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels

MAX_PYRAMID_LEVELS = 6


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImageBuf:
    """H x W x C image with intensities in [0, 1], stored as float64."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxW, HxWx1 or HxWx3, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("image must be non-empty")
        if not np.all(np.isfinite(a)):
            raise ValueError("image contains non-finite values")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape[:2]


@dataclass(frozen=True, eq=False)
class DepthMap:
    """H x W metric depth (meters) with a validity mask.

    Invalid pixels always hold depth 0. When ``valid`` is omitted it is
    derived as ``depth > 0`` and finite.
    """

    depth: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2 or d.size == 0:
            raise ValueError(f"depth must be a non-empty HxW array, got shape {d.shape}")
        if self.valid is None:
            with np.errstate(invalid="ignore"):
                m = np.isfinite(d) & (d > 0)
        else:
            m = np.asarray(self.valid, dtype=bool)
            if m.shape != d.shape:
                raise ValueError(f"mask shape {m.shape} != depth shape {d.shape}")
            bad = m & ~(np.isfinite(d) & (d > 0))
            if bad.any():
                raise ValueError(f"{int(bad.sum())} pixels marked valid with non-positive or non-finite depth")
        d = np.where(m, d, 0.0)
        object.__setattr__(self, "depth", _frozen(d))
        object.__setattr__(self, "valid", _frozen(m))

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]

    @property
    def shape(self):
        return self.depth.shape

    def count(self):
        return int(self.valid.sum())


Raster = Union[ImageBuf, DepthMap]


@dataclass(frozen=True)
class Pyramid:
    levels: tuple

    def __post_init__(self):
        if not 1 <= len(self.levels) <= MAX_PYRAMID_LEVELS:
            raise ValueError(f"pyramid must have 1..{MAX_PYRAMID_LEVELS} levels, got {len(self.levels)}")
        h0, w0 = self.levels[0].shape
        for k, lvl in enumerate(self.levels):
            if lvl.shape != (h0 >> k, w0 >> k):
                raise ValueError(f"level {k} has shape {lvl.shape}, expected {(h0 >> k, w0 >> k)}")

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]


def bilinear_sample(img: ImageBuf, u: float, v: float):
    """Sample one point. Returns ``(color, in_bounds)``; color is 0 when out of bounds."""
    values, inb = kernels.bilinear(img.data, np.array([u], dtype=np.float64), np.array([v], dtype=np.float64))
    return values[0], bool(inb[0])


def sample_many(img: ImageBuf, u, v):
    """Vectorised :func:`bilinear_sample` over coordinate arrays of any shape."""
    return kernels.bilinear(img.data, u, v)


def _halve_image(a):
    h, w = a.shape[0] // 2, a.shape[1] // 2
    a = a[: 2 * h, : 2 * w]
    return 0.25 * (a[0::2, 0::2] + a[0::2, 1::2] + a[1::2, 0::2] + a[1::2, 1::2])


def _halve_depth(dm):
    h, w = dm.height // 2, dm.width // 2
    d = dm.depth[: 2 * h, : 2 * w]
    m = dm.valid[: 2 * h, : 2 * w].astype(np.float64)
    total = d[0::2, 0::2] + d[0::2, 1::2] + d[1::2, 0::2] + d[1::2, 1::2]
    count = m[0::2, 0::2] + m[0::2, 1::2] + m[1::2, 0::2] + m[1::2, 1::2]
    valid = count > 0
    # invalid entries hold 0, so the plain sum is the sum over valid entries
    depth = np.where(valid, total / np.maximum(count, 1.0), 0.0)
    return DepthMap(depth, valid)


def build_pyramid(buf: Raster, levels: int) -> Pyramid:
    """Build a 2x2 box-filtered pyramid; depth maps average valid pixels only."""
    if levels < 1 or levels > MAX_PYRAMID_LEVELS:
        raise ValueError(f"levels must be in 1..{MAX_PYRAMID_LEVELS}, got {levels}")
    h, w = buf.shape
    if (h >> (levels - 1)) < 2 or (w >> (levels - 1)) < 2:
        raise ValueError(f"{levels} levels on a {h}x{w} raster would produce a dimension below 2")
    out = [buf]
    for _ in range(levels - 1):
        prev = out[-1]
        if isinstance(prev, DepthMap):
            out.append(_halve_depth(prev))
        else:
            out.append(ImageBuf(_halve_image(prev.data)))
    return Pyramid(tuple(out))


def upsample_to(buf: DepthMap, target_h: int, target_w: int) -> DepthMap:
    """Nearest-neighbour upsampling of depth and mask; values are copied, never blended."""
    h, w = buf.shape
    if target_h < h or target_w < w:
        raise ValueError(f"upsample_to cannot shrink {h}x{w} to {target_h}x{target_w}")
    if (target_h, target_w) == (h, w):
        return buf
    rows = (np.arange(target_h) * h) // target_h
    cols = (np.arange(target_w) * w) // target_w
    return DepthMap(buf.depth[np.ix_(rows, cols)], buf.valid[np.ix_(rows, cols)])
