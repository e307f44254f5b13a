"""Synthetic planar scenes with exact depth and poses, and teacher corruptions.

Textures are sums of low-frequency sinusoids defined in the reference
camera's pixel coordinates, so bilinear resampling of rendered frames stays
close to the analytic image. Everything is reproducible from
``(parameters, seed)``.
"""
from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, PoseSE3
from .grid import DepthMap, ImageBuf

MAX_FREQUENCY = 1.0 / 8.0  # cycles per pixel
CORRUPTIONS = ("scale", "additive", "holes")


@dataclass(frozen=True, eq=False)
class SynthScene:
    frames: tuple  # (ImageBuf, DepthMap, PoseSE3); pose maps reference camera -> frame
    intrinsics: Intrinsics
    seed: int
    params: dict = field(default_factory=dict)

    @property
    def images(self):
        return [f[0] for f in self.frames]

    @property
    def depths(self):
        return [f[1] for f in self.frames]

    @property
    def poses(self):
        return [f[2] for f in self.frames]


class Texture:
    """Band-limited RGB texture: ``0.5 + sum_k a_k sin(2 pi f_k . (u, v) + phi_k)``."""

    def __init__(self, seed, channels=3, waves=6, f_min=1.0 / 48.0, f_max=1.0 / 16.0, amplitude=0.4):
        if not 0 < f_min <= f_max <= MAX_FREQUENCY:
            raise ValueError(f"frequencies must satisfy 0 < f_min <= f_max <= {MAX_FREQUENCY}")
        rng = np.random.default_rng(seed)
        self.channels = channels
        freq = rng.uniform(f_min, f_max, size=(channels, waves))
        theta = rng.uniform(0.0, np.pi, size=(channels, waves))
        self.ku = 2.0 * np.pi * freq * np.cos(theta)
        self.kv = 2.0 * np.pi * freq * np.sin(theta)
        self.phase = rng.uniform(0.0, 2.0 * np.pi, size=(channels, waves))
        amp = rng.uniform(0.5, 1.0, size=(channels, waves))
        # sum of |a_k| <= amplitude < 0.5 keeps values inside (0, 1) without clipping
        self.amp = amp / amp.sum(axis=1, keepdims=True) * amplitude

    def __call__(self, u, v):
        u = np.asarray(u, dtype=np.float64)[..., None, None]
        v = np.asarray(v, dtype=np.float64)[..., None, None]
        waves = self.amp * np.sin(self.ku * u + self.kv * v + self.phase)
        return 0.5 + waves.sum(axis=-1)


def generate_plane_scene(K: Intrinsics, plane_depth, texture_seed, poses, dims, normal=(0.0, 0.0, 1.0),
                         channels=3, **texture_kw) -> SynthScene:
    """Render a textured plane ``n . p = plane_depth`` (reference-camera frame).

    ``poses[i]`` maps reference-camera coordinates into frame i; pass the
    identity first to make frame 0 the reference. ``dims`` is ``(height, width)``.
    The default normal gives a fronto-parallel plane; any other unit normal
    gives a slanted plane whose depth varies across the image.
    """
    if not plane_depth > 0:
        raise ValueError("plane_depth must be positive")
    h, w = dims
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    tex = Texture(texture_seed, channels=channels, **texture_kw)
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    ray = np.stack([(jj - K.cx) / K.fx, (ii - K.cy) / K.fy, np.ones_like(jj)], axis=-1)
    frames = []
    for k, pose in enumerate(poses):
        rt = pose.rotation.T
        ray_ref = ray @ rt.T  # R^T r per pixel
        denom = ray_ref @ n
        offset = plane_depth + n @ (rt @ pose.translation)
        with np.errstate(divide="ignore"):
            s = offset / denom
        if not np.all(np.isfinite(s)) or not (s > 0).all():
            raise ValueError(f"plane lies behind camera {k} (or is viewed edge-on)")
        p_ref = s[..., None] * ray_ref - rt @ pose.translation
        if not (p_ref[..., 2] > 0).all():
            raise ValueError(f"frame {k} sees plane points behind the reference camera")
        u_ref = K.fx * p_ref[..., 0] / p_ref[..., 2] + K.cx
        v_ref = K.fy * p_ref[..., 1] / p_ref[..., 2] + K.cy
        frames.append((ImageBuf(tex(u_ref, v_ref)), DepthMap(s), pose))
    params = {
        "plane_depth": float(plane_depth),
        "normal": n.tolist(),
        "dims": [int(h), int(w)],
        "channels": int(channels),
        "texture": {k: float(v) for k, v in texture_kw.items()},
    }
    return SynthScene(tuple(frames), K, int(texture_seed), params)


def corrupt_depth(depth: DepthMap, model, magnitude, seed=0) -> DepthMap:
    """Manufacture a teacher error mode.

    ``scale`` multiplies every depth by ``magnitude``; ``additive`` adds
    N(0, magnitude^2) noise (meters), clamped to stay positive; ``holes``
    drops each valid pixel with probability ``magnitude``. Magnitude 0 means
    no corruption for every model, including ``scale``.
    """
    if model not in CORRUPTIONS:
        raise ValueError(f"unknown corruption {model!r}; expected one of {CORRUPTIONS}")
    if not magnitude >= 0:
        raise ValueError("magnitude must be >= 0")
    if magnitude == 0:
        return depth
    rng = np.random.default_rng(seed)
    d = depth.depth
    m = depth.valid
    if model == "scale":
        return DepthMap(np.where(m, d * magnitude, 0.0), m)
    if model == "additive":
        noise = rng.normal(0.0, 1.0, size=d.shape) * magnitude
        floor = 1e-3 * np.where(m, d, 1.0)
        return DepthMap(np.where(m, np.maximum(d + noise, floor), 0.0), m)
    if magnitude >= 1.0:
        raise ValueError("holes fraction >= 1 would invalidate every pixel")
    keep = m & (rng.random(d.shape) >= magnitude)
    if not keep.any():
        raise ValueError("holes corruption removed every valid pixel")
    return DepthMap(np.where(keep, d, 0.0), keep)


def sparsify(depth: DepthMap, keep_fraction, seed=0) -> DepthMap:
    """Keep a seeded uniform subset of ``round(keep_fraction * n_valid)`` valid pixels."""
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    idx = np.flatnonzero(depth.valid)
    if idx.size == 0:
        raise ValueError("depth map has no valid pixels")
    if keep_fraction == 1:
        return depth
    rng = np.random.default_rng(seed)
    n_keep = max(1, int(round(keep_fraction * idx.size)))
    chosen = rng.choice(idx, size=n_keep, replace=False)
    mask = np.zeros(depth.depth.size, dtype=bool)
    mask[chosen] = True
    mask = mask.reshape(depth.shape)
    return DepthMap(np.where(mask, depth.depth, 0.0), mask)


def estimate_shift(a: ImageBuf, b: ImageBuf, max_shift=16):
    """Horizontal displacement ``s`` with ``b(u) ~ a(u - s)``, from the peak of
    the normalised cross-correlation refined by a parabola through its neighbours.
    """
    ga = a.data.mean(axis=2)
    gb = b.data.mean(axis=2)
    w = ga.shape[1]
    lags = np.arange(-max_shift, max_shift + 1)
    scores = np.empty(lags.size)
    for k, lag in enumerate(lags):
        if lag >= 0:
            pa, pb = ga[:, : w - lag], gb[:, lag:]
        else:
            pa, pb = ga[:, -lag:], gb[:, : w + lag]
        pa = pa - pa.mean()
        pb = pb - pb.mean()
        scores[k] = (pa * pb).sum() / np.sqrt((pa * pa).sum() * (pb * pb).sum())
    k = int(np.argmax(scores))
    if 0 < k < lags.size - 1:
        l, c, r = scores[k - 1], scores[k], scores[k + 1]
        den = l - 2.0 * c + r
        frac = 0.5 * (l - r) / den if den != 0 else 0.0
    else:
        frac = 0.0
    return float(lags[k] + frac)


def textured_mask(img: ImageBuf, threshold=0.005):
    """Pixels whose horizontal intensity gradient exceeds ``threshold`` per pixel.

    Horizontal baselines only constrain depth where the image varies along x.
    """
    g = img.data.mean(axis=2)
    gx = np.zeros_like(g)
    gx[:, 1:-1] = 0.5 * (g[:, 2:] - g[:, :-2])
    mask = np.abs(gx) > threshold
    mask[:, [0, -1]] = False
    return mask


def stereo_rig_scene(seed, height=48, width=64, plane_depth=5.0, baseline=0.25, focal=100.0,
                     normal=(0.0, 0.0, 1.0)):
    """Reference view plus one source on each side, displaced by ``baseline`` along x."""
    K = Intrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0)
    poses = [
        PoseSE3.identity(),
        PoseSE3(np.eye(3), [baseline, 0.0, 0.0]),
        PoseSE3(np.eye(3), [-baseline, 0.0, 0.0]),
    ]
    return generate_plane_scene(K, plane_depth, seed, poses, (height, width), normal=normal)


def corrupted_cohort(exact: DepthMap, seed, scale=1.3, noise=0.5, holes=0.3):
    """The standard teacher cohort: (name, depth) for exact and three corruptions."""
    return [
        ("exact", exact),
        ("scaled", corrupt_depth(exact, "scale", scale, seed)),
        ("noisy", corrupt_depth(exact, "additive", noise, seed + 1)),
        ("holes", corrupt_depth(exact, "holes", holes, seed + 2)),
    ]


def gradcheck_scene(seed, height=16, width=24, noise=0.05):
    """Small slanted-plane pair with a perturbed depth, for gradient checks.

    Returns ``(depth, target, source, pose, K)``; the perturbation keeps the
    loss away from its minimum so gradients are non-trivial.
    """
    K = Intrinsics(20.0, 20.0, (width - 1) / 2.0, (height - 1) / 2.0)
    pose = PoseSE3.from_axis_angle([0.0, 0.02, 0.01], [0.1, 0.02, 0.0])
    scene = generate_plane_scene(K, 4.0, seed, [PoseSE3.identity(), pose], (height, width),
                                 normal=(0.1, -0.2, 1.0))
    rng = np.random.default_rng(seed)
    exact = scene.depths[0].depth
    depth = DepthMap(exact * (1.0 + noise * rng.standard_normal(exact.shape)))
    return depth, scene.images[0], scene.images[1], pose, K


def wrong_everywhere_cohort(exact: DepthMap, seed, scale=1.3, noise=0.5, holes=0.3):
    """Completion teachers that are wrong at every valid pixel.

    Unlike :func:`corrupted_cohort`, the holes teacher is also noisy, so no
    teacher keeps exact depths anywhere; this is the setting in which an
    exact stereo teacher can win every pixel under a strict comparison.
    """
    return [
        ("scaled", corrupt_depth(exact, "scale", scale, seed)),
        ("noisy", corrupt_depth(exact, "additive", noise, seed + 1)),
        ("noisy_holes", corrupt_depth(corrupt_depth(exact, "additive", 0.6 * noise, seed + 2), "holes", holes,
                                      seed + 3)),
    ]
