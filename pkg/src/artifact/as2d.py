"""Forward pass of the attention-based sparse-to-dense (AS2D) front end.

Pipeline: validity-aware min pooling (near structure) and max pooling (far
structure) at several kernel sizes, three 1x1 convolutions, CBAM-style
channel attention then spatial attention, and a 3x3 convolution that emits
quasi-dense depth. All convolutions are stride 1 with zero padding.

:func:`as2d_forward_oracle` evaluates the same contract with plain nested
loops and is the reference the vectorised path is tested against.
"""
import math
from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .grid import DepthMap

# Five small min-pool kernels and two large max-pool kernels; the sizes
# themselves are a configurable default, not fixed by the method.
DEFAULT_MIN_KERNELS = (3, 5, 7, 9, 11)
DEFAULT_MAX_KERNELS = (13, 15)
DEFAULT_CHANNELS = 8
DEFAULT_REDUCTION = 4
SPATIAL_KERNEL = 7
OUTPUT_KERNEL = 3


@dataclass(frozen=True)
class AS2DConfig:
    min_kernels: tuple = DEFAULT_MIN_KERNELS
    max_kernels: tuple = DEFAULT_MAX_KERNELS

    def __post_init__(self):
        ks = tuple(self.min_kernels) + tuple(self.max_kernels)
        if not ks:
            raise ValueError("need at least one pooling kernel")
        for k in ks:
            _check_kernel(k)
        object.__setattr__(self, "min_kernels", tuple(int(k) for k in self.min_kernels))
        object.__setattr__(self, "max_kernels", tuple(int(k) for k in self.max_kernels))

    @property
    def pooled_channels(self):
        return len(self.min_kernels) + len(self.max_kernels)


@dataclass(frozen=True, eq=False)
class AS2DWeights:
    conv1_w: np.ndarray  # (C, P)
    conv1_b: np.ndarray  # (C,)
    conv2_w: np.ndarray  # (C, C)
    conv2_b: np.ndarray
    conv3_w: np.ndarray  # (C, C)
    conv3_b: np.ndarray
    mlp1_w: np.ndarray  # (C // r, C)
    mlp1_b: np.ndarray
    mlp2_w: np.ndarray  # (C, C // r)
    mlp2_b: np.ndarray
    spatial_w: np.ndarray  # (1, 2, 7, 7)
    spatial_b: np.ndarray  # (1,)
    out_w: np.ndarray  # (1, C, 3, 3)
    out_b: np.ndarray  # (1,)

    def __post_init__(self):
        for f in fields(self):
            a = np.array(getattr(self, f.name), dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"weight {f.name} has non-finite entries")
            a.setflags(write=False)
            object.__setattr__(self, f.name, a)
        c, p = self.conv1_w.shape
        hidden = self.mlp1_w.shape[0]
        expected = {
            "conv1_b": (c,), "conv2_w": (c, c), "conv2_b": (c,), "conv3_w": (c, c), "conv3_b": (c,),
            "mlp1_w": (hidden, c), "mlp1_b": (hidden,), "mlp2_w": (c, hidden), "mlp2_b": (c,),
            "spatial_w": (1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL), "spatial_b": (1,),
            "out_w": (1, c, OUTPUT_KERNEL, OUTPUT_KERNEL), "out_b": (1,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"weight {name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def in_channels(self):
        return self.conv1_w.shape[1]

    @property
    def channels(self):
        return self.conv1_w.shape[0]

    def tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_tensors(cls, tensors):
        names = {f.name for f in fields(cls)}
        missing = names - set(tensors)
        extra = set(tensors) - names
        if missing or extra:
            raise ValueError(f"weight tensors mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        return cls(**{k: tensors[k] for k in names})


def random_weights(in_channels, channels=DEFAULT_CHANNELS, reduction=DEFAULT_REDUCTION, seed=0, scale=1.0):
    """Seeded fan-in-scaled Gaussian weights, for tests and demos (never trained)."""
    if channels % reduction:
        raise ValueError("channels must be divisible by the reduction ratio")
    rng = np.random.default_rng(seed)
    hidden = channels // reduction

    def g(*shape, fan_in):
        return rng.normal(0.0, scale / math.sqrt(fan_in), size=shape)

    return AS2DWeights(
        conv1_w=g(channels, in_channels, fan_in=in_channels), conv1_b=g(channels, fan_in=10),
        conv2_w=g(channels, channels, fan_in=channels), conv2_b=g(channels, fan_in=10),
        conv3_w=g(channels, channels, fan_in=channels), conv3_b=g(channels, fan_in=10),
        mlp1_w=g(hidden, channels, fan_in=channels), mlp1_b=g(hidden, fan_in=10),
        mlp2_w=g(channels, hidden, fan_in=hidden), mlp2_b=g(channels, fan_in=10),
        spatial_w=g(1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL, fan_in=2 * SPATIAL_KERNEL ** 2),
        spatial_b=g(1, fan_in=10),
        out_w=g(1, channels, OUTPUT_KERNEL, OUTPUT_KERNEL, fan_in=channels * OUTPUT_KERNEL ** 2),
        out_b=g(1, fan_in=10),
    )


def zero_weights(in_channels, channels=DEFAULT_CHANNELS, reduction=DEFAULT_REDUCTION):
    t = {k: np.zeros_like(v) for k, v in random_weights(in_channels, channels, reduction).tensors().items()}
    return AS2DWeights.from_tensors(t)


def passthrough_weights(in_channels, channels=DEFAULT_CHANNELS, reduction=DEFAULT_REDUCTION):
    """Weights that route pooled channel 0 to the output unchanged.

    With zero attention parameters both gates are exactly sigmoid(0) = 1/2,
    so the output kernel's centre tap is 4 to undo them. Paired with a
    kernel-1 min pool as the first channel this reproduces the sparse input.
    """
    t = zero_weights(in_channels, channels, reduction).tensors()
    t = {k: np.array(v) for k, v in t.items()}
    t["conv1_w"][0, 0] = 1.0
    t["conv2_w"][0, 0] = 1.0
    t["conv3_w"][0, 0] = 1.0
    t["out_w"][0, 0, 1, 1] = 4.0
    return AS2DWeights.from_tensors(t)


def _check_kernel(k):
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ValueError(f"pooling kernel sizes must be odd and >= 1, got {k}")


def _depth_arrays(sparse):
    return sparse.depth, sparse.valid


def multi_min_pool(sparse: DepthMap, kernel_sizes):
    """One channel per kernel: minimum valid depth in the window, 0 if none."""
    for k in kernel_sizes:
        _check_kernel(k)
    d, m = _depth_arrays(sparse)
    return np.stack([kernels.masked_min_pool(d, m, int(k)) for k in kernel_sizes])


def multi_max_pool(sparse: DepthMap, kernel_sizes):
    """One channel per kernel: maximum valid depth in the window, 0 if none."""
    for k in kernel_sizes:
        _check_kernel(k)
    d, m = _depth_arrays(sparse)
    return np.stack([kernels.masked_max_pool(d, m, int(k)) for k in kernel_sizes])


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _relu(x):
    return np.maximum(x, 0.0)


def _conv1x1(x, w, b):
    return np.tensordot(w, x, axes=(1, 0)) + b[:, None, None]


def _mlp(z, w):
    return w.mlp2_w @ _relu(w.mlp1_w @ z + w.mlp1_b) + w.mlp2_b


def channel_gate(F, w: AS2DWeights):
    if F.ndim != 3 or F.shape[0] != w.channels:
        raise ValueError(f"feature map {F.shape} does not match {w.channels} attention channels")
    return sigmoid(_mlp(F.mean(axis=(1, 2)), w) + _mlp(F.max(axis=(1, 2)), w))


def channel_attention(F, w: AS2DWeights):
    """``A_c(F) * F`` with a shared MLP over spatial average and max descriptors."""
    return channel_gate(F, w)[:, None, None] * F


def spatial_gate(F, w: AS2DWeights):
    if F.ndim != 3 or F.shape[0] != w.channels:
        raise ValueError(f"feature map {F.shape} does not match {w.channels} attention channels")
    desc = np.stack([F.mean(axis=0), F.max(axis=0)])
    return sigmoid(kernels.conv2d_same(desc, w.spatial_w, w.spatial_b)[0])


def spatial_attention(F, w: AS2DWeights):
    """``A_s(F) * F`` with a 7x7 conv over channel mean and max maps."""
    return spatial_gate(F, w)[None] * F


def _check_forward(sparse, w, cfg):
    if w.in_channels != cfg.pooled_channels:
        raise ValueError(
            f"weights expect {w.in_channels} pooled channels, config produces {cfg.pooled_channels}"
        )


def pooled_features(sparse: DepthMap, cfg: AS2DConfig):
    parts = []
    if cfg.min_kernels:
        parts.append(multi_min_pool(sparse, cfg.min_kernels))
    if cfg.max_kernels:
        parts.append(multi_max_pool(sparse, cfg.max_kernels))
    return np.concatenate(parts)


def as2d_forward(sparse: DepthMap, w: AS2DWeights, cfg: AS2DConfig = AS2DConfig()) -> DepthMap:
    _check_forward(sparse, w, cfg)
    pooled = pooled_features(sparse, cfg)
    covered = (pooled != 0).any(axis=0)
    x = _relu(_conv1x1(pooled, w.conv1_w, w.conv1_b))
    x = _relu(_conv1x1(x, w.conv2_w, w.conv2_b))
    F = _conv1x1(x, w.conv3_w, w.conv3_b)
    F = spatial_attention(channel_attention(F, w), w)
    out = kernels.conv2d_same(F, w.out_w, w.out_b)[0]
    valid = covered & (out > 0)
    return DepthMap(np.where(valid, out, 0.0), valid)


# ---------------------------------------------------------------------------
# naive reference


def _sig(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _pool_loop(d, m, k, take_min):
    h, w = len(d), len(d[0])
    r = k // 2
    out = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            best = None
            for a in range(i - r, i + r + 1):
                for b in range(j - r, j + r + 1):
                    if 0 <= a < h and 0 <= b < w and m[a][b]:
                        if best is None or (d[a][b] < best if take_min else d[a][b] > best):
                            best = d[a][b]
            out[i][j] = 0.0 if best is None else best
    return out


def _conv_loop(x, wt, bias):
    c, h, w = len(x), len(x[0]), len(x[0][0])
    o, kh, kw = len(wt), len(wt[0][0]), len(wt[0][0][0])
    out = [[[0.0] * w for _ in range(h)] for _ in range(o)]
    for oc in range(o):
        for i in range(h):
            for j in range(w):
                acc = bias[oc]
                for ic in range(c):
                    for dy in range(kh):
                        for dx in range(kw):
                            a, b = i + dy - kh // 2, j + dx - kw // 2
                            if 0 <= a < h and 0 <= b < w:
                                acc += wt[oc][ic][dy][dx] * x[ic][a][b]
                out[oc][i][j] = acc
    return out


def _dense_loop(wt, bias, z):
    return [bias[r] + sum(wt[r][c] * z[c] for c in range(len(z))) for r in range(len(wt))]


def as2d_forward_oracle(sparse: DepthMap, w: AS2DWeights, cfg: AS2DConfig = AS2DConfig()) -> DepthMap:
    """Direct nested-loop evaluation of :func:`as2d_forward`; slow, for verification."""
    _check_forward(sparse, w, cfg)
    d = sparse.depth.tolist()
    m = sparse.valid.tolist()
    h, wd = len(d), len(d[0])
    t = {k: v.tolist() for k, v in w.tensors().items()}
    pooled = [_pool_loop(d, m, k, True) for k in cfg.min_kernels]
    pooled += [_pool_loop(d, m, k, False) for k in cfg.max_kernels]

    def lift(wt):  # (O, C) -> (O, C, 1, 1)
        return [[[[v]] for v in row] for row in wt]

    x = _conv_loop(pooled, lift(t["conv1_w"]), t["conv1_b"])
    x = [[[max(v, 0.0) for v in row] for row in ch] for ch in x]
    x = _conv_loop(x, lift(t["conv2_w"]), t["conv2_b"])
    x = [[[max(v, 0.0) for v in row] for row in ch] for ch in x]
    F = _conv_loop(x, lift(t["conv3_w"]), t["conv3_b"])
    C = len(F)

    avg = [sum(sum(row) for row in ch) / (h * wd) for ch in F]
    mx = [max(max(row) for row in ch) for ch in F]

    def mlp(z):
        hid = [max(v, 0.0) for v in _dense_loop(t["mlp1_w"], t["mlp1_b"], z)]
        return _dense_loop(t["mlp2_w"], t["mlp2_b"], hid)

    a_c = [_sig(p + q) for p, q in zip(mlp(avg), mlp(mx))]
    F = [[[a_c[c] * v for v in row] for row in F[c]] for c in range(C)]

    mean_c = [[sum(F[c][i][j] for c in range(C)) / C for j in range(wd)] for i in range(h)]
    max_c = [[max(F[c][i][j] for c in range(C)) for j in range(wd)] for i in range(h)]
    s = _conv_loop([mean_c, max_c], t["spatial_w"], t["spatial_b"])[0]
    F = [[[_sig(s[i][j]) * F[c][i][j] for j in range(wd)] for i in range(h)] for c in range(C)]

    out = _conv_loop(F, t["out_w"], t["out_b"])[0]
    depth = np.zeros((h, wd))
    valid = np.zeros((h, wd), dtype=bool)
    for i in range(h):
        for j in range(wd):
            if any(p[i][j] != 0.0 for p in pooled) and out[i][j] > 0.0:
                depth[i, j] = out[i][j]
                valid[i, j] = True
    return DepthMap(depth, valid)
