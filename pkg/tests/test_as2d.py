import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.as2d import (AS2DConfig, AS2DWeights, as2d_forward, as2d_forward_oracle, channel_attention,
                           channel_gate, multi_max_pool, multi_min_pool, passthrough_weights, random_weights,
                           spatial_attention, spatial_gate, zero_weights)
from artifact.grid import DepthMap


def sparse_map(rng, h, w, frac=0.1):
    d = rng.uniform(1, 80, (h, w))
    d[rng.random((h, w)) >= frac] = 0
    return DepthMap(d)


def naive_channel_attention(F, w):
    C, H, W = F.shape
    out = np.empty_like(F)

    def mlp(z):
        hid = [max(0.0, w.mlp1_b[r] + sum(w.mlp1_w[r, c] * z[c] for c in range(C))) for r in range(len(w.mlp1_b))]
        return [w.mlp2_b[c] + sum(w.mlp2_w[c, r] * hid[r] for r in range(len(hid))) for c in range(C)]

    avg = [F[c].sum() / (H * W) for c in range(C)]
    mx = [F[c].max() for c in range(C)]
    a, m = mlp(avg), mlp(mx)
    for c in range(C):
        out[c] = F[c] / (1.0 + np.exp(-(a[c] + m[c])))
    return out


def naive_spatial_attention(F, w):
    C, H, W = F.shape
    mean = F.mean(axis=0)
    mx = F.max(axis=0)
    gate = np.empty((H, W))
    for i in range(H):
        for j in range(W):
            acc = w.spatial_b[0]
            for ch, plane in enumerate((mean, mx)):
                for dy in range(7):
                    for dx in range(7):
                        a, b = i + dy - 3, j + dx - 3
                        if 0 <= a < H and 0 <= b < W:
                            acc += w.spatial_w[0, ch, dy, dx] * plane[a, b]
            gate[i, j] = 1.0 / (1.0 + np.exp(-acc))
    return gate[None] * F


class TestPooling:
    def test_constant_dense(self):
        d = DepthMap(np.full((9, 9), 5.0))
        assert np.all(multi_min_pool(d, [1, 3, 5]) == 5) and np.all(multi_max_pool(d, [13]) == 5)

    def test_single_pixel(self):
        a = np.zeros((6, 6))
        a[2, 3] = 3.0
        out = multi_min_pool(DepthMap(a), [3])[0]
        expect = np.zeros((6, 6))
        expect[1:4, 2:5] = 3.0
        assert np.array_equal(out, expect)

    def test_kernel_one_identity(self, rng):
        s = sparse_map(rng, 7, 8)
        assert np.array_equal(multi_min_pool(s, [1])[0], s.depth)

    def test_max_of_two(self):
        a = np.zeros((5, 5))
        a[1, 1], a[3, 3] = 2.0, 9.0
        assert multi_max_pool(DepthMap(a), [5])[0][2, 2] == 9.0
        assert multi_min_pool(DepthMap(a), [5])[0][2, 2] == 2.0

    def test_all_invalid(self):
        assert np.all(multi_max_pool(DepthMap(np.zeros((4, 4))), [3, 5]) == 0)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            multi_min_pool(DepthMap(np.ones((3, 3))), [2])
        with pytest.raises(ValueError):
            AS2DConfig((3, 4), ())

    @given(st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
    def test_densification_guarantee(self, k, seed):
        """One valid pixel per k x k tile fills every window of width >= 2k - 1."""
        r = np.random.default_rng(seed)
        h, w = 4 * k, 5 * k
        d = np.zeros((h, w))
        for ti in range(0, h, k):
            for tj in range(0, w, k):
                d[ti + r.integers(k), tj + r.integers(k)] = r.uniform(1, 9)
        out = multi_min_pool(DepthMap(d), [2 * k - 1])[0]
        assert np.all(out > 0)

    def test_tile_width_window_can_miss(self):
        # width-k windows are not enough: one valid pixel per 3x3 tile, each in its outer corner
        d = np.zeros((6, 6))
        d[0, 0] = d[0, 5] = d[5, 0] = d[5, 5] = 1.0
        assert multi_min_pool(DepthMap(d), [3])[0][2, 2] == 0.0
        assert np.all(multi_min_pool(DepthMap(d), [5])[0] > 0)


class TestAttention:
    def _w(self, seed=0, c=4, r=2):
        return random_weights(3, channels=c, reduction=r, seed=seed)

    def test_zero_mlp_halves(self, rng):
        w = zero_weights(3, channels=4, reduction=2)
        F = rng.normal(size=(4, 5, 6))
        assert np.all(channel_gate(F, w) == 0.5)
        assert np.array_equal(channel_attention(F, w), 0.5 * F)
        assert np.array_equal(spatial_attention(F, w), 0.5 * F)

    def test_zero_channel_stays_zero(self, rng):
        F = rng.normal(size=(4, 6, 6))
        F[2] = 0
        assert np.all(channel_attention(F, self._w())[2] == 0)

    def test_channel_vs_naive(self, rng):
        F = rng.normal(size=(4, 6, 6))
        w = self._w(1)
        assert np.abs(channel_attention(F, w) - naive_channel_attention(F, w)).max() < 1e-6

    def test_spatial_vs_naive(self, rng):
        F = rng.normal(size=(4, 6, 6))
        w = self._w(2)
        assert np.abs(spatial_attention(F, w) - naive_spatial_attention(F, w)).max() < 1e-6

    def test_constant_input_constant_interior(self):
        F = np.full((4, 15, 15), 0.7)
        out = spatial_attention(F, self._w(3))
        interior = out[:, 3:-3, 3:-3]
        assert np.ptp(interior) == 0.0

    def test_gates_in_open_interval(self, rng):
        w = self._w(4)
        F = rng.normal(size=(4, 8, 8))
        for g in (channel_gate(F, w), spatial_gate(F, w)):
            assert np.all((g > 0) & (g < 1))
            assert np.all(np.isfinite(g))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            channel_attention(rng.normal(size=(3, 4, 4)), self._w())


class TestForward:
    cfg = AS2DConfig()

    def test_zero_weights_empty_output(self, rng):
        out = as2d_forward(sparse_map(rng, 10, 12), zero_weights(7), self.cfg)
        assert out.count() == 0 and np.all(out.depth == 0)

    def test_passthrough(self, rng):
        cfg = AS2DConfig((1, 3, 5, 7, 9), (13, 15))
        s = sparse_map(rng, 16, 20)
        out = as2d_forward(s, passthrough_weights(7), cfg)
        assert np.array_equal(out.depth[s.valid], s.depth[s.valid])
        assert np.array_equal(out.valid, s.valid)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_oracle(self, seed):
        r = np.random.default_rng(seed)
        s = sparse_map(r, 9, 11, 0.15)
        w = random_weights(7, seed=seed)
        a = as2d_forward(s, w, self.cfg)
        b = as2d_forward_oracle(s, w, self.cfg)
        assert np.abs(a.depth - b.depth).max() < 1e-5 and np.array_equal(a.valid, b.valid)

    def test_validity_rules(self, rng):
        s = sparse_map(rng, 30, 30, 0.002)
        out = as2d_forward(s, random_weights(7, seed=5), self.cfg)
        cover = multi_max_pool(s, [15])[0] > 0
        assert np.all(~out.valid[~cover])
        assert np.all(out.depth[out.valid] > 0) and np.all(out.depth[~out.valid] == 0)

    def test_weight_mismatch(self, rng):
        with pytest.raises(ValueError):
            as2d_forward(sparse_map(rng, 6, 6), random_weights(5), self.cfg)

    def test_weights_roundtrip_tensors(self):
        w = random_weights(7, seed=9)
        w2 = AS2DWeights.from_tensors(w.tensors())
        assert all(np.array_equal(a, b) for a, b in zip(w.tensors().values(), w2.tensors().values()))
        with pytest.raises(ValueError):
            AS2DWeights.from_tensors({k: v for k, v in w.tensors().items() if k != "out_b"})
        bad = dict(w.tensors())
        bad["out_w"] = np.zeros((1, 8, 5, 5))
        with pytest.raises(ValueError):
            AS2DWeights.from_tensors(bad)
