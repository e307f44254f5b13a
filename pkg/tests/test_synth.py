import numpy as np
import pytest
from scipy import stats

from artifact.geometry import Intrinsics, PoseSE3
from artifact.grid import DepthMap
from artifact.synth import (Texture, corrupt_depth, generate_plane_scene, estimate_shift, sparsify,
                            stereo_rig_scene, textured_mask)

from conftest import default_K


def test_identity_poses_identical_frames():
    sc = generate_plane_scene(default_K(16, 20), 3.0, 1, [PoseSE3.identity()] * 3, (16, 20))
    assert all(np.array_equal(sc.images[0].data, im.data) for im in sc.images)
    assert np.all(sc.depths[0].depth == 3.0)


def test_reproducible():
    a = stereo_rig_scene(9)
    b = stereo_rig_scene(9)
    for x, y in zip(a.frames, b.frames):
        assert x[0].data.tobytes() == y[0].data.tobytes() and x[1].depth.tobytes() == y[1].depth.tobytes()
    assert stereo_rig_scene(10).images[0].data.tobytes() != a.images[0].data.tobytes()


@pytest.mark.parametrize("tx,Z,fx", [(0.25, 5.0, 100.0), (0.1, 4.0, 60.0), (-0.3, 6.0, 80.0)])
def test_shift_law(tx, Z, fx):
    K = Intrinsics(fx, fx, 31.5, 23.5)
    sc = generate_plane_scene(K, Z, 2, [PoseSE3.identity(), PoseSE3(np.eye(3), [tx, 0, 0])], (48, 64))
    # p_frame = p_ref + t: scene points move by +fx*tx/Z pixels in the frame
    assert abs(estimate_shift(sc.images[0], sc.images[1]) - fx * tx / Z) < 0.1


def test_slanted_plane_depth_varies_linearly_in_inverse():
    K = default_K(20, 30)
    sc = generate_plane_scene(K, 4.0, 0, [PoseSE3.identity()], (20, 30), normal=(0.2, 0.0, 1.0))
    inv = 1.0 / sc.depths[0].depth
    # 1/Z is affine in pixel coordinates for a plane
    jj, ii = np.meshgrid(np.arange(30.0), np.arange(20.0))
    A = np.stack([jj.ravel(), ii.ravel(), np.ones(600)], 1)
    coef, res, *_ = np.linalg.lstsq(A, inv.ravel(), rcond=None)
    assert np.abs(A @ coef - inv.ravel()).max() < 1e-12
    assert inv.std() > 0


def test_plane_behind_camera():
    with pytest.raises(ValueError):
        generate_plane_scene(default_K(8, 8), 1.0, 0, [PoseSE3(np.eye(3), [0, 0, -3.0])], (8, 8))
    with pytest.raises(ValueError):
        generate_plane_scene(default_K(8, 8), -1.0, 0, [PoseSE3.identity()], (8, 8))


def test_texture_band_limit():
    with pytest.raises(ValueError):
        Texture(0, f_max=0.2)
    t = Texture(0)
    v = t(np.linspace(0, 500, 1000), np.linspace(0, 300, 1000))
    assert v.min() > 0.05 and v.max() < 0.95


class TestCorrupt:
    d = DepthMap(np.full((10, 10), 4.0))

    @pytest.mark.parametrize("model", ["scale", "additive", "holes"])
    def test_zero_is_identity(self, model):
        assert corrupt_depth(self.d, model, 0.0) is self.d

    def test_scale_doubles(self):
        assert np.all(corrupt_depth(self.d, "scale", 2.0).depth == 8.0)

    def test_additive_positive_and_seeded(self):
        a = corrupt_depth(self.d, "additive", 10.0, seed=3)
        assert a.valid.all() and a.depth.min() > 0
        assert np.array_equal(a.depth, corrupt_depth(self.d, "additive", 10.0, seed=3).depth)
        assert abs(corrupt_depth(DepthMap(np.full((200, 200), 50.0)), "additive", 1.0).depth.mean() - 50) < 0.05

    def test_holes_binomial(self):
        h = corrupt_depth(self.d, "holes", 0.5, seed=4)
        n_invalid = 100 - h.count()
        lo, hi = stats.binom.interval(0.999, 100, 0.5)
        assert lo <= n_invalid <= hi
        assert np.array_equal(h.valid, corrupt_depth(self.d, "holes", 0.5, seed=4).valid)

    def test_errors(self):
        with pytest.raises(ValueError):
            corrupt_depth(self.d, "holes", 1.0)
        with pytest.raises(ValueError):
            corrupt_depth(self.d, "blur", 1.0)
        with pytest.raises(ValueError):
            corrupt_depth(self.d, "scale", -1.0)


class TestSparsify:
    dense = DepthMap(np.full((40, 50), 3.0))

    def test_keep_all(self):
        assert sparsify(self.dense, 1.0) is self.dense

    def test_fraction(self):
        s = sparsify(self.dense, 0.05, seed=1)
        assert s.count() == 100
        assert np.all(s.depth[s.valid] == 3.0)

    def test_deterministic(self):
        assert np.array_equal(sparsify(self.dense, 0.1, 7).valid, sparsify(self.dense, 0.1, 7).valid)

    def test_errors(self):
        with pytest.raises(ValueError):
            sparsify(DepthMap(np.zeros((3, 3))), 0.5)
        with pytest.raises(ValueError):
            sparsify(self.dense, 0.0)


def test_textured_mask_ignores_flat():
    from artifact.grid import ImageBuf

    assert not textured_mask(ImageBuf(np.full((5, 5), 0.3))).any()
    assert textured_mask(stereo_rig_scene(0).images[0]).mean() > 0.5
