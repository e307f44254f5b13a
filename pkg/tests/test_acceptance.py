"""End-to-end acceptance criteria, one test per criterion at its pinned tolerance.

Each test records a PASS/FAIL line (printed in the "acceptance criteria"
section of the pytest summary) before asserting.
"""
import json
import os
import subprocess
import sys

import numpy as np

from artifact import io_formats
from artifact.as2d import AS2DConfig, as2d_forward, as2d_forward_oracle, passthrough_weights, random_weights
from artifact.cli import main
from artifact.distill import TeacherSet, distill
from artifact.geometry import Intrinsics, PoseSE3, warp_image
from artifact.gradcheck import gradcheck
from artifact.grid import DepthMap, build_pyramid
from artifact.losses import LossMap, min_reprojection, multiscale_loss, multiview_consistency_loss, photometric_map
from artifact.metrics import evaluate
from artifact.synth import (corrupt_depth, corrupted_cohort, estimate_shift, generate_plane_scene,
                            gradcheck_scene, stereo_rig_scene, textured_mask, wrong_everywhere_cohort)

from conftest import record_criterion
from test_cli import COMMANDS


def test_c01_warp_identity():
    worst = 0.0
    r = np.random.default_rng(2024)
    for seed in range(10):
        h, w = 96, 128
        K = Intrinsics(*r.uniform(60, 140, 2), (w - 1) / 2 + r.uniform(-5, 5), (h - 1) / 2 + r.uniform(-5, 5))
        normal = (r.uniform(-0.3, 0.3), r.uniform(-0.3, 0.3), 1.0)
        sc = generate_plane_scene(K, r.uniform(2, 20), seed, [PoseSE3.identity()], (h, w), normal=normal)
        src, depth = sc.images[0], sc.depths[0]
        recon, valid = warp_image(src, depth, K, PoseSE3.identity())
        assert valid.mean() > 0.99
        worst = max(worst, float(np.abs(recon.data - src.data)[valid].max()))
    ok = worst < 1e-6
    record_criterion(1, "warp identity (10 scenes, 128x96)", ok, f"max |diff| {worst:.2e} < 1e-6")
    assert ok


def test_c02_disparity_law():
    sc = stereo_rig_scene(0, height=96, width=128, plane_depth=5.0, baseline=0.25, focal=100.0)
    shift = estimate_shift(sc.images[0], sc.images[1])
    recon, valid = warp_image(sc.images[1], sc.depths[0], sc.intrinsics, sc.poses[1])
    ph = photometric_map(sc.images[0], recon, valid).mean()
    ok = abs(shift - 5.0) <= 0.1 and ph < 0.01
    record_criterion(2, "analytic disparity law", ok, f"shift {shift:.4f} px, photometric {ph:.2e}")
    assert ok


def test_c03_gradient_check(tmp_path, capsys):
    worst, checked = 0.0, 0
    passed = True
    for seed in range(5):
        rep = gradcheck(*gradcheck_scene(seed, 16, 24), h=1e-3, tol=1e-3, grad_floor=1e-8)
        worst = max(worst, rep.max_rel_error)
        checked += rep.checked
        passed &= rep.passed
    codes = (
        main(["gradcheck", "--out", str(tmp_path / "ok")]),
        main(["gradcheck", "--tol", "1e-12", "--out", str(tmp_path / "strict")]),
        main(["gradcheck", "--manifest", str(tmp_path / "missing.json"), "--out", str(tmp_path / "bad")]),
    )
    capsys.readouterr()
    ok = passed and worst < 1e-3 and codes == (0, 1, 2)
    record_criterion(3, "gradient check + exit codes", ok,
                     f"max rel err {worst:.2e} over {checked} px; exit codes {codes}")
    assert ok


def _inputs(sc):
    return sc.images[0], sc.images[1:], sc.poses[1:], sc.intrinsics


def test_c04_distillation_minimality():
    violations, pixels = 0, 0
    monotone = True
    for seed in range(3):
        sc = stereo_rig_scene(seed, height=48, width=64, normal=(0.1, -0.05, 1.0))
        exact = sc.depths[0]
        teachers = [
            ("scaled", corrupt_depth(exact, "scale", 1.1, seed)),
            ("noisy", corrupt_depth(exact, "additive", 0.3, seed + 1)),
            ("holes", corrupt_depth(corrupt_depth(exact, "additive", 0.1, seed + 2), "holes", 0.3, seed + 3)),
            ("exact", exact),
        ]
        ts = TeacherSet(teachers)
        res, errs = distill(ts, *_inputs(sc))
        for i, e in enumerate(errs):
            ok = res.depth.valid & e.valid & ts[i].depth.valid
            violations += int((res.error.value[ok] > e.value[ok]).sum())
            pixels += int(ok.sum())
        for k in range(1, 4):
            small, _ = distill(TeacherSet(teachers[:k]), *_inputs(sc))
            big, _ = distill(TeacherSet(teachers[:k + 1]), *_inputs(sc))
            v = small.depth.valid
            monotone &= bool(np.all(big.depth.valid[v]) and np.all(big.error.value[v] <= small.error.value[v]))
    ok = violations == 0 and monotone
    record_criterion(4, "distillation minimality + monotonicity", ok,
                     f"{violations} violations over {pixels} pixel-teacher pairs; monotone={monotone}")
    assert ok


def test_c05_distillation_accuracy():
    exact_frac, stereo_frac = [], []
    for seed in range(5):
        sc = stereo_rig_scene(100 + seed)
        tex = textured_mask(sc.images[0])
        ts = TeacherSet(corrupted_cohort(sc.depths[0], seed))
        res, _ = distill(ts, *_inputs(sc))
        m = tex & res.depth.valid
        exact_frac.append(float(np.mean(res.selection[m] == ts.names.index("exact"))))
        ts = TeacherSet(wrong_everywhere_cohort(sc.depths[0], seed) + [("stereo", sc.depths[0], "stereo")])
        res, _ = distill(ts, *_inputs(sc))
        m = tex & res.depth.valid
        stereo_frac.append(float(np.mean(res.selection[m] == ts.names.index("stereo"))))
    ok = min(exact_frac) >= 0.99 and min(stereo_frac) >= 0.95
    record_criterion(5, "distillation accuracy", ok,
                     f"exact selected >= {min(exact_frac):.4f}, stereo selected >= {min(stereo_frac):.4f}")
    assert ok


def test_c06_metrics_exactness():
    r = evaluate(DepthMap(np.array([[2.0, 4.0]])), DepthMap(np.array([[1.0, 2.0]])))
    expect = {"mae": 1500.0, "rmse": np.sqrt(2.5) * 1000, "imae": 375.0, "irmse": np.sqrt(0.15625) * 1000}
    rel = max(abs(getattr(r, k) - v) / v for k, v in expect.items())
    named = abs(r.rmse - 1581.14) < 0.005 and abs(r.irmse - 395.28) < 0.005
    rng = np.random.default_rng(6)
    ineq = 0
    for _ in range(1000):
        h, w = rng.integers(1, 12, 2)
        gt = rng.uniform(0.5, 90, (h, w))
        pred = gt * rng.uniform(0.3, 2.0, (h, w))
        m = evaluate(DepthMap(pred), DepthMap(gt))
        ineq += int(m.rmse >= m.mae and m.irmse >= m.imae)
    ok = rel <= 1e-6 and named and ineq == 1000
    record_criterion(6, "metrics exactness", ok, f"fixture rel err {rel:.1e}; inequalities {ineq}/1000")
    assert ok


def test_c07_min_reprojection_dominance():
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(100):
        maps = [LossMap(rng.random((13, 17)) * rng.uniform(0.1, 10), rng.random((13, 17)) > 0.2) for _ in range(3)]
        out = min_reprojection(maps)
        anyv = np.any([m.valid for m in maps], axis=0)
        bad += int(not np.array_equal(out.valid, anyv))
        for m in maps:
            bad += int((out.value[m.valid] > m.value[m.valid]).sum())
    ok = bad == 0
    record_criterion(7, "min-reprojection dominance (100 triples)", ok, f"{bad} violations")
    assert ok


def test_c08_as2d_equivalence():
    cfg = AS2DConfig()
    # pass-through routes the first pooled channel, so its min kernel must be 1
    pass_cfg = AS2DConfig((1,) + cfg.min_kernels[:-1], cfg.max_kernels)
    worst, exact = 0.0, True
    for seed in range(20):
        r = np.random.default_rng(800 + seed)
        h, w = r.integers(10, 24, 2)
        d = np.where(r.random((h, w)) < r.uniform(0.03, 0.3), r.uniform(1, 80, (h, w)), 0.0)
        s = DepthMap(d)
        wts = random_weights(cfg.pooled_channels, seed=seed)
        a, b = as2d_forward(s, wts, cfg), as2d_forward_oracle(s, wts, cfg)
        assert np.array_equal(a.valid, b.valid)
        worst = max(worst, float(np.abs(a.depth - b.depth).max()))
        p = as2d_forward(s, passthrough_weights(pass_cfg.pooled_channels), pass_cfg)
        exact &= bool(np.array_equal(p.depth[s.valid], s.depth[s.valid]) and np.array_equal(p.valid, s.valid))
    ok = worst < 1e-5 and exact
    record_criterion(8, "AS2D forward vs oracle + pass-through", ok,
                     f"max |diff| {worst:.2e} < 1e-5; pass-through exact={exact}")
    assert ok


def test_c09_multiscale_degeneracy():
    sc = stereo_rig_scene(9, normal=(0.15, -0.1, 1.0))
    tgt, srcs, poses, K = _inputs(sc)
    ms = multiscale_loss(build_pyramid(sc.depths[0], 1), tgt, srcs, poses, K, [1.0])
    frames = [(tgt, sc.depths[0])] + [(s, sc.depths[0]) for s in srcs]
    mv = multiview_consistency_loss(frames, {(0, 1): poses[0], (0, 2): poses[1]}, K, pairs=[(0, 1), (0, 2)])
    zero = multiscale_loss(build_pyramid(sc.depths[0], 4), tgt, srcs, poses, K, [0.0] * 4)
    ok = ms.total == mv.total and ms.photometric == mv.photometric and zero.total == 0.0
    record_criterion(9, "multi-scale degeneracy", ok, f"single-level {ms.total!r} vs multi-view {mv.total!r}")
    assert ok


def test_c10_io_roundtrips(tmp_path):
    rng = np.random.default_rng(10)
    bad = 0
    for i in range(100):
        h, w = rng.integers(1, 40, 2)
        stored = rng.integers(0, 65536, (h, w))
        d = DepthMap(stored / 256.0)
        io_formats.write_depth_png16(d, tmp_path / "d.png")
        back = io_formats.read_depth_png16(tmp_path / "d.png")
        bad += int(back.depth.tobytes() != d.depth.tobytes() or not np.array_equal(back.valid, d.valid))
        a = rng.normal(0, 50, (h, w) if i % 2 else (h, w, 3)).astype(np.float32)
        io_formats.write_pfm(a, tmp_path / "a.pfm", little_endian=bool(i % 3))
        bad += int(io_formats.read_pfm(tmp_path / "a.pfm").tobytes() != a.tobytes())
    ok = bad == 0
    record_criterion(10, "PNG16 + PFM round-trips (100 maps each)", ok, f"{bad} mismatches")
    assert ok


def test_c11_cli_determinism(tmp_path, capsys):
    differing = []
    for argv in COMMANDS:
        dirs = [tmp_path / argv[0] / x for x in "ab"]
        codes = [main(argv + ["--out", str(d), "--seed", "11"]) for d in dirs]
        if codes != [0, 0]:
            differing.append(f"{argv[0]}:exit{codes}")
            continue
        names = sorted(p.name for p in dirs[0].iterdir())
        for n in names:
            if io_formats.sha256_file(dirs[0] / n) != io_formats.sha256_file(dirs[1] / n):
                differing.append(f"{argv[0]}/{n}")
    capsys.readouterr()
    ok = not differing
    record_criterion(11, "CLI determinism", ok, f"{len(COMMANDS)} commands; differing: {differing or 'none'}")
    assert ok


def test_c12_throughput(tmp_path):
    scene_dir = tmp_path / "scene"
    assert main(["synth", "--out", str(scene_dir), "--height", "375", "--width", "1242", "--seed", "12"]) == 0
    m = io_formats.load_manifest(scene_dir / "manifest.json")
    assert len(m.teachers) == 5 and len(m.source_indices) == 2
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    code = ("import sys, time; from artifact.cli import main; t=time.perf_counter(); "
            "c=main(['distill','--manifest',sys.argv[1],'--out',sys.argv[2]]); "
            "print(repr(time.perf_counter()-t)); sys.exit(c)")
    p = subprocess.run([sys.executable, "-c", code, str(scene_dir / "manifest.json"), str(tmp_path / "out")],
                       capture_output=True, text=True, env=env)
    assert p.returncode == 0, p.stderr
    elapsed = float(p.stdout.strip().splitlines()[-1])
    summary = json.loads(p.stdout.strip().splitlines()[0])["summary"]
    ok = elapsed < 10.0
    record_criterion(12, "distill throughput 1242x375, 5 teachers, 2 sources", ok,
                     f"{elapsed:.2f} s single-threaded; {summary['valid_pixels']} px")
    assert ok
