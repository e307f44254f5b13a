"""``mdistill``: command-line front end.

Exit codes: 0 success, 1 numerical failure, 2 input error. Failures are
reported on stderr as one JSON object. Every successful command writes
``run.json`` to its output directory with the configuration, seed, input and
output SHA-256 hashes and library versions; it carries no timestamps, so
reruns with the same inputs are byte-identical.
"""
import argparse
import json
import platform
import sys
from pathlib import Path

import numpy as np
import PIL

from . import __version__, as2d, io_formats, kernels, synth
from .config import UNSPECIFIED_DEFAULTS, ConfigError, RunConfig
from .distill import TeacherSet, distill, selection_histogram
from .geometry import warp_image
from .gradcheck import FD_STEP, REL_TOL, gradcheck
from .grid import build_pyramid
from .losses import multiscale_loss, photometric_map
from .metrics import CSV_FIELDS, EmptyEvaluationError, evaluate

EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


class Run:
    """Collects hashes of inputs and outputs for the run manifest."""

    def __init__(self, command, cfg, out_dir, args=None):
        self.command = command
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.args = args or {}
        self.inputs = {}
        self.outputs = {}
        self.summary = {}

    def add_input(self, label, path):
        self.inputs[label] = {"path": str(path), "sha256": io_formats.sha256_file(path)}

    def add_manifest(self, m):
        self.inputs["manifest"] = {"path": m.path.name, "sha256": io_formats.sha256_file(m.path)}
        base = m.path.parent
        files = [m.frames[i].image for i in range(len(m.frames))]
        files += [f.sparse_depth for f in m.frames if f.sparse_depth]
        files += [t.depth for t in m.teachers] + ([m.ground_truth] if m.ground_truth else [])
        for p in files:
            rel = p.relative_to(base) if p.is_relative_to(base) else p
            self.inputs[f"scene:{rel}"] = {"path": str(rel), "sha256": io_formats.sha256_file(p)}

    def path(self, name):
        return self.out / name

    def done(self, *names):
        for n in names:
            self.outputs[n] = io_formats.sha256_file(self.path(n))

    def write(self):
        doc = {
            "command": self.command,
            "arguments": self.args,
            "config": self.cfg.to_dict(),
            "seed": self.cfg.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "summary": self.summary,
            "versions": {
                "artifact": __version__,
                "numpy": np.__version__,
                "pillow": PIL.__version__,
                "python": platform.python_version(),
                "kernels": kernels.BACKEND,
            },
        }
        self.path("run.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (Path,)):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _scene(args, run):
    if not args.manifest:
        raise InputError("--manifest is required")
    m = io_formats.load_manifest(args.manifest)
    run.add_manifest(m)
    return io_formats.load_scene(m)


def _working_depth(args, scene, run):
    if args.depth:
        run.add_input("depth", args.depth)
        d = io_formats.read_depth(args.depth)
        if d.shape != scene.target_image.shape:
            raise io_formats.DimensionMismatchError(f"depth {d.shape} does not match images {scene.target_image.shape}")
        return d
    if scene.ground_truth is not None:
        return scene.ground_truth
    if scene.teachers:
        return scene.teachers[0][1]
    raise InputError("no depth: pass --depth or list ground_truth/teachers in the manifest")


def _sources(scene):
    if not scene.manifest.source_indices:
        raise InputError("manifest lists no source frames")
    return scene.source_images, scene.source_poses


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg):
    run = Run("synth", cfg, args.out, {"height": args.height, "width": args.width,
                                         "image_format": args.image_format, "keep": args.keep})
    scene = synth.stereo_rig_scene(cfg.seed, height=args.height, width=args.width)
    exact = scene.depths[0]
    teachers = [(n, d, "completion") for n, d in synth.corrupted_cohort(exact, cfg.seed)]
    teachers.append(("stereo", synth.corrupt_depth(exact, "additive", 0.05, cfg.seed + 3), "stereo"))
    sparse = [synth.sparsify(d, args.keep, cfg.seed + 10 + i) for i, d in enumerate(scene.depths)]
    mpath = io_formats.export_scene(scene, run.out, teachers, target=0, sparse=sparse,
                                    image_format=args.image_format)
    run.done(*sorted(p.name for p in run.out.iterdir() if p.is_file() and p.name != "run.json"))
    run.summary = {"manifest": mpath.name, "frames": len(scene.frames), "teachers": len(teachers)}
    run.write()
    return run


def cmd_distill(args, cfg):
    run = Run("distill", cfg, args.out)
    scene = _scene(args, run)
    if not any(k == "completion" for _, _, k in scene.teachers):
        raise InputError("manifest needs at least one completion teacher")
    teachers = TeacherSet(scene.teachers)
    sources, poses = _sources(scene)
    result, _ = distill(teachers, scene.target_image, sources, poses, scene.manifest.intrinsics,
                        cfg.w_ph, cfg.w_st, cfg.sigma)
    io_formats.write_depth_png16(result.depth, run.path("distilled.png"))
    io_formats.write_pfm(result.confidence, run.path("confidence.pfm"))
    io_formats.write_pfm(result.error.value, run.path("error.pfm"))
    hist = selection_histogram(result, teachers)
    with open(run.path("selection.csv"), "w") as f:
        f.write("teacher,fraction\n")
        for name, frac in hist:
            f.write(f"{name},{frac!r}\n")
    run.done("distilled.png", "confidence.pfm", "error.pfm", "selection.csv")
    run.summary = {"selection": dict(hist), "valid_pixels": result.depth.count()}
    run.write()
    return run


def cmd_eval(args, cfg):
    run = Run("eval", cfg, args.out)
    if not args.pred:
        raise InputError("--pred is required")
    gt_path = args.gt
    if gt_path is None and args.manifest:
        m = io_formats.load_manifest(args.manifest)
        run.add_input("manifest", args.manifest)
        gt_path = m.ground_truth
    if gt_path is None:
        raise InputError("pass --gt, or a --manifest with ground_truth")
    run.add_input("pred", args.pred)
    run.add_input("gt", gt_path)
    pred, gt = io_formats.read_depth(args.pred), io_formats.read_depth(gt_path)
    if pred.shape != gt.shape:
        raise io_formats.DimensionMismatchError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    report = evaluate(pred, gt)
    with open(run.path("metrics.csv"), "w") as f:
        f.write(",".join(CSV_FIELDS) + "\n" + report.to_csv() + "\n")
    run.done("metrics.csv")
    run.summary = report.to_dict()
    run.write()
    print(report.pretty(), file=sys.stderr)
    return run


def cmd_warp(args, cfg):
    run = Run("warp", cfg, args.out, {"source": args.source})
    scene = _scene(args, run)
    m = scene.manifest
    src = args.source if args.source is not None else (m.source_indices or [m.target])[0]
    if not 0 <= src < len(m.frames):
        raise InputError(f"--source must be a frame index in 0..{len(m.frames) - 1}")
    depth = _working_depth(args, scene, run)
    recon, valid = warp_image(scene.images[src], depth, m.intrinsics, m.frames[src].pose)
    io_formats.write_pfm(recon, run.path("recon.pfm"))
    io_formats.write_mask_png(valid, run.path("valid.png"))
    run.done("recon.pfm", "valid.png")
    ph = photometric_map(scene.target_image, recon, valid)
    run.summary = {"photometric": ph.mean(), "valid_pixels": ph.count()}
    run.write()
    return run


def cmd_loss(args, cfg):
    run = Run("loss", cfg, args.out)
    scene = _scene(args, run)
    depth = _working_depth(args, scene, run)
    sources, poses = _sources(scene)
    pyr = build_pyramid(depth, cfg.scales)
    br = multiscale_loss(pyr, scene.target_image, sources, poses, scene.manifest.intrinsics,
                         cfg.scale_weights, cfg.w_ph, cfg.w_st, cfg.min_mode)
    if not np.isfinite(br.total):
        raise NumericalFailure("loss is not finite")
    with open(run.path("per_scale.csv"), "w") as f:
        f.write("scale,photometric,structure\n")
        for k, ph, st in br.per_scale:
            f.write(f"{k},{ph!r},{st!r}\n")
    run.path("loss.json").write_text(json.dumps(br.to_dict(), indent=2, sort_keys=True, default=_jsonable) + "\n")
    run.done("loss.json", "per_scale.csv")
    run.summary = {"total": br.total, "photometric": br.photometric, "structure": br.structure}
    run.write()
    return run


def cmd_gradcheck(args, cfg):
    run = Run("gradcheck", cfg, args.out, {"step": args.step, "tol": args.tol})
    if args.manifest:
        scene = _scene(args, run)
        sources, poses = _sources(scene)
        depth = _working_depth(args, scene, run)
        problem = (depth, scene.target_image, sources[0], poses[0], scene.manifest.intrinsics)
    else:
        problem = synth.gradcheck_scene(cfg.seed)
        run.summary["scene"] = {"kind": "synthetic", "seed": cfg.seed, "height": 16, "width": 24}
    report = gradcheck(*problem, h=args.step, tol=args.tol, w_ph=cfg.w_ph, w_st=cfg.w_st)
    run.path("gradcheck.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True,
                                                     default=_jsonable) + "\n")
    run.done("gradcheck.json")
    run.summary.update(report.to_dict())
    run.write()
    print(f"max relative error {report.max_rel_error:.3e} over {report.checked} pixels", file=sys.stderr)
    if not report.passed:
        raise NumericalFailure(
            f"gradient check failed: max relative error {report.max_rel_error:.3e} >= tol {report.tol:g}"
        )
    return run


def cmd_as2d(args, cfg):
    run = Run("as2d", cfg, args.out, {"weights": args.weights if args.weights in (None, "passthrough") else "file"})
    if args.sparse:
        run.add_input("sparse", args.sparse)
        sparse = io_formats.read_depth(args.sparse)
    else:
        scene = _scene(args, run)
        sparse = scene.sparse[scene.manifest.target]
        if sparse is None:
            raise InputError("target frame has no sparse_depth; pass --sparse")
    acfg = cfg.as2d
    if args.weights is None:
        w = as2d.random_weights(acfg.pooled_channels, seed=cfg.seed)
    elif args.weights == "passthrough":
        if acfg.min_kernels[:1] != (1,):
            raise InputError("passthrough weights need min_kernels to start with 1 (set it via --config)")
        w = as2d.passthrough_weights(acfg.pooled_channels)
    else:
        run.add_input("weights", args.weights)
        try:
            w = as2d.AS2DWeights.from_tensors(io_formats.load_weights(args.weights))
        except (KeyError, TypeError) as exc:
            raise io_formats.FormatError(f"weight file is missing or mis-shapes a tensor: {exc}") from None
    out = as2d.as2d_forward(sparse, w, acfg)
    if not np.all(np.isfinite(out.depth)):
        raise NumericalFailure("AS2D output is not finite")
    io_formats.write_pfm(out, run.path("quasi_dense.pfm"))
    io_formats.write_mask_png(out.valid, run.path("quasi_dense_valid.png"))
    run.done("quasi_dense.pfm", "quasi_dense_valid.png")
    run.summary = {"valid_pixels": out.count(), "input_valid_pixels": sparse.count()}
    run.write()
    return run


COMMANDS = {
    "distill": (cmd_distill, "select per-pixel teacher depth by reprojection error"),
    "eval": (cmd_eval, "MAE/RMSE/iMAE/iRMSE of a prediction against ground truth"),
    "warp": (cmd_warp, "reconstruct the target view from a source view"),
    "loss": (cmd_loss, "multi-scale photometric + structure loss"),
    "gradcheck": (cmd_gradcheck, "compare the analytic depth gradient with finite differences"),
    "synth": (cmd_synth, "generate a synthetic stereo-rig scene and its manifest"),
    "as2d": (cmd_as2d, "run the AS2D sparse-to-dense front end"),
}


def _defaults_epilog():
    d = RunConfig().to_dict()
    lines = ["config defaults (override with --config FILE.json):"]
    for k, v in d.items():
        flag = "  [not paper-specified]" if k in UNSPECIFIED_DEFAULTS else ""
        lines.append(f"  {k} = {json.dumps(v)}{flag}")
    return "\n".join(lines)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory (created if missing)")
    common.add_argument("--config", help="JSON file mirroring RunConfig")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--manifest", help="scene manifest (JSON)")

    p = argparse.ArgumentParser(prog="mdistill", description=__doc__.splitlines()[0],
                                epilog=_defaults_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    subs = {}
    for name, (_, help_text) in COMMANDS.items():
        subs[name] = sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                                    epilog=_defaults_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)

    subs["synth"].add_argument("--height", type=int, default=48)
    subs["synth"].add_argument("--width", type=int, default=64)
    subs["synth"].add_argument("--image-format", choices=("png", "pfm"), default="png")
    subs["synth"].add_argument("--keep", type=float, default=0.05, help="sparse-depth keep fraction")
    subs["eval"].add_argument("--pred", help="predicted depth (PNG16 or PFM)")
    subs["eval"].add_argument("--gt", help="ground-truth depth; defaults to the manifest's ground_truth")
    for name in ("warp", "loss", "gradcheck"):
        subs[name].add_argument("--depth", help="target depth; defaults to ground truth, else the first teacher")
    subs["warp"].add_argument("--source", type=int, help="source frame index (default: first non-target)")
    subs["gradcheck"].add_argument("--step", type=float, default=FD_STEP, help="finite-difference step (m)")
    subs["gradcheck"].add_argument("--tol", type=float, default=REL_TOL, help="max relative error")
    subs["as2d"].add_argument("--sparse", help="sparse depth (default: the manifest target's sparse_depth)")
    subs["as2d"].add_argument("--weights", help="weight file (.json or binary), or 'passthrough' "
                                                "(default: seeded random weights)")
    return p


def _fail(exc, code):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    try:
        cfg = _load_config(args)
        run = COMMANDS[args.command][0](args, cfg)
    except NumericalFailure as exc:
        return _fail(exc, EXIT_NUMERIC)
    except (InputError, ConfigError, EmptyEvaluationError, io_formats.FormatError, OSError) as exc:
        return _fail(exc, EXIT_INPUT)
    except FloatingPointError as exc:
        return _fail(exc, EXIT_NUMERIC)
    except ValueError as exc:
        # remaining ValueErrors come from argument/data validation in the library
        return _fail(exc, EXIT_INPUT)
    except Exception as exc:  # noqa: BLE001 - report anything else machine-readably
        return _fail(exc, EXIT_NUMERIC)
    print(json.dumps({"command": args.command, "out": str(run.out), "summary": run.summary},
                     sort_keys=True, default=_jsonable))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
