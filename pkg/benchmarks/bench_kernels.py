"""Time each hot kernel under the Cython and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Prints a table of best-of-N wall times and the speed-up of the compiled
backend. Inputs are KITTI-sized (375x1242) where that makes sense.
"""
import argparse
import json
import timeit

import numpy as np

from artifact import kernels
from artifact.geometry import PoseSE3


def cases(rng):
    h, w = 375, 1242
    img = rng.random((h, w, 3))
    depth = rng.uniform(2.0, 50.0, (h, w))
    valid = np.ones((h, w), np.uint8)
    pose = PoseSE3.from_axis_angle([0.0, 0.01, 0.0], [0.3, 0.0, 0.05])
    u = rng.uniform(-2, w + 1, h * w)
    v = rng.uniform(-2, h + 1, h * w)
    sparse = np.where(rng.random((h, w)) < 0.05, depth, 0.0)
    svalid = (sparse > 0).astype(np.uint8)
    x = rng.standard_normal((8, 96, 320))
    wt = rng.standard_normal((1, 8, 3, 3))
    b = np.zeros(1)
    return {
        "warp 375x1242x3": lambda k: k.warp(img, depth, valid, 720.0, 720.0, 620.5, 187.0,
                                            pose.rotation, pose.translation),
        "bilinear 466k pts": lambda k: k.bilinear(img, u, v),
        "min_pool k=11": lambda k: k.masked_min_pool(sparse, svalid, 11),
        "max_pool k=15": lambda k: k.masked_max_pool(sparse, svalid, 15),
        "conv3x3 8->1 96x320": lambda k: k.conv2d_same(x, wt, b),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()
    names = kernels.available_backends()
    backends = {n: kernels.get_backend(n) for n in names}
    results = {}
    rng = np.random.default_rng(0)
    for label, fn in cases(rng).items():
        results[label] = {n: min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat))
                          for n, b in backends.items()}
    print(f"{'kernel':24s}" + "".join(f"{n:>12s}" for n in names) + ("    speed-up" if len(names) > 1 else ""))
    for label, t in results.items():
        row = f"{label:24s}" + "".join(f"{t[n] * 1e3:10.2f}ms" for n in names)
        if "cython" in t:
            row += f"{t['numpy'] / t['cython']:11.1f}x"
        print(row)
    if "cython" not in names:
        print("(compiled backend not built; only the numpy fallback was timed)")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=2)


if __name__ == "__main__":
    main()
