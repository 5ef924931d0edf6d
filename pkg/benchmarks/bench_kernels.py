"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--seed S]
"""
import argparse
import time

import numpy as np

from simbridge import kernels
from simbridge.simulator import LidarModel, real_domain, sample_scene


def _time(fn, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _raycast_args(seed):
    scene = sample_scene(0, seed, real_domain())
    objs = scene.objects
    yaw = np.deg2rad([o.box.yaw for o in objs])
    args = (
        LidarModel().ray_directions(),
        np.array([o.box.center for o in objs], dtype=np.float64),
        np.array([[o.box.length / 2, o.box.width / 2, o.box.height / 2] for o in objs]),
        np.cos(yaw), np.sin(yaw),
        np.array([kernels.KIND_CYLINDER if o.kind == "cylinder" else kernels.KIND_CUBOID
                  for o in objs]),
        scene.ground_z, 50.0,
    )
    return args


def _same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rc = _raycast_args(args.seed)
    rng = np.random.default_rng(args.seed)
    xyz = rng.uniform(-30, 30, size=(200_000, 3))
    feats = rng.uniform(0, 1, size=(len(xyz), 2))
    fc = (xyz, feats, -24.0, -24.0, 1.0, 48, 48)
    cases = [("raycast", rc), ("featurize_cells", fc)]

    print(f"{'kernel':<16} {'python s':>10} {'cython s':>10} {'speedup':>8}  match")
    for name, a in cases:
        tp, outp = _time(getattr(kernels.python_backend, name), a, args.repeat)
        if kernels.compiled_backend is None:
            print(f"{name:<16} {tp:10.4f} {'n/a':>10} {'n/a':>8}  -")
            continue
        tc, outc = _time(getattr(kernels.compiled_backend, name), a, args.repeat)
        print(f"{name:<16} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}  {_same(outp, outc)}")


if __name__ == "__main__":
    main()
