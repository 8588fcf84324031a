"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeats 5] [--size 128] [--gaussians 2000]

The first numba call compiles (or loads from cache) and is excluded.
"""
import argparse
import time

import numpy as np

from dentoforge import _accel, collision
from dentoforge.gsplat import SceneGaussians, ToothGaussians, orbit_cameras
from dentoforge.gsplat.raster import rasterize, rasterize_backward
from dentoforge.metrics import chamfer


def best_of(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def make_scene(n, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    tooth = ToothGaussians(
        tooth_id=11,
        means=rng.normal(0.0, 3.0, (n, 3)),
        log_scales=rng.uniform(-1.5, -0.5, (n, 3)),
        quats=q / np.linalg.norm(q, axis=1, keepdims=True),
        opacity_logits=rng.normal(0.0, 1.0, n),
        colors=rng.normal(0.0, 0.5, (n, 3)),
    )
    return SceneGaussians([tooth])


def collision_with(use_numba, a, b, c):
    def run():
        saved = _accel.USE_NUMBA
        _accel.USE_NUMBA = use_numba
        try:
            collision.collision_grad(a, b, c)
        finally:
            _accel.USE_NUMBA = saved

    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--size", type=int, default=128, help="image side in pixels")
    ap.add_argument("--gaussians", type=int, default=2000)
    ap.add_argument("--points", type=int, default=4000, help="points per cloud for chamfer and collision")
    args = ap.parse_args()

    scene = make_scene(args.gaussians)
    cam = orbit_cameras([0, 0, 0], 8.0, n_views=1, width=args.size, height=args.size)[0]
    rng = np.random.default_rng(1)
    pa, pb = rng.normal(size=(args.points, 3)), rng.normal(size=(args.points, 3))
    grad = rng.normal(size=(args.size, args.size, 3))
    renders = {b: rasterize(scene, cam, backend=b) for b in ("numba", "numpy")}

    cases = [
        ("raster forward", lambda b: (lambda: rasterize(scene, cam, backend=b))),
        ("raster backward", lambda b: (lambda: rasterize_backward(renders[b], grad))),
        ("collision grad", lambda b: collision_with(b == "numba", pa, pb + 0.5, pb - 0.5)),
        ("chamfer", lambda b: (lambda: chamfer(pa, pb, backend=b))),
    ]
    print(f"numba threads: {_accel.numba.get_num_threads() if _accel.NUMBA_AVAILABLE else 0}")
    print(f"{'kernel':<18}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, make in cases:
        t_nb = best_of(make("numba"), args.repeats)
        t_np = best_of(make("numpy"), args.repeats)
        print(f"{name:<18}{1e3 * t_nb:>10.2f}{1e3 * t_np:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
