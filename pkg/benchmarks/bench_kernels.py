"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once per backend to warm up (numba compiles on first call),
then the best of ``--repeat`` timings is reported.
"""
import argparse
import time

import numpy as np
import scipy.sparse as sp

from kinrig import linalg, synth, tracking
from kinrig.kernels._backend import HAS_NUMBA, use_backend
from kinrig.kernels.bvh import build_bvh, ray_crossings, segment_hits
from kinrig.kernels.raster import rasterize
from kinrig.kernels.trajectories import pairwise_changes


def cases():
    rng = np.random.default_rng(0)
    star = synth.make_star().mesh
    bvh = build_bvh(star.vertices, star.faces)
    lo, hi = star.vertices.min(0), star.vertices.max(0)
    pts = rng.uniform(lo, hi, (2000, 3))
    q = rng.uniform(lo, hi, (2000, 3))
    d = np.array([0.3, -0.5, 0.81])

    lamp = synth.make_lamp().mesh
    cam = synth.default_camera()
    pc = cam.to_camera(lamp.vertices)

    pos = rng.standard_normal((60, 400, 3)) * 50
    nrm = rng.standard_normal((60, 400, 3))
    nrm /= np.linalg.norm(nrm, axis=2, keepdims=True)

    # normal matrix of one tracking step on the pipe template
    pipe = synth.make_pipe().mesh
    K = sp.kron(tracking.tracking_laplacian(pipe), sp.identity(3), format="csr")
    A = (K.T @ K + 0.01 * sp.identity(K.shape[0])).tocsr()
    chol = linalg.SparseCholesky(tracking.system_pattern(tracking.tracking_laplacian(pipe)))
    b = rng.standard_normal(A.shape[0])

    return {
        "ray crossings (2000 rays, star)": lambda: ray_crossings(bvh, pts, d),
        "segment hits (2000 segments, star)": lambda: segment_hits(bvh, pts, q),
        "rasterize lamp 640x480": lambda: rasterize(pc, lamp.faces, cam.fx, cam.fy, cam.cx, cam.cy,
                                                    cam.width, cam.height),
        "pairwise changes (400 x 60 frames)": lambda: pairwise_changes(pos, nrm, 5),
        f"envelope Cholesky (tracker, n={A.shape[0]})": lambda: chol.factorize(A).solve(b),
    }


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if HAS_NUMBA else [])
    print(f"{'kernel':38s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if HAS_NUMBA else ""))
    for name, fn in cases().items():
        t = {}
        for be in backends:
            with use_backend(be):
                t[be] = best_of(fn, args.repeat)
        row = f"{name:38s}" + "".join(f"{1e3 * t[b]:10.1f}ms" for b in backends)
        if HAS_NUMBA:
            row += f"{t['numpy'] / t['numba']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
