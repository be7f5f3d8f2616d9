"""Time the numpy and numba versions of each hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat N]

Numba versions are warmed up once (compilation excluded).  Both versions
are called directly, so the ANIMGAN_DISABLE_NUMBA flag does not matter.
"""

import argparse
import time

import numpy as np

from animgan import kernels, quat
from animgan._accel import HAVE_NUMBA
from animgan.skeleton import canonical_skeleton


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    skel = canonical_skeleton()
    offsets = np.ascontiguousarray(skel.offsets, dtype=np.float64)
    parents = np.ascontiguousarray(skel.parent_array, dtype=np.int64)
    # one training batch worth of poses: 8 sequences x 30 frames
    q = quat.random(rng, (240, 21))
    pos, glob = kernels.fk_forward_np(q, offsets, parents)
    dpos = rng.normal(size=pos.shape)
    H = 64
    xp = rng.normal(size=(8, 30, 4 * H))
    wh = rng.normal(0, 0.1, size=(H, 4 * H))
    hs, cs, gates = kernels.lstm_forward_np(xp, wh)
    dhs = rng.normal(size=hs.shape)
    queries = rng.normal(size=(300, 24))
    store = rng.normal(size=(2000, 24))
    cq = rng.normal(size=(21, 100, 12))
    cst = rng.normal(size=(21, 400, 12))
    return [
        ("fk_forward", kernels.fk_forward_np, kernels.fk_forward_nb, (q, offsets, parents)),
        ("fk_backward", kernels.fk_backward_np, kernels.fk_backward_nb, (q, glob, offsets, parents, dpos)),
        ("lstm_forward", kernels.lstm_forward_np, kernels.lstm_forward_nb, (xp, wh)),
        ("lstm_backward", kernels.lstm_backward_np, kernels.lstm_backward_nb, (dhs, wh, hs, cs, gates)),
        ("nn_min_sqdist", kernels.nn_min_sqdist_np, kernels.nn_min_sqdist_nb, (queries, store)),
        ("nn_min_sqdist_cells", kernels.nn_min_sqdist_cells_np, kernels.nn_min_sqdist_cells_nb, (cq, cst)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"numba available: {HAVE_NUMBA}")
    print(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, f_np, f_nb, a in cases(rng):
        t_np = best_of(f_np, a, args.repeat)
        if HAVE_NUMBA:
            f_nb(*a)  # compile
            t_nb = best_of(f_nb, a, args.repeat)
            print(f"{name:<22}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<22}{1e3 * t_np:>12.3f}{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
