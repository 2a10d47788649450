"""
Time the numba kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat 5]

Numba timings exclude the first (compiling) call.
"""

import argparse
import time

import numpy as np

from scail import _kernels as K


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    feats = rng.normal(size=(500, 64))
    scores = rng.normal(size=(2000, 100))
    x, protos = rng.normal(size=(2000, 64)), rng.normal(size=(100, 64))
    return [
        ("herding m=500 D=64 q=100", lambda f: f(feats, 100), K.herding_order_numpy, K.herding_order_numba),
        ("mask n=2000 N=100 past=80 top10", lambda f: f(scores, 80, 10), K.mask_past_numpy, K.mask_past_numba),
        ("distances n=2000 P=100 D=64", lambda f: f(x, protos), K.sq_distances_numpy, K.sq_distances_numba),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call, np_fn, nb_fn in cases(rng):
        t_np = best_of(lambda: call(np_fn), args.repeat)
        if nb_fn is None:
            print(f"{name:<34}{t_np * 1e3:>10.2f}{'n/a':>10}{'':>9}")
            continue
        same = np.allclose(np.asarray(call(np_fn), dtype=float), np.asarray(call(nb_fn), dtype=float))
        t_nb = best_of(lambda: call(nb_fn), args.repeat)
        flag = "" if same else "  MISMATCH"
        print(f"{name:<34}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x{flag}")


if __name__ == "__main__":
    main()
