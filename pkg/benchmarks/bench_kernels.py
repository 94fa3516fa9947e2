"""Time every compiled kernel against its numpy twin.

    python3 benchmarks/bench_kernels.py [--repeat N] [--size N]

Numba timings exclude compilation (each kernel is called once before timing).
"""

import argparse
import timeit

import numpy as np

from asymseg import _kernels as K


def cases(size, rng):
    vol = rng.normal(size=(2, size, size, size))
    kernel = rng.normal(size=(2, 3, 3, 3))
    dz = rng.normal(size=(size, size, size))
    pred = rng.random((32, 32, 32))
    weight = rng.random((32, 32, 32))
    acc = np.zeros((size + 32, size + 32, size + 32))
    mask = rng.random((size, size, size)) < 0.3
    src, dst = rng.random((2000, 3)), rng.random((3000, 3))
    return {
        "stencil_forward": (vol, kernel, 0.1),
        "stencil_grad": (vol, dz),
        "accumulate_votes": (acc, acc.copy(), pred, weight, (4, 4, 4)),
        "label_components": (mask,),
        "nearest_distances": (src, dst),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=48, help="cube side for volume kernels")
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call_args in cases(args.size, rng).items():
        fns = {impl: getattr(K, f"{name}_{impl}") for impl in ("numpy", "numba")}
        fns["numba"](*call_args)
        ms = {impl: 1e3 * min(timeit.repeat(lambda f=f: f(*call_args), number=1, repeat=args.repeat))
              for impl, f in fns.items()}
        print(f"{name:<20}{ms['numpy']:>12.2f}{ms['numba']:>12.2f}{ms['numpy'] / ms['numba']:>9.1f}x")


if __name__ == "__main__":
    main()
