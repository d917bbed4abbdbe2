"""Compare the compiled and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Every kernel is run on the same seeded inputs by each available backend; the
outputs are checked for equality before timings are reported.
"""
import argparse
import json
import math
import sys
import timeit

import numpy as np

from lichenmon.kernels import available_backends, get_backend


def star(rng, cx, cy, r, k=64):
    ang = 2 * math.pi * np.arange(k) / k
    rad = r * (1 + 0.2 * rng.uniform(-1, 1, k))
    return cx + rad * np.cos(ang), cy + rad * np.sin(ang)


def cases(rng):
    h, w = 480, 640
    xs, ys = star(rng, 320, 240, 150)
    mask = np.zeros((h, w), np.uint8)
    mask[100:380, 150:500] = 1
    mask[rng.uniform(size=(h, w)) < 0.05] ^= 1
    gray = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
    polys = [star(rng, *rng.uniform(60, 400, 2), rng.uniform(20, 60)) for _ in range(20)]

    def rles(mod):
        return [mod.rle_encode(mod.rasterize_polygon(px, py, h, w)) for px, py in polys]

    return {
        "rasterize_polygon 640x480": lambda m: m.rasterize_polygon(xs, ys, h, w),
        "rle_encode 640x480": lambda m: m.rle_encode(mask),
        "rle_decode 640x480": lambda m, c=get_backend("python").rle_encode(mask): m.rle_decode(c, h, w),
        "rle_iou_matrix 20x20": lambda m, r=rles(get_backend("python")): m.rle_iou_matrix(r, r),
        "laplacian_variance 640x480": lambda m: m.laplacian_variance(gray),
    }


def same(a, b):
    if isinstance(a, float):
        return a == b
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    backends = available_backends()
    if len(backends) < 2:
        print("compiled backend not built; timing numpy only", file=sys.stderr)
    rng = np.random.default_rng(0)
    results = {}
    print(f"{'kernel':30s} " + " ".join(f"{b + ' ms':>12s}" for b in backends) + "     speedup")
    for name, fn in cases(rng).items():
        outs, times = {}, {}
        for b in backends:
            mod = get_backend(b)
            outs[b] = fn(mod)
            n = max(1, int(0.2 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-6)))
            times[b] = min(timeit.repeat(lambda: fn(mod), number=n, repeat=args.repeat)) / n * 1e3
        if len(backends) == 2 and not same(outs["python"], outs["cython"]):
            raise SystemExit(f"{name}: backends disagree")
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        results[name] = {**times, "speedup": speed}
        print(f"{name:30s} " + " ".join(f"{times[b]:12.3f}" for b in backends) + f"  {speed:10.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
