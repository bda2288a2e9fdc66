"""Compare the compiled and pure-python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on the same inputs under both backends; outputs are checked
for equality before timings are reported.
"""

import argparse
import timeit

import numpy as np

from sst import kernels


def cases(rng):
    labels = rng.integers(0, 12, (256, 256)).astype(np.uint8)
    labels[rng.random(labels.shape) < 0.05] = kernels.IGNORE
    lut = np.array([0, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4], dtype=np.int64)
    pred = rng.integers(0, 12, labels.shape)
    canvas = np.zeros((256, 256), np.uint8)
    return {
        "fill_capsule": lambda: kernels.fill_capsule(canvas, (20, 30), (200, 180), 9, 3),
        "remap": lambda: kernels.remap(labels, lut),
        "adjacency": lambda: kernels.adjacency(labels, 12),
        "confusion": lambda: kernels.confusion(labels, pred, 12),
    }


def _result(out):
    return out[0] if isinstance(out, tuple) else out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels are not built; only the python backend is available")
    print(f"{'kernel':<14}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}")
    for name in cases(np.random.default_rng(0)):
        times, outs = {}, {}
        for b in backends:
            with kernels.use_backend(b):
                fn = cases(np.random.default_rng(0))[name]
                outs[b] = _result(fn())
                number = 1 if b == "python" else 20
                times[b] = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number * 1e3
        if len(backends) == 2 and outs["cython"] is not None:
            assert np.array_equal(outs["cython"], outs["python"]), name
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<14}" + "".join(f"{times[b]:>14.3f}" for b in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
