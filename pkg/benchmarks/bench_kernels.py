"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Reports the best-of-N wall time for the LOE pair count (100x100 lightness
maps, the metric's working size) and the EME tile scan (600x400 luma).
"""
import argparse
import timeit

import numpy as np

from dstnet import _pykernels

try:
    from dstnet import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    a, b = rng.random(100 * 100), rng.random(100 * 100)
    g = np.ascontiguousarray(rng.random((400, 600)))
    return {
        "loe_flip_count 100x100": lambda m: m.loe_flip_count(a, b),
        "eme_tiles 400x600": lambda m: m.eme_tiles(g, 8, 1e-4),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    impls = {"numpy": _pykernels}
    if _ckernels is not None:
        impls["cython"] = _ckernels
    else:
        print("compiled extension unavailable; timing the fallback only")
    print(f"{'kernel':<26}" + "".join(f"{k:>12}" for k in impls) + ("     speedup" if len(impls) == 2 else ""))
    for name, fn in cases(rng).items():
        results = [fn(m) for m in impls.values()]
        if len(results) == 2:
            assert np.allclose(results[0], results[1], atol=1e-12), name
        times = [min(timeit.repeat(lambda m=m: fn(m), number=1, repeat=args.repeat)) for m in impls.values()]
        line = f"{name:<26}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
