"""Compare the compiled schoolbook kernel with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--reps N]

Both implementations are imported directly, so the result does not depend on
MULPROBE_PURE.
"""
import argparse
import random
import sys
import timeit

from mulprobe import _kernels_py

try:
    from mulprobe import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def digits(nd, rng):
    v = [rng.randrange(10) for _ in range(nd - 1)] + [rng.randrange(1, 10)]
    return bytes(v)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1
    rng = random.Random(args.seed)
    print(f"{'digits':>8} {'python us':>11} {'cython us':>11} {'speedup':>8}")
    for nd in (2, 4, 8, 16, 32, 64):
        pairs = [(digits(nd, rng), digits(nd, rng)) for _ in range(64)]
        for a, b in pairs:
            assert _kernels_py.schoolbook(a, b) == tuple(_kernels_c.schoolbook(a, b))
        t_py = min(timeit.repeat(lambda: [_kernels_py.schoolbook(a, b) for a, b in pairs], number=args.reps // 20 or 1, repeat=5))
        t_c = min(timeit.repeat(lambda: [_kernels_c.schoolbook(a, b) for a, b in pairs], number=args.reps // 20 or 1, repeat=5))
        per = len(pairs) * (args.reps // 20 or 1)
        print(f"{nd:>8} {1e6 * t_py / per:>11.2f} {1e6 * t_c / per:>11.2f} {t_py / t_c:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
