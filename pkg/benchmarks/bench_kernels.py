"""Compare the compiled LCS kernel against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--sizes 100 500 2000] [--repeat 3]
"""

import argparse
import random
import timeit

from reportgen import _kernels
from reportgen._kernels import _fallback


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 500, 2000])
    ap.add_argument("--vocab", type=int, default=300, help="distinct token ids")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = random.Random(0)
    print(f"selected backend: {_kernels.BACKEND}")
    if _kernels._compiled is None:
        print("compiled kernel not available; only the fallback is timed")
    print(f"{'tokens':>8} {'python (s)':>12} {'compiled (s)':>13} {'speedup':>8}")
    for n in args.sizes:
        a = [rng.randrange(args.vocab) for _ in range(n)]
        b = [rng.randrange(args.vocab) for _ in range(n)]
        py = min(timeit.repeat(lambda: _fallback.lcs_length(a, b), number=1, repeat=args.repeat))
        if _kernels._compiled is None:
            print(f"{n:>8} {py:>12.4f} {'-':>13} {'-':>8}")
            continue
        assert _kernels.lcs_length(a, b) == _fallback.lcs_length(a, b)
        cy = min(timeit.repeat(lambda: _kernels.lcs_length(a, b), number=1, repeat=args.repeat))
        print(f"{n:>8} {py:>12.4f} {cy:>13.5f} {py / cy:>7.0f}x")


if __name__ == "__main__":
    main()
